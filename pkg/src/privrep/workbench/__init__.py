from .config import ConfigError, ExperimentConfig, from_mapping, load_config, parse_text
from .records import ResultsRecord, load_checkpoint, load_records, save_checkpoint
from .runner import export_representations, report, run, run_point, substream, sweep_points
