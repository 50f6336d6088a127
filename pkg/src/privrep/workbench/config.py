"""Flat ``section.key = value`` experiment configs.

Recognized sections::

    run.defense      mia | pia | dra | advreg | dpsgd | dp-encoder | none
    run.seeds        comma-separated root seeds
    run.out          output directory (env PRIVREP_OUT overrides)
    run.workers      parallel sweep points (env PRIVREP_THREADS sets torch threads)
    data.*           SynthSpec fields, or data.csv / data.label_col / data.attribute_col
    game.*           GameConfig fields
    arch.*           Arch / DraArch fields
    dp.*             DpConfig fields
    attack.*         epochs, lira_shadows, family (DRA perturbation family)
    sweep.*          comma lists over lam, epsilon, sigma (dp noise) or sigma2
    bounds.*         inputs for the ``bounds`` verb

Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from ..core import GameConfig
from ..data import SynthSpec
from ..dp_baselines import DpConfig

DEFENSES = ("mia", "pia", "dra", "advreg", "dpsgd", "dp-encoder", "none")
SWEEP_KEYS = ("lam", "epsilon", "sigma", "sigma2")


class ConfigError(ValueError):
    pass


def parse_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} needs a section prefix")
        out[key] = value
    return out


def _coerce(value: str, like):
    if isinstance(like, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, tuple) or value.startswith("("):
        return tuple(float(v) if "." in v else int(v) for v in value.strip("()").split(",") if v.strip())
    if value.lower() == "none":
        return None
    return value


def _fill(cls, section: dict, **extra):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kw = dict(extra)
    for k, v in section.items():
        if k not in fields:
            raise ConfigError(f"unknown key {k!r} for {cls.__name__}")
        f = fields[k]
        default = f.default if f.default is not dataclasses.MISSING else (
            f.default_factory() if f.default_factory is not dataclasses.MISSING else "")
        kw[k] = _coerce(v, default)
    return cls(**kw)


@dataclass
class ExperimentConfig:
    defense: str = "mia"
    game: GameConfig = field(default_factory=GameConfig)
    dp: DpConfig | None = None
    data: SynthSpec = field(default_factory=SynthSpec)
    csv: dict = field(default_factory=dict)
    arch: dict = field(default_factory=dict)
    attack: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)
    out_dir: str = "results"
    seeds: tuple = (0,)
    workers: int = 1

    def __post_init__(self):
        if self.defense not in DEFENSES:
            raise ConfigError(f"defense must be one of {DEFENSES}, got {self.defense!r}")
        for k, v in self.sweep.items():
            if k not in SWEEP_KEYS:
                raise ConfigError(f"cannot sweep over {k!r}")
            if len(v) == 0:
                raise ConfigError(f"sweep list {k!r} is empty")
        if len(self.seeds) == 0:
            raise ConfigError("seed list is empty")
        if self.defense in ("dpsgd", "dp-encoder") and self.dp is None:
            self.dp = DpConfig()

    def snapshot(self) -> dict:
        return {"defense": self.defense, "game": dataclasses.asdict(self.game),
                "dp": dataclasses.asdict(self.dp) if self.dp else None,
                "data": dataclasses.asdict(self.data), "csv": dict(self.csv), "arch": dict(self.arch),
                "attack": dict(self.attack), "sweep": {k: list(v) for k, v in self.sweep.items()},
                "seeds": list(self.seeds)}


def from_mapping(flat: dict, env: dict | None = None) -> ExperimentConfig:
    env = os.environ if env is None else env
    sections: dict = {}
    for key, value in flat.items():
        sec, name = key.split(".", 1)
        sections.setdefault(sec, {})[name] = value
    unknown = set(sections) - {"run", "data", "game", "arch", "dp", "attack", "sweep", "bounds"}
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    run = sections.get("run", {})
    data = dict(sections.get("data", {}))
    csv = {k: data.pop(k) for k in ("csv", "label_col", "attribute_col", "grid") if k in data}
    spec = _fill(SynthSpec, data)
    if "grid" in csv:
        spec = dataclasses.replace(spec, grid=_coerce(csv.pop("grid"), ()))
    sweep = {k: [float(v) for v in s.split(",") if v.strip()] for k, s in sections.get("sweep", {}).items()}
    seeds = tuple(int(s) for s in run.get("seeds", "0").split(",") if s.strip())
    return ExperimentConfig(
        defense=run.get("defense", "mia"),
        game=_fill(GameConfig, sections.get("game", {})),
        dp=_fill(DpConfig, sections["dp"]) if "dp" in sections else None,
        data=spec, csv=csv,
        arch={k: _coerce(v, 0 if v.lstrip("-").isdigit() else "") for k, v in sections.get("arch", {}).items()},
        attack=dict(sections.get("attack", {})),
        sweep=sweep,
        bounds={k: float(v) for k, v in sections.get("bounds", {}).items()},
        out_dir=env.get("PRIVREP_OUT", run.get("out", "results")),
        seeds=seeds,
        workers=int(run.get("workers", "1")),
    )


def load_config(path, env: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    return from_mapping(parse_text(path.read_text(encoding="utf-8")), env)
