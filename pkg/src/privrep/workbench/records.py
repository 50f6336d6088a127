"""Results records and checkpoints."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..defense_mia import SoftmaxEncoder
from ..mi import PerturbationParams
from ..nn import Mlp, flat_params, set_flat_params

RECORD_VERSION = 1
CHECKPOINT_VERSION = 1
CODE_VERSION = "0.1.0"


class RecordVersionError(ValueError):
    pass


class CheckpointError(OSError):
    pass


@dataclass
class ResultsRecord:
    defense: str
    seed: int
    point: dict
    config: dict
    losses: list = field(default_factory=list)
    utility: float | None = None
    attacks: list = field(default_factory=list)
    recon: dict | None = None
    bounds: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    error: dict | None = None
    version: int = RECORD_VERSION
    code_version: str = CODE_VERSION

    def metrics(self) -> dict:
        """Flat scalar metrics used for replay comparisons."""
        out = {}
        if self.utility is not None:
            out["utility"] = self.utility
        for a in self.attacks:
            out[f"{a['kind']}.accuracy"] = a["accuracy"]
            for f, t in a.get("tpr_at", {}).items():
                out[f"{a['kind']}.tpr@{f}"] = t
        if self.recon is not None:
            for k in ("mean_mse", "mean_ssim", "mean_psnr"):
                if self.recon.get(k) is not None:
                    out[f"recon.{k}"] = self.recon[k]
        for k, v in self.bounds.items():
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                out[f"bounds.{k}"] = v
        return out

    def name(self) -> str:
        pt = "-".join(f"{k}{v:g}" for k, v in sorted(self.point.items())) or "base"
        return f"{self.defense}-s{self.seed}-{pt}"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ResultsRecord":
        d = json.loads(text)
        if d.get("version") != RECORD_VERSION:
            raise RecordVersionError(f"record version {d.get('version')} != {RECORD_VERSION}")
        return cls(**d)

    def save(self, out_dir) -> Path:
        path = Path(out_dir) / "records" / f"{self.name()}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(), encoding="utf-8")
        return path


def load_records(paths) -> list:
    out = []
    for p in paths:
        p = Path(p)
        files = sorted(p.glob("**/*.json")) if p.is_dir() else [p]
        out.extend(ResultsRecord.from_json(f.read_text(encoding="utf-8")) for f in files)
    return out


# Checkpoint layout (numpy .npz):
#   format_version  int array of shape ()
#   descriptor      JSON string: {"encoder": Mlp descriptor, "wrapper": null | "softmax",
#                   "defense": str, "aggregator": str | null, "ratio_grid": [...],
#                   "perturbation": PerturbationParams.state() | null, "rep_dim": int}
#   encoder         float64 flat parameter vector in module parameter order


def save_checkpoint(path, encoder, defense: str, perturbation: PerturbationParams | None = None,
                    aggregator: str | None = None, ratio_grid=()) -> Path:
    wrapper = None
    net = encoder
    if isinstance(encoder, SoftmaxEncoder):
        wrapper, net = "softmax", encoder.net
    desc = {"encoder": net.descriptor(), "wrapper": wrapper, "defense": defense,
            "aggregator": aggregator, "ratio_grid": list(ratio_grid),
            "perturbation": perturbation.state() if perturbation is not None else None,
            "rep_dim": encoder.out_dim}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, format_version=np.array(CHECKPOINT_VERSION), descriptor=np.array(json.dumps(desc)),
                 encoder=flat_params(net).numpy())
    return path


def load_checkpoint(path) -> tuple:
    """(encoder, descriptor, perturbation or None)."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} not found")
    with np.load(path, allow_pickle=False) as z:
        version = int(z["format_version"])
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"checkpoint version {version} != {CHECKPOINT_VERSION}")
        desc = json.loads(str(z["descriptor"]))
        flat = torch.as_tensor(z["encoder"])
    net = Mlp.from_descriptor(desc["encoder"])
    set_flat_params(net, flat)
    enc = SoftmaxEncoder(net) if desc.get("wrapper") == "softmax" else net
    pert = PerturbationParams.from_state(desc["perturbation"]) if desc.get("perturbation") else None
    return enc, desc, pert
