"""Experiment orchestration: train, attack, score, persist."""

from __future__ import annotations

import csv
import dataclasses
import itertools
import logging
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import torch

from .. import attacks, bounds
from ..core import MEMBERSHIP, GameConfig, make_split
from ..data import MiaTask, load_csv, samples_to_arrays, synth_dra_task, synth_mia_task, synth_pia_bags
from ..defense_dra import DraArch, perturbed_accuracy, train_dra_defense
from ..defense_mia import Arch, init_advreg_state, train_mia_defense
from ..defense_pia import train_pia_defense
from ..dp_baselines import NoisyPublisher, fit_noisy_head, train_dpsgd
from ..mi import sample_perturbation
from ..nn import accuracy, as_tensor
from .config import ExperimentConfig
from .records import RecordVersionError, ResultsRecord, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)
STREAMS = ("data", "init", "noise", "attack")


def substream(root: int, name: str) -> int:
    """Independent 31-bit seed for a named component derived from the root seed."""
    if name not in STREAMS:
        raise ValueError(f"unknown stream {name!r}")
    ss = np.random.SeedSequence([int(root), zlib.crc32(name.encode())])
    return int(ss.generate_state(1)[0] % (2**31 - 1))


def sweep_points(sweep: dict) -> list:
    if not sweep:
        return [{}]
    keys = sorted(sweep)
    return [dict(zip(keys, vals)) for vals in itertools.product(*(sweep[k] for k in keys))]


def _arch(cfg: ExperimentConfig, cls=Arch):
    names = {f.name for f in dataclasses.fields(cls)}
    return cls(**{k: v for k, v in cfg.arch.items() if k in names})


def _game(cfg: ExperimentConfig, point: dict, seed: int) -> GameConfig:
    kw = {k: v for k, v in point.items() if k in ("lam", "epsilon")}
    return dataclasses.replace(cfg.game, seed=substream(seed, "init"), **kw)


def _attack_kw(cfg: ExperimentConfig) -> dict:
    return {"epochs": int(cfg.attack.get("epochs", 150))}


def _mia_task(cfg: ExperimentConfig, seed: int):
    spec = dataclasses.replace(cfg.data, seed=substream(seed, "data"))
    if "csv" not in cfg.csv:
        return synth_mia_task(spec)
    # CSV rows carry a membership column; members are moved to the front
    samples = load_csv(cfg.csv["csv"], cfg.csv.get("label_col", "y"), cfg.csv.get("attribute_col", "u"),
                       attribute_kind=MEMBERSHIP)
    x, y, u = samples_to_arrays(samples)
    order = np.r_[np.flatnonzero(u == 1), np.flatnonzero(u == 0)]
    x, y, u = x[order], y[order], u[order].astype(np.int64)
    n_m = int(u.sum())
    split = make_split(n_m, len(u) - n_m, spec.attack_frac, spec.seed)
    return MiaTask(x, y, u, split, int(y.max()) + 1)


def _train_membership(cfg, task, arch, game, d1, d0, d_util, noise_seed) -> tuple:
    """(encoder, utility head, loss history) for the configured membership-family defense."""
    if cfg.defense in ("mia", "none"):
        if cfg.defense == "none":
            game = dataclasses.replace(game, lam=0.0)
        st = train_mia_defense(d1, d0, game, task.n_classes, arch, d_util=d_util)
        return st.encoder, st.utility_head, st.history
    if cfg.defense == "advreg":
        st = init_advreg_state(task.x.shape[1], task.n_classes, game, arch)
        st = train_mia_defense(d1, d0, game, task.n_classes, arch, d_util=d_util, state=st)
        return st.encoder, st.utility_head, st.history
    if cfg.defense == "dpsgd":
        enc = arch.encoder(task.x.shape[1], game.seed)
        head = arch.utility(task.n_classes, game.seed + 1)
        train_dpsgd(torch.nn.Sequential(enc, head), *d_util, cfg.dp, seed=noise_seed)
        return enc, head, []
    raise ValueError(f"no membership trainer for {cfg.defense!r}")


def _shadow_trainer(cfg, task, arch, game, n_d0: int, seed: int):
    """Retrains the whole defense on a shadow member set drawn from the pool."""
    x, y = task.x, task.y

    def train(k, idx):
        out = np.setdiff1d(np.arange(len(y)), idx)
        rng = np.random.default_rng([seed, k])
        d0 = x[rng.choice(out, size=min(n_d0, len(out)), replace=False)]
        g = dataclasses.replace(game, seed=game.seed + 7919 * (k + 1))
        enc, head, _ = _train_membership(cfg, task, arch, g, (x[idx], y[idx]), d0, (x[idx], y[idx]),
                                         substream(seed, "noise") + k + 1)
        return torch.nn.Sequential(enc, head)

    return train


def _membership_eval(cfg, task, encoder, arch, seed, rep_noise=None, utility_model=None,
                     shadow=None) -> tuple:
    xa, _, ua = task.attack_train
    xb, _, ub = task.attack_test
    aseed = substream(seed, "attack")
    clf = attacks.train_mia_attacker(encoder, xa, ua, arch.head_hidden, arch.activation, seed=aseed,
                                     rep_noise=rep_noise, **_attack_kw(cfg))
    report = attacks.evaluate_mia_attacker(clf, encoder, xb, ub, rep_noise=rep_noise)
    out = [report.to_dict()]
    n_shadow = int(cfg.attack.get("lira_shadows", 0))
    if n_shadow and rep_noise is None:
        # every point is a target; shadows rerun the defense on random halves of the whole pool
        mx, my = task.members
        idx = np.arange(len(task.u))
        lira = attacks.shadow_lira(encoder, mx, my, task.x, task.y, idx, task.u, n_shadow,
                                   arch.head_hidden, arch.activation, seed=aseed, target_head=utility_model,
                                   train_shadow=shadow)
        out.append(lira.to_dict())
    with torch.no_grad():
        r = attacks.encode(encoder, xb)
        if rep_noise is not None:
            r = rep_noise(r)
    plug, ce = bounds.conditional_entropy_estimates(None, clf, r, ub)
    bnd = {"h_plugin_bits": plug, "h_ce_bits": ce, "bound_plugin": bounds.mia_leakage_bound(plug),
           "bound_ce": bounds.mia_leakage_bound(ce), "certified": False}
    return out, bnd


def _run_mia_family(cfg: ExperimentConfig, point: dict, seed: int, rec: ResultsRecord):
    task = _mia_task(cfg, seed)
    arch = _arch(cfg)
    game = _game(cfg, point, seed)
    d1i, d0i = task.d1_d0()
    d1 = (task.x[d1i], task.y[d1i])
    d0 = task.x[d0i]
    xt, yt = task.utility_test
    rep_noise = None
    shadow = None
    if cfg.defense == "dpsgd" and "sigma" in point:
        cfg = dataclasses.replace(cfg, dp=dataclasses.replace(cfg.dp, noise_sigma=point["sigma"]))
    if cfg.defense != "dp-encoder":
        enc, head, rec.losses = _train_membership(cfg, task, arch, game, d1, d0, task.members,
                                                  substream(seed, "noise"))
        shadow = _shadow_trainer(cfg, task, arch, game, len(d0i), seed)
    else:
        dp = dataclasses.replace(cfg.dp, **({"sigma2": point["sigma2"]} if "sigma2" in point else {}))
        st = train_mia_defense(d1, d0, dataclasses.replace(game, lam=0.0), task.n_classes, arch,
                               d_util=task.members)
        enc = st.encoder
        rec.losses = st.history
        rep_noise = NoisyPublisher(dp.sigma2, substream(seed, "noise"))
        head = fit_noisy_head(arch.utility(task.n_classes, game.seed + 1), enc, *task.members, rep_noise,
                              seed=game.seed)
    if rep_noise is None:
        rec.utility = accuracy(torch.nn.Sequential(enc, head), xt, yt)
    else:
        with torch.no_grad():
            r = rep_noise(enc(as_tensor(xt)))
        rec.utility = accuracy(head, r, yt)
    rec.stage = "attack"
    rec.attacks, rec.bounds = _membership_eval(cfg, task, enc, arch, seed, rep_noise,
                                               head if rep_noise is None else None, shadow)
    return enc, None, {}


def _run_pia(cfg: ExperimentConfig, point: dict, seed: int, rec: ResultsRecord):
    spec = dataclasses.replace(cfg.data, seed=substream(seed, "data"))
    task = synth_pia_bags(spec)
    arch = _arch(cfg)
    game = _game(cfg, point, seed)
    agg = cfg.attack.get("aggregator", "mean")
    st = train_pia_defense(task.train_bags, game, agg, task.n_classes, arch,
                           bags_per_batch=int(cfg.attack.get("bags_per_batch", 100)))
    rec.losses = st.history
    xt = np.concatenate([b.features() for b in task.test_bags])
    yt = np.concatenate([b.labels() for b in task.test_bags])
    rec.utility = accuracy(torch.nn.Sequential(st.encoder, st.utility_head), xt, yt)
    aseed = substream(seed, "attack")
    k = len(task.ratio_grid)
    for matched in (True, False):
        _, rep = attacks.train_pia_attacker(st.encoder, task.train_bags, task.test_bags, agg, k, matched,
                                            arch.head_hidden, arch.activation, seed=aseed)
        rec.attacks.append(rep.to_dict())
    return st.encoder, None, {"aggregator": agg, "ratio_grid": task.ratio_grid}


def _run_dra(cfg: ExperimentConfig, point: dict, seed: int, rec: ResultsRecord):
    spec = dataclasses.replace(cfg.data, seed=substream(seed, "data"))
    task = synth_dra_task(spec)
    arch = _arch(cfg, DraArch)
    game = _game(cfg, point, seed)
    family = cfg.attack.get("family", "gaussian-tanh")
    st = train_dra_defense(task.x_train, task.y_train, game, task.n_classes, arch, family)
    rec.losses = st.history
    rec.utility = perturbed_accuracy(st, task.x_test, task.y_test, seed=substream(seed, "noise"))
    _, rep = attacks.train_dra_attacker(st.encoder, st.perturbation, task.x_train, task.x_test,
                                        seed=substream(seed, "attack"), grid=task.grid, **_attack_kw(cfg))
    rec.recon = rep.to_dict()
    rec.bounds = {"max_norm": st.geometry.max_norm}
    if "mi_nats" in cfg.bounds and "eta" in cfg.bounds:
        geom = bounds.GeometrySpec(task.x_train.shape[1], cfg.bounds["eta"])
        rec.bounds["dra_error_bound"] = bounds.dra_error_bound(cfg.bounds["mi_nats"], geom)
    return st.encoder, st.perturbation, {}


RUNNERS = {"mia": _run_mia_family, "none": _run_mia_family, "advreg": _run_mia_family,
           "dpsgd": _run_mia_family, "dp-encoder": _run_mia_family, "pia": _run_pia, "dra": _run_dra}


def run_point(cfg: ExperimentConfig, seed: int, point: dict, checkpoint: bool = True) -> ResultsRecord:
    """Train, attack and score one (seed, sweep point); failures are recorded, not raised."""
    torch.manual_seed(substream(seed, "init"))
    rec = ResultsRecord(cfg.defense, int(seed), dict(point), cfg.snapshot())
    rec.stage = "train"
    t0 = time.perf_counter()
    try:
        enc, pert, meta = RUNNERS[cfg.defense](cfg, point, seed, rec)
        if checkpoint:
            save_checkpoint(Path(cfg.out_dir) / "checkpoints" / f"{rec.name()}.npz", enc, cfg.defense,
                            pert, meta.get("aggregator"), meta.get("ratio_grid", ()))
    except Exception as exc:  # recorded with its stage, partial results kept
        log.exception("run failed")
        rec.error = {"stage": rec.stage, "message": f"{type(exc).__name__}: {exc}"}
    rec.wall_clock = time.perf_counter() - t0
    del rec.stage
    rec.save(cfg.out_dir)
    return rec


def _job(args):
    cfg, seed, point = args
    torch.set_num_threads(1)
    return run_point(cfg, seed, point)


def run(cfg: ExperimentConfig) -> list:
    jobs = [(cfg, s, p) for s in cfg.seeds for p in sweep_points(cfg.sweep)]
    if cfg.workers <= 1:
        return [_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
        return list(ex.map(_job, jobs))


def export_representations(checkpoint, dataset, path, seed: int = 0) -> Path:
    """Write one CSV row per sample: representation coordinates, label, attribute.

    ``dataset`` is ``(x, y, u)`` or a CSV path readable by :func:`load_csv`
    with columns ``y`` and ``u``. Reconstruction checkpoints publish one
    seeded perturbation draw per row.
    """
    enc, desc, pert = load_checkpoint(checkpoint)
    if isinstance(dataset, (str, Path)):
        x, y, u = samples_to_arrays(load_csv(dataset, "y", "u"))
    else:
        x, y, u = (np.asarray(v) for v in dataset)
    x = as_tensor(x)
    if x.shape[1] != desc["encoder"]["widths"][0]:
        raise ValueError(f"data has {x.shape[1]} features, encoder expects {desc['encoder']['widths'][0]}")
    with torch.no_grad():
        r = enc(x)
        if pert is not None and pert.epsilon > 0:
            r = r + sample_perturbation(pert, torch.Generator().manual_seed(seed), len(r))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"r{i}" for i in range(r.shape[1])] + ["y", "u"])
        for row, yi, ui in zip(r.numpy(), y, u):
            w.writerow([repr(float(v)) for v in row] + [int(yi), int(ui)])
    return path


def _sweep_value(rec: ResultsRecord):
    return tuple(rec.point[k] for k in sorted(rec.point))


def report(records: list, out_dir) -> dict:
    """Per-defense summary tables (CSV + Markdown) and ROC point files."""
    if not records:
        raise ValueError("no records to report")
    versions = {r.version for r in records}
    if len(versions) != 1:
        raise RecordVersionError(f"mixed record versions {sorted(versions)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups: dict = {}
    for r in records:
        groups.setdefault(r.defense, []).append(r)
    md = []
    tables = {}
    for defense in sorted(groups):
        recs = sorted(groups[defense], key=lambda r: (_sweep_value(r), r.seed))
        metric_keys = sorted({k for r in recs for k in r.metrics()})
        point_keys = sorted({k for r in recs for k in r.point})
        header = point_keys + ["seed"] + metric_keys
        rows = [[r.point.get(k, "") for k in point_keys] + [r.seed] + [r.metrics().get(k, "") for k in metric_keys]
                for r in recs]
        tables[defense] = rows
        with open(out_dir / f"summary_{defense}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        md.append(f"## {defense}\n")
        md.append("| " + " | ".join(header) + " |")
        md.append("|" + "---|" * len(header))
        for row in rows:
            md.append("| " + " | ".join(f"{v:.4f}" if isinstance(v, float) else str(v) for v in row) + " |")
        md.append("")
        for r in recs:
            for a in r.attacks:
                if a.get("roc"):
                    roc_path = out_dir / "roc" / f"{r.name()}-{a['kind']}.csv"
                    roc_path.parent.mkdir(parents=True, exist_ok=True)
                    np.savetxt(roc_path, np.asarray(a["roc"]), delimiter=",", header="fpr,tpr", comments="")
    (out_dir / "summary.md").write_text("\n".join(md), encoding="utf-8")
    return tables
