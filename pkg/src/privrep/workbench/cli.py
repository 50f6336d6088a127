"""Command line entry point: ``privrep <verb> --config FILE --seed N``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import torch

from .. import attacks, bounds
from .config import ExperimentConfig, load_config
from .records import load_checkpoint, load_records
from .runner import _mia_task, export_representations, report, run, run_point, substream, sweep_points


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seeds = (args.seed,)
    return cfg


def cmd_train(args) -> int:
    cfg = _config(args)
    for p in sweep_points(cfg.sweep)[:1] if not args.all_points else sweep_points(cfg.sweep):
        rec = run_point(cfg, cfg.seeds[0], p)
        print(json.dumps({"record": rec.name(), "utility": rec.utility, "error": rec.error}))
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    recs = run(cfg)
    report(recs, Path(cfg.out_dir) / "report")
    failed = [r.name() for r in recs if r.error]
    print(json.dumps({"records": len(recs), "failed": failed}))
    return 1 if failed else 0


def cmd_attack(args) -> int:
    """Re-run the membership attacker against a saved encoder on the configured benchmark."""
    cfg = _config(args)
    enc, desc, _ = load_checkpoint(args.checkpoint)
    if desc["defense"] not in ("mia", "none", "advreg", "dpsgd"):
        print("attack verb supports membership checkpoints only", file=sys.stderr)
        return 2
    task = _mia_task(cfg, cfg.seeds[0])
    xa, _, ua = task.attack_train
    xb, _, ub = task.attack_test
    clf = attacks.train_mia_attacker(enc, xa, ua, int(cfg.arch.get("head_hidden", 32)),
                                     seed=substream(cfg.seeds[0], "attack"))
    rep = attacks.evaluate_mia_attacker(clf, enc, xb, ub)
    print(json.dumps({"accuracy": rep.accuracy, "tpr_at": rep.tpr_at}))
    return 0


def cmd_bounds(args) -> int:
    cfg = _config(args)
    b = dict(cfg.bounds)
    out = {}
    if args.record:
        rec = load_records([args.record])[0]
        out["record"] = rec.name()
        out.update(rec.bounds)
        # leakage bounds recomputed from the stored conditional-entropy estimates; these are estimates
        for est in ("plugin", "ce"):
            if f"h_{est}_bits" in rec.bounds:
                out[f"bound_{est}"] = bounds.mia_leakage_bound(rec.bounds[f"h_{est}_bits"])
                out["certified"] = False
    if "h_bits" in b:
        out["mia_leakage_bound"] = bounds.mia_leakage_bound(b["h_bits"])
    if "mi_nats" in b and "d" in b and "eta" in b:
        out["dra_error_bound"] = bounds.dra_error_bound(b["mi_nats"], bounds.GeometrySpec(int(b["d"]), b["eta"]))
    if all(k in b for k in ("delta", "R", "C_L", "adv")):
        out["tradeoff_bound"] = bounds.tradeoff_bound(bounds.TradeoffInputs(b["delta"], b["R"], b["C_L"], b["adv"]))
    print(json.dumps(out))
    return 0


def cmd_export(args) -> int:
    cfg = _config(args)
    if args.data:
        dataset = args.data
    else:
        task = _mia_task(cfg, cfg.seeds[0])
        dataset = (task.x, task.y, task.u)
    path = export_representations(args.checkpoint, dataset, args.out, seed=cfg.seeds[0])
    print(path)
    return 0


def cmd_report(args) -> int:
    recs = load_records(args.records)
    report(recs, args.out)
    print(Path(args.out) / "summary.md")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="privrep", description="privacy-preserving representation learning")
    sub = ap.add_subparsers(dest="verb", required=True)

    def verb(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="root seed (overrides run.seeds)")
        p.set_defaults(fn=fn)
        return p

    p = verb("train", cmd_train, "train one defense and save its checkpoint and record")
    p.add_argument("--all-points", action="store_true", help="train every sweep point")
    verb("sweep", cmd_sweep, "run the full seed x sweep grid and write a report")
    p = verb("attack", cmd_attack, "attack a saved membership encoder")
    p.add_argument("--checkpoint", required=True)
    p = verb("bounds", cmd_bounds, "bound report for a results record and/or bounds.* config keys")
    p.add_argument("--record", help="ResultsRecord JSON file")
    p = verb("export-reps", cmd_export, "write representations to CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="CSV with feature columns plus y and u")
    p.add_argument("--out", required=True)
    p = verb("report", cmd_report, "summarize saved records")
    p.add_argument("--records", nargs="+", required=True)
    p.add_argument("--out", default="report")
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(int(os.environ.get("PRIVREP_THREADS", "1")))
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
