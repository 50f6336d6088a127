"""Property defense at a few lambdas: task utility, matched and substitute-aggregator attacks.

    python3 scripts/pia_sweep.py --seeds 0-4 --lams 0,0.75
"""

import argparse

import numpy as np

from _common import parse_seeds, run_grid
from privrep.workbench.presets import pia_preset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0-2")
    ap.add_argument("--lams", default="0,0.5,0.75")
    ap.add_argument("--aggregator", default="mean", choices=["mean", "max"])
    ap.add_argument("--out", default="results/pia_sweep")
    args = ap.parse_args()
    cfg = pia_preset()
    cfg.attack["aggregator"] = args.aggregator
    grid = run_grid(cfg, parse_seeds(args.seeds), "lam", [float(v) for v in args.lams.split(",")], args.out)
    print(f"{'lam':>5} {'utility':>8} {'matched':>8} {'substitute':>11}   (chance 0.25)")
    for lam, recs in grid.items():
        acc = {k: np.mean([a["accuracy"] for r in recs for a in r.attacks if a["kind"] == k])
               for k in ("pia", "pia-substitute")}
        print(f"{lam:5.2f} {np.mean([r.utility for r in recs]):8.3f} {acc['pia']:8.3f} {acc['pia-substitute']:11.3f}")


if __name__ == "__main__":
    main()
