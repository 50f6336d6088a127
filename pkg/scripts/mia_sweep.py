"""Membership defense over lambda: attack accuracy, utility and LiRA TPR at 1% FPR.

    python3 scripts/mia_sweep.py --seeds 0-9 --lira 16
"""

import argparse

import numpy as np

from _common import parse_seeds, run_grid
from privrep.workbench.presets import mia_preset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0-4")
    ap.add_argument("--lams", default="0,0.25,0.5,0.75,1")
    ap.add_argument("--lira", type=int, default=0, help="shadow models for LiRA (0 skips it)")
    ap.add_argument("--defense", default="mia", choices=["mia", "advreg"])
    ap.add_argument("--out", default="results/mia_sweep")
    args = ap.parse_args()
    cfg = mia_preset(args.defense)
    if args.lira:
        cfg.attack["lira_shadows"] = str(args.lira)
    lams = [float(v) for v in args.lams.split(",")]
    grid = run_grid(cfg, parse_seeds(args.seeds), "lam", lams, args.out)
    print(f"{'lam':>5} {'utility':>8} {'attack':>8} {'lira tpr@1%':>12}")
    for lam, recs in grid.items():
        att = np.mean([next(a["accuracy"] for a in r.attacks if a["kind"] == "mia") for r in recs])
        tprs = [a["tpr_at"]["0.01"] for r in recs for a in r.attacks if a["kind"] == "lira"]
        lira = f"{np.median(tprs):12.3f}" if tprs else f"{'-':>12}"
        print(f"{lam:5.2f} {np.mean([r.utility for r in recs]):8.3f} {att:8.3f} {lira}")


if __name__ == "__main__":
    main()
