"""Utility against membership-attack accuracy for the game and the two DP baselines.

Prints one row per operating point (seed means), sorted by attack accuracy
within each method, so the frontiers can be compared by eye.
"""

import argparse

import numpy as np

from _common import parse_seeds, run_grid
from privrep.workbench.presets import mia_preset

METHODS = {"mia": "lam", "dpsgd": "sigma", "dp-encoder": "sigma2"}
DEFAULTS = {"mia": "0,0.25,0.5,0.75,1", "dpsgd": "0,0.5,1,2,4", "dp-encoder": "0,0.1,0.3,1,3"}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0-4")
    for m in METHODS:
        ap.add_argument(f"--{m}", default=DEFAULTS[m], help=f"{METHODS[m]} values")
    ap.add_argument("--out", default="results/dp_compare")
    args = ap.parse_args()
    seeds = parse_seeds(args.seeds)
    print(f"{'method':>10} {'knob':>7} {'attack':>7} {'utility':>8}")
    for m, key in METHODS.items():
        values = [float(v) for v in getattr(args, m.replace("-", "_")).split(",")]
        rows = []
        for v, recs in run_grid(mia_preset(m), seeds, key, values, args.out).items():
            att = np.mean([next(a["accuracy"] for a in r.attacks if a["kind"] == "mia") for r in recs])
            rows.append((att, v, np.mean([r.utility for r in recs])))
        for att, v, util in sorted(rows):
            print(f"{m:>10} {v:7.2f} {att:7.3f} {util:8.3f}")


if __name__ == "__main__":
    main()
