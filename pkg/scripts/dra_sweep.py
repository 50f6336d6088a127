"""Reconstruction defense over the perturbation budget epsilon.

    python3 scripts/dra_sweep.py --family uniform
"""

import argparse

import numpy as np

from _common import parse_seeds, run_grid
from privrep.workbench.presets import dra_preset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0-2")
    ap.add_argument("--epsilons", default="0,0.5,1,1.5")
    ap.add_argument("--lam", type=float, default=0.4)
    ap.add_argument("--family", default="gaussian-tanh", choices=["gaussian-tanh", "uniform"])
    ap.add_argument("--out", default="results/dra_sweep")
    args = ap.parse_args()
    cfg = dra_preset(args.family, lam=args.lam)
    eps = [float(v) for v in args.epsilons.split(",")]
    grid = run_grid(cfg, parse_seeds(args.seeds), "epsilon", eps, args.out)
    print(f"{'eps':>5} {'utility':>8} {'recon mse':>10}")
    for e, recs in grid.items():
        print(f"{e:5.2f} {np.mean([r.utility for r in recs]):8.3f} "
              f"{np.mean([r.recon['mean_mse'] for r in recs]):10.4f}")


if __name__ == "__main__":
    main()
