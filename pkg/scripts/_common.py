"""Helpers shared by the sweep scripts."""

import sys

import torch

from privrep.workbench import run_point


def parse_seeds(text: str) -> list:
    """'0-4' or '0,3,7'."""
    if "-" in text:
        lo, hi = text.split("-")
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in text.split(",")]


def run_grid(cfg, seeds, key, values, out) -> dict:
    """{value: [record per seed]}; failed runs are reported and dropped."""
    torch.set_num_threads(1)
    cfg.out_dir = out
    grid = {}
    for v in values:
        recs = []
        for s in seeds:
            rec = run_point(cfg, s, {key: v}, checkpoint=False)
            if rec.error:
                print(f"seed {s} {key}={v} failed: {rec.error}", file=sys.stderr)
                continue
            recs.append(rec)
        grid[v] = recs
    return grid
