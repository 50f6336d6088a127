"""Synthetic benchmarks with controllable leakage, and CSV ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (MEMBERSHIP, PROPERTY, LabeledSample, PrivateAttribute, SplitPlan,
                   make_split)


class MissingColumn(KeyError):
    pass


class CsvFormatError(ValueError):
    pass


@dataclass
class SynthSpec:
    n_members: int = 500
    n_nonmembers: int = 500
    d: int = 20
    n_classes: int = 2
    separation: float = 2.0
    label_noise: float = 0.1
    attack_frac: float = 0.8
    # property inference
    pool_size: int = 6000
    ratio_grid: tuple = (0.2, 0.3, 0.4, 0.5)
    bag_size: tuple = (20, 40)
    n_train_bags: int = 400
    n_test_bags: int = 200
    attribute_effect: float = 1.0
    # reconstruction
    latent_dim: int = 4
    grid: tuple | None = None
    feature_noise: float = 0.05
    seed: int = 0


@dataclass
class MiaTask:
    """Members occupy indices [0, n_members); non-members follow."""

    x: np.ndarray
    y: np.ndarray
    u: np.ndarray
    split: SplitPlan
    n_classes: int

    @property
    def members(self):
        return self.x[self.split.utility_train], self.y[self.split.utility_train]

    @property
    def utility_test(self):
        return self.x[self.split.utility_test], self.y[self.split.utility_test]

    @property
    def attack_train(self):
        idx = self.split.attack_train
        return self.x[idx], self.y[idx], self.u[idx]

    @property
    def attack_test(self):
        idx = self.split.attack_test
        return self.x[idx], self.y[idx], self.u[idx]

    def d1_d0(self):
        """Defense-time member (D1) and non-member (D0) index sets."""
        att = self.split.attack_train
        return att[self.u[att] == 1], att[self.u[att] == 0]

    def samples(self) -> list:
        return [LabeledSample(self.x[i], int(self.y[i]), PrivateAttribute(MEMBERSHIP, int(self.u[i])))
                for i in range(len(self.y))]


@dataclass
class PiaTask:
    train_bags: list
    test_bags: list
    ratio_grid: tuple
    n_classes: int

    @property
    def chance(self) -> float:
        return 1.0 / len(self.ratio_grid)


@dataclass
class DraTask:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    n_classes: int
    grid: tuple | None = None
    meta: dict = field(default_factory=dict)


def _class_means(rng, n_classes: int, d: int, separation: float) -> np.ndarray:
    dirs = rng.standard_normal((n_classes, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return 0.5 * separation * dirs


def _mixture(rng, n: int, means: np.ndarray, label_noise: float):
    n_classes, d = means.shape
    y = rng.integers(0, n_classes, size=n)
    x = means[y] + rng.standard_normal((n, d))
    flip = rng.random(n) < label_noise
    y = np.where(flip, rng.integers(0, n_classes, size=n), y)
    return x, y


def synth_mia_task(spec: SynthSpec) -> MiaTask:
    """Members and non-members are i.i.d. from one mixture; leakage comes from overfitting."""
    rng = np.random.default_rng([spec.seed, 101])
    means = _class_means(rng, spec.n_classes, spec.d, spec.separation)
    n = spec.n_members + spec.n_nonmembers
    x, y = _mixture(rng, n, means, spec.label_noise)
    u = np.r_[np.ones(spec.n_members, dtype=np.int64), np.zeros(spec.n_nonmembers, dtype=np.int64)]
    split = make_split(spec.n_members, spec.n_nonmembers, spec.attack_frac, spec.seed)
    return MiaTask(x, y.astype(np.int64), u, split, spec.n_classes)


def synth_pia_pool(spec: SynthSpec, rng) -> tuple:
    """Labelled pool with a binary attribute that shifts features off the class axis."""
    means = _class_means(rng, spec.n_classes, spec.d, spec.separation)
    x, y = _mixture(rng, spec.pool_size, means, spec.label_noise)
    # attribute direction orthogonal to the class means so it can be hidden cheaply
    w = rng.standard_normal(spec.d)
    q, _ = np.linalg.qr(means.T)
    w -= q @ (q.T @ w)
    w /= np.linalg.norm(w)
    a = (rng.random(spec.pool_size) < 0.5).astype(np.int64)
    x = x + spec.attribute_effect * a[:, None] * w
    return x, y.astype(np.int64), a


def synth_pia_bags(spec: SynthSpec) -> PiaTask:
    from .defense_pia import sample_bags

    rng = np.random.default_rng([spec.seed, 202])
    x, y, a = synth_pia_pool(spec, rng)
    half = spec.pool_size // 2
    train = (x[:half], y[:half], a[:half])
    test = (x[half:], y[half:], a[half:])
    train_bags = sample_bags(train, spec.ratio_grid, spec.bag_size, spec.n_train_bags,
                             seed=int(rng.integers(2**31)))
    test_bags = sample_bags(test, spec.ratio_grid, spec.bag_size, spec.n_test_bags,
                            seed=int(rng.integers(2**31)))
    return PiaTask(train_bags, test_bags, tuple(spec.ratio_grid), spec.n_classes)


def _smooth_bases(rng, k: int, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w] / max(h - 1, 1)
    bases = []
    for _ in range(k):
        fy, fx = rng.uniform(0.5, 2.0, size=2)
        py, px = rng.uniform(0, 2 * np.pi, size=2)
        bases.append(np.sin(2 * np.pi * fy * yy + py) * np.cos(2 * np.pi * fx * xx + px))
    return np.stack([b.ravel() for b in bases], axis=1)


def synth_dra_task(spec: SynthSpec, n_train: int = 1000, n_test: int = 500) -> DraTask:
    """Inputs in [0, 1]^d generated from a low-dimensional latent; labels from the latent."""
    rng = np.random.default_rng([spec.seed, 303])
    if spec.grid is not None:
        h, w = spec.grid
        d = h * w
        mix = 1.5 * _smooth_bases(rng, spec.latent_dim, h, w)
    else:
        d = spec.d
        mix = rng.standard_normal((d, spec.latent_dim)) / np.sqrt(spec.latent_dim) * 1.5
    label_dir = rng.standard_normal(spec.latent_dim)
    label_dir /= np.linalg.norm(label_dir)

    def draw(n):
        z = rng.standard_normal((n, spec.latent_dim))
        x = 1.0 / (1.0 + np.exp(-(z @ mix.T + spec.feature_noise * rng.standard_normal((n, d)))))
        score = z @ label_dir
        if spec.n_classes == 2:
            y = (score > 0).astype(np.int64)
        else:
            edges = np.quantile(score, np.linspace(0, 1, spec.n_classes + 1)[1:-1])
            y = np.searchsorted(edges, score).astype(np.int64)
        flip = rng.random(n) < spec.label_noise
        y = np.where(flip, rng.integers(0, spec.n_classes, size=n), y)
        return x, y

    x_tr, y_tr = draw(n_train)
    x_te, y_te = draw(n_test)
    return DraTask(x_tr, y_tr, x_te, y_te, spec.n_classes, spec.grid)


def load_csv(path, label_col: str, attribute_col: str | None = None,
             attribute_kind: str = PROPERTY) -> list:
    """Read a numeric CSV with a header into samples, preserving row order."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration as exc:
            raise CsvFormatError("empty file") from exc
        for col in [label_col] + ([attribute_col] if attribute_col else []):
            if col not in header:
                raise MissingColumn(col)
        li = header.index(label_col)
        ai = header.index(attribute_col) if attribute_col else None
        feat_idx = [i for i in range(len(header)) if i not in (li, ai)]
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvFormatError(f"line {lineno}: expected {len(header)} cells, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise CsvFormatError(f"line {lineno}: non-numeric cell") from exc
            attr = PrivateAttribute(attribute_kind, int(vals[ai])) if ai is not None else None
            out.append(LabeledSample(np.array([vals[i] for i in feat_idx]), int(vals[li]), attr))
    return out


def write_csv(path, samples: list, label_col: str = "y", attribute_col: str | None = None) -> None:
    d = samples[0].dim
    header = [f"x{i}" for i in range(d)] + [label_col] + ([attribute_col] if attribute_col else [])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for s in samples:
            row = [repr(float(v)) for v in s.features] + [s.label]
            if attribute_col:
                row.append(s.attribute.value if s.attribute is not None else "")
            w.writerow(row)


def samples_to_arrays(samples: list) -> tuple:
    x = np.stack([s.features for s in samples])
    y = np.array([s.label for s in samples], dtype=np.int64)
    u = np.array([s.attribute.value if s.attribute is not None else -1 for s in samples])
    return x, y, u


def gaussian_pairs(rho: float, n: int, n_bins: int = 2, seed: int = 0) -> tuple:
    """Correlated standard normals (r, v) with v quantile-binned into ``n_bins`` labels.

    I(r; v) = -0.5 ln(1 - rho^2) nats and binning can only lower it, so the
    discrete proxy u never carries more than the Gaussian value. With the
    default two bins u is the sign of v.
    """
    if not -1.0 < rho < 1.0:
        raise ValueError("rho must lie in (-1, 1)")
    rng = np.random.default_rng(seed)
    r = rng.standard_normal(n)
    v = rho * r + np.sqrt(1.0 - rho**2) * rng.standard_normal(n)
    from scipy.stats import norm
    edges = norm.ppf(np.linspace(0.0, 1.0, n_bins + 1)[1:-1])
    return r.reshape(-1, 1), np.searchsorted(edges, v).astype(np.int64)


def gaussian_mi_nats(rho: float) -> float:
    return float(-0.5 * np.log(1.0 - rho**2))
