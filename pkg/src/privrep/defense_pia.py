"""Property-privacy game on aggregated dataset representations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .core import PROPERTY, DatasetBag, GameConfig, LabeledSample, PrivateAttribute, Representation
from .defense_mia import Arch, TrainingDiverged
from .mi import cross_entropy
from .nn import NonFiniteLoss, Optimizer, as_tensor, flat_params

AGGREGATORS = ("mean", "max")


class InsufficientSamples(ValueError):
    pass


@dataclass(frozen=True)
class AggregatorMode:
    mode: str = "mean"

    def __post_init__(self):
        if self.mode not in AGGREGATORS:
            raise ValueError(f"aggregator must be one of {AGGREGATORS}, got {self.mode!r}")


def sample_bags(reference, ratio_grid, size_range: tuple, count: int, seed: int) -> list:
    """Draw ``count`` bags; bag j uses ratio index j % K so classes stay balanced.

    ``reference`` is ``(x, y, a)`` with a binary attribute column ``a``. The
    number of attribute-1 samples in a bag of size n at ratio p is
    round-half-even(p * n); samples are drawn without replacement within a bag.
    """
    x, y, a = (np.asarray(v) for v in reference)
    if a.ndim != 1 or len(a) != len(x):
        raise ValueError("attribute column must be one value per row")
    lo, hi = size_range
    if lo < 2 or hi < lo:
        raise ValueError("size_range must satisfy 2 <= min <= max")
    grid = [float(p) for p in ratio_grid]
    if any(not 0.0 <= p <= 1.0 for p in grid):
        raise ValueError("ratios must lie in [0, 1]")
    pos = np.flatnonzero(a == 1)
    neg = np.flatnonzero(a == 0)
    rng = np.random.default_rng(seed)
    bags = []
    for j in range(count):
        k = j % len(grid)
        n = int(rng.integers(lo, hi + 1))
        n_pos = int(np.round(grid[k] * n))  # numpy rounds half to even
        if n_pos > len(pos) or n - n_pos > len(neg):
            raise InsufficientSamples(f"bag of size {n} at ratio {grid[k]} needs {n_pos} / {n - n_pos} "
                                      f"samples, pool has {len(pos)} / {len(neg)}")
        idx = np.r_[rng.choice(pos, n_pos, replace=False), rng.choice(neg, n - n_pos, replace=False)]
        rng.shuffle(idx)
        samples = [LabeledSample(x[i], int(y[i]), PrivateAttribute(PROPERTY, int(a[i]))) for i in idx]
        bags.append(DatasetBag(samples, PrivateAttribute(PROPERTY, k), grid[k]))
    return bags


def aggregate_tensor(r: torch.Tensor, mode: str) -> torch.Tensor:
    if r.shape[0] == 0:
        raise ValueError("cannot aggregate an empty set of representations")
    if mode == "mean":
        return r.mean(dim=0)
    if mode == "max":
        return r.max(dim=0).values
    raise ValueError(f"unknown aggregator {mode!r}")


def aggregate(reps: list, mode: str) -> Representation:
    if len(reps) == 0:
        raise ValueError("cannot aggregate an empty set of representations")
    vals = [np.asarray(getattr(r, "values", r), dtype=np.float64) for r in reps]
    if len({v.shape for v in vals}) != 1:
        raise ValueError("representations differ in dimension")
    stacked = np.stack(vals)
    out = stacked.mean(axis=0) if mode == "mean" else stacked.max(axis=0) if mode == "max" else None
    if out is None:
        raise ValueError(f"unknown aggregator {mode!r}")
    return Representation(out, f"aggregate:{mode}")


def segment_aggregate(r: torch.Tensor, seg: torch.Tensor, n_seg: int, mode: str) -> torch.Tensor:
    """Aggregate rows of ``r`` into ``n_seg`` groups given by ``seg``."""
    idx = seg.unsqueeze(1).expand_as(r)
    if mode == "mean":
        sums = torch.zeros(n_seg, r.shape[1], dtype=r.dtype).index_add(0, seg, r)
        counts = torch.bincount(seg, minlength=n_seg).to(r.dtype).unsqueeze(1)
        return sums / counts
    if mode == "max":
        init = torch.full((n_seg, r.shape[1]), -torch.inf, dtype=r.dtype)
        return init.scatter_reduce(0, idx, r, reduce="amax", include_self=True)
    raise ValueError(f"unknown aggregator {mode!r}")


@dataclass
class PiaGameState:
    encoder: torch.nn.Module
    property_head: torch.nn.Module
    utility_head: torch.nn.Module
    aggregator: AggregatorMode
    config: GameConfig
    ratio_grid: tuple = ()
    round: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.property_head.in_dim != self.encoder.out_dim:
            raise ValueError("property head must consume aggregated representations")


def init_pia_state(d: int, n_properties: int, n_classes: int, config: GameConfig,
                   aggregator: str = "mean", arch: Arch | None = None, ratio_grid=()) -> PiaGameState:
    arch = arch or Arch()
    s = config.seed
    return PiaGameState(arch.encoder(d, s * 3 + 1), arch.head(n_properties, s * 3 + 2),
                        arch.utility(n_classes, s * 3 + 3), AggregatorMode(aggregator), config,
                        tuple(ratio_grid))


def _stack_bags(bags) -> tuple:
    x = torch.cat([as_tensor(b.features()) for b in bags])
    y = torch.cat([torch.as_tensor(b.labels()) for b in bags])
    seg = torch.cat([torch.full((len(b),), j, dtype=torch.long) for j, b in enumerate(bags)])
    u = torch.tensor([int(b.property.value) for b in bags], dtype=torch.long)
    return x, y, seg, u


def _bag_terms(state: PiaGameState, x, y, seg, u) -> tuple:
    r = state.encoder(x)
    agg = segment_aggregate(r, seg, len(u), state.aggregator.mode)
    return cross_entropy(state.property_head(agg), u), cross_entropy(state.utility_head(r), y)


def pia_losses(state: PiaGameState, bags) -> tuple:
    """(L1, L2) summed over bags and over every sample of every bag."""
    if len(bags) == 0:
        raise ValueError("empty batch")
    l1, l2 = _bag_terms(state, *_stack_bags(bags))
    return l1.sum(), l2.sum()


def train_pia_defense(bags, config: GameConfig, aggregator: str = "mean", n_classes: int | None = None,
                      arch: Arch | None = None, bags_per_batch: int = 16,
                      state: PiaGameState | None = None) -> PiaGameState:
    """Alternate property-head, utility-head and encoder updates over a fixed bag pool."""
    props = sorted({int(b.property.value) for b in bags})
    if len(props) < 2:
        raise ValueError("at least two property classes are required")
    grid = tuple(sorted({b.ratio for b in bags}))
    stacked = [_stack_bags([b]) for b in bags]
    if n_classes is None:
        n_classes = int(max(int(s[1].max()) for s in stacked)) + 1
    if state is None:
        state = init_pia_state(stacked[0][0].shape[1], max(props) + 1, n_classes, config,
                               aggregator, arch, grid)
    enc, g, h = state.encoder, state.property_head, state.utility_head
    lam = config.lam
    gen = torch.Generator().manual_seed(config.seed * 7919 + 29)
    opt_g = Optimizer(g.parameters(), config.optimizer, config.lr1)
    opt_h = Optimizer(h.parameters(), config.optimizer, config.lr2)
    opt_f = Optimizer(enc.parameters(), config.optimizer, config.lr3)
    for t in range(config.rounds):
        sums = np.zeros(2)
        count = 0
        perm = torch.randperm(len(bags), generator=gen)
        for k in range(0, len(bags), bags_per_batch):
            batch = [bags[int(i)] for i in perm[k:k + bags_per_batch]]
            x, y, seg, u = _stack_bags(batch)
            try:
                for _ in range(config.inner_steps):
                    with torch.no_grad():
                        r = enc(x)
                    agg = segment_aggregate(r, seg, len(u), state.aggregator.mode)
                    for _ in range(config.adv_steps):
                        l1 = cross_entropy(g(agg), u).mean()
                        opt_g.step(l1)
                    l2 = cross_entropy(h(r), y).mean()
                    opt_h.step(l2)
                    c1, c2 = _bag_terms(state, x, y, seg, u)
                    opt_f.step(-(lam * c1.mean() - (1.0 - lam) * c2.mean()))
            except NonFiniteLoss as exc:
                raise TrainingDiverged(f"round {t}: {exc}") from exc
            sums += (l1.item(), l2.item())
            count += 1
        state.round += 1
        state.history.append({"round": state.round, "L1": sums[0] / count, "L2": sums[1] / count})
    if not torch.all(torch.isfinite(flat_params(enc))):
        raise TrainingDiverged("encoder parameters became non-finite")
    return state
