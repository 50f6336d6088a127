"""Domain types shared by the defenses, attacks and bounds."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MEMBERSHIP = "membership"
PROPERTY = "property"
RAW_DATA = "raw-data"
ATTRIBUTE_KINDS = (MEMBERSHIP, PROPERTY, RAW_DATA)


class DimensionMismatch(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


@dataclass(frozen=True)
class PrivateAttribute:
    kind: str
    value: object

    def __post_init__(self):
        if self.kind not in ATTRIBUTE_KINDS:
            raise ValueError(f"unknown attribute kind {self.kind!r}")
        if self.kind == MEMBERSHIP and self.value not in (0, 1):
            raise ValueError("membership values must be 0 or 1")
        if self.kind == PROPERTY and (int(self.value) != self.value or self.value < 0):
            raise ValueError("property values must be non-negative integers")


@dataclass(frozen=True)
class LabeledSample:
    features: np.ndarray
    label: int
    attribute: PrivateAttribute | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 1:
            raise DimensionMismatch("features must be a 1-d vector")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        if self.label < 0:
            raise ValueError("labels must be non-negative")

    @property
    def dim(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class DatasetBag:
    """A small dataset whose private attribute is the ratio class it was drawn for."""

    samples: tuple
    property: PrivateAttribute
    ratio: float = float("nan")

    def __post_init__(self):
        if len(self.samples) == 0:
            raise EmptyDataset("a bag needs at least one sample")
        dims = {s.dim for s in self.samples}
        if len(dims) != 1:
            raise DimensionMismatch(f"bag mixes feature dimensions {sorted(dims)}")
        if self.property.kind != PROPERTY:
            raise ValueError("bag attribute must be of kind 'property'")
        object.__setattr__(self, "samples", tuple(self.samples))

    def features(self) -> np.ndarray:
        return np.stack([s.features for s in self.samples])

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def attributes(self) -> np.ndarray:
        """Per-sample binary attribute values (-1 where a sample carries none)."""
        return np.array([s.attribute.value if s.attribute is not None else -1 for s in self.samples],
                        dtype=np.int64)

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class Representation:
    values: np.ndarray
    source: str = ""

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1:
            raise DimensionMismatch("representation must be a 1-d vector")
        if not np.all(np.isfinite(vals)):
            raise ValueError("representation has non-finite entries")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class SplitPlan:
    utility_train: np.ndarray
    utility_test: np.ndarray
    attack_train: np.ndarray
    attack_test: np.ndarray

    def check_disjoint(self) -> None:
        if np.intersect1d(self.utility_train, self.utility_test).size:
            raise AssertionError("utility train/test overlap")
        if np.intersect1d(self.attack_train, self.attack_test).size:
            raise AssertionError("attack train/test overlap")


@dataclass(frozen=True)
class SplitReport:
    n: int
    d: int
    n_classes: int
    class_counts: list
    attribute_counts: dict = field(default_factory=dict)


@dataclass
class GameConfig:
    """Hyperparameters of one adversarial training run.

    ``lr1``/``lr2``/``lr3`` drive the privacy head, the utility head and the
    encoder respectively; ``lr_phi`` and ``phi_epochs`` drive the perturbation
    inner loop of the reconstruction game. ``adv_steps`` repeats the
    adversary-head update before each encoder update.
    """

    lam: float = 0.5
    alpha: float = 1.0
    epsilon: float = 0.0
    mc_samples: int = 5
    rounds: int = 50
    inner_steps: int = 1
    adv_steps: int = 1
    lr1: float = 1e-3
    lr2: float = 1e-3
    lr3: float = 1e-3
    lr_phi: float = 1e-2
    phi_epochs: int = 1
    batch_size: int = 128
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        for name in ("mc_samples", "rounds", "inner_steps", "adv_steps", "phi_epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        for name in ("lr1", "lr2", "lr3", "lr_phi"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @property
    def beta(self) -> float:
        """Entropy weight seen by the perturbation update: lam * alpha / (1 - lam)."""
        if self.alpha == 0:
            return 0.0
        if self.lam >= 1.0:
            raise ValueError("beta is undefined for lambda = 1 with alpha > 0")
        return self.lam * self.alpha / (1.0 - self.lam)


def validate_dataset(samples: Sequence[LabeledSample]) -> SplitReport:
    if len(samples) == 0:
        raise EmptyDataset("no samples")
    d = samples[0].dim
    for i, s in enumerate(samples):
        if s.dim != d:
            raise DimensionMismatch(f"sample {i} has dimension {s.dim}, expected {d}")
    labels = [s.label for s in samples]
    n_classes = max(labels) + 1
    counts = [0] * n_classes
    for y in labels:
        counts[y] += 1
    attrs = Counter()
    for s in samples:
        if s.attribute is not None and s.attribute.kind != RAW_DATA:
            attrs[int(s.attribute.value)] += 1
    return SplitReport(n=len(samples), d=d, n_classes=n_classes,
                       class_counts=counts, attribute_counts=dict(sorted(attrs.items())))


def make_split(n_members: int, n_nonmembers: int, attack_frac: float, seed: int) -> SplitPlan:
    """Index plan over a store laid out as [members | non-members].

    Members form the utility training set and non-members the utility test
    set. ``attack_frac`` of each group goes to the attack training set, the
    rest to the attack test set.
    """
    if not 0.0 < attack_frac < 1.0:
        raise ValueError(f"attack_frac must lie in (0, 1), got {attack_frac}")
    if n_members < 1 or n_nonmembers < 1:
        raise ValueError("need at least one member and one non-member")
    rng = np.random.default_rng(seed)
    members = np.arange(n_members)
    nonmembers = np.arange(n_members, n_members + n_nonmembers)
    pm = rng.permutation(members)
    pn = rng.permutation(nonmembers)
    km = int(math.floor(attack_frac * n_members + 0.5))
    kn = int(math.floor(attack_frac * n_nonmembers + 0.5))
    plan = SplitPlan(
        utility_train=members,
        utility_test=nonmembers,
        attack_train=np.sort(np.concatenate([pm[:km], pn[:kn]])),
        attack_test=np.sort(np.concatenate([pm[km:], pn[kn:]])),
    )
    plan.check_disjoint()
    return plan
