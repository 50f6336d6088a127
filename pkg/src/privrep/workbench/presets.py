"""Benchmark settings used by the trend checks, the scripts and the example configs.

Each preset returns an ``ExperimentConfig``; ``sweep`` and ``seeds`` are
left for the caller.
"""

from __future__ import annotations

import dataclasses

from ..core import GameConfig
from ..data import SynthSpec
from ..dp_baselines import DpConfig
from .config import ExperimentConfig

# Leaky membership benchmark: a weak task signal (Bayes accuracy about 0.6)
# so a wide encoder memorises the 500 members. The 2-d tanh bottleneck and
# the linear task head keep the representation small enough for the
# membership head to police it.
MIA_DATA = SynthSpec(separation=1.0, label_noise=0.3)
MIA_ARCH = {"enc_hidden": 256, "rep_dim": 2, "head_hidden": 32, "enc_out_activation": "tanh",
            "utility_hidden": 0}
MIA_GAME = GameConfig(rounds=100, lr1=3e-3, lr2=1e-3, lr3=1e-3, adv_steps=5)

# Property benchmark: four ratio classes, bags of 50-100 samples, and an
# attribute that shifts features along a direction orthogonal to the task.
PIA_DATA = SynthSpec(attribute_effect=8.0, bag_size=(50, 100))
PIA_ARCH = {"rep_dim": 8, "enc_out_activation": "tanh", "utility_hidden": 0}
PIA_GAME = GameConfig(rounds=300, lr1=1e-2, lr2=1e-2, lr3=1.5e-4, adv_steps=5)
PIA_ATTACK = {"aggregator": "mean", "bags_per_batch": "100"}

# Tabular reconstruction benchmark with the default shallow encoder.
DRA_DATA = SynthSpec()
DRA_GAME = GameConfig(lam=0.4, rounds=30)
DRA_ATTACK = {"epochs": "100"}


def mia_preset(defense: str = "mia", **game) -> ExperimentConfig:
    dp = DpConfig(epochs=100, lr=0.05) if defense in ("dpsgd", "dp-encoder") else None
    return ExperimentConfig(defense=defense, game=dataclasses.replace(MIA_GAME, **game), dp=dp,
                            data=MIA_DATA, arch=dict(MIA_ARCH))


def pia_preset(**game) -> ExperimentConfig:
    return ExperimentConfig(defense="pia", game=dataclasses.replace(PIA_GAME, **game), data=PIA_DATA,
                            arch=dict(PIA_ARCH), attack=dict(PIA_ATTACK))


def dra_preset(family: str = "gaussian-tanh", **game) -> ExperimentConfig:
    return ExperimentConfig(defense="dra", game=dataclasses.replace(DRA_GAME, **game), data=DRA_DATA,
                            attack={**DRA_ATTACK, "family": family})
