"""Reconstruction-privacy game: encoder plus learned bounded perturbation vs a JSD critic."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .core import GameConfig
from .defense_mia import TrainingDiverged
from .mi import PairCritic, PerturbationParams, cross_entropy, jsd_mi_objective
from .nn import Mlp, NonFiniteLoss, Optimizer, as_tensor, batches, flat_params


@dataclass
class DraArch:
    """The encoder output is squashed with tanh so r lives in [-1, 1]^m and
    the perturbation scale epsilon is comparable across runs."""

    enc_hidden: int = 64
    rep_dim: int = 8
    head_hidden: int = 32
    critic_hidden: int = 64
    activation: str = "relu"

    def encoder(self, d: int, seed: int) -> Mlp:
        return Mlp([d, self.enc_hidden, self.rep_dim], self.activation, "tanh", seed)

    def critic(self, d: int, seed: int) -> PairCritic:
        return PairCritic(Mlp([d + self.rep_dim, self.critic_hidden, 1], self.activation, seed=seed))

    def utility(self, n_classes: int, seed: int) -> Mlp:
        return Mlp([self.rep_dim, self.head_hidden, n_classes], self.activation, seed=seed)


@dataclass
class GeometryNote:
    """Running max of ||r + delta|| seen during training."""

    max_norm: float = 0.0

    def update(self, z: torch.Tensor) -> float:
        self.max_norm = max(self.max_norm, float(torch.linalg.vector_norm(z, dim=-1).max()))
        return self.max_norm


@dataclass
class DraGameState:
    encoder: torch.nn.Module
    critic: torch.nn.Module
    utility_head: torch.nn.Module
    perturbation: PerturbationParams
    config: GameConfig
    geometry: GeometryNote = field(default_factory=GeometryNote)
    round: int = 0
    history: list = field(default_factory=list)
    phi_opt: Optimizer | None = None

    def __post_init__(self):
        if self.perturbation.dim != self.encoder.out_dim:
            raise ValueError("perturbation dimension must match the representation")
        if self.config.lam < 1.0:
            self.config.beta  # raises for lam = 1 with alpha > 0


def init_dra_state(d: int, n_classes: int, config: GameConfig, arch: DraArch | None = None,
                   family: str = "gaussian-tanh") -> DraGameState:
    arch = arch or DraArch()
    s = config.seed
    pert = PerturbationParams(arch.rep_dim, config.epsilon, family)
    return DraGameState(arch.encoder(d, s * 3 + 1), arch.critic(d, s * 3 + 2),
                        arch.utility(n_classes, s * 3 + 3), pert, config)


def derangement(n: int, gen: torch.Generator) -> torch.Tensor:
    """Random permutation without fixed points (cyclic shift of a shuffled order)."""
    if n < 2:
        raise ValueError("a derangement needs at least two elements")
    order = torch.randperm(n, generator=gen)
    out = torch.empty(n, dtype=torch.long)
    out[order] = order.roll(-1)
    return out


def perturbation_objective(state: DraGameState, x, y, z: torch.Tensor) -> torch.Tensor:
    """Mean CE(y, h(f(x) + delta)) - beta * H(delta) for base-noise draws ``z``."""
    pert = state.perturbation
    with torch.no_grad():
        r = state.encoder(x)
    ce = cross_entropy(state.utility_head(r + pert.transform(z)), y).mean()
    beta = state.config.beta
    if beta == 0 or pert.epsilon == 0:
        return ce
    return ce - beta * pert.entropy_from_noise(z)


def update_perturbation_params(state: DraGameState, batch, lr: float | None = None,
                               epochs: int | None = None, k: int | None = None,
                               gen: torch.Generator | None = None) -> PerturbationParams:
    """``epochs`` passes of ``k`` single-draw Monte-Carlo steps on the perturbation objective."""
    cfg = state.config
    if cfg.lam >= 1.0 and cfg.alpha > 0:
        raise ValueError("beta is undefined for lambda = 1 with alpha > 0")
    pert = state.perturbation
    if pert.epsilon == 0:
        return pert
    lr = cfg.lr_phi if lr is None else lr
    epochs = cfg.phi_epochs if epochs is None else epochs
    k = cfg.mc_samples if k is None else k
    gen = gen or torch.Generator().manual_seed(cfg.seed)
    if state.phi_opt is None or state.phi_opt.state.lr != lr:
        state.phi_opt = Optimizer(pert.parameters(), cfg.optimizer, lr)
    x, y = as_tensor(batch[0]), torch.as_tensor(batch[1], dtype=torch.long)
    for _ in range(epochs):
        for _ in range(k):
            z = pert.base_noise(len(x), gen)
            state.phi_opt.step(perturbation_objective(state, x, y, z))
    return pert


def dra_losses(state: DraGameState, batch, delta: torch.Tensor, neg_index: torch.Tensor | None = None,
               gen: torch.Generator | None = None) -> tuple:
    """(I_jsd, L1_pert, L2_clean) summed over the batch.

    Negatives pair each perturbed representation with another row's input,
    chosen by ``neg_index`` or a fresh derangement.
    """
    x, y = as_tensor(batch[0]), torch.as_tensor(batch[1], dtype=torch.long)
    if len(x) < 2:
        raise ValueError("need at least two samples to draw an independent negative")
    if neg_index is None:
        neg_index = derangement(len(x), gen or torch.Generator().manual_seed(0))
    r = state.encoder(x)
    rp = r + delta
    i_jsd = jsd_mi_objective(state.critic, x, rp, x[neg_index])
    l1 = cross_entropy(state.utility_head(rp), y).sum()
    l2 = cross_entropy(state.utility_head(r), y).sum()
    return i_jsd, l1, l2


def train_dra_defense(x, y, config: GameConfig, n_classes: int | None = None,
                      arch: DraArch | None = None, family: str = "gaussian-tanh",
                      state: DraGameState | None = None) -> DraGameState:
    """Per batch: perturbation update, critic ascent, utility-head descent, encoder descent."""
    x = as_tensor(x)
    y = torch.as_tensor(y, dtype=torch.long)
    if n_classes is None:
        n_classes = int(y.max()) + 1
    if state is None:
        state = init_dra_state(x.shape[1], n_classes, config, arch, family)
    enc, critic, h, pert = state.encoder, state.critic, state.utility_head, state.perturbation
    lam = config.lam
    gen = torch.Generator().manual_seed(config.seed * 7919 + 41)
    opt_c = Optimizer(critic.parameters(), config.optimizer, config.lr1)
    opt_h = Optimizer(h.parameters(), config.optimizer, config.lr2)
    opt_f = Optimizer(enc.parameters(), config.optimizer, config.lr3)
    for t in range(config.rounds):
        sums = np.zeros(3)
        count = 0
        for idx in batches(len(x), config.batch_size, gen):
            if len(idx) < 2:
                continue
            xb, yb = x[idx], y[idx]
            n = len(idx)
            try:
                update_perturbation_params(state, (xb, yb), gen=gen)
                with torch.no_grad():
                    delta = pert.sample(n, gen)
                neg = derangement(n, gen)
                for _ in range(config.inner_steps):
                    with torch.no_grad():
                        r = enc(xb)
                    i_jsd = jsd_mi_objective(critic, xb, r + delta, xb[neg])
                    opt_c.step(-i_jsd / n)
                    l1 = cross_entropy(h(r + delta), yb).sum()
                    l2 = cross_entropy(h(r), yb).sum()
                    opt_h.step((l1 + l2) / n)
                    c_i, c_1, c_2 = dra_losses(state, (xb, yb), delta, neg)
                    opt_f.step((lam * c_i + (1.0 - lam) * (c_1 + c_2)) / n)
            except NonFiniteLoss as exc:
                raise TrainingDiverged(f"round {t}: {exc}") from exc
            with torch.no_grad():
                state.geometry.update(enc(xb) + delta)
            sums += (i_jsd.item() / n, l1.item() / n, l2.item() / n)
            count += 1
        if torch.any(pert.sample(256, gen).abs() > pert.epsilon):
            raise AssertionError("perturbation escaped its epsilon box")
        state.round += 1
        state.history.append({"round": state.round, "I_jsd": sums[0] / count, "L1": sums[1] / count,
                              "L2": sums[2] / count, "max_norm": state.geometry.max_norm})
    if not torch.all(torch.isfinite(flat_params(enc))):
        raise TrainingDiverged("encoder parameters became non-finite")
    return state


def perturbed_accuracy(state: DraGameState, x, y, seed: int = 0) -> float:
    """Utility-head accuracy on published representations f(x) + delta."""
    gen = torch.Generator().manual_seed(seed)
    x = as_tensor(x)
    with torch.no_grad():
        r = state.encoder(x)
        if state.perturbation.epsilon > 0:
            r = r + state.perturbation.sample(len(x), gen)
        pred = state.utility_head(r).argmax(-1)
    return float((pred == torch.as_tensor(y)).double().mean())
