"""Membership-privacy game: encoder vs membership head vs utility head."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from .core import GameConfig
from .mi import cross_entropy
from .nn import DTYPE, Mlp, NonFiniteLoss, Optimizer, as_tensor, flat_params

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Arch:
    """Layer sizes shared by the three networks of a game."""

    enc_hidden: int = 64
    rep_dim: int = 16
    head_hidden: int = 32
    activation: str = "relu"
    enc_out_activation: str = "identity"
    utility_hidden: int | None = None

    def encoder(self, d: int, seed: int) -> Mlp:
        return Mlp([d, self.enc_hidden, self.rep_dim], self.activation, self.enc_out_activation, seed)

    def head(self, n_out: int, seed: int, in_dim: int | None = None) -> Mlp:
        return Mlp([in_dim or self.rep_dim, self.head_hidden, n_out], self.activation, "identity", seed)

    def utility(self, n_out: int, seed: int) -> Mlp:
        """Task head; ``utility_hidden=0`` makes it linear."""
        hidden = self.head_hidden if self.utility_hidden is None else self.utility_hidden
        return Mlp([self.rep_dim, hidden, n_out], self.activation, "identity", seed)


@dataclass
class MiaGameState:
    encoder: torch.nn.Module
    privacy_head: torch.nn.Module
    utility_head: torch.nn.Module
    config: GameConfig
    round: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        m = self.encoder.out_dim
        if self.privacy_head.in_dim != m or self.utility_head.in_dim != m:
            raise ValueError("heads must consume the encoder's representation dimension")


def init_mia_state(d: int, n_classes: int, config: GameConfig, arch: Arch | None = None) -> MiaGameState:
    arch = arch or Arch()
    s = config.seed
    return MiaGameState(arch.encoder(d, s * 3 + 1), arch.head(2, s * 3 + 2),
                        arch.utility(n_classes, s * 3 + 3), config)


def mia_losses(state: MiaGameState, d1, d0) -> tuple:
    """Summed cross-entropies (L1 over D1 and D0 membership, L2 over D1 labels).

    ``d1`` is ``(x, y)`` for members, ``d0`` is ``x`` (or ``(x, y)``) for non-members.
    """
    x1, y1 = d1
    x0 = d0[0] if isinstance(d0, tuple) else d0
    x1, x0 = as_tensor(x1), as_tensor(x0)
    if len(x1) == 0 and len(x0) == 0:
        raise ValueError("empty batch")
    x = torch.cat([x1, x0])
    u = torch.cat([torch.ones(len(x1), dtype=torch.long), torch.zeros(len(x0), dtype=torch.long)])
    l1 = cross_entropy(state.privacy_head(state.encoder(x)), u).sum()
    l2 = cross_entropy(state.utility_head(state.encoder(x1)), y1).sum()
    return l1, l2


def encoder_objective(state: MiaGameState, x_priv, u, x_util, y_util, lam: float) -> torch.Tensor:
    """Quantity the encoder descends: -(lam * L1 - (1 - lam) * L2) with batch means."""
    l1 = cross_entropy(state.privacy_head(state.encoder(x_priv)), u).mean()
    l2 = cross_entropy(state.utility_head(state.encoder(x_util)), y_util).mean()
    return -(lam * l1 - (1.0 - lam) * l2)


def _balanced_batches(n1: int, n0: int, batch_size: int, gen: torch.Generator):
    """Pairs of member / non-member index batches covering the larger set once."""
    half = max(1, batch_size // 2)
    steps = int(np.ceil(max(n1, n0) / half))
    p1 = torch.randperm(n1, generator=gen)
    p0 = torch.randperm(n0, generator=gen)
    for k in range(steps):
        i1 = p1[torch.arange(k * half, (k + 1) * half) % n1]
        i0 = p0[torch.arange(k * half, (k + 1) * half) % n0]
        yield i1, i0


def train_mia_defense(d1, d0, config: GameConfig, n_classes: int, arch: Arch | None = None,
                      d_util=None, state: MiaGameState | None = None) -> MiaGameState:
    """Alternate privacy-head, utility-head and encoder updates for ``config.rounds`` rounds.

    ``d1 = (x, y)`` members and ``d0 = x`` non-members feed the membership
    term. ``d_util = (x, y)`` feeds the utility term and defaults to ``d1``.
    """
    x1, y1 = as_tensor(d1[0]), torch.as_tensor(d1[1], dtype=torch.long)
    x0 = as_tensor(d0[0] if isinstance(d0, tuple) else d0)
    xu, yu = (x1, y1) if d_util is None else (as_tensor(d_util[0]), torch.as_tensor(d_util[1], dtype=torch.long))
    if len(x1) == 0 or len(x0) == 0:
        raise ValueError("both members and non-members are required")
    if state is None:
        state = init_mia_state(x1.shape[1], n_classes, config, arch)
    enc, g, h = state.encoder, state.privacy_head, state.utility_head
    lam = config.lam
    gen = torch.Generator().manual_seed(config.seed * 7919 + 17)
    opt_g = Optimizer(g.parameters(), config.optimizer, config.lr1)
    h_params = list(h.parameters())
    opt_h = Optimizer(h_params, config.optimizer, config.lr2) if h_params else None
    opt_f = Optimizer(enc.parameters(), config.optimizer, config.lr3)
    half = max(1, config.batch_size // 2)
    for t in range(config.rounds):
        sums = np.zeros(2)
        count = 0
        for i1, i0 in _balanced_batches(len(x1), len(x0), config.batch_size, gen):
            xp = torch.cat([x1[i1], x0[i0]])
            up = torch.cat([torch.ones(len(i1), dtype=torch.long), torch.zeros(len(i0), dtype=torch.long)])
            iu = torch.randint(len(yu), (2 * half,), generator=gen)
            xb, yb = xu[iu], yu[iu]
            try:
                for _ in range(config.inner_steps):
                    with torch.no_grad():
                        r_p = enc(xp)
                        r_u = enc(xb)
                    for _ in range(config.adv_steps):
                        l1 = cross_entropy(g(r_p), up).mean()
                        opt_g.step(l1)
                    l2 = cross_entropy(h(r_u), yb).mean()
                    if opt_h is not None:
                        opt_h.step(l2)
                    opt_f.step(encoder_objective(state, xp, up, xb, yb, lam))
            except NonFiniteLoss as exc:
                raise TrainingDiverged(f"round {t}: {exc}") from exc
            sums += (l1.item(), l2.item())
            count += 1
        state.round += 1
        state.history.append({"round": state.round, "L1": sums[0] / count, "L2": sums[1] / count})
    if not torch.all(torch.isfinite(flat_params(enc))):
        raise TrainingDiverged("encoder parameters became non-finite")
    return state


class ProbabilityLogits(torch.nn.Module):
    """Identity head in probability space: its logits soft-max back to the input."""

    def __init__(self, dim: int):
        super().__init__()
        self.in_dim = dim

    def forward(self, p: torch.Tensor) -> torch.Tensor:
        return torch.log(torch.clamp(p, min=1e-12))


class SoftmaxEncoder(torch.nn.Module):
    """Wraps a classifier so that it emits class probabilities (AdvReg's f)."""

    def __init__(self, net: torch.nn.Module):
        super().__init__()
        self.net = net

    @property
    def out_dim(self):
        return self.net.out_dim

    def forward(self, x):
        return torch.softmax(self.net(x), dim=-1)


def init_advreg_state(d: int, n_classes: int, config: GameConfig, arch: Arch | None = None) -> MiaGameState:
    """Game state whose encoder is the task classifier itself and h is the identity."""
    arch = arch or Arch()
    s = config.seed
    enc = SoftmaxEncoder(Mlp([d, arch.enc_hidden, n_classes], arch.activation, "identity", s * 3 + 1))
    g = arch.head(2, s * 3 + 2, in_dim=n_classes)
    return MiaGameState(enc, g, ProbabilityLogits(n_classes), config)


def advreg_mode_loss(state: MiaGameState, d1, d0, lam: float) -> torch.Tensor:
    """lam * sum H(u, g(f(x))) - (1 - lam) * sum_{D1} H(y, f(x)) with f emitting probabilities."""
    x1, y1 = as_tensor(d1[0]), torch.as_tensor(d1[1], dtype=torch.long)
    x0 = as_tensor(d0[0] if isinstance(d0, tuple) else d0)
    p1 = state.encoder(x1)
    p0 = state.encoder(x0)
    if not torch.allclose(p1.sum(-1), torch.ones(len(p1), dtype=DTYPE)):
        raise ValueError("AdvReg mode needs an encoder that outputs class probabilities")
    u = torch.cat([torch.ones(len(x1), dtype=torch.long), torch.zeros(len(x0), dtype=torch.long)])
    adv = cross_entropy(state.privacy_head(torch.cat([p1, p0])), u).sum()
    task = -torch.log(torch.clamp(p1.gather(1, y1.unsqueeze(1)).squeeze(1), min=1e-12)).sum()
    return lam * adv - (1.0 - lam) * task
