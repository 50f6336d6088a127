"""Mutual-information surrogates and the trainable perturbation distribution.

All quantities are in nats. Heads return logits; probabilities are obtained
with a softmax and floored at ``PROB_FLOOR`` before any log.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import torch

from .nn import DTYPE, as_tensor

PROB_FLOOR = 1e-12
ENTROPY_SENTINEL = -1e9
FAMILIES = ("gaussian-tanh", "uniform")
_SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class MiEstimate:
    value: float
    estimator: str
    batch_size: int


def log_probs(logits: torch.Tensor) -> torch.Tensor:
    return torch.log(torch.clamp(torch.softmax(logits, dim=-1), min=PROB_FLOOR))


def cross_entropy(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Per-sample H(target, softmax(logits)) with the probability floor."""
    target = torch.as_tensor(target, dtype=torch.long)
    return -log_probs(logits).gather(-1, target.unsqueeze(-1)).squeeze(-1)


def softplus(z: torch.Tensor) -> torch.Tensor:
    return torch.logaddexp(torch.zeros_like(z), z)


def club_inner_objective(head: Callable, r: torch.Tensor, u: torch.Tensor) -> torch.Tensor:
    """Mean log q(u_i | r_i); the quantity the privacy head maximizes."""
    return -cross_entropy(head(as_tensor(r)), u).mean()


def club_mi_value(head: Callable, r: torch.Tensor, u: torch.Tensor) -> MiEstimate:
    """Contrastive log-ratio estimate: joint term minus all-pairs marginal term."""
    r = as_tensor(r)
    u = torch.as_tensor(u, dtype=torch.long)
    n = r.shape[0]
    if n < 2:
        raise ValueError("club_mi_value needs at least two pairs")
    with torch.no_grad():
        lp = log_probs(head(r))  # (n, |U|)
        joint = lp.gather(1, u.unsqueeze(1)).mean()
        marginal = lp[:, u].mean()  # entry (i, j) is log q(u_j | r_i)
    return MiEstimate(float(joint - marginal), "club", n)


def ce_utility_objective(head: Callable, r: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Negative mean cross-entropy; maximizing it tightens the utility lower bound."""
    return -cross_entropy(head(as_tensor(r)), y).mean()


def ce_lower_bound(head: Callable, r: torch.Tensor, u: torch.Tensor, n_values: int,
                   prior: torch.Tensor | None = None) -> MiEstimate:
    """H(u) + E[log q(u|r)]: a variational lower bound on I(u; r).

    ``prior`` defaults to the empirical frequency of ``u``.
    """
    u = torch.as_tensor(u, dtype=torch.long)
    if prior is None:
        prior = torch.bincount(u, minlength=n_values).to(DTYPE) / u.numel()
    p = prior[prior > 0]
    h_u = float(-(p * torch.log(p)).sum())
    with torch.no_grad():
        value = h_u + float(club_inner_objective(head, r, u))
    return MiEstimate(value, "ce-lower", int(u.numel()))


def jsd_from_scores(pos: torch.Tensor, neg: torch.Tensor) -> torch.Tensor:
    if pos.shape != neg.shape:
        raise ValueError("positive and negative pair counts differ")
    if not (torch.all(torch.isfinite(pos)) and torch.all(torch.isfinite(neg))):
        raise FloatingPointError("critic produced non-finite scores")
    return -softplus(-pos).sum() - softplus(neg).sum()


def jsd_mi_objective(critic: Callable, x: torch.Tensor, r: torch.Tensor,
                     x_neg: torch.Tensor) -> torch.Tensor:
    """Jensen-Shannon MI surrogate summed over the batch.

    ``critic(x, r)`` scores pairs; ``(x, r)`` are the joint pairs and
    ``(x_neg, r)`` pair the same representations with independent inputs.
    """
    return jsd_from_scores(critic(x, r).reshape(-1), critic(x_neg, r).reshape(-1))


class PairCritic(torch.nn.Module):
    """Scores an (input, representation) pair with an MLP on their concatenation."""

    def __init__(self, net: torch.nn.Module):
        super().__init__()
        self.net = net

    def forward(self, x: torch.Tensor, r: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([x, r], dim=-1)).squeeze(-1)


class PerturbationParams(torch.nn.Module):
    """Trainable perturbation delta = eps * tanh(mu + sigma * z).

    ``family='gaussian-tanh'`` draws z ~ N(0, I); ``family='uniform'`` draws
    z ~ U(-sqrt(3), sqrt(3)) so the base noise keeps unit variance.
    """

    def __init__(self, dim: int, epsilon: float, family: str = "gaussian-tanh",
                 mu: torch.Tensor | None = None, log_sigma: torch.Tensor | None = None):
        super().__init__()
        if family not in FAMILIES:
            raise ValueError(f"unknown perturbation family {family!r}")
        if epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        self.family = family
        self.epsilon = float(epsilon)
        self.mu = torch.nn.Parameter(as_tensor(mu).clone() if mu is not None
                                     else torch.zeros(dim, dtype=DTYPE))
        self.log_sigma = torch.nn.Parameter(as_tensor(log_sigma).clone() if log_sigma is not None
                                            else torch.zeros(dim, dtype=DTYPE))

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    @property
    def sigma(self) -> torch.Tensor:
        return torch.exp(self.log_sigma)

    def base_noise(self, n: int, gen: torch.Generator) -> torch.Tensor:
        if self.family == "gaussian-tanh":
            return torch.randn(n, self.dim, generator=gen, dtype=DTYPE)
        return (2.0 * torch.rand(n, self.dim, generator=gen, dtype=DTYPE) - 1.0) * _SQRT3

    def pre_activation(self, z: torch.Tensor) -> torch.Tensor:
        return self.mu + self.sigma * z

    def transform(self, z: torch.Tensor) -> torch.Tensor:
        """Map base noise to delta; differentiable in (mu, log_sigma)."""
        return self.epsilon * torch.tanh(self.pre_activation(z))

    def sample(self, n: int, gen: torch.Generator) -> torch.Tensor:
        return self.transform(self.base_noise(n, gen))

    def base_entropy(self) -> torch.Tensor:
        """Differential entropy of the pre-tanh variable mu + sigma * z."""
        if self.family == "gaussian-tanh":
            return (0.5 * math.log(2 * math.pi * math.e) + self.log_sigma).sum()
        return (math.log(2 * _SQRT3) + self.log_sigma).sum()

    def entropy_from_noise(self, z: torch.Tensor) -> torch.Tensor:
        """Monte-Carlo H(delta) using the given base-noise draws (rows of ``z``)."""
        if self.epsilon == 0:
            return torch.tensor(ENTROPY_SENTINEL, dtype=DTYPE)
        a = self.pre_activation(z)
        # log(1 - tanh(a)^2) = 2 * (log 2 - |a| - log1p(exp(-2|a|)))
        log_sech2 = 2.0 * (math.log(2.0) - a.abs() - torch.log1p(torch.exp(-2.0 * a.abs())))
        log_jac = (math.log(self.epsilon) + log_sech2).sum(dim=-1).mean()
        return self.base_entropy() + log_jac

    def state(self) -> dict:
        return {"mu": self.mu.detach().tolist(), "log_sigma": self.log_sigma.detach().tolist(),
                "epsilon": self.epsilon, "family": self.family}

    @classmethod
    def from_state(cls, state: dict) -> "PerturbationParams":
        mu = as_tensor(state["mu"])
        return cls(mu.shape[0], state["epsilon"], state["family"], mu, as_tensor(state["log_sigma"]))


def sample_perturbation(params: PerturbationParams, gen: torch.Generator, n: int = 1) -> torch.Tensor:
    return params.sample(n, gen)


def perturbation_entropy(params: PerturbationParams, k: int, gen: torch.Generator) -> torch.Tensor:
    """H(delta) by change of variables through eps * tanh, with ``k`` MC draws."""
    return params.entropy_from_noise(params.base_noise(k, gen))
