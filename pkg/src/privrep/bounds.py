"""Leakage and utility-privacy tradeoff bounds, plus the estimators feeding them.

Leakage bounds for membership and property inference work in bits; the
reconstruction bound works in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.special import gammaln

from .mi import PROB_FLOOR
from .nn import as_tensor


class InvalidGeometry(ValueError):
    pass


@dataclass(frozen=True)
class LeakageBoundResult:
    conditional_entropy_bits: float
    bound: float
    estimator: str
    certified: bool = False


@dataclass(frozen=True)
class TradeoffInputs:
    delta: float
    R: float
    C_L: float
    adv: float

    def __post_init__(self):
        if min(self.delta, self.R, self.C_L, self.adv) < 0:
            raise ValueError("tradeoff inputs must be non-negative")
        if self.adv > 1 or self.delta > 1:
            raise ValueError("advantage and delta must not exceed 1")


@dataclass(frozen=True)
class GeometrySpec:
    """Unit-hypercube input domain with an l2 reconstruction radius ``eta``.

    ``vol_boundary`` / ``vol_boundary_eta`` may be given explicitly; otherwise
    the hypercube surface 2d and the full (d-1)-sphere area are used.
    """

    d: int
    eta: float
    vol_boundary: float | None = None
    vol_boundary_eta: float | None = None

    def log_volumes(self) -> tuple:
        if self.vol_boundary is not None:
            log_x = math.log(self.vol_boundary)
        else:
            log_x = math.log(2.0 * self.d)
        if self.vol_boundary_eta is not None:
            log_eta = math.log(self.vol_boundary_eta)
        else:
            log_eta = sphere_surface_log_area(self.d, self.eta)
        return log_x, log_eta


def binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -(p * math.log2(p) + (1 - p) * math.log2(1 - p))


def inv_binary_entropy_lower(p: float) -> float:
    """Closed-form lower bound p / (2 log2(6/p)) on the inverse binary entropy."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if p == 0.0:
        return 0.0
    return p / (2.0 * math.log2(6.0 / p))


def inv_binary_entropy(p: float, tol: float = 1e-14) -> float:
    """Exact H2^{-1}(p) on [0, 1/2] by bisection."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    lo, hi = 0.0, 0.5
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if binary_entropy(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def mia_leakage_bound(h_cond_bits: float) -> float:
    """Upper bound on any attacker's accuracy given H(u | representation) in bits.

    The same expression bounds property inference with dataset representations.
    """
    if h_cond_bits < 0:
        raise ValueError("conditional entropy must be non-negative")
    if h_cond_bits == 0:
        return 1.0
    if h_cond_bits >= 6.0:
        return 0.0
    return min(1.0, max(0.0, 1.0 - h_cond_bits / (2.0 * math.log2(6.0 / h_cond_bits))))


def conditional_entropy_estimates(encoder, head, x, u) -> tuple:
    """(plug-in, cross-entropy) estimates of H(u | f(x)) in bits.

    The plug-in estimate averages the entropy of the head's posterior; the
    cross-entropy one averages -log2 q(u_i | r_i). Neither is a certified bound.
    """
    with torch.no_grad():
        r = encoder(as_tensor(x)) if encoder is not None else as_tensor(x)
        p = torch.clamp(torch.softmax(head(r), dim=-1), min=PROB_FLOOR)
        plug_in = float(-(p * torch.log2(p)).sum(dim=-1).mean())
        u = torch.as_tensor(u, dtype=torch.long)
        ce = float(-torch.log2(p.gather(1, u.unsqueeze(1))).mean())
    return plug_in, ce


def leakage_report(plug_in_bits: float, ce_bits: float) -> list:
    return [LeakageBoundResult(plug_in_bits, mia_leakage_bound(plug_in_bits), "plug-in"),
            LeakageBoundResult(ce_bits, mia_leakage_bound(ce_bits), "cross-entropy")]


def sphere_surface_log_area(d: int, radius: float) -> float:
    """log of 2 pi^{d/2} r^{d-1} / Gamma(d/2)."""
    if d < 1 or radius <= 0:
        raise InvalidGeometry("sphere needs d >= 1 and a positive radius")
    return math.log(2.0) + 0.5 * d * math.log(math.pi) + (d - 1) * math.log(radius) - gammaln(0.5 * d)


def dra_error_bound(mi_nats: float, geom: GeometrySpec) -> float:
    """Lower bound on Pr(||A(r + delta) - x|| >= eta) for every reconstruction attack."""
    if mi_nats < 0:
        raise ValueError("mutual information must be non-negative")
    log_x, log_eta = geom.log_volumes()
    denom = log_x - log_eta
    if denom <= 0:
        raise InvalidGeometry("Vol(boundary(eta)) must be smaller than Vol(boundary)")
    return max(0.0, 1.0 - (mi_nats + math.log(2.0)) / denom)


def tradeoff_bound(inputs: TradeoffInputs, variant: str = "mia") -> float:
    """Risk lower bound max(0, delta - 2 R C_L adv).

    For ``variant='dra'`` pass the perturbed-representation norm bound as ``R``
    and the marginal label gap as ``delta``.
    """
    if variant not in ("mia", "pia", "dra"):
        raise ValueError(f"unknown variant {variant!r}")
    return max(0.0, inputs.delta - 2.0 * inputs.R * inputs.C_L * inputs.adv)


def empirical_advantage(decisions, labels, variant: str = "mia") -> float:
    """max_a |Pr(A = a | u = a) - Pr(A = a | u = 1 - a)| over binary values.

    For ``variant='dra'`` ``decisions`` are booleans for the eta-exact
    reconstruction event and ``labels`` are the binary task labels; the
    advantage is then |Pr(hit | y = 0) - Pr(hit | y = 1)|.
    """
    a = np.asarray(decisions).astype(int)
    u = np.asarray(labels).astype(int)
    if not set(np.unique(u)) <= {0, 1} or len(np.unique(u)) < 2:
        raise ValueError("both binary attribute values must be present")
    if variant == "dra":
        return float(abs(a[u == 0].mean() - a[u == 1].mean()))
    best = 0.0
    for val in (0, 1):
        hit = (a[u == val] == val).mean()
        cross = (a[u == 1 - val] == val).mean()
        best = max(best, abs(hit - cross))
    return float(best)


def delta_constants(y, u) -> tuple:
    """(|Pr(y=1|u=0) - Pr(y=1|u=1)|, |Pr(y=1) - Pr(y=0)|) for binary labels."""
    y = np.asarray(y).astype(int)
    u = np.asarray(u).astype(int)
    if not set(np.unique(y)) <= {0, 1}:
        raise ValueError("tradeoff constants assume a binary task")
    d_y = abs((y == 1).mean() - (y == 0).mean())
    if len(np.unique(u)) < 2:
        raise ValueError("both attribute values must be present")
    d_yu = abs(y[u == 0].mean() - y[u == 1].mean())
    return float(d_yu), float(d_y)


def spectral_norm(w: np.ndarray, iters: int = 100, seed: int = 0) -> float:
    w = np.asarray(w, dtype=np.float64)
    v = np.random.default_rng(seed).standard_normal(w.shape[1])
    v /= np.linalg.norm(v)
    s = 0.0
    for _ in range(iters):
        u = w @ v
        nu = np.linalg.norm(u)
        if nu == 0:
            return 0.0
        v = w.T @ (u / nu)
        s = np.linalg.norm(v)
        v /= s
    return float(s)


def lipschitz_upper(model) -> float:
    """Product of layer spectral norms; valid for 1-Lipschitz activations."""
    out = 1.0
    for layer in model.layers:
        out *= spectral_norm(layer.weight.detach().numpy())
    return out
