"""Strongest-attacker harness and privacy metrics.

Attackers reuse the defender's head architecture and are retrained from
scratch on representations from the frozen encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from scipy import ndimage
from scipy.stats import norm

from .mi import PROB_FLOOR, PerturbationParams
from .nn import Mlp, Optimizer, as_tensor, batches, fit_classifier, predict

DEFAULT_FPR_GRID = (1e-3, 1e-2, 1e-1, 0.5)


class DegenerateLabels(ValueError):
    pass


@dataclass
class AttackReport:
    kind: str
    accuracy: float
    roc: list = field(default_factory=list)
    tpr_at: dict = field(default_factory=dict)
    per_class: dict = field(default_factory=dict)
    chance: float = 0.5

    def to_dict(self) -> dict:
        return {"kind": self.kind, "accuracy": self.accuracy, "roc": self.roc,
                "tpr_at": {str(k): v for k, v in self.tpr_at.items()},
                "per_class": {str(k): v for k, v in self.per_class.items()}, "chance": self.chance}

    @classmethod
    def from_dict(cls, d: dict) -> "AttackReport":
        return cls(d["kind"], d["accuracy"], [tuple(p) for p in d["roc"]],
                   {float(k): v for k, v in d["tpr_at"].items()},
                   {int(k): v for k, v in d["per_class"].items()}, d.get("chance", 0.5))


@dataclass
class ReconReport:
    mse: list
    ssim: list | None = None
    psnr: list | None = None

    @property
    def mean_mse(self) -> float:
        return float(np.mean(self.mse))

    @property
    def mean_ssim(self) -> float | None:
        return None if self.ssim is None else float(np.mean(self.ssim))

    @property
    def mean_psnr(self) -> float | None:
        return None if self.psnr is None else float(np.mean(self.psnr))

    def to_dict(self) -> dict:
        return {"mse": list(map(float, self.mse)), "ssim": self.ssim, "psnr": self.psnr,
                "mean_mse": self.mean_mse, "mean_ssim": self.mean_ssim, "mean_psnr": self.mean_psnr}

    @classmethod
    def from_dict(cls, d: dict) -> "ReconReport":
        return cls(d["mse"], d.get("ssim"), d.get("psnr"))


def encode(encoder, x) -> torch.Tensor:
    with torch.no_grad():
        return encoder(as_tensor(x))


# ---------------------------------------------------------------- ROC


def roc_curve(scores, labels) -> tuple:
    """(fpr, tpr) arrays from a threshold sweep; starts at (0, 0), ends at (1, 1)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    pos, neg = (y == 1).sum(), (y == 0).sum()
    if pos == 0 or neg == 0:
        raise DegenerateLabels("ROC needs both classes")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # one point per distinct threshold
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(1 - y)[last]
    tpr = np.r_[0.0, tp / pos]
    fpr = np.r_[0.0, fp / neg]
    return fpr, tpr


def roc_and_tpr(scores, labels, fpr_grid=DEFAULT_FPR_GRID) -> dict:
    """ROC points plus, for each requested FPR, the best TPR reachable at or below it."""
    fpr, tpr = roc_curve(scores, labels)
    tpr_at = {float(f): float(tpr[fpr <= f + 1e-15].max()) for f in fpr_grid}
    auc = float(np.trapezoid(tpr, fpr))
    return {"roc": list(zip(fpr.tolist(), tpr.tolist())), "tpr_at": tpr_at, "auc": auc}


# ---------------------------------------------------------------- membership


def _per_class_acc(pred: np.ndarray, y: np.ndarray) -> dict:
    return {int(c): float((pred[y == c] == c).mean()) for c in np.unique(y)}


def train_mia_attacker(encoder, x_train, u_train, head_hidden: int = 32, activation: str = "relu",
                       epochs: int = 150, lr: float = 1e-3, batch_size: int = 128,
                       seed: int = 0, rep_noise=None) -> Mlp:
    """Fit a membership classifier with the defender's head architecture.

    ``rep_noise`` optionally maps representations to their published (noisy) form.
    """
    u_train = np.asarray(u_train)
    if len(np.unique(u_train)) < 2:
        raise DegenerateLabels("attack training set holds a single membership class")
    r = encode(encoder, x_train)
    if rep_noise is not None:
        r = rep_noise(r)
    clf = Mlp([r.shape[1], head_hidden, 2], activation, seed=seed)
    return fit_classifier(clf, r, u_train, epochs, lr, batch_size, seed)


def evaluate_mia_attacker(clf, encoder, x_test, u_test, fpr_grid=DEFAULT_FPR_GRID,
                          rep_noise=None) -> AttackReport:
    r = encode(encoder, x_test)
    if rep_noise is not None:
        r = rep_noise(r)
    u = np.asarray(u_test).astype(int)
    with torch.no_grad():
        p = torch.softmax(clf(r), dim=-1)[:, 1].numpy()
    pred = (p > 0.5).astype(int)
    roc = roc_and_tpr(p, u, fpr_grid)
    return AttackReport("mia", float((pred == u).mean()), roc["roc"], roc["tpr_at"], _per_class_acc(pred, u))


def logit_confidence(logits: torch.Tensor, y) -> np.ndarray:
    """log(p / (1 - p)) of the probability assigned to ``y``, floored."""
    p = torch.softmax(logits, dim=-1).gather(1, torch.as_tensor(y, dtype=torch.long).unsqueeze(1))
    p = torch.clamp(p.squeeze(1), PROB_FLOOR, 1 - PROB_FLOOR)
    return torch.log(p / (1 - p)).numpy()


def lira_score(target_stat, in_stats, out_stats, min_in: int = 4, min_std: float = 1e-3) -> float:
    """Likelihood-ratio membership score for one target.

    Falls back to the one-sided out-only test when fewer than ``min_in``
    in-model statistics are available.
    """
    out = np.asarray(out_stats, dtype=np.float64)
    mu_out, sd_out = out.mean(), max(out.std(), min_std)
    if len(in_stats) < min_in:
        return float(norm.logcdf((target_stat - mu_out) / sd_out))
    inn = np.asarray(in_stats, dtype=np.float64)
    mu_in, sd_in = inn.mean(), max(inn.std(), min_std)
    return float(norm.logpdf(target_stat, mu_in, sd_in) - norm.logpdf(target_stat, mu_out, sd_out))


def shadow_lira(encoder, member_x, member_y, pool_x, pool_y, target_idx, target_u,
                n_shadow: int = 16, head_hidden: int = 32, activation: str = "relu",
                epochs: int = 100, lr: float = 1e-3, seed: int = 0,
                fpr_grid=DEFAULT_FPR_GRID, target_head=None, train_shadow=None) -> AttackReport:
    """Shadow-model likelihood-ratio attack on representations.

    The target model is a head of the membership network's architecture
    trained on representations of the members (the utility training set).
    Each shadow head trains on a random half of ``pool``; for each target
    ``pool[target_idx[j]]`` the logit-scaled confidence on its label is
    fitted with in/out Gaussians over the shadows. Passing ``target_head``
    (e.g. the defended utility head) skips fitting the target.

    ``train_shadow(k, idx)`` replaces the head-only shadows with whole
    pipelines: it trains shadow ``k`` on ``pool[idx]`` and returns a model
    mapping raw inputs to logits. Memorisation inside the encoder is then
    reflected in the in/out statistics.
    """
    if n_shadow < 2:
        raise ValueError("need at least two shadow models")
    pool_y = np.asarray(pool_y)
    n = len(pool_y)
    if n < 4 or len(np.asarray(member_y)) < 2:
        raise ValueError("pool too small for in/out splits")
    n_cls = int(max(pool_y.max(), np.max(member_y)) + 1)
    r_pool = encode(encoder, pool_x)
    r_mem = encode(encoder, member_x)
    rng = np.random.default_rng([seed, 4242])

    target = target_head
    if target is None:
        target = Mlp([r_mem.shape[1], head_hidden, n_cls], activation, seed=seed)
        fit_classifier(target, r_mem, member_y, epochs, lr, seed=seed)
    tgt = np.asarray(target_idx)
    with torch.no_grad():
        target_stat = logit_confidence(target(r_pool[tgt]), pool_y[tgt])

    # balanced in/out assignment: each pool point sits in exactly half of the shadows
    keep = np.argsort(rng.random((n_shadow, n)), axis=0) < n_shadow // 2
    stats = np.zeros((n_shadow, len(tgt)))
    for k in range(n_shadow):
        idx = np.nonzero(keep[k])[0]
        if train_shadow is not None:
            shadow = train_shadow(k, idx)
            with torch.no_grad():
                stats[k] = logit_confidence(shadow(as_tensor(pool_x)[tgt]), pool_y[tgt])
            continue
        shadow = Mlp([r_pool.shape[1], head_hidden, n_cls], activation, seed=seed * 1000 + k + 1)
        fit_classifier(shadow, r_pool[idx], pool_y[idx], epochs, lr, seed=seed * 1000 + k + 1)
        with torch.no_grad():
            stats[k] = logit_confidence(shadow(r_pool[tgt]), pool_y[tgt])
    scores = np.array([lira_score(target_stat[j], stats[keep[:, t], j], stats[~keep[:, t], j])
                       for j, t in enumerate(tgt)])
    u = np.asarray(target_u).astype(int)
    roc = roc_and_tpr(scores, u, fpr_grid)
    pred = (scores > np.median(scores)).astype(int)
    return AttackReport("lira", float((pred == u).mean()), roc["roc"], roc["tpr_at"], _per_class_acc(pred, u))


# ---------------------------------------------------------------- property


def bag_representations(encoder, bags, mode: str) -> torch.Tensor:
    from .defense_pia import aggregate_tensor

    with torch.no_grad():
        return torch.stack([aggregate_tensor(encoder(as_tensor(b.features())), mode) for b in bags])


def bag_labels(bags) -> np.ndarray:
    return np.array([int(b.property.value) for b in bags], dtype=np.int64)


def train_pia_attacker(encoder, train_bags, test_bags, aggregator: str, n_properties: int,
                       matched: bool = True, head_hidden: int = 32, activation: str = "relu",
                       epochs: int = 200, lr: float = 1e-3, seed: int = 0, rep_noise=None) -> tuple:
    """K-class property classifier on aggregated bag representations.

    With ``matched=False`` the attacker uses the other aggregator.
    """
    mode = aggregator if matched else {"mean": "max", "max": "mean"}[aggregator]
    ytr, yte = bag_labels(train_bags), bag_labels(test_bags)
    unseen = set(np.unique(yte)) - set(np.unique(ytr))
    if unseen:
        raise DegenerateLabels(f"test bags carry property classes {sorted(unseen)} unseen in training")
    rtr = bag_representations(encoder, train_bags, mode)
    rte = bag_representations(encoder, test_bags, mode)
    if rep_noise is not None:
        rtr, rte = rep_noise(rtr), rep_noise(rte)
    clf = Mlp([rtr.shape[1], head_hidden, n_properties], activation, seed=seed)
    fit_classifier(clf, rtr, ytr, epochs, lr, seed=seed)
    pred = predict(clf, rte).numpy()
    report = AttackReport("pia" if matched else "pia-substitute", float((pred == yte).mean()),
                          per_class=_per_class_acc(pred, yte), chance=1.0 / n_properties)
    return clf, report


# ---------------------------------------------------------------- reconstruction


def perturbed_representations(encoder, perturbation: PerturbationParams | None, x,
                              gen: torch.Generator) -> torch.Tensor:
    with torch.no_grad():
        r = encoder(as_tensor(x))
        if perturbation is not None and perturbation.epsilon > 0:
            r = r + perturbation.sample(len(r), gen)
    return r


def train_dra_attacker(encoder, perturbation, x_train, x_test, hidden: int = 64,
                       epochs: int = 200, lr: float = 1e-3, batch_size: int = 128, seed: int = 0,
                       grid: tuple | None = None, max_val: float = 1.0) -> tuple:
    """Decoder from perturbed representations back to inputs, scored on ``x_test``."""
    gen = torch.Generator().manual_seed(seed * 31 + 7)
    xtr, xte = as_tensor(x_train), as_tensor(x_test)
    rtr = perturbed_representations(encoder, perturbation, xtr, gen)
    rte = perturbed_representations(encoder, perturbation, xte, gen)
    if rtr.shape[0] != xtr.shape[0]:
        raise ValueError("representation/input count mismatch")
    dec = Mlp([rtr.shape[1], hidden, hidden, xtr.shape[1]], "relu", seed=seed)
    opt = Optimizer(dec.parameters(), "adam", lr)
    bgen = torch.Generator().manual_seed(seed)
    for _ in range(epochs):
        for idx in batches(len(xtr), batch_size, bgen):
            opt.step(((dec(rtr[idx]) - xtr[idx]) ** 2).mean())
    with torch.no_grad():
        rec = dec(rte).numpy()
    return dec, recon_report(rec, xte.numpy(), grid, max_val)


def recon_report(rec: np.ndarray, x: np.ndarray, grid: tuple | None = None,
                 max_val: float = 1.0) -> ReconReport:
    errs = [mse(a, b) for a, b in zip(rec, x)]
    if grid is None:
        return ReconReport(errs)
    h, w = grid
    ss = [ssim(a.reshape(h, w), b.reshape(h, w), max_val) for a, b in zip(rec, x)]
    ps = [psnr(a, b, max_val) for a, b in zip(rec, x)]
    return ReconReport(errs, ss, ps)


def mse(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a, b, max_val: float = 1.0, cap: float = 100.0) -> float:
    err = mse(a, b)
    if err == 0:
        return cap
    return float(min(cap, 10.0 * np.log10(max_val ** 2 / err)))


def ssim(a, b, max_val: float = 1.0, win: int = 7) -> float:
    """Mean SSIM over valid ``win`` x ``win`` uniform windows (sample covariances)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim != 2 or min(a.shape) < win:
        raise ValueError(f"ssim needs 2-d inputs of at least {win}x{win}")
    c1, c2 = (0.01 * max_val) ** 2, (0.03 * max_val) ** 2
    npts = win * win
    cov = npts / (npts - 1)
    ux = ndimage.uniform_filter(a, win)
    uy = ndimage.uniform_filter(b, win)
    uxx = ndimage.uniform_filter(a * a, win)
    uyy = ndimage.uniform_filter(b * b, win)
    uxy = ndimage.uniform_filter(a * b, win)
    vx = cov * (uxx - ux * ux)
    vy = cov * (uyy - uy * uy)
    vxy = cov * (uxy - ux * uy)
    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
    pad = (win - 1) // 2
    return float(s[pad:a.shape[0] - pad, pad:a.shape[1] - pad].mean())
