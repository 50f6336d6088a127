"""DP comparison mechanisms: DP-SGD training and Gaussian noise on published representations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch.func import functional_call, grad, vmap

from .mi import cross_entropy
from .nn import DTYPE, as_tensor, batches, fit_classifier


@dataclass
class DpConfig:
    clip_norm: float = 1.0
    noise_sigma: float = 0.0
    sigma2: float = 0.0
    batch_size: int = 64
    lr: float = 0.05
    epochs: int = 30

    def __post_init__(self):
        if not self.clip_norm > 0:
            raise ValueError("clip norm must be positive")
        if self.noise_sigma < 0 or self.sigma2 < 0:
            raise ValueError("noise levels must be non-negative")


def per_sample_grads(model: torch.nn.Module, x, y) -> dict:
    """Per-example gradients of the cross-entropy, keyed by parameter name."""
    params = {k: v.detach() for k, v in model.named_parameters()}

    def loss(p, xi, yi):
        return cross_entropy(functional_call(model, p, (xi.unsqueeze(0),)), yi.unsqueeze(0)).sum()

    return vmap(grad(loss), in_dims=(None, 0, 0))(params, as_tensor(x), torch.as_tensor(y))


def clip_and_average(grads: dict, clip_norm: float) -> tuple:
    """Clip each example's full gradient to ``clip_norm`` and average; also returns clipped norms."""
    if not clip_norm > 0:
        raise ValueError("clip norm must be positive")
    n = next(iter(grads.values())).shape[0]
    flat = torch.cat([g.reshape(n, -1) for g in grads.values()], dim=1)
    norms = torch.linalg.vector_norm(flat, dim=1)
    scale = torch.clamp(clip_norm / torch.clamp(norms, min=1e-30), max=1.0)
    clipped = flat * scale.unsqueeze(1)
    return clipped.mean(dim=0), torch.linalg.vector_norm(clipped, dim=1)


def dpsgd_step(model: torch.nn.Module, batch, dp: DpConfig, gen: torch.Generator) -> torch.nn.Module:
    """One DP-SGD update: clip per-sample gradients, average, add N(0, (sigma C / B)^2), SGD step."""
    if not dp.clip_norm > 0:
        raise ValueError("clip norm must be positive")
    x, y = batch
    grads = per_sample_grads(model, x, y)
    avg, _ = clip_and_average(grads, dp.clip_norm)
    if dp.noise_sigma > 0:
        std = dp.noise_sigma * dp.clip_norm / len(y)
        avg = avg + std * torch.randn(avg.shape, generator=gen, dtype=DTYPE)
    offset = 0
    with torch.no_grad():
        for p in model.parameters():
            k = p.numel()
            p.sub_(dp.lr * avg[offset:offset + k].view_as(p))
            offset += k
    return model


def train_dpsgd(model: torch.nn.Module, x, y, dp: DpConfig, seed: int = 0) -> torch.nn.Module:
    x = as_tensor(x)
    y = torch.as_tensor(y, dtype=torch.long)
    gen = torch.Generator().manual_seed(seed)
    for _ in range(dp.epochs):
        for idx in batches(len(y), dp.batch_size, gen):
            dpsgd_step(model, (x[idx], y[idx]), dp, gen)
    return model


def dp_encoder_noise(r, sigma2: float, gen: torch.Generator) -> torch.Tensor:
    """Add i.i.d. N(0, sigma2) to every coordinate."""
    r = as_tensor(r)
    if sigma2 < 0:
        raise ValueError("sigma2 must be non-negative")
    if sigma2 == 0:
        return r.clone()
    return r + np.sqrt(sigma2) * torch.randn(r.shape, generator=gen, dtype=DTYPE)


class NoisyPublisher:
    """Callable that noises representations with a private generator stream."""

    def __init__(self, sigma2: float, seed: int):
        self.sigma2 = sigma2
        self.gen = torch.Generator().manual_seed(seed)

    def __call__(self, r):
        return dp_encoder_noise(r, self.sigma2, self.gen)


def fit_noisy_head(head: torch.nn.Module, encoder, x, y, publisher: NoisyPublisher,
                   epochs: int = 100, lr: float = 1e-3, seed: int = 0) -> torch.nn.Module:
    """Train a task head on published (noised) representations."""
    with torch.no_grad():
        r = publisher(encoder(as_tensor(x)))
    return fit_classifier(head, r, y, epochs, lr, seed=seed)
