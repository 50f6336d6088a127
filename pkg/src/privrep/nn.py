"""Small MLPs, flat-parameter helpers, optimizers and gradient checking.

Everything runs in float64 on CPU. Trainers only rely on ``forward`` and
``grad`` so any ``torch.nn.Module`` with the same call signature can be
swapped in for :class:`Mlp`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import torch
from torch import nn

DTYPE = torch.float64
ACTIVATIONS = {"tanh": torch.tanh, "relu": torch.relu, "identity": lambda t: t}


class NonFiniteLoss(FloatingPointError):
    pass


class Mlp(nn.Module):
    """Fully connected network.

    ``widths`` lists layer sizes including input and output. Hidden layers use
    ``activation``; the output layer uses ``out_activation`` (identity by
    default, softmax is left to callers). A hidden width of 0 drops that layer,
    so ``[m, 0, k]`` is a linear map.
    """

    def __init__(self, widths: Sequence[int], activation: str = "relu",
                 out_activation: str = "identity", seed: int = 0):
        super().__init__()
        if len(widths) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        if activation not in ACTIVATIONS or out_activation not in ACTIVATIONS:
            raise ValueError(f"unsupported activation {activation!r}/{out_activation!r}")
        widths = [int(w) for w in widths]
        self.widths = [widths[0]] + [w for w in widths[1:-1] if w != 0] + [widths[-1]]
        self.activation = activation
        self.out_activation = out_activation
        self.seed = seed
        self.layers = nn.ModuleList(
            nn.Linear(a, b, dtype=DTYPE) for a, b in zip(self.widths[:-1], self.widths[1:])
        )
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(int(seed))
        with torch.no_grad():
            for layer in self.layers:
                fan_in, fan_out = layer.in_features, layer.out_features
                if self.activation == "relu":
                    bound = math.sqrt(6.0 / fan_in)
                else:
                    bound = math.sqrt(6.0 / (fan_in + fan_out))
                layer.weight.uniform_(-bound, bound, generator=gen)
                layer.bias.zero_()

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"input dimension {x.shape[-1]} != {self.in_dim}")
        act = ACTIVATIONS[self.activation]
        for layer in self.layers[:-1]:
            x = act(layer(x))
        return ACTIVATIONS[self.out_activation](self.layers[-1](x))

    def descriptor(self) -> dict:
        return {"widths": self.widths, "activation": self.activation,
                "out_activation": self.out_activation, "seed": self.seed}

    @classmethod
    def from_descriptor(cls, desc: dict) -> "Mlp":
        return cls(desc["widths"], desc["activation"], desc.get("out_activation", "identity"),
                   desc.get("seed", 0))


def param_count(widths: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))


def flat_params(model: nn.Module) -> torch.Tensor:
    return torch.cat([p.detach().reshape(-1) for p in model.parameters()])


def set_flat_params(model: nn.Module, flat: torch.Tensor) -> None:
    flat = torch.as_tensor(flat, dtype=DTYPE)
    total = sum(p.numel() for p in model.parameters())
    if flat.numel() != total:
        raise ValueError(f"expected {total} parameters, got {flat.numel()}")
    offset = 0
    with torch.no_grad():
        for p in model.parameters():
            p.copy_(flat[offset:offset + p.numel()].view_as(p))
            offset += p.numel()


def freeze(model: nn.Module) -> nn.Module:
    for p in model.parameters():
        p.requires_grad_(False)
    return model.eval()


def as_tensor(x) -> torch.Tensor:
    return torch.as_tensor(x, dtype=DTYPE)


def forward(model: nn.Module, x) -> torch.Tensor:
    return model(as_tensor(x))


def grad(loss_fn: Callable, model: nn.Module, batch) -> torch.Tensor:
    """Flat gradient of ``loss_fn(model, batch)`` with respect to all parameters."""
    params = [p for p in model.parameters()]
    loss = loss_fn(model, batch)
    if not torch.isfinite(loss):
        raise NonFiniteLoss(f"loss evaluated to {loss.item()}")
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return torch.cat([(g if g is not None else torch.zeros_like(p)).reshape(-1)
                      for g, p in zip(grads, params)])


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")


def _apply(state: OptimizerState, params: list, grads: list) -> None:
    if len(params) != len(grads):
        raise ValueError("parameter/gradient count mismatch")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch {tuple(p.shape)} vs {tuple(g.shape)}")
    if state.kind == "sgd":
        with torch.no_grad():
            for p, g in zip(params, grads):
                p.sub_(state.lr * g)
        return
    if not state.m:
        state.m = [torch.zeros_like(p) for p in params]
        state.v = [torch.zeros_like(p) for p in params]
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
            v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
            p.sub_(state.lr * (m / c1) / (torch.sqrt(v / c2) + state.eps))


def step(state: OptimizerState, params, gradient):
    """Functional update of a flat parameter vector; returns ``(params, state)``."""
    p = as_tensor(params).clone().reshape(-1)
    g = as_tensor(gradient).reshape(-1)
    _apply(state, [p], [g])
    return p, state


class Optimizer:
    """Descends on a fixed list of tensors using an :class:`OptimizerState`."""

    def __init__(self, params, kind: str = "adam", lr: float = 1e-3):
        self.params = [p for p in params]
        self.state = OptimizerState(kind=kind, lr=lr)

    def step(self, loss: torch.Tensor, retain_graph: bool = False) -> None:
        if not torch.isfinite(loss):
            raise NonFiniteLoss(f"loss evaluated to {loss.item()}")
        grads = torch.autograd.grad(loss, self.params, allow_unused=True,
                                    retain_graph=retain_graph)
        grads = [g if g is not None else torch.zeros_like(p) for g, p in zip(grads, self.params)]
        _apply(self.state, self.params, grads)


def finite_difference_grad(fn: Callable[[torch.Tensor], torch.Tensor], theta: torch.Tensor,
                           h: float = 1e-6) -> torch.Tensor:
    """Central differences of a scalar function of a flat vector."""
    theta = as_tensor(theta).detach().clone()
    out = torch.zeros_like(theta)
    for i in range(theta.numel()):
        orig = theta[i].item()
        theta[i] = orig + h
        fp = float(fn(theta))
        theta[i] = orig - h
        fm = float(fn(theta))
        theta[i] = orig
        out[i] = (fp - fm) / (2 * h)
    return out


def check_gradient(fn: Callable[[torch.Tensor], torch.Tensor], theta: torch.Tensor,
                   rtol: float = 1e-4, atol: float = 1e-6, h: float = 1e-6) -> bool:
    """Compare the autograd gradient of ``fn`` at ``theta`` with central differences."""
    theta = as_tensor(theta).detach().clone().requires_grad_(True)
    (analytic,) = torch.autograd.grad(fn(theta), theta)
    numeric = finite_difference_grad(fn, theta.detach(), h)
    return bool(torch.allclose(analytic, numeric, rtol=rtol, atol=atol))


def functional(model: nn.Module) -> Callable:
    """Return ``f(flat_theta, x)`` evaluating ``model`` with substituted parameters."""
    names = [n for n, _ in model.named_parameters()]
    shapes = [p.shape for _, p in model.named_parameters()]

    def call(theta: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        params, offset = {}, 0
        for n, s in zip(names, shapes):
            k = math.prod(s)
            params[n] = theta[offset:offset + k].view(s)
            offset += k
        return torch.func.functional_call(model, params, (x,))

    return call


def batches(n: int, batch_size: int, gen: torch.Generator):
    """Yield index tensors of one shuffled pass over ``range(n)``."""
    perm = torch.randperm(n, generator=gen)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def fit_classifier(model: nn.Module, x, y, epochs: int = 100, lr: float = 1e-3,
                   batch_size: int = 128, seed: int = 0, weight_decay: float = 0.0) -> nn.Module:
    """Minimize mean cross-entropy of ``model`` on (x, y) with Adam."""
    from .mi import cross_entropy

    x = as_tensor(x)
    y = torch.as_tensor(y, dtype=torch.long)
    gen = torch.Generator().manual_seed(int(seed))
    opt = Optimizer(model.parameters(), "adam", lr)
    for _ in range(epochs):
        for idx in batches(len(y), batch_size, gen):
            loss = cross_entropy(model(x[idx]), y[idx]).mean()
            if weight_decay:
                loss = loss + weight_decay * sum((p ** 2).sum() for p in model.parameters())
            opt.step(loss)
    return model


def predict(model: nn.Module, x) -> torch.Tensor:
    with torch.no_grad():
        return model(as_tensor(x)).argmax(dim=-1)


def accuracy(model: nn.Module, x, y) -> float:
    y = torch.as_tensor(y, dtype=torch.long)
    return float((predict(model, x) == y).to(DTYPE).mean())
