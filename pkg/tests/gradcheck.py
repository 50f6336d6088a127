"""Finite-difference checks against autograd over the parameters of several modules."""

import torch

from privrep.nn import finite_difference_grad


def params_of(modules):
    return [p for m in modules for p in m.parameters()]


def compare(modules, loss_fn, rtol=1e-3, atol=1e-7):
    """(ok, max relative error) for d loss / d params of ``modules``."""
    params = params_of(modules)
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = torch.cat([p.grad.reshape(-1) for p in params])
    theta0 = torch.cat([p.detach().reshape(-1) for p in params])

    def fn(theta):
        with torch.no_grad():
            off = 0
            for p in params:
                p.copy_(theta[off:off + p.numel()].view_as(p))
                off += p.numel()
            return loss_fn()

    numeric = finite_difference_grad(fn, theta0)
    fn(theta0)
    err = ((analytic - numeric).abs() / (numeric.abs() + atol / rtol)).max()
    return bool(torch.allclose(analytic, numeric, rtol=rtol, atol=atol)), float(err)
