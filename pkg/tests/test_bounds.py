import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from privrep.bounds import (GeometrySpec, InvalidGeometry, TradeoffInputs, binary_entropy,
                            conditional_entropy_estimates, delta_constants, dra_error_bound,
                            empirical_advantage, inv_binary_entropy, inv_binary_entropy_lower,
                            leakage_report, lipschitz_upper, mia_leakage_bound,
                            sphere_surface_log_area, spectral_norm, tradeoff_bound)
from privrep.nn import Mlp


def const_head(p):
    logits = torch.log(torch.as_tensor(p, dtype=torch.float64))
    return lambda r: logits.expand(r.shape[0], -1)


def test_inverse_binary_entropy_examples():
    assert inv_binary_entropy_lower(1.0) == pytest.approx(0.19342, abs=1e-5)
    assert inv_binary_entropy(1.0) == pytest.approx(0.5, abs=1e-7)
    assert inv_binary_entropy_lower(0.5) == pytest.approx(0.06974, abs=1e-5)
    assert inv_binary_entropy(0.5) == pytest.approx(0.1100, abs=1e-4)
    assert inv_binary_entropy_lower(0.0) == 0.0
    assert inv_binary_entropy_lower(1e-300) < 1e-290
    with pytest.raises(ValueError):
        inv_binary_entropy_lower(1.5)
    with pytest.raises(ValueError):
        inv_binary_entropy(-0.1)


def test_lower_inverse_below_exact_on_grid():
    for p in np.linspace(1e-3, 1.0, 1000):
        assert inv_binary_entropy_lower(p) <= inv_binary_entropy(p) + 1e-12


@given(st.floats(1e-6, 0.5))
def test_bisection_inverts_binary_entropy(q):
    # H2 is flat at 1/2, so compare in entropy space
    h = binary_entropy(q)
    assert binary_entropy(inv_binary_entropy(h)) == pytest.approx(h, abs=1e-12)
    assert inv_binary_entropy(h) <= 0.5


def test_mia_leakage_examples():
    assert mia_leakage_bound(1.0) == pytest.approx(0.80658, abs=1e-5)
    assert mia_leakage_bound(0.0) == 1.0
    assert mia_leakage_bound(0.5) == pytest.approx(0.93026, abs=1e-5)
    with pytest.raises(ValueError):
        mia_leakage_bound(-0.1)


@given(st.floats(0.0, 6.0))
def test_leakage_bound_in_unit_interval(h):
    assert 0.0 <= mia_leakage_bound(h) <= 1.0


def test_conditional_entropy_examples():
    x = torch.zeros(6, 1, dtype=torch.float64)
    pi, ce = conditional_entropy_estimates(None, const_head([0.5, 0.5]), x, [0, 1, 0, 1, 1, 0])
    assert pi == pytest.approx(1.0) and ce == pytest.approx(1.0)
    pi, ce = conditional_entropy_estimates(None, const_head([0.9, 0.1]), x, [0] * 6)
    assert pi == pytest.approx(0.4690, abs=1e-4)
    assert ce == pytest.approx(0.1520, abs=1e-4)
    perfect = lambda r: torch.log(torch.clamp(torch.cat([1 - r, r], 1), min=1e-300))
    pi, ce = conditional_entropy_estimates(None, perfect, torch.tensor([[0.0], [1.0]]), [0, 1])
    assert pi == pytest.approx(0, abs=1e-9) and ce == pytest.approx(0, abs=1e-9)
    rep = leakage_report(pi, 1.0)
    assert rep[0].bound == pytest.approx(1.0) and rep[1].bound == pytest.approx(0.80658, abs=1e-5)
    assert not any(r.certified for r in rep)


def test_dra_bound_examples():
    g = GeometrySpec(d=5, eta=0.1, vol_boundary=2 * math.e**2, vol_boundary_eta=1.0)
    assert dra_error_bound(0.0, g) == pytest.approx(2 / (2 + math.log(2)), abs=1e-4)
    assert dra_error_bound(1e6, g) == 0.0
    with pytest.raises(InvalidGeometry):
        dra_error_bound(0.0, GeometrySpec(d=5, eta=0.1, vol_boundary=1.0, vol_boundary_eta=1.0))
    with pytest.raises(InvalidGeometry):
        dra_error_bound(0.0, GeometrySpec(d=5, eta=0.1, vol_boundary=1.0, vol_boundary_eta=3.0))
    with pytest.raises(ValueError):
        dra_error_bound(-1.0, g)


def test_default_geometry_uses_sphere_area():
    # the 2-sphere of radius r has area 4 pi r^2
    assert sphere_surface_log_area(3, 0.5) == pytest.approx(math.log(4 * math.pi * 0.25))
    g = GeometrySpec(d=3, eta=0.05)
    log_x, log_eta = g.log_volumes()
    assert log_x == pytest.approx(math.log(6))
    assert dra_error_bound(0.0, g) == pytest.approx(1 - math.log(2) / (log_x - log_eta))
    with pytest.raises(InvalidGeometry):
        sphere_surface_log_area(3, 0.0)


@given(st.floats(0, 50), st.floats(0, 50))
def test_dra_bound_monotone_in_mi(a, b):
    g = GeometrySpec(d=10, eta=0.05)
    lo, hi = sorted((a, b))
    assert 0.0 <= dra_error_bound(hi, g) <= dra_error_bound(lo, g) <= 1.0


def test_tradeoff_examples():
    assert tradeoff_bound(TradeoffInputs(0.5, 1, 0.1, 1)) == 0.3
    assert tradeoff_bound(TradeoffInputs(0.4, 3, 2, 0)) == 0.4
    assert tradeoff_bound(TradeoffInputs(0.1, 1, 1, 1), "dra") == 0.0
    with pytest.raises(ValueError):
        TradeoffInputs(0.5, 1, 0.1, 1.5)
    with pytest.raises(ValueError):
        TradeoffInputs(-0.1, 1, 0.1, 0.5)
    with pytest.raises(ValueError):
        tradeoff_bound(TradeoffInputs(0.5, 1, 0.1, 1), "xyz")


def test_empirical_advantage_examples():
    u = np.array([1] * 10 + [0] * 10)
    assert empirical_advantage(u, u) == 1.0
    dec = np.array([1] * 8 + [0] * 2 + [1] * 3 + [0] * 7)  # TPR 0.8, FPR 0.3
    assert empirical_advantage(dec, u) == pytest.approx(0.5)
    rng = np.random.default_rng(0)
    big = rng.integers(0, 2, 20000)
    assert empirical_advantage(rng.integers(0, 2, 20000), big) < 0.03
    with pytest.raises(ValueError):
        empirical_advantage([0, 1], [1, 1])


def test_delta_constants_examples():
    y = [1, 1, 0, 0, 1, 1, 1, 0]
    u = [0, 0, 0, 0, 1, 1, 1, 1]
    d_yu, _ = delta_constants(y, u)
    assert d_yu == pytest.approx(0.25)
    assert delta_constants([0, 1, 0, 1], [0, 0, 1, 1]) == (0.0, 0.0)
    assert delta_constants([1, 1, 1, 1], [0, 1, 0, 1])[1] == 1.0
    with pytest.raises(ValueError):
        delta_constants([0, 2], [0, 1])


def test_spectral_norm_and_lipschitz():
    w = np.diag([3.0, 1.0, 0.5])
    assert spectral_norm(w) == pytest.approx(3.0, rel=1e-6)
    m = Mlp([4, 6, 2], seed=0)
    bound = lipschitz_upper(m)
    expected = np.prod([np.linalg.norm(layer.weight.detach().numpy(), 2) for layer in m.layers])
    assert bound == pytest.approx(expected, rel=1e-3)
    # certified: no input pair stretches further than the bound
    x = torch.randn(200, 4, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    with torch.no_grad():
        out = m(x)
    ratio = (out[1:] - out[:-1]).norm(dim=1) / (x[1:] - x[:-1]).norm(dim=1)
    assert float(ratio.max()) <= bound * (1 + 1e-3)
