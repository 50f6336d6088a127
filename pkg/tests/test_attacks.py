import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from privrep.attacks import (AttackReport, DegenerateLabels, ReconReport, evaluate_mia_attacker,
                             lira_score, mse, psnr, recon_report, roc_and_tpr, roc_curve,
                             shadow_lira, ssim, train_dra_attacker, train_mia_attacker,
                             train_pia_attacker)
from privrep.defense_pia import sample_bags
from privrep.mi import PerturbationParams
from privrep.nn import Mlp


def identity(x):
    return torch.as_tensor(x, dtype=torch.float64)


def test_roc_perfect_scores():
    fpr, tpr = roc_curve([0.9, 0.8, 0.4, 0.2], [1, 1, 0, 0])
    assert roc_and_tpr([0.9, 0.8, 0.4, 0.2], [1, 1, 0, 0], (0.0, 0.01))["tpr_at"][0.0] == 1.0
    assert (fpr[0], tpr[0], fpr[-1], tpr[-1]) == (0, 0, 1, 1)


def test_roc_constant_scores_is_diagonal():
    fpr, tpr = roc_curve(np.zeros(10), [1, 0] * 5)
    assert np.allclose(fpr, tpr)
    assert roc_and_tpr(np.zeros(10), [1, 0] * 5)["auc"] == pytest.approx(0.5)


def test_roc_anticorrelated_below_diagonal():
    out = roc_and_tpr([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0])
    assert out["auc"] == pytest.approx(0.0)
    fpr, tpr = roc_curve([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0])
    assert np.all(tpr <= fpr)


def test_roc_needs_both_classes():
    with pytest.raises(DegenerateLabels):
        roc_curve([0.1, 0.2], [1, 1])


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=60), st.integers(0, 2**16))
def test_roc_monotone_and_anchored(scores, seed):
    labels = np.random.default_rng(seed).integers(0, 2, len(scores))
    labels[0], labels[1] = 0, 1
    fpr, tpr = roc_curve(scores, labels)
    assert (fpr[0], tpr[0]) == (0.0, 0.0)
    assert fpr[-1] == pytest.approx(1.0) and tpr[-1] == pytest.approx(1.0)
    assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)


def test_report_roundtrip():
    r = AttackReport("mia", 0.6, [(0.0, 0.0), (1.0, 1.0)], {0.01: 0.1}, {0: 0.5, 1: 0.7})
    assert AttackReport.from_dict(r.to_dict()) == r
    rr = ReconReport([0.1, 0.3], [0.5, 0.7], [10.0, 20.0])
    assert ReconReport.from_dict(rr.to_dict()).mean_mse == pytest.approx(0.2)


def test_mia_attacker_on_separable_membership():
    rng = np.random.default_rng(0)
    u = rng.integers(0, 2, 600)
    x = rng.standard_normal((600, 4))
    x[:, 0] += np.where(u == 1, 3.0, -3.0)
    clf = train_mia_attacker(identity, x[:400], u[:400], epochs=60, seed=0)
    rep = evaluate_mia_attacker(clf, identity, x[400:], u[400:])
    # logistic oracle: the Bayes rule on the shifted axis
    oracle = float(((x[400:, 0] > 0).astype(int) == u[400:]).mean())
    assert rep.accuracy >= 0.95 and rep.accuracy >= oracle - 0.03
    with pytest.raises(DegenerateLabels):
        train_mia_attacker(identity, x[:10], np.ones(10, dtype=int))


def test_mia_attacker_without_signal_is_at_chance():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2000, 4))
    u = rng.integers(0, 2, 2000)
    clf = train_mia_attacker(identity, x[:1000], u[:1000], epochs=30, seed=0)
    assert abs(evaluate_mia_attacker(clf, identity, x[1000:], u[1000:]).accuracy - 0.5) <= 0.05


def test_lira_score_fallback_and_ratio():
    assert lira_score(2.0, [1.0, 2.0], [0.0, 0.1, -0.1]) > lira_score(-1.0, [1.0, 2.0], [0.0, 0.1, -0.1])
    full = lira_score(1.0, [1.0, 1.1, 0.9, 1.05], [0.0, 0.1, -0.1, 0.05])
    assert full > 0


def test_shadow_lira_random_target_stays_near_diagonal():
    """A target head with no relation to membership leaves TPR@FPR within the binomial band."""
    rng = np.random.default_rng(0)
    x = rng.standard_normal((400, 3))
    y = rng.integers(0, 2, 400)
    u = rng.integers(0, 2, 400)

    class Noise(torch.nn.Module):
        def forward(self, r):
            return torch.as_tensor(rng.standard_normal((len(r), 2)))

    rep = shadow_lira(identity, x[:100], y[:100], x, y, np.arange(400), u, n_shadow=4, epochs=5,
                      target_head=Noise())
    for f, t in rep.tpr_at.items():
        n_pos = int(u.sum())
        assert t <= f + 3 * np.sqrt(max(f, 1e-2) * (1 - f) / n_pos) + 0.02
    with pytest.raises(ValueError):
        shadow_lira(identity, x[:10], y[:10], x, y, np.arange(4), u[:4], n_shadow=1)


class Lookup(torch.nn.Module):
    """Memorises its training rows: confident on their labels, uninformative elsewhere."""

    def __init__(self, x, y):
        super().__init__()
        self.seen = {round(float(v), 9): int(c) for v, c in zip(x[:, 0], y)}

    def forward(self, x):
        out = torch.zeros(len(x), 2, dtype=torch.float64)
        for i, v in enumerate(x[:, 0].tolist()):
            c = self.seen.get(round(v, 9))
            if c is not None:
                out[i, c] = 4.0
        return out


def test_shadow_lira_full_pipeline_shadows_expose_memorisation():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((200, 3))
    y = rng.integers(0, 2, 200)
    u = np.r_[np.ones(100, int), np.zeros(100, int)]
    calls = []

    def train_shadow(k, idx):
        calls.append(len(idx))
        return Lookup(x[idx], y[idx])

    # identity encoder, so the target head sees raw rows
    rep = shadow_lira(identity, x[:100], y[:100], x, y, np.arange(200), u, n_shadow=8,
                      target_head=Lookup(x[:100], y[:100]), train_shadow=train_shadow)
    assert len(calls) == 8 and sum(calls) == 8 * 200 // 2  # each point is in half of the shadows
    assert rep.accuracy == 1.0 and rep.tpr_at[0.01] == 1.0


def test_pia_constant_encoder_is_chance_and_errors():
    rng = np.random.default_rng(0)
    ref = (rng.standard_normal((600, 3)), rng.integers(0, 2, 600), rng.integers(0, 2, 600))
    train = sample_bags(ref, (0.1, 0.9), (20, 30), 40, seed=0)
    test = sample_bags(ref, (0.1, 0.9), (20, 30), 40, seed=1)
    const = lambda x: torch.zeros(len(x), 2, dtype=torch.float64)
    _, rep = train_pia_attacker(const, train, test, "mean", 2, epochs=20)
    assert rep.accuracy == pytest.approx(0.5) and rep.chance == 0.5
    _, sub = train_pia_attacker(identity, train, test, "mean", 2, matched=False, epochs=20)
    assert sub.kind == "pia-substitute"
    bad = sample_bags(ref, (0.1, 0.5, 0.9), (20, 30), 3, seed=2)
    with pytest.raises(DegenerateLabels):
        train_pia_attacker(identity, train, bad, "mean", 3, epochs=1)


def test_dra_attacker_recovers_low_dim_data():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((600, 2))
    x = np.c_[z, z @ np.array([[0.5, -1.0], [1.0, 0.3]])] * 0.3
    _, clean = train_dra_attacker(identity, None, x[:400], x[400:], epochs=200, seed=0)
    assert clean.mean_mse < 0.02 * x.var(axis=0).sum()
    pert = PerturbationParams(4, 1.0)
    _, noisy = train_dra_attacker(identity, pert, x[:400], x[400:], epochs=200, seed=0)
    assert noisy.mean_mse > clean.mean_mse


def test_image_metrics_examples():
    a = np.random.default_rng(0).random((8, 8))
    assert mse(a, a) == 0 and psnr(a, a) == 100.0 and ssim(a, a) == 1.0
    assert mse(np.zeros(4), np.ones(4)) == 1.0 and psnr(np.zeros(4), np.ones(4)) == 0.0
    assert mse(a, a + 0.1) == pytest.approx(0.01) and psnr(a, a + 0.1) == pytest.approx(20.0)
    with pytest.raises(ValueError):
        mse(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        ssim(np.zeros((3, 3)), np.zeros((3, 3)))


@given(st.integers(0, 10_000))
def test_ssim_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((9, 9)), rng.random((9, 9))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
    assert ssim(a, b) <= 1.0


def test_recon_report_with_grid():
    x = np.random.default_rng(0).random((3, 64))
    rep = recon_report(x, x, grid=(8, 8))
    assert rep.mean_mse == 0 and rep.mean_ssim == pytest.approx(1.0) and rep.mean_psnr == 100.0
