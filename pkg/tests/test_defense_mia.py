import math

import pytest
import torch

from privrep.core import GameConfig
from privrep.defense_mia import (Arch, ProbabilityLogits, TrainingDiverged, advreg_mode_loss,
                                 encoder_objective, init_advreg_state, init_mia_state, mia_losses,
                                 train_mia_defense)
from privrep.mi import cross_entropy
from privrep.nn import Mlp, flat_params


class Const(torch.nn.Module):
    def __init__(self, probs, in_dim):
        super().__init__()
        self.logits = torch.log(torch.as_tensor(probs, dtype=torch.float64))
        self.in_dim = in_dim

    def forward(self, r):
        return self.logits.expand(r.shape[0], -1)


def small_state(lam=0.5, seed=0):
    return init_mia_state(4, 2, GameConfig(lam=lam, seed=seed), Arch(enc_hidden=8, rep_dim=3, head_hidden=4))


def test_uniform_head_gives_n_ln2():
    st = small_state()
    st.privacy_head = Const([0.5, 0.5], 3)
    x = torch.randn(7, 4, dtype=torch.float64)
    l1, _ = mia_losses(st, (x[:4], torch.zeros(4, dtype=torch.long)), x[4:])
    assert float(l1) == pytest.approx(7 * math.log(2))


def test_perfect_utility_head_gives_zero_l2():
    st = small_state()
    st.utility_head = Const([1.0, 0.0], 3)
    x = torch.randn(3, 4, dtype=torch.float64)
    _, l2 = mia_losses(st, (x, torch.zeros(3, dtype=torch.long)), x[:1])
    assert float(l2) == pytest.approx(0.0, abs=1e-10)


def test_single_member_contribution():
    st = small_state()
    st.privacy_head = Const([0.3, 0.7], 3)
    l1, _ = mia_losses(st, (torch.zeros(1, 4), torch.tensor([0])), torch.zeros(0, 4))
    assert float(l1) == pytest.approx(0.3567, abs=1e-4)


def test_empty_batch_rejected():
    with pytest.raises(ValueError):
        mia_losses(small_state(), (torch.zeros(0, 4), torch.zeros(0, dtype=torch.long)), torch.zeros(0, 4))


def test_state_checks_head_dims():
    st = small_state()
    with pytest.raises(ValueError):
        type(st)(st.encoder, Mlp([5, 2]), st.utility_head, st.config)


def test_encoder_objective_endpoints():
    st = small_state()
    g = torch.Generator().manual_seed(0)
    x = torch.randn(6, 4, dtype=torch.float64, generator=g)
    u = torch.tensor([1, 1, 1, 0, 0, 0])
    y = torch.tensor([0, 1, 0])
    with torch.no_grad():
        l1 = cross_entropy(st.privacy_head(st.encoder(x)), u).mean()
        l2 = cross_entropy(st.utility_head(st.encoder(x[:3])), y).mean()
        assert float(encoder_objective(st, x, u, x[:3], y, 0.0)) == pytest.approx(float(l2))
        assert float(encoder_objective(st, x, u, x[:3], y, 1.0)) == pytest.approx(float(-l1))


def test_training_records_history_and_is_reproducible():
    g = torch.Generator().manual_seed(0)
    x1 = torch.randn(20, 4, dtype=torch.float64, generator=g)
    y1 = torch.randint(0, 2, (20,), generator=g)
    x0 = torch.randn(20, 4, dtype=torch.float64, generator=g)
    cfg = GameConfig(lam=0.5, rounds=3, batch_size=8, seed=2, adv_steps=2)
    arch = Arch(enc_hidden=8, rep_dim=3, head_hidden=4)
    a = train_mia_defense((x1, y1), x0, cfg, 2, arch)
    b = train_mia_defense((x1, y1), x0, cfg, 2, arch)
    assert a.round == 3 and len(a.history) == 3
    assert set(a.history[0]) == {"round", "L1", "L2"}
    assert torch.equal(flat_params(a.encoder), flat_params(b.encoder))


def test_divergence_is_reported():
    x1 = torch.randn(8, 4, dtype=torch.float64)
    x1[0, 0] = float("nan")
    with pytest.raises(TrainingDiverged):
        train_mia_defense((x1, torch.zeros(8, dtype=torch.long)), torch.randn(8, 4, dtype=torch.float64),
                          GameConfig(rounds=1, batch_size=16), 2, Arch(rep_dim=2))


def test_training_rejects_missing_nonmembers():
    with pytest.raises(ValueError):
        train_mia_defense((torch.randn(4, 3), torch.zeros(4, dtype=torch.long)), torch.zeros(0, 3),
                          GameConfig(rounds=1), 2)


def test_advreg_lambda_zero_is_task_cross_entropy():
    st = init_advreg_state(4, 3, GameConfig(), Arch(enc_hidden=6))
    g = torch.Generator().manual_seed(1)
    x1 = torch.randn(5, 4, dtype=torch.float64, generator=g)
    y1 = torch.randint(0, 3, (5,), generator=g)
    with torch.no_grad():
        task = cross_entropy(st.encoder.net(x1), y1).sum()
        assert float(advreg_mode_loss(st, (x1, y1), x1[:2], 0.0)) == pytest.approx(-float(task), rel=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_advreg_matches_game_surrogate(seed):
    """With the identity utility head the AdvReg loss is the game's lam * L1 - (1 - lam) * L2."""
    g = torch.Generator().manual_seed(seed)
    st = init_advreg_state(4, 3, GameConfig(seed=seed), Arch(enc_hidden=6, head_hidden=5))
    assert isinstance(st.utility_head, ProbabilityLogits)
    x1 = torch.randn(6, 4, dtype=torch.float64, generator=g)
    y1 = torch.randint(0, 3, (6,), generator=g)
    x0 = torch.randn(5, 4, dtype=torch.float64, generator=g)
    lam = float(torch.rand(1, generator=g))
    with torch.no_grad():
        l1, l2 = mia_losses(st, (x1, y1), x0)
        assert float(advreg_mode_loss(st, (x1, y1), x0, lam)) == pytest.approx(float(lam * l1 - (1 - lam) * l2),
                                                                              abs=1e-10)


def test_advreg_rejects_non_probability_encoder():
    st = small_state()
    with pytest.raises(ValueError):
        advreg_mode_loss(st, (torch.randn(2, 4, dtype=torch.float64), torch.tensor([0, 1])),
                         torch.randn(2, 4, dtype=torch.float64), 0.5)
