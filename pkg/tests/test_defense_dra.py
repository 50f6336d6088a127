import math

import pytest
import torch

from gradcheck import compare
from privrep.core import GameConfig
from privrep.defense_dra import (DraArch, derangement, dra_losses, init_dra_state, perturbation_objective,
                                 perturbed_accuracy, train_dra_defense, update_perturbation_params)
from privrep.mi import PairCritic
from privrep.nn import Mlp, flat_params

ARCH = DraArch(enc_hidden=8, rep_dim=3, head_hidden=6, critic_hidden=8)


class ZeroCritic(torch.nn.Module):
    def forward(self, x, r):
        return torch.zeros(len(x), dtype=torch.float64)


def data(n=12, seed=0):
    g = torch.Generator().manual_seed(seed)
    x = torch.rand(n, 4, dtype=torch.float64, generator=g)
    return x, (x[:, 0] > 0.5).long()


def test_beta_example_and_contract():
    assert GameConfig(lam=0.4, alpha=1.0).beta == pytest.approx(0.6667, abs=1e-4)
    st = init_dra_state(4, 2, GameConfig(lam=0.5, epsilon=0.5), ARCH)
    st.config = GameConfig(lam=1.0, epsilon=0.5, alpha=1.0)
    with pytest.raises(ValueError):
        update_perturbation_params(st, data(), epochs=1, k=1)


def test_zero_critic_and_zero_delta():
    st = init_dra_state(4, 2, GameConfig(epsilon=0.5), ARCH)
    st.critic = ZeroCritic()
    x, y = data(8)
    i, l1, l2 = dra_losses(st, (x, y), torch.zeros(8, 3, dtype=torch.float64))
    assert float(i.detach()) == pytest.approx(-2 * 8 * math.log(2))
    assert float(l1.detach()) == float(l2.detach())
    with pytest.raises(ValueError):
        dra_losses(st, (x[:1], y[:1]), torch.zeros(1, 3))


def test_large_perturbation_hurts_a_clean_perfect_head():
    st = init_dra_state(4, 2, GameConfig(epsilon=5.0), ARCH)
    st.encoder = Mlp([4, 3], seed=0)
    with torch.no_grad():
        st.encoder.layers[0].weight.zero_()
        st.encoder.layers[0].bias.zero_()
        st.encoder.layers[0].weight[0, 0] = 1.0
    lin = Mlp([3, 2], seed=0)
    with torch.no_grad():
        lin.layers[0].weight.copy_(torch.tensor([[-400.0, 0, 0], [400.0, 0, 0]]))
        lin.layers[0].bias.copy_(torch.tensor([200.0, -200.0]))
    st.utility_head = lin
    x = torch.tensor([[0.1, 0, 0, 0], [0.9, 0, 0, 0], [0.2, 0, 0, 0], [0.8, 0, 0, 0]], dtype=torch.float64)
    y = torch.tensor([0, 1, 0, 1])
    delta = st.perturbation.sample(4, torch.Generator().manual_seed(3))
    with torch.no_grad():
        _, l1, l2 = dra_losses(st, (x, y), delta.detach())
    assert float(l2) == pytest.approx(0.0, abs=1e-12)
    assert float(l1) > 0


def test_alpha_zero_drops_entropy_gradient():
    st = init_dra_state(4, 2, GameConfig(lam=0.5, epsilon=0.5, alpha=0.0), ARCH)
    x, y = data()
    z = st.perturbation.base_noise(len(x), torch.Generator().manual_seed(0))
    obj = perturbation_objective(st, x, y, z)
    with torch.no_grad():
        r = st.encoder(x)
    ce = torch.nn.functional.cross_entropy(st.utility_head(r + st.perturbation.transform(z)), y)
    assert float(obj.detach()) == pytest.approx(float(ce.detach()), abs=1e-12)


def test_one_phi_step_descends_with_common_random_numbers():
    st = init_dra_state(4, 2, GameConfig(lam=0.4, epsilon=0.8, alpha=1.0, lr_phi=1e-3), ARCH)
    x, y = data(16)
    z = st.perturbation.base_noise(16, torch.Generator().manual_seed(9))
    before = float(perturbation_objective(st, x, y, z).detach())
    obj = perturbation_objective(st, x, y, z)
    st.perturbation.zero_grad()
    obj.backward()
    with torch.no_grad():
        for p in st.perturbation.parameters():
            p -= 1e-3 * p.grad
    assert float(perturbation_objective(st, x, y, z).detach()) < before


def test_phi_update_keeps_optimizer_and_skips_zero_epsilon():
    st = init_dra_state(4, 2, GameConfig(lam=0.4, epsilon=0.5), ARCH)
    update_perturbation_params(st, data(), epochs=1, k=2)
    opt = st.phi_opt
    assert opt is not None
    update_perturbation_params(st, data(), epochs=1, k=2)
    assert st.phi_opt is opt
    st0 = init_dra_state(4, 2, GameConfig(lam=0.4, epsilon=0.0), ARCH)
    before = st0.perturbation.state()
    update_perturbation_params(st0, data(), epochs=1, k=2)
    assert st0.perturbation.state() == before and st0.phi_opt is None


def test_theta_step_does_not_increase_objective():
    cfg = GameConfig(lam=0.4, epsilon=0.5)
    st = init_dra_state(4, 2, cfg, ARCH)
    x, y = data(16)
    delta = st.perturbation.sample(16, torch.Generator().manual_seed(2)).detach()
    neg = derangement(16, torch.Generator().manual_seed(5))

    def obj():
        i, l1, l2 = dra_losses(st, (x, y), delta, neg)
        return cfg.lam * i + (1 - cfg.lam) * (l1 + l2)

    before = obj()
    st.encoder.zero_grad()
    before.backward()
    with torch.no_grad():
        for p in st.encoder.parameters():
            p -= 1e-5 * p.grad
    assert float(obj().detach()) <= float(before.detach())


def test_lambda_zero_encoder_gradient_ignores_critic():
    st = init_dra_state(4, 2, GameConfig(lam=0.0, epsilon=0.5), ARCH)
    x, y = data(10)
    delta = st.perturbation.sample(10, torch.Generator().manual_seed(1)).detach()
    neg = derangement(10, torch.Generator().manual_seed(1))

    def enc_grad():
        st.encoder.zero_grad()
        _, l1, l2 = dra_losses(st, (x, y), delta, neg)
        (l1 + l2).backward()
        return torch.cat([p.grad.reshape(-1) for p in st.encoder.parameters()])

    g0 = enc_grad()
    st.critic = PairCritic(Mlp([7, 8, 1], seed=99))
    assert torch.equal(g0, enc_grad())


def test_derangement_has_no_fixed_points():
    g = torch.Generator().manual_seed(0)
    for n in (2, 3, 10, 57):
        p = derangement(n, g)
        assert sorted(p.tolist()) == list(range(n))
        assert not torch.any(p == torch.arange(n))
    with pytest.raises(ValueError):
        derangement(1, g)


def test_training_keeps_perturbation_bounded_and_replays():
    x, y = data(40)
    cfg = GameConfig(lam=0.4, epsilon=0.5, rounds=2, batch_size=16, seed=1, phi_epochs=1)
    a = train_dra_defense(x, y, cfg, 2, ARCH, "uniform")
    b = train_dra_defense(x, y, cfg, 2, ARCH, "uniform")
    assert a.round == 2 and set(a.history[-1]) == {"round", "I_jsd", "L1", "L2", "max_norm"}
    assert torch.equal(flat_params(a.encoder), flat_params(b.encoder))
    assert a.geometry.max_norm > 0
    assert float(a.perturbation.sample(10_000, torch.Generator().manual_seed(0)).detach().abs().max()) <= 0.5
    assert 0.0 <= perturbed_accuracy(a, x, y) <= 1.0


def test_state_dims_are_checked():
    st = init_dra_state(4, 2, GameConfig(epsilon=0.5), ARCH)
    from privrep.mi import PerturbationParams
    with pytest.raises(ValueError):
        type(st)(st.encoder, st.critic, st.utility_head, PerturbationParams(5, 0.5), st.config)
