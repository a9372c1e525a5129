import numpy as np
import pytest

import dibm.tensor as T
from dibm.diffusion import make_schedule
from dibm.errors import ContractError
from dibm.model import (
    ModelConfig,
    NoisePredictor,
    chunk_mse,
    diffusion_loss,
    per_sample_mse,
    predict_noise,
)
from dibm.tensor import Tensor, backward, zero_grads

from oracles import assert_grads_close, fd_grad, plain_predictor_forward

TINY = ModelConfig(
    obs_dim=5, horizon=2, action_dim=3, n_experts=3,
    hidden=8, n_blocks=2, moe_period=2, time_embed_dim=4, obs_embed_dim=4, t_train=10,
)


def make_model(cfg=TINY, seed=0, dtype=np.float32, randomize_zero_inits=True):
    m = NoisePredictor(cfg, np.random.default_rng(seed), dtype=dtype)
    if randomize_zero_inits:
        # tests want non-degenerate outputs; fill the zero-initialized layers
        r = np.random.default_rng(seed + 1)
        for k, p in m.params.items():
            if k.endswith(".w2") or k == "out.w":
                p.data = (r.standard_normal(p.data.shape) * 0.3).astype(dtype)
    return m


def batch(cfg=TINY, n=6, seed=3):
    r = np.random.default_rng(seed)
    a = r.uniform(-1, 1, size=(n, cfg.horizon, cfg.action_dim)).astype(np.float32)
    obs = r.standard_normal((n, cfg.obs_dim)).astype(np.float32)
    ks = r.integers(0, cfg.t_train, size=n)
    return a, obs, ks


def test_moe_indices_one_in_four():
    cfg = ModelConfig(obs_dim=4, horizon=2, action_dim=2, n_experts=2, n_blocks=4, moe_period=4)
    assert cfg.moe_indices == (1,)
    cfg8 = ModelConfig(obs_dim=4, horizon=2, action_dim=2, n_experts=2, n_blocks=8, moe_period=4)
    assert cfg8.moe_indices == (1, 5)


def test_forward_matches_numpy_reference():
    m = make_model()
    a, obs, ks = batch()
    for e in range(TINY.n_experts):
        got = predict_noise(m, a, obs, ks, e).data
        want = plain_predictor_forward(
            {k: p.data for k, p in m.params.items()}, TINY, a.reshape(len(a), -1), obs, ks, e
        )
        np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-6)


def test_expert_isolation_exact_zero_gradients():
    m = make_model()
    a, obs, ks = batch()
    zero_grads(m.params.values())
    out = predict_noise(m, a, obs, ks, 1)
    backward(T.tsum(T.mul(out, out)))
    for name in m.expert_param_names(0) + m.expert_param_names(2):
        np.testing.assert_array_equal(m.params[name].grad, 0.0, err_msg=name)
    # the active expert does receive gradient
    active = [m.params[n].grad for n in m.expert_param_names(1)]
    assert any(np.any(g != 0) for g in active)


def test_expert_perturbation_probe():
    a, obs, ks = batch()
    base = predict_noise(make_model(), a, obs, ks, 0).data

    m2 = make_model()
    for name in m2.expert_param_names(0):
        m2.params[name].data += 0.05
    assert np.any(predict_noise(m2, a, obs, ks, 0).data != base)

    m3 = make_model()
    for name in m3.expert_param_names(2):
        m3.params[name].data += 0.05
    np.testing.assert_array_equal(predict_noise(m3, a, obs, ks, 0).data, base)


def test_single_expert_acts_as_plain_network():
    cfg = ModelConfig(obs_dim=5, horizon=2, action_dim=3, n_experts=1,
                      hidden=8, n_blocks=2, moe_period=2, time_embed_dim=4, obs_embed_dim=4, t_train=10)
    m = make_model(cfg)
    a, obs, ks = batch(cfg)
    got = predict_noise(m, a, obs, ks, 0).data
    want = plain_predictor_forward(
        {k: p.data for k, p in m.params.items()}, cfg, a.reshape(len(a), -1), obs, ks, 0
    )
    np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-6)


def test_expert_index_out_of_range():
    m = make_model()
    a, obs, ks = batch()
    with pytest.raises(ContractError):
        predict_noise(m, a, obs, ks, 3)


def test_fresh_model_predicts_zero_and_unit_loss():
    cfg = TINY
    m = NoisePredictor(cfg, np.random.default_rng(0))  # zero-init head
    sched = make_schedule(cfg.t_train)
    r = np.random.default_rng(5)
    n = 512
    a = r.uniform(-1, 1, size=(n, cfg.horizon, cfg.action_dim)).astype(np.float32)
    obs = r.standard_normal((n, cfg.obs_dim)).astype(np.float32)
    ks = r.integers(0, cfg.t_train, size=n)
    out = predict_noise(m, a, obs, ks, 0)
    np.testing.assert_array_equal(out.data, 0.0)
    eps = r.standard_normal((n, cfg.horizon, cfg.action_dim)).astype(np.float32)
    loss = diffusion_loss(m, obs, a, ks, 0, sched, eps)
    assert abs(loss.item() - 1.0) < 0.1


def test_perfect_oracle_model_gives_zero_loss():
    eps = np.random.default_rng(0).standard_normal((4, TINY.chunk_size)).astype(np.float32)
    assert chunk_mse(Tensor(eps), eps).item() == 0.0


def test_loss_is_permutation_invariant():
    m = make_model()
    sched = make_schedule(TINY.t_train)
    a, obs, ks = batch(n=8)
    eps = np.random.default_rng(9).standard_normal(a.shape).astype(np.float32)
    l1 = diffusion_loss(m, obs, a, ks, 0, sched, eps).item()
    perm = np.random.default_rng(1).permutation(8)
    l2 = diffusion_loss(m, obs[perm], a[perm], ks[perm], 0, sched, eps[perm]).item()
    np.testing.assert_allclose(l1, l2, rtol=1e-6)


def test_empty_batch_rejected():
    m = make_model()
    sched = make_schedule(TINY.t_train)
    with pytest.raises(ContractError):
        diffusion_loss(m, np.zeros((0, TINY.obs_dim)), np.zeros((0, 2, 3)), 0, 0, sched, np.zeros((0, 2, 3)))


def test_per_sample_mse_matches_loop():
    r = np.random.default_rng(2)
    pred = r.standard_normal((5, 6))
    eps = r.standard_normal((5, 6))
    got = per_sample_mse(pred, eps)
    want = [np.mean((pred[i] - eps[i]) ** 2) for i in range(5)]
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_model_gradients_match_finite_differences():
    cfg = TINY
    m = make_model(dtype=np.float64)
    sched = make_schedule(cfg.t_train)
    r = np.random.default_rng(4)
    n = 3
    a = r.uniform(-1, 1, size=(n, cfg.horizon, cfg.action_dim))
    obs = r.standard_normal((n, cfg.obs_dim))
    ks = r.integers(0, cfg.t_train, size=n)
    eps = r.standard_normal(a.shape)

    def loss_fn():
        with T.no_grad():
            return diffusion_loss(m, obs, a, ks, 1, sched, eps).item()

    zero_grads(m.params.values())
    backward(diffusion_loss(m, obs, a, ks, 1, sched, eps))
    analytic = {k: p.grad for k, p in m.params.items()}
    numeric = fd_grad(loss_fn, m.params, h=1e-4)
    assert_grads_close(analytic, numeric, rtol=1e-3, atol=1e-7)
