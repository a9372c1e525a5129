import numpy as np
import pytest

from dibm.diffusion import (
    NoiseSchedule,
    add_noise,
    ddim_step,
    inference_steps,
    make_schedule,
    recover_clean,
)
from dibm.errors import ContractError, DimensionError


def synthetic_schedule(alpha_bars):
    abar = np.asarray(alpha_bars, dtype=np.float64)
    prev = np.concatenate([[1.0], abar[:-1]])
    betas = 1.0 - abar / prev
    return NoiseSchedule(betas=betas, alphas=1.0 - betas, alpha_bars=abar)


def test_schedule_t50_shape_and_endpoints():
    s = make_schedule(50)
    assert s.t_train == 50
    assert np.all(np.diff(s.alpha_bars) < 0)
    assert s.alpha_bars[0] > 0.99
    assert s.alpha_bars[-1] < 0.05


def test_schedule_t2_valid():
    s = make_schedule(2)
    assert len(s.betas) == 2
    assert np.all((s.betas > 0) & (s.betas < 1))


@pytest.mark.parametrize("t", [2, 5, 16, 50, 100])
def test_alphas_plus_betas_is_one_exactly(t):
    s = make_schedule(t)
    np.testing.assert_array_equal(s.alphas + s.betas, np.ones(t))


def test_schedule_rejects_tiny_t():
    with pytest.raises(ContractError):
        make_schedule(1)


def test_add_noise_limits():
    s = synthetic_schedule([1.0, 0.25, 1e-12])
    a = np.array([1.0, 0.0], dtype=np.float32)
    eps = np.array([0.0, 1.0], dtype=np.float32)
    np.testing.assert_allclose(add_noise(a, eps, 0, s), a)
    np.testing.assert_allclose(add_noise(a, eps, 2, s), eps, atol=1e-5)
    np.testing.assert_allclose(add_noise(a, eps, 1, s), [0.5, np.sqrt(0.75)], rtol=1e-6)


def test_add_noise_shape_mismatch():
    s = make_schedule(10)
    with pytest.raises(DimensionError):
        add_noise(np.zeros(3), np.zeros(4), 1, s)


def test_add_noise_per_sample_steps():
    s = make_schedule(10)
    a = np.zeros((4, 2, 3), dtype=np.float32)
    eps = np.ones_like(a)
    ks = np.array([0, 3, 6, 9])
    out = add_noise(a, eps, ks, s)
    for i, k in enumerate(ks):
        np.testing.assert_allclose(out[i], np.sqrt(1 - s.alpha_bars[k]), rtol=1e-6)


def test_inference_steps_is_stride_subsample():
    s = make_schedule(50)
    ks = inference_steps(s, 16)
    assert len(ks) == 16
    assert ks[0] == 49 and ks[-1] == 0
    assert all(a > b for a, b in zip(ks, ks[1:]))
    assert all(0 <= k < 50 for k in ks)


def test_ddim_one_step_recovers_clean_chunk():
    s = make_schedule(50)
    rng = np.random.default_rng(0)
    a0 = rng.uniform(-1, 1, size=(8, 3)).astype(np.float32)
    eps = rng.standard_normal(a0.shape).astype(np.float32)
    k = 31
    ak = add_noise(a0, eps, k, s)
    # oracle noise model: hand the true eps back
    out = ddim_step(ak, eps, k, None, s)
    np.testing.assert_allclose(out, a0, atol=1e-5)
    np.testing.assert_allclose(recover_clean(ak, eps, k, s), a0, atol=1e-5)


def test_ddim_clamps_final_output():
    s = make_schedule(50)
    ak = np.array([5.0, -7.0], dtype=np.float32)
    out = ddim_step(ak, np.zeros(2, dtype=np.float32), 0, None, s)
    assert np.all(out <= 1.0) and np.all(out >= -1.0)


def test_ddim_rejects_step_outside_schedule():
    s = make_schedule(50)
    with pytest.raises(ContractError):
        ddim_step(np.zeros(2), np.zeros(2), 50, None, s)
    with pytest.raises(ContractError):
        ddim_step(np.zeros(2), np.zeros(2), 3, 7, s)


def test_noise_level_sanity_at_ends():
    s = make_schedule(50)
    rng = np.random.default_rng(1)
    a = rng.standard_normal(20000).astype(np.float32)
    eps = rng.standard_normal(20000).astype(np.float32)
    early = add_noise(a, eps, 0, s)
    assert np.sqrt(np.mean((early - a) ** 2)) / np.sqrt(np.mean(a**2)) < 0.15
    late = add_noise(a, eps, 49, s)
    corr = np.corrcoef(late, eps)[0, 1]
    assert corr > 0.97
