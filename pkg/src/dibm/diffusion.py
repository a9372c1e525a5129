"""Denoising diffusion machinery: cosine noise schedule, forward noising,
and the deterministic strided reverse sampler used at inference.

The forward process and noise-prediction loss follow the standard DDPM
parameterization: a^k = sqrt(abar_k) * a + sqrt(1 - abar_k) * eps, and the
network is trained to regress eps. Inference runs a deterministic
(eta = 0) update over an evenly strided subset of the training steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step diffusion coefficients, kept in float64 for precision."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def t_train(self) -> int:
        return len(self.betas)

    def validate(self) -> None:
        if np.any(self.betas <= 0) or np.any(self.betas >= 1):
            raise ContractError("betas must lie strictly inside (0, 1)")
        np.testing.assert_allclose(self.alphas, 1.0 - self.betas, rtol=0, atol=0)
        if np.any(np.diff(self.alpha_bars) >= 0):
            raise ContractError("alpha_bars must be strictly decreasing")


def make_schedule(t_train: int, s: float = 0.008, max_beta: float = 0.999) -> NoiseSchedule:
    """Cosine-shaped schedule over ``t_train`` steps."""
    if t_train < 2:
        raise ContractError(f"t_train must be >= 2, got {t_train}")

    def f(t: float) -> float:
        return np.cos((t / t_train + s) / (1 + s) * np.pi / 2.0) ** 2

    f0 = f(0.0)
    abar_raw = np.array([f(k + 1.0) / f0 for k in range(t_train)], dtype=np.float64)
    abar_prev = np.concatenate([[1.0], abar_raw[:-1]])
    betas = np.clip(1.0 - abar_raw / abar_prev, 1e-8, max_beta)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    sched = NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=alpha_bars)
    sched.validate()
    return sched


def add_noise(chunk: np.ndarray, eps: np.ndarray, k, sched: NoiseSchedule) -> np.ndarray:
    """Forward-noise ``chunk`` to step ``k``.

    ``k`` may be a scalar or a per-sample integer array matching the leading
    batch axis of a batched ``chunk``.
    """
    chunk = np.asarray(chunk)
    eps = np.asarray(eps)
    if chunk.shape != eps.shape:
        raise DimensionError(f"eps shape {eps.shape} != chunk shape {chunk.shape}")
    ks = np.asarray(k)
    if np.any(ks < 0) or np.any(ks >= sched.t_train):
        raise ContractError(f"diffusion step {k} outside [0, {sched.t_train})")
    abar = sched.alpha_bars[ks]
    if ks.ndim > 0:
        abar = abar.reshape((-1,) + (1,) * (chunk.ndim - 1))
    coef_a = np.sqrt(abar)
    coef_e = np.sqrt(1.0 - abar)
    return (coef_a * chunk + coef_e * eps).astype(chunk.dtype)


def inference_steps(sched: NoiseSchedule, n_steps: int) -> list[int]:
    """Evenly strided subsample of the training steps, descending."""
    if not 1 <= n_steps <= sched.t_train:
        raise ContractError(f"n_steps must be in [1, {sched.t_train}], got {n_steps}")
    ks = np.linspace(0, sched.t_train - 1, n_steps)
    ks = sorted({int(round(k)) for k in ks}, reverse=True)
    return ks


def ddim_step(
    a_k: np.ndarray,
    eps_hat: np.ndarray,
    k: int,
    k_prev: int | None,
    sched: NoiseSchedule,
    clip: bool = True,
) -> np.ndarray:
    """One deterministic reverse update from step ``k`` to ``k_prev``.

    ``k_prev`` of None means the final hop to the clean sample. The
    predicted clean chunk is clipped to the action range at every step.
    """
    if not 0 <= k < sched.t_train:
        raise ContractError(f"step {k} outside the schedule")
    abar_k = sched.alpha_bars[k]
    x0 = (a_k - np.sqrt(1.0 - abar_k) * eps_hat) / np.sqrt(abar_k)
    if clip:
        x0 = np.clip(x0, -1.0, 1.0)
    if k_prev is None:
        return x0.astype(a_k.dtype)
    if not 0 <= k_prev < k:
        raise ContractError(f"k_prev {k_prev} must lie in [0, {k})")
    abar_p = sched.alpha_bars[k_prev]
    out = np.sqrt(abar_p) * x0 + np.sqrt(1.0 - abar_p) * eps_hat
    return out.astype(a_k.dtype)


def recover_clean(a_k: np.ndarray, eps: np.ndarray, k: int, sched: NoiseSchedule) -> np.ndarray:
    """Closed-form inversion of add_noise given the true noise."""
    abar = sched.alpha_bars[k]
    return ((a_k - np.sqrt(1.0 - abar) * eps) / np.sqrt(abar)).astype(a_k.dtype)
