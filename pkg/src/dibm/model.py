"""Noise-prediction network conditioned on (noisy chunk, observation,
diffusion step, expert index).

Body: residual MLP blocks over a shared hidden width. The diffusion-step
embedding is looked up in a learned table and added after the input
projection; observation features are concatenated with the flattened
chunk before it. One block in every ``moe_period`` is expert-indexed: it
holds one feed-forward sub-block per expert and a forward pass touches
only the selected expert, so every other expert's parameters stay outside
the computation graph.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from . import tensor as T
from .diffusion import NoiseSchedule, add_noise
from .errors import ContractError, DimensionError
from .nn import ACTIVATIONS, he_init
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    obs_dim: int
    horizon: int
    action_dim: int
    n_experts: int
    hidden: int = 96
    n_blocks: int = 4
    moe_period: int = 4
    time_embed_dim: int = 32
    obs_embed_dim: int = 32
    t_train: int = 50
    activation: str = "gelu"

    @property
    def chunk_size(self) -> int:
        return self.horizon * self.action_dim

    @property
    def moe_indices(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.n_blocks) if i % self.moe_period == 1)

    def validate(self) -> None:
        if self.n_experts < 1:
            raise ContractError("n_experts must be >= 1")
        if not self.moe_indices:
            raise ContractError(
                f"no MoE block with n_blocks={self.n_blocks}, moe_period={self.moe_period}"
            )
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")


class NoisePredictor:
    """f(a_k, o, k, e) -> predicted noise, same shape as the chunk."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        p: Dict[str, Tensor] = {}

        def param(name, arr):
            p[name] = Tensor(arr, requires_grad=True, dtype=dtype)

        param("time.table", (rng.standard_normal((cfg.t_train, cfg.time_embed_dim)) * 0.02))
        param("time.w", he_init(rng, cfg.time_embed_dim, cfg.hidden, dtype))
        param("time.b", np.zeros(cfg.hidden))
        param("obs.w", he_init(rng, cfg.obs_dim, cfg.obs_embed_dim, dtype))
        param("obs.b", np.zeros(cfg.obs_embed_dim))
        param("in.w", he_init(rng, cfg.chunk_size + cfg.obs_embed_dim, cfg.hidden, dtype))
        param("in.b", np.zeros(cfg.hidden))
        for i in range(cfg.n_blocks):
            if i in cfg.moe_indices:
                for e in range(cfg.n_experts):
                    param(f"blk{i}.e{e}.w1", he_init(rng, cfg.hidden, cfg.hidden, dtype))
                    param(f"blk{i}.e{e}.b1", np.zeros(cfg.hidden))
                    # zero-init second linear: residual branch starts at identity
                    param(f"blk{i}.e{e}.w2", np.zeros((cfg.hidden, cfg.hidden)))
                    param(f"blk{i}.e{e}.b2", np.zeros(cfg.hidden))
            else:
                param(f"blk{i}.w1", he_init(rng, cfg.hidden, cfg.hidden, dtype))
                param(f"blk{i}.b1", np.zeros(cfg.hidden))
                param(f"blk{i}.w2", np.zeros((cfg.hidden, cfg.hidden)))
                param(f"blk{i}.b2", np.zeros(cfg.hidden))
        # zero-init head: a fresh model predicts exactly zero noise
        param("out.w", np.zeros((cfg.hidden, cfg.chunk_size)))
        param("out.b", np.zeros(cfg.chunk_size))
        self.params = p

    def expert_param_names(self, e: int) -> list[str]:
        return [k for k in self.params if f".e{e}." in k]

    def obs_features(self, obs) -> Tensor:
        act = ACTIVATIONS[self.cfg.activation]
        o = obs if isinstance(obs, Tensor) else Tensor(np.asarray(obs, dtype=self.dtype))
        return act(T.add(T.matmul(o, self.params["obs.w"]), self.params["obs.b"]))

    def forward(
        self,
        a_flat,
        obs,
        ks,
        expert: int,
        moe_fn: Optional[Callable[[Tensor, int], Tensor]] = None,
    ) -> Tensor:
        """Predict noise for a batch.

        a_flat: (B, H*A); obs: (B, D); ks: scalar or (B,) ints; expert: index
        used by every MoE block unless ``moe_fn`` overrides the block body.
        """
        cfg = self.cfg
        p = self.params
        act = ACTIVATIONS[cfg.activation]
        a = a_flat if isinstance(a_flat, Tensor) else Tensor(np.asarray(a_flat, dtype=self.dtype))
        if a.data.ndim != 2 or a.data.shape[1] != cfg.chunk_size:
            raise DimensionError(f"chunk input must be (B, {cfg.chunk_size}), got {a.data.shape}")
        batch = a.data.shape[0]
        ks = np.broadcast_to(np.asarray(ks, dtype=np.int64), (batch,))
        if np.any(ks < 0) or np.any(ks >= cfg.t_train):
            raise ContractError(f"diffusion step outside [0, {cfg.t_train})")
        if moe_fn is None and not 0 <= expert < cfg.n_experts:
            raise ContractError(f"expert {expert} outside [0, {cfg.n_experts})")

        obs_f = self.obs_features(obs)
        h = act(T.add(T.matmul(T.concat([a, obs_f], axis=1), p["in.w"]), p["in.b"]))
        temb = T.gather_rows(p["time.table"], ks)
        h = T.add(h, act(T.add(T.matmul(temb, p["time.w"]), p["time.b"])))
        for i in range(cfg.n_blocks):
            if i in cfg.moe_indices:
                if moe_fn is not None:
                    u = moe_fn(h, i)
                else:
                    u = self.expert_block(i, expert, h)
            else:
                u = self._ff(h, p[f"blk{i}.w1"], p[f"blk{i}.b1"], p[f"blk{i}.w2"], p[f"blk{i}.b2"])
            h = T.add(h, u)
        return T.add(T.matmul(h, p["out.w"]), p["out.b"])

    def _ff(self, h: Tensor, w1, b1, w2, b2) -> Tensor:
        act = ACTIVATIONS[self.cfg.activation]
        return T.add(T.matmul(act(T.add(T.matmul(h, w1), b1)), w2), b2)

    def expert_block(self, i: int, e: int, h: Tensor) -> Tensor:
        p = self.params
        return self._ff(h, p[f"blk{i}.e{e}.w1"], p[f"blk{i}.e{e}.b1"], p[f"blk{i}.e{e}.w2"], p[f"blk{i}.e{e}.b2"])


def predict_noise(model: NoisePredictor, a_k: np.ndarray, obs: np.ndarray, ks, expert: int) -> Tensor:
    """Spec-shaped entry point; accepts chunks as (B, H, A) and flattens."""
    a_k = np.asarray(a_k)
    if a_k.ndim == 3:
        a_k = a_k.reshape(a_k.shape[0], -1)
    return model.forward(a_k, obs, ks, expert)


def chunk_mse(pred: Tensor, eps: np.ndarray) -> Tensor:
    """Mean squared error over batch and chunk entries."""
    eps_flat = np.asarray(eps).reshape(pred.data.shape)
    diff = T.sub(pred, Tensor(eps_flat, dtype=pred.dtype))
    return T.tmean(T.mul(diff, diff))


def per_sample_mse(pred_data: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Per-row MSE for already-computed predictions (no tape)."""
    eps_flat = eps.reshape(pred_data.shape)
    d = pred_data - eps_flat
    return (d * d).mean(axis=1)


def diffusion_loss(
    model: NoisePredictor,
    obs: np.ndarray,
    chunks: np.ndarray,
    ks,
    expert: int,
    sched: NoiseSchedule,
    eps: np.ndarray,
) -> Tensor:
    """Noise-regression loss on a batch of (obs, clean chunk) pairs."""
    if len(obs) == 0:
        raise ContractError("diffusion_loss on an empty batch")
    noisy = add_noise(chunks, eps, ks, sched)
    pred = predict_noise(model, noisy, obs, ks, expert)
    return chunk_mse(pred, eps)
