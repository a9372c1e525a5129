"""Adaptive-moment optimizer with decoupled weight decay."""

from __future__ import annotations

from typing import Dict

import numpy as np

from .errors import ContractError
from .tensor import Tensor


class AdamW:
    """Decoupled weight decay: the decay multiplies the parameter directly
    and never passes through the moment estimates."""

    def __init__(
        self,
        params: Dict[str, Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = dict(params)
        self.lr = float(lr)
        self.betas = (float(betas[0]), float(betas[1]))
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = np.zeros_like(p.data)

    def step(self) -> None:
        missing = [k for k, p in self.params.items() if p.grad is None]
        if missing:
            raise ContractError(f"missing gradient for parameters: {missing[:5]}")
        self.step_count += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1**self.step_count
        bc2 = 1.0 - b2**self.step_count
        for k, p in self.params.items():
            g = p.grad
            if p.grad.shape != p.data.shape:
                raise ContractError(f"gradient shape mismatch for {k}")
            if self.weight_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Moment buffers keyed for checkpointing."""
        out = {}
        for k in self.params:
            out[f"opt.m.{k}"] = self.m[k]
            out[f"opt.v.{k}"] = self.v[k]
        return out
