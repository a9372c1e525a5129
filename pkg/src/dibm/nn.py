"""Multilayer perceptrons on top of the autodiff tape."""

from __future__ import annotations

from typing import Callable, Dict, Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Tensor

ACTIVATIONS: Dict[str, Callable[[Tensor], Tensor]] = {
    "relu": T.relu,
    "gelu": T.gelu,
    "tanh": T.tanh,
    "identity": lambda t: t,
}


def he_init(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal((fan_in, fan_out)) * std).astype(dtype)


class Mlp:
    """Plain fully connected stack. Weights are (in, out); inputs are (B, in)."""

    def __init__(
        self,
        sizes: Sequence[int],
        activation: str = "gelu",
        *,
        rng: np.random.Generator,
        dtype=np.float32,
        prefix: str = "mlp",
        final_activation: bool = False,
    ):
        if len(sizes) < 2:
            raise ContractError("Mlp needs at least input and output sizes")
        if activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {activation!r}")
        self.sizes = tuple(int(s) for s in sizes)
        self.activation = activation
        self.final_activation = final_activation
        self.params: Dict[str, Tensor] = {}
        for i, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            self.params[f"{prefix}.w{i}"] = Tensor(he_init(rng, n_in, n_out, dtype), requires_grad=True)
            self.params[f"{prefix}.b{i}"] = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True)
        self._prefix = prefix

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def layer(self, i: int) -> tuple[Tensor, Tensor]:
        return self.params[f"{self._prefix}.w{i}"], self.params[f"{self._prefix}.b{i}"]

    def __call__(self, x: Tensor) -> Tensor:
        return mlp_forward(self, x)


def mlp_forward(mlp: Mlp, x) -> Tensor:
    """Run the stack; activation after every layer except (optionally) the last."""
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x))
    if x.data.ndim == 1:
        x = T.reshape(x, (1, -1))
    if x.data.shape[-1] != mlp.sizes[0]:
        raise DimensionError(f"input width {x.data.shape[-1]} != first layer width {mlp.sizes[0]}")
    act = ACTIVATIONS[mlp.activation]
    h = x
    for i in range(mlp.n_layers):
        w, b = mlp.layer(i)
        h = T.add(T.matmul(h, w), b)
        if i < mlp.n_layers - 1 or mlp.final_activation:
            h = act(h)
    return h
