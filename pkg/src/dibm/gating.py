"""Energy-based gating: per-expert observation energies and the
distributions derived from them.

Two softmax directions matter and are easy to confuse:

* batch-conditional: softmax of one expert's energies *over the batch*
  (axis 0). Column e is that expert's preference distribution over the
  sampled observations and is what assigns training data to experts.
* posterior: softmax *over experts* (axis 1) of partition-corrected
  energies. Row i is the expert-selection distribution for observation i
  and is what routes at inference time.

All arithmetic is done in the log domain; raw exponentials of plausible
energies overflow float32.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .nn import Mlp, mlp_forward
from .tensor import Tensor


class GatingNetwork:
    """MLP from observation (D) to K per-expert energies."""

    def __init__(
        self,
        obs_dim: int,
        n_experts: int,
        hidden: int = 64,
        n_layers: int = 2,
        activation: str = "gelu",
        *,
        rng: np.random.Generator,
        dtype=np.float32,
    ):
        sizes = [obs_dim] + [hidden] * n_layers + [n_experts]
        self.obs_dim = obs_dim
        self.n_experts = n_experts
        self.net = Mlp(sizes, activation=activation, rng=rng, dtype=dtype, prefix="gate")
        self.params = self.net.params

    def __call__(self, obs) -> Tensor:
        return gating_energies(self, obs)


def gating_energies(net: GatingNetwork, obs) -> Tensor:
    """Energies for a batch of observations, on the tape: (B, K)."""
    obs = np.atleast_2d(np.asarray(obs))
    if obs.shape[-1] != net.obs_dim:
        raise DimensionError(f"observation width {obs.shape[-1]} != {net.obs_dim}")
    out = mlp_forward(net.net, obs)
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("non-finite gating energies")
    return out


def energies_nograd(net: GatingNetwork, obs) -> np.ndarray:
    with T.no_grad():
        return gating_energies(net, obs).data


def _log_softmax_np(e: np.ndarray, axis: int) -> np.ndarray:
    e64 = e.astype(np.float64)
    m = e64.max(axis=axis, keepdims=True)
    shifted = e64 - m
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def batch_conditional(energies: np.ndarray) -> np.ndarray:
    """Column softmax over the batch axis; columns each sum to 1."""
    e = np.atleast_2d(np.asarray(energies))
    if e.shape[0] < 1:
        raise ContractError("empty batch")
    return np.exp(_log_softmax_np(e, axis=0))


def posterior(energies: np.ndarray, log_z: Optional[np.ndarray] = None) -> np.ndarray:
    """Row distributions over experts.

    With ``log_z`` (inference) each expert's energy is corrected by its
    log-partition before the row softmax; without it this is the plain
    diagnostic row softmax. A uniform expert prior cancels either way.
    """
    e = np.atleast_2d(np.asarray(energies)).astype(np.float64)
    if log_z is not None:
        log_z = np.asarray(log_z, dtype=np.float64)
        if log_z.shape != (e.shape[1],):
            raise ContractError(f"log_z must have shape ({e.shape[1]},), got {log_z.shape}")
        e = e - log_z[None, :]
    return np.exp(_log_softmax_np(e, axis=1))


@dataclass(frozen=True)
class GatingTable:
    """Energies for a batch plus both derived distributions."""

    energies: np.ndarray
    batch_conditional: np.ndarray
    posterior: np.ndarray

    @classmethod
    def from_energies(cls, energies: np.ndarray, log_z: Optional[np.ndarray] = None) -> "GatingTable":
        e = np.atleast_2d(np.asarray(energies))
        return cls(energies=e, batch_conditional=batch_conditional(e), posterior=posterior(e, log_z))


@dataclass(frozen=True)
class LogPartition:
    """Per-expert log-normalizers estimated on a dataset sample."""

    log_z: np.ndarray  # (K,) float64
    n_samples: int

    def validate(self) -> None:
        if self.n_samples < 1:
            raise ContractError("LogPartition needs n_samples >= 1")
        if not np.all(np.isfinite(self.log_z)):
            raise ContractError("non-finite log-partition values")


def estimate_log_partition(
    net: GatingNetwork,
    observations: np.ndarray,
    n_samples: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> LogPartition:
    """Monte Carlo log-partition: logsumexp of energies over sampled observations.

    Default uses every observation given; pass ``n_samples`` to subsample
    (the deployment-time estimate can be built from ~100 random samples).
    """
    obs = np.atleast_2d(np.asarray(observations))
    if len(obs) == 0:
        raise ContractError("empty observation sample")
    if n_samples is not None and n_samples < len(obs):
        if rng is None:
            raise ContractError("subsampling requires an rng")
        idx = rng.choice(len(obs), size=n_samples, replace=False)
        obs = obs[idx]
    e = energies_nograd(net, obs).astype(np.float64)
    m = e.max(axis=0)
    log_z = m + np.log(np.exp(e - m).sum(axis=0))
    lp = LogPartition(log_z=log_z, n_samples=len(obs))
    lp.validate()
    return lp


def log_partition_from_energies(energies: np.ndarray) -> np.ndarray:
    """logsumexp over the batch axis, one value per expert."""
    e = np.atleast_2d(np.asarray(energies)).astype(np.float64)
    m = e.max(axis=0)
    return m + np.log(np.exp(e - m).sum(axis=0))


def sample_assignments(probs: np.ndarray, s: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``s`` distinct indices weighted by ``probs`` (Gumbel-top-S)."""
    p = np.asarray(probs, dtype=np.float64)
    if s > len(p):
        raise ContractError(f"cannot draw {s} distinct indices from {len(p)}")
    if s < 1:
        raise ContractError("s must be >= 1")
    with np.errstate(divide="ignore"):
        logp = np.log(p)
    keys = logp + rng.gumbel(size=len(p))
    top = np.argpartition(-keys, s - 1)[:s]
    return top


# live-tape counterparts used inside the training loss --------------------


def log_batch_conditional_t(energies: Tensor) -> Tensor:
    """log of the column softmax, differentiable."""
    return T.log_softmax(energies, axis=0)


def detached_log_posterior(energies_data: np.ndarray) -> np.ndarray:
    """log pi(e|o_i) rows from raw energies, no tape. Batch-level partition:
    row-normalizing the batch-conditional in log space."""
    log_cond = _log_softmax_np(energies_data, axis=0)
    m = log_cond.max(axis=1, keepdims=True)
    return log_cond - m - np.log(np.exp(log_cond - m).sum(axis=1, keepdims=True))
