"""(observation, action chunk) datasets: generation, normalization, and the
binary file format.

File layout (all little-endian):
    magic  b"DIBM"
    u16    format version (currently 1)
    u32    D, H, A, task one-hot width
    f32[A] action minima, f32[A] action maxima
    u64    pair count
    then per pair: u32 record byte length, u32 task id,
                   f32[D] observation, f32[H*A] chunk (row-major)
Chunks are stored normalized to [-1, 1] per action dimension.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .demos import CHUNK_HORIZON, DemoFailure, run_demo
from .envs import OBS_DIM, TASK_SLOTS, TaskSpec
from .errors import (
    BadMagicError,
    BadVersionError,
    ContractError,
    GenerationError,
    TruncatedFileError,
)

MAGIC = b"DIBM"
VERSION = 1
ACTION_DIM = 3


@dataclass
class Dataset:
    observations: np.ndarray  # (N, D) float32
    chunks: np.ndarray        # (N, H, A) float32, normalized
    task_ids: np.ndarray      # (N,) int64
    act_min: np.ndarray       # (A,) float32
    act_max: np.ndarray       # (A,) float32
    task_slots: int = TASK_SLOTS

    def __len__(self) -> int:
        return len(self.observations)

    @property
    def obs_dim(self) -> int:
        return self.observations.shape[1]

    @property
    def horizon(self) -> int:
        return self.chunks.shape[1]

    @property
    def action_dim(self) -> int:
        return self.chunks.shape[2]

    def per_task_counts(self) -> dict[int, int]:
        ids, counts = np.unique(self.task_ids, return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}

    def normalize(self, chunk_env: np.ndarray) -> np.ndarray:
        center, half = _center_half(self.act_min, self.act_max)
        return ((chunk_env - center) / half).astype(np.float32)

    def denormalize(self, chunk_norm: np.ndarray) -> np.ndarray:
        center, half = _center_half(self.act_min, self.act_max)
        return (chunk_norm * half + center).astype(np.float32)

    def validate(self) -> None:
        n = len(self)
        if self.chunks.shape[0] != n or self.task_ids.shape[0] != n:
            raise ContractError("dataset arrays disagree on pair count")
        if n and np.max(np.abs(self.chunks)) > 1.0 + 1e-5:
            raise ContractError("normalized chunk entries must lie in [-1, 1]")
        onehot = self.observations[:, -self.task_slots :]
        if n and not np.allclose(onehot.sum(axis=1), 1.0, atol=1e-5):
            raise ContractError("task one-hot rows must sum to 1")
        if n and np.any(np.argmax(onehot, axis=1) != self.task_ids):
            raise ContractError("task one-hot disagrees with recorded task ids")


def _center_half(act_min: np.ndarray, act_max: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    center = (act_min.astype(np.float64) + act_max.astype(np.float64)) / 2.0
    half = (act_max.astype(np.float64) - act_min.astype(np.float64)) / 2.0
    half = np.where(half < 1e-8, 1.0, half)  # constant dims map to 0
    return center, half


def build_dataset(
    obs: np.ndarray, chunks_env: np.ndarray, task_ids: np.ndarray, task_slots: int = TASK_SLOTS
) -> Dataset:
    """Assemble a dataset from env-unit chunks, computing min/max stats."""
    obs = np.asarray(obs, dtype=np.float32)
    chunks_env = np.asarray(chunks_env, dtype=np.float32)
    if len(chunks_env):
        act_min = chunks_env.min(axis=(0, 1)).astype(np.float32)
        act_max = chunks_env.max(axis=(0, 1)).astype(np.float32)
    else:
        act_min = -np.ones(ACTION_DIM, dtype=np.float32)
        act_max = np.ones(ACTION_DIM, dtype=np.float32)
    ds = Dataset(
        observations=obs,
        chunks=np.zeros_like(chunks_env),
        task_ids=np.asarray(task_ids, dtype=np.int64),
        act_min=act_min,
        act_max=act_max,
        task_slots=task_slots,
    )
    ds.chunks = ds.normalize(chunks_env)
    ds.validate()
    return ds


def generate_dataset(
    suite: Sequence[TaskSpec],
    episodes_per_task: int,
    seed: int,
    max_failure_rate: float = 0.10,
) -> Dataset:
    """Scripted demonstrations for every task in ``suite``.

    Episode e of a task uses layout seed (range start + e); a failed demo is
    resampled from a disjoint seed block and counted against the failure
    budget.
    """
    if episodes_per_task < 1:
        raise ContractError("episodes_per_task must be >= 1")
    del seed  # layout randomization lives in each task's seed range
    all_obs, all_chunks, all_ids = [], [], []
    for task in suite:
        failures = 0
        collected = 0
        episode = 0
        while collected < episodes_per_task:
            try:
                demo = run_demo(task, task.layout_seed_range[0] + episode)
            except DemoFailure:
                failures += 1
                if failures > max_failure_rate * episodes_per_task + 1:
                    raise GenerationError(
                        f"demonstrator failure rate above {max_failure_rate:.0%} for {task.name}"
                    )
                episode += 1  # rejected episodes are counted and resampled
                continue
            for o, chunk in demo.pairs():
                all_obs.append(o)
                all_chunks.append(chunk)
                all_ids.append(task.task_id)
            collected += 1
            episode += 1
    return build_dataset(
        np.asarray(all_obs, dtype=np.float32).reshape(-1, OBS_DIM),
        np.asarray(all_chunks, dtype=np.float32).reshape(-1, CHUNK_HORIZON, ACTION_DIM),
        np.asarray(all_ids, dtype=np.int64),
    )


def subsample_pairs(dataset: Dataset, ratio: float, seed: int) -> Dataset:
    """Deterministic subset of floor(ratio * N) pairs; stats are kept."""
    if not 0 < ratio <= 1:
        raise ContractError(f"ratio must be in (0, 1], got {ratio}")
    n_keep = int(np.floor(ratio * len(dataset)))
    if n_keep < 1:
        raise ContractError("ratio keeps zero pairs")
    idx = np.sort(np.random.default_rng(seed).permutation(len(dataset))[:n_keep])
    return Dataset(
        observations=dataset.observations[idx].copy(),
        chunks=dataset.chunks[idx].copy(),
        task_ids=dataset.task_ids[idx].copy(),
        act_min=dataset.act_min.copy(),
        act_max=dataset.act_max.copy(),
        task_slots=dataset.task_slots,
    )


def with_normalization(dataset: Dataset, act_min: np.ndarray, act_max: np.ndarray) -> Dataset:
    """Re-express chunks under different normalization statistics."""
    env_units = dataset.denormalize(dataset.chunks)
    out = Dataset(
        observations=dataset.observations.copy(),
        chunks=np.zeros_like(dataset.chunks),
        task_ids=dataset.task_ids.copy(),
        act_min=np.asarray(act_min, dtype=np.float32).copy(),
        act_max=np.asarray(act_max, dtype=np.float32).copy(),
        task_slots=dataset.task_slots,
    )
    out.chunks = np.clip(out.normalize(env_units), -1.0, 1.0)
    return out


def save_dataset(dataset: Dataset, path) -> None:
    n = len(dataset)
    d, h, a = dataset.obs_dim, dataset.horizon, dataset.action_dim
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", VERSION))
        f.write(struct.pack("<4I", d, h, a, dataset.task_slots))
        f.write(dataset.act_min.astype("<f4").tobytes())
        f.write(dataset.act_max.astype("<f4").tobytes())
        f.write(struct.pack("<Q", n))
        rec_len = 4 + 4 * d + 4 * h * a
        for i in range(n):
            f.write(struct.pack("<I", rec_len))
            f.write(struct.pack("<I", int(dataset.task_ids[i])))
            f.write(dataset.observations[i].astype("<f4").tobytes())
            f.write(dataset.chunks[i].astype("<f4").tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedFileError(f"file ended while reading {what}")
    return buf


def load_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MAGIC:
            raise BadMagicError(f"expected magic {MAGIC!r}, found {magic!r}")
        (version,) = struct.unpack("<H", _read_exact(f, 2, "version"))
        if version != VERSION:
            raise BadVersionError(f"unsupported dataset version {version}")
        d, h, a, slots = struct.unpack("<4I", _read_exact(f, 16, "header"))
        act_min = np.frombuffer(_read_exact(f, 4 * a, "act_min"), dtype="<f4").copy()
        act_max = np.frombuffer(_read_exact(f, 4 * a, "act_max"), dtype="<f4").copy()
        (n,) = struct.unpack("<Q", _read_exact(f, 8, "pair count"))
        obs = np.empty((n, d), dtype=np.float32)
        chunks = np.empty((n, h, a), dtype=np.float32)
        ids = np.empty(n, dtype=np.int64)
        expected = 4 + 4 * d + 4 * h * a
        for i in range(n):
            (rec_len,) = struct.unpack("<I", _read_exact(f, 4, f"record {i} length"))
            if rec_len != expected:
                raise TruncatedFileError(f"record {i} declares {rec_len} bytes, expected {expected}")
            payload = _read_exact(f, rec_len, f"record {i}")
            ids[i] = struct.unpack_from("<I", payload, 0)[0]
            obs[i] = np.frombuffer(payload, dtype="<f4", count=d, offset=4)
            chunks[i] = np.frombuffer(payload, dtype="<f4", count=h * a, offset=4 + 4 * d).reshape(h, a)
        ds = Dataset(obs, chunks, ids, act_min, act_max, task_slots=slots)
        ds.validate()
        return ds
