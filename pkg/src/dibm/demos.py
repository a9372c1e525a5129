"""Scripted demonstrators: closed-loop oracle controllers for every task.

Each controller maps the current environment state to one action, so the
same code serves two purposes: generating demonstration episodes and
acting as an oracle policy in the rollout harness (where it plans a chunk
by simulating itself forward on a copy of the state).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .envs import (
    CONTACT_RADIUS,
    GRIP_OPEN,
    ORBIT_RADIUS,
    ORBIT_TARGET_ANGLE,
    EnvState,
    TaskSpec,
    observe,
    reset_env,
    step_env,
)

DEMO_NOISE = 0.05
CHUNK_HORIZON = 8
EXEC_HORIZON = 4
ORBIT_BAND_OUTER = 0.25


def _go_to(agent: np.ndarray, target: np.ndarray, kp: float = 6.0) -> np.ndarray:
    return np.clip(kp * (target - agent), -1.0, 1.0)


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 1e-9 else np.array([1.0, 0.0])


def _segment_clears(a: np.ndarray, b: np.ndarray, point: np.ndarray, margin: float) -> bool:
    """True when the segment a-b stays at least ``margin`` away from ``point``."""
    ab = b - a
    denom = float(np.dot(ab, ab))
    t = 0.0 if denom < 1e-12 else float(np.clip(np.dot(point - a, ab) / denom, 0.0, 1.0))
    closest = a + t * ab
    return float(np.linalg.norm(point - closest)) >= margin


class Demonstrator:
    """Oracle controller for one episode of one task."""

    def __init__(self, task: TaskSpec, rng: np.random.Generator, noise: float = DEMO_NOISE):
        self.task = task
        self.noise = noise
        self.rng = rng
        # the two-goal choice is the episode's hidden mode: it is drawn once
        # and never appears in the observation
        self.pick_left = bool(rng.random() < 0.5)

    def action(self, s: EnvState) -> np.ndarray:
        a = self._control(s)
        if self.noise > 0:
            a = a + self.rng.normal(0.0, self.noise, size=3)
        return np.clip(a, -1.0, 1.0)

    def _control(self, s: EnvState) -> np.ndarray:
        name = self.task.name
        if name == "reach":
            return np.array([*_go_to(s.agent, s.goal), 1.0])
        if name == "two_goal":
            target = s.goal if self.pick_left else s.aux_goal
            return np.array([*_go_to(s.agent, target), 1.0])
        if name == "push":
            return self._push(s)
        if name == "pick_place":
            return self._carry(s, s.goal, place_radius=0.03)
        if name == "fold_drag":
            return self._carry(s, s.goal, place_radius=0.04)
        if name == "stir_orbit":
            return self._orbit(s, grip=1.0)
        if name == "carry_orbit":
            if abs(s.orbit_acc) >= ORBIT_TARGET_ANGLE:
                return np.array([0.0, 0.0, -1.0])
            if s.held < 0:
                return self._carry(s, s.goal, place_radius=None)
            d = np.linalg.norm(s.agent - s.goal)
            if d > ORBIT_BAND_OUTER - 0.03:
                entry = s.goal + ORBIT_RADIUS * _unit(s.agent - s.goal)
                return np.array([*_go_to(s.agent, entry), -1.0])
            return self._orbit(s, grip=-1.0)
        raise ValueError(name)

    def _push(self, s: EnvState) -> np.ndarray:
        obj = s.objects[0]
        target = s.goal
        to_target = float(np.linalg.norm(obj - target))
        if to_target <= self.task.goal_radius * 0.7:
            return np.array([0.0, 0.0, 1.0])
        d = float(np.linalg.norm(s.agent - obj))
        radial = _unit(s.agent - obj)
        away_dir = _unit(obj - target)  # unit vector from target through the object
        behind_cos = float(np.dot(radial, away_dir))
        if behind_cos >= 0.92 and d <= 0.14:
            # push: drive through the object toward the target
            aim = obj + min(0.1, to_target) * _unit(target - obj)
            return np.array([*_go_to(s.agent, aim), 1.0])
        station = obj + 0.10 * away_dir
        if _segment_clears(s.agent, station, obj, 0.09):
            return np.array([*_go_to(s.agent, station), 1.0])
        # circle the object toward the far side without touching it
        side = np.sign(radial[0] * away_dir[1] - radial[1] * away_dir[0])
        side = side if side != 0 else 1.0
        tangent = side * np.array([-radial[1], radial[0]])
        v = 0.9 * tangent + 4.0 * (0.16 - d) * radial
        return np.array([*np.clip(v, -1.0, 1.0), 1.0])

    def _carry(self, s: EnvState, target: np.ndarray, place_radius: Optional[float]) -> np.ndarray:
        if s.held < 0:
            if s.phase >= 1 and place_radius is not None:
                # already placed: stay put with the gripper open
                return np.array([0.0, 0.0, 1.0])
            obj = s.objects[0]
            if np.linalg.norm(obj - s.agent) > 0.07:
                return np.array([*_go_to(s.agent, obj), 1.0])
            return np.array([0.0, 0.0, -1.0])  # close over the object
        if place_radius is None:
            return np.array([*_go_to(s.agent, target), -1.0])
        if np.linalg.norm(s.agent - target) > place_radius:
            return np.array([*_go_to(s.agent, target), -1.0])
        return np.array([0.0, 0.0, 1.0])  # release

    def _orbit(self, s: EnvState, grip: float) -> np.ndarray:
        if abs(s.orbit_acc) >= ORBIT_TARGET_ANGLE:
            return np.array([0.0, 0.0, grip])
        rel = s.agent - s.goal
        d = float(np.linalg.norm(rel))
        if d > ORBIT_BAND_OUTER + 0.1:
            entry = s.goal + ORBIT_RADIUS * _unit(rel)
            return np.array([*_go_to(s.agent, entry), grip])
        radial = _unit(rel)
        tangent = np.array([-radial[1], radial[0]])
        v = 0.8 * tangent + 4.0 * (ORBIT_RADIUS - d) * radial
        return np.array([*np.clip(v, -1.0, 1.0), grip])


@dataclass
class Demo:
    """One successful scripted episode."""

    task_id: int
    observations: np.ndarray   # (L, OBS_DIM) at every env step
    actions: np.ndarray        # (L, 3) env-unit actions
    phases: np.ndarray         # (L,) phase after each step
    success: bool
    initial_state: EnvState

    def __len__(self) -> int:
        return len(self.actions)

    def pairs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(observation, action chunk) pairs at the execution stride.

        Chunks overlap: one every EXEC_HORIZON steps, each CHUNK_HORIZON
        long, zero-padded past the end of the episode.
        """
        out = []
        L = len(self.actions)
        for t in range(0, L, EXEC_HORIZON):
            chunk = np.zeros((CHUNK_HORIZON, 3), dtype=np.float32)
            take = min(CHUNK_HORIZON, L - t)
            chunk[:take] = self.actions[t : t + take]
            out.append((self.observations[t], chunk))
        return out


class DemoFailure(RuntimeError):
    """The demonstrator did not reach success within the step budget."""


def run_demo(task: TaskSpec, layout_seed: int, noise: float = DEMO_NOISE) -> Demo:
    """Roll the oracle controller from a fresh layout until success."""
    state = reset_env(task, layout_seed)
    rng = np.random.default_rng([task.task_id, layout_seed, 999])
    ctrl = Demonstrator(task, rng, noise=noise)
    obs, acts, phases = [], [], []
    initial = state.copy()
    max_steps = task.nominal_steps * 3
    for _ in range(max_steps):
        obs.append(observe(state))
        a = ctrl.action(state)
        acts.append(a.astype(np.float32))
        state = step_env(state, a, task)
        phases.append(state.phase)
        if state.success:
            break
    if not state.success:
        raise DemoFailure(f"{task.name} demo failed for layout seed {layout_seed}")
    return Demo(
        task_id=task.task_id,
        observations=np.asarray(obs, dtype=np.float32),
        actions=np.asarray(acts, dtype=np.float32),
        phases=np.asarray(phases, dtype=np.int64),
        success=True,
        initial_state=initial,
    )


def scripted_demo(task: TaskSpec, episode_seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Demonstration pairs for one episode (observation, action chunk)."""
    layout_seed = task.layout_seed_range[0] + episode_seed
    return run_demo(task, layout_seed).pairs()


class ScriptedPolicy:
    """Demonstrator exposed through the chunk-policy interface, for harness
    sanity checks: plans a chunk by simulating itself on a state copy."""

    def __init__(self, task: TaskSpec, seed: int = 0):
        self.task = task
        self.ctrl = Demonstrator(task, np.random.default_rng([task.task_id, seed]), noise=0.0)

    def infer(self, state: EnvState) -> np.ndarray:
        sim = state.copy()
        chunk = np.zeros((CHUNK_HORIZON, 3), dtype=np.float32)
        for i in range(CHUNK_HORIZON):
            a = self.ctrl.action(sim)
            chunk[i] = a
            sim = step_env(sim, a, self.task)
        return chunk
