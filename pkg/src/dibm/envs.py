"""Synthetic 2D multi-task environments.

A point agent with a gripper moves in the [-1, 1]^2 arena. Six tasks share
a small set of mechanics (reach, push, grasp-and-carry, orbit) so that the
same primitive skill shows up inside several tasks; a seventh task
recombines the primitives and is held out for fine-tuning experiments.
Every task has at least two phases; the environment labels the current
phase so per-phase expert usage can be measured against ground truth.

Action = (vx, vy, gripper_cmd), each in [-1, 1]. Position integrates
velocity with a fixed dt; the gripper fraction integrates gripper_cmd
(1 = fully open, 0 = closed). Objects are grabbed by closing the gripper
within reach, carried while closed, and pushed by body contact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

DT = 0.05
GRIPPER_RATE = 0.25
CONTACT_RADIUS = 0.06
GRAB_RADIUS = 0.08
GRIP_CLOSE = 0.4   # gripper fraction at or below which a grasp engages
GRIP_OPEN = 0.6    # fraction at or above which a held object is released
ORBIT_RADIUS = 0.15
ORBIT_BAND = (0.08, 0.25)
ORBIT_TARGET_ANGLE = 1.5 * math.pi

TASK_SLOTS = 7           # one-hot width: six suite tasks + one held-out task
OBS_DIM = 2 + 1 + 4 + 2 + TASK_SLOTS

TASK_NAMES = (
    "reach",
    "push",
    "pick_place",
    "two_goal",
    "fold_drag",
    "stir_orbit",
    "carry_orbit",  # held out of the standard suite
)


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    name: str
    phase_count: int
    layout_seed_range: tuple[int, int]
    goal_radius: float
    nominal_steps: int

    def validate(self) -> None:
        assert self.phase_count >= 2
        assert 0 <= self.task_id < TASK_SLOTS


_TASK_TABLE = {
    # name: (phase_count, goal_radius, nominal_steps)
    # nominal_steps tracks the p95 scripted-demo length for the task
    "reach": (2, 0.08, 28),
    "push": (2, 0.10, 55),
    "pick_place": (3, 0.08, 55),
    "two_goal": (2, 0.08, 28),
    "fold_drag": (3, 0.10, 55),
    "stir_orbit": (2, 0.08, 40),
    "carry_orbit": (3, 0.08, 65),
}


def _make_task(task_id: int, name: str, suite_seed: int) -> TaskSpec:
    phase_count, goal_radius, nominal = _TASK_TABLE[name]
    base = suite_seed * 1_000_000
    return TaskSpec(
        task_id=task_id,
        name=name,
        phase_count=phase_count,
        layout_seed_range=(base, base + 999_999),
        goal_radius=goal_radius,
        nominal_steps=nominal,
    )


def build_suite(seed: int) -> list[TaskSpec]:
    """The fixed six-task suite; only layout randomization depends on seed."""
    return [_make_task(i, name, seed) for i, name in enumerate(TASK_NAMES[:6])]


def holdout_task(seed: int) -> TaskSpec:
    """The seventh task, reserved for fine-tuning experiments."""
    return _make_task(6, "carry_orbit", seed)


@dataclass
class EnvState:
    task_id: int
    agent: np.ndarray                 # (2,)
    gripper: float                    # open fraction in [0, 1]
    objects: np.ndarray               # (n_obj, 2)
    goal: np.ndarray                  # (2,)
    aux_goal: np.ndarray              # (2,), second goal for two_goal else zeros
    held: int = -1                    # object index or -1
    phase: int = 0
    t: int = 0
    success: bool = False
    orbit_acc: float = 0.0
    prev_angle: float = math.nan

    def copy(self) -> "EnvState":
        return replace(
            self,
            agent=self.agent.copy(),
            objects=self.objects.copy(),
            goal=self.goal.copy(),
            aux_goal=self.aux_goal.copy(),
        )


def _dist(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b))


def _uniform_point(rng, lo=-0.8, hi=0.8) -> np.ndarray:
    return rng.uniform(lo, hi, size=2)


def reset_env(task: TaskSpec, layout_seed: int) -> EnvState:
    """Deterministic initial state for (task, layout seed)."""
    rng = np.random.default_rng([task.task_id, layout_seed])
    name = task.name
    zeros = np.zeros(2)

    if name == "reach":
        agent = _uniform_point(rng)
        goal = _uniform_point(rng)
        while _dist(agent, goal) < 0.5:
            goal = _uniform_point(rng)
        return EnvState(task.task_id, agent, 1.0, np.zeros((0, 2)), goal, zeros.copy())

    if name == "push":
        obj = _uniform_point(rng, -0.45, 0.45)
        target = _uniform_point(rng, -0.7, 0.7)
        while not 0.3 <= _dist(obj, target) <= 0.6:
            target = _uniform_point(rng, -0.7, 0.7)
        agent = _uniform_point(rng)
        while _dist(agent, obj) < 0.25:
            agent = _uniform_point(rng)
        return EnvState(task.task_id, agent, 1.0, obj[None, :].copy(), target, zeros.copy())

    if name == "pick_place":
        obj = _uniform_point(rng, -0.7, 0.7)
        target = _uniform_point(rng, -0.7, 0.7)
        while _dist(obj, target) < 0.4:
            target = _uniform_point(rng, -0.7, 0.7)
        agent = _uniform_point(rng)
        while _dist(agent, obj) < 0.25:
            agent = _uniform_point(rng)
        return EnvState(task.task_id, agent, 1.0, obj[None, :].copy(), target, zeros.copy())

    if name == "two_goal":
        agent = np.array([rng.uniform(-0.15, 0.15), rng.uniform(-0.85, -0.55)])
        gx = rng.uniform(0.45, 0.7)
        gy = rng.uniform(0.25, 0.6)
        left = np.array([-gx, gy])
        right = np.array([gx, gy])
        return EnvState(task.task_id, agent, 1.0, np.zeros((0, 2)), left, right)

    if name == "fold_drag":
        x = rng.uniform(0.35, 0.6) * (1 if rng.random() < 0.5 else -1)
        y = rng.uniform(-0.5, 0.5)
        obj = np.array([x, y])
        target = np.array([-x, y])
        agent = _uniform_point(rng)
        while _dist(agent, obj) < 0.25:
            agent = _uniform_point(rng)
        return EnvState(task.task_id, agent, 1.0, obj[None, :].copy(), target, zeros.copy())

    if name == "stir_orbit":
        center = _uniform_point(rng, -0.5, 0.5)
        agent = _uniform_point(rng)
        while _dist(agent, center) < 0.35:
            agent = _uniform_point(rng)
        return EnvState(task.task_id, agent, 1.0, center[None, :].copy(), center.copy(), zeros.copy())

    if name == "carry_orbit":
        obj = _uniform_point(rng, -0.7, 0.7)
        center = _uniform_point(rng, -0.45, 0.45)
        while _dist(obj, center) < 0.4:
            center = _uniform_point(rng, -0.45, 0.45)
        agent = _uniform_point(rng)
        while _dist(agent, obj) < 0.25:
            agent = _uniform_point(rng)
        return EnvState(task.task_id, agent, 1.0, obj[None, :].copy(), center.copy(), zeros.copy())

    raise ValueError(f"unknown task {name!r}")


def task_name(task_id: int) -> str:
    return TASK_NAMES[task_id]


def _graspable(name: str) -> bool:
    return name in ("pick_place", "fold_drag", "carry_orbit")


def _pushable(name: str) -> bool:
    # the stir center is fixed to the table; goals are not physical
    return name in ("push", "pick_place", "fold_drag", "carry_orbit")


def observe(state: EnvState) -> np.ndarray:
    """Flat observation: [agent, gripper, obj slots, goal slot, task one-hot]."""
    name = task_name(state.task_id)
    slots = np.zeros(4)
    goal_slot = np.zeros(2)
    if name in ("reach",):
        goal_slot = state.goal
    elif name == "two_goal":
        slots[0:2] = state.goal       # left candidate
        slots[2:4] = state.aux_goal   # right candidate
    else:
        slots[0:2] = state.objects[0]
        goal_slot = state.goal
    onehot = np.zeros(TASK_SLOTS)
    onehot[state.task_id] = 1.0
    return np.concatenate([state.agent, [state.gripper], slots, goal_slot, onehot]).astype(np.float32)


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


def _unit_or_x(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    return v / n if n > 1e-9 else np.array([1.0, 0.0])


def step_env(state: EnvState, action: np.ndarray, task: TaskSpec) -> EnvState:
    """Apply one action; returns a new state. Out-of-range actions clamp."""
    name = task.name
    a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    s = state.copy()
    agent_before = s.agent.copy()
    s.agent = np.clip(s.agent + DT * a[:2], -1.0, 1.0)
    s.gripper = float(np.clip(s.gripper + GRIPPER_RATE * a[2], 0.0, 1.0))

    # grasp / release / carry
    if s.held >= 0:
        if s.gripper >= GRIP_OPEN:
            s.held = -1
        else:
            s.objects[s.held] = s.agent
    elif _graspable(name) and s.gripper <= GRIP_CLOSE and len(s.objects):
        dists = np.linalg.norm(s.objects - s.agent, axis=1)
        nearest = int(np.argmin(dists))
        if dists[nearest] <= GRAB_RADIUS:
            s.held = nearest
            s.objects[nearest] = s.agent

    # body contact pushes loose objects out of the agent disc; only when the
    # agent is closing in, so a freshly released object is not shoved away
    if _pushable(name):
        for i in range(len(s.objects)):
            if i == s.held:
                continue
            delta = s.objects[i] - s.agent
            d = float(np.linalg.norm(delta))
            d_before = float(np.linalg.norm(s.objects[i] - agent_before))
            if d < CONTACT_RADIUS and d < d_before - 1e-12:
                direction = delta / d if d > 1e-9 else _unit_or_x(s.agent - agent_before)
                s.objects[i] = np.clip(s.agent + direction * CONTACT_RADIUS, -1.0, 1.0)

    _update_orbit(s, name)
    s.success = s.success or _success_of(s, task)
    s.phase = max(s.phase, _phase_of(s, name))
    s.t += 1
    return s


def _update_orbit(s: EnvState, name: str) -> None:
    if name not in ("stir_orbit", "carry_orbit"):
        return
    center = s.goal
    rel = s.agent - center
    d = float(np.linalg.norm(rel))
    angle = math.atan2(rel[1], rel[0])
    in_band = ORBIT_BAND[0] <= d <= ORBIT_BAND[1]
    if name == "carry_orbit":
        in_band = in_band and s.held >= 0
    # progress is kept while outside the band; only accumulation pauses
    if in_band and not math.isnan(s.prev_angle):
        s.orbit_acc += _wrap_angle(angle - s.prev_angle)
    s.prev_angle = angle if in_band else math.nan


def _phase_of(s: EnvState, name: str) -> int:
    if name == "reach":
        return 1 if _dist(s.agent, s.goal) <= 0.3 else 0
    if name == "push":
        return 1 if _dist(s.agent, s.objects[0]) <= CONTACT_RADIUS + 0.02 else 0
    if name == "pick_place":
        if s.success or (s.held >= 0 and _dist(s.agent, s.goal) <= 0.15):
            return 2
        return 1 if s.held >= 0 else 0
    if name == "two_goal":
        d = min(_dist(s.agent, s.goal), _dist(s.agent, s.aux_goal))
        return 1 if d <= 0.3 else 0
    if name == "fold_drag":
        if s.success or (s.held >= 0 and _dist(s.agent, s.goal) <= 0.15):
            return 2
        return 1 if s.held >= 0 else 0
    if name == "stir_orbit":
        d = _dist(s.agent, s.goal)
        return 1 if ORBIT_BAND[0] <= d <= ORBIT_BAND[1] else 0
    if name == "carry_orbit":
        if ORBIT_BAND[0] <= _dist(s.agent, s.goal) <= ORBIT_BAND[1] and s.held >= 0:
            return 2
        return 1 if s.held >= 0 else 0
    raise ValueError(name)


def _success_of(s: EnvState, task: TaskSpec) -> bool:
    name = task.name
    if name == "reach":
        return _dist(s.agent, s.goal) <= task.goal_radius
    if name == "push":
        return _dist(s.objects[0], s.goal) <= task.goal_radius
    if name == "pick_place":
        return s.phase >= 1 and s.held < 0 and _dist(s.objects[0], s.goal) <= task.goal_radius
    if name == "two_goal":
        return min(_dist(s.agent, s.goal), _dist(s.agent, s.aux_goal)) <= task.goal_radius
    if name == "fold_drag":
        return s.phase >= 1 and s.held < 0 and _dist(s.objects[0], s.goal) <= task.goal_radius
    if name in ("stir_orbit", "carry_orbit"):
        return abs(s.orbit_acc) >= ORBIT_TARGET_ANGLE
    raise ValueError(name)
