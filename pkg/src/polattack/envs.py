"""Toy 2-D safety-navigation tasks.

A point car moves in a square arena with circular hazard regions.  Three
tasks share the dynamics and sensor suite and differ in objective:

* goal:   drive to a goal position (episode ends on contact)
* circle: circulate along a ring at speed while staying off the walls
* button: drive to one designated button among several

Episodes are fully determined by (config, episode_seed): all randomness
is consumed at reset when the layout is drawn, and stepping is a pure
function of state and action, so any episode can be replayed bitwise.

Observations are float64 vectors: heading (sin/cos), forward speed, a
body-frame compass and scaled distance to the objective, and a 16-bin
hazard proximity scan (1 / (1 + distance-to-edge), 0 for empty bins).
The circle task appends its signed radial error; the button task appends
compass/distance blocks for every button plus a one-hot target marker.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .seeding import rng_from
from .validation import as_vector

__all__ = [
    "Task",
    "EnvConfig",
    "Layout",
    "EnvState",
    "Transition",
    "ACTION_DIM",
    "LIDAR_BINS",
    "obs_dim",
    "reset",
    "observe",
    "step",
]

ACTION_DIM = 2          # (steering rate, commanded speed), both in [-1, 1]
LIDAR_BINS = 16
_TURN_RATE = 2.0        # rad/s at full steering
_SPEED_SMOOTHING = 0.9  # first-order lag on the speed command
_STEP_PENALTY = 0.01
_HAZARD_PENALTY = 0.5
_REACH_BONUS = 1.0
_DIST_SCALE = 3.0       # distance features are divided by this
_COMPASS_SCALE = 5.0    # direction features are divided by this
_SCAN_SCALE = 3.0       # hazard scan intensities are divided by this
_PLACEMENT_CLEARANCE = 0.7
_PLACEMENT_ATTEMPTS = 1000
_WALL_MARGIN = 0.5      # circle task: penalty zone width along the walls


class Task(enum.Enum):
    GOAL = "goal"
    CIRCLE = "circle"
    BUTTON = "button"

    @property
    def index(self) -> int:
        return _TASK_INDEX[self]


_TASK_INDEX = {Task.GOAL: 0, Task.CIRCLE: 1, Task.BUTTON: 2}


@dataclass(frozen=True)
class EnvConfig:
    task: Task = Task.GOAL
    half_width: float = 3.0
    dt: float = 0.1
    horizon: int = 300
    hazard_count: int = 4
    hazard_radius: float = 0.4
    goal_radius: float = 0.3
    button_count: int = 3
    circle_radius: float = 1.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))
        if self.half_width <= 0 or self.dt <= 0:
            raise ValueError("half_width and dt must be positive")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if self.hazard_count < 0:
            raise ValueError("hazard_count must be >= 0")
        if min(self.hazard_radius, self.goal_radius) <= 0:
            raise ValueError("radii must be positive")
        if self.task is Task.BUTTON and self.button_count < 1:
            raise ValueError("button task needs at least one button")
        if self.circle_radius >= self.half_width:
            raise ValueError("circle_radius must fit inside the arena")


@dataclass(frozen=True)
class Layout:
    """Episode geometry drawn at reset."""

    hazards: np.ndarray          # (hazard_count, 2)
    goal: np.ndarray | None      # (2,) for goal task
    buttons: np.ndarray | None   # (button_count, 2) for button task
    target: int | None           # index into buttons


@dataclass(frozen=True)
class EnvState:
    pos: np.ndarray              # (2,)
    heading: float               # [-pi, pi)
    speed: float
    step: int
    prev_objective_dist: float
    layout: Layout


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool


def obs_dim(config: EnvConfig) -> int:
    base = 3 + 3 + LIDAR_BINS
    if config.task is Task.CIRCLE:
        return base + 1
    if config.task is Task.BUTTON:
        return base + 4 * config.button_count
    return base


def _wrap_angle(a: float) -> float:
    return float((a + np.pi) % (2.0 * np.pi) - np.pi)


def _place(rng, config: EnvConfig, taken: list[np.ndarray]) -> np.ndarray:
    """Rejection-sample a position clear of the walls, the start point and
    everything placed before it."""
    lo = -(config.half_width - _WALL_MARGIN)
    hi = config.half_width - _WALL_MARGIN
    for _ in range(_PLACEMENT_ATTEMPTS):
        p = rng.uniform(lo, hi, 2)
        if np.linalg.norm(p) < _PLACEMENT_CLEARANCE:
            continue  # keep the spawn point clear
        if all(np.linalg.norm(p - q) >= _PLACEMENT_CLEARANCE for q in taken):
            return p
    raise RuntimeError(
        f"could not place an object after {_PLACEMENT_ATTEMPTS} attempts; "
        "the arena is too crowded for this configuration")


def _objective(config: EnvConfig, layout: Layout) -> np.ndarray:
    if config.task is Task.BUTTON:
        return layout.buttons[layout.target]
    if config.task is Task.GOAL:
        return layout.goal
    return np.zeros(2)  # circle: features point at the ring center


def reset(config: EnvConfig, episode_seed: int) -> EnvState:
    """Draw an episode layout and return the initial state.

    The car always starts at the arena center at rest; heading, objective
    and hazard positions come from (config.seed, episode_seed).
    """
    rng = rng_from(config.seed, episode_seed)
    heading = float(rng.uniform(-np.pi, np.pi))

    taken: list[np.ndarray] = []
    goal = buttons = target = None
    if config.task is Task.GOAL:
        goal = _place(rng, config, taken)
        taken.append(goal)
    elif config.task is Task.BUTTON:
        rows = []
        for _ in range(config.button_count):
            p = _place(rng, config, taken)
            rows.append(p)
            taken.append(p)
        buttons = np.stack(rows)
    hazards = []
    for _ in range(config.hazard_count):
        p = _place(rng, config, taken)
        hazards.append(p)
        taken.append(p)
    hazards = np.stack(hazards) if hazards else np.zeros((0, 2))
    if config.task is Task.BUTTON:
        target = int(rng.integers(config.button_count))

    layout = Layout(hazards=hazards, goal=goal, buttons=buttons, target=target)
    pos = np.zeros(2)
    dist = float(np.linalg.norm(_objective(config, layout) - pos))
    return EnvState(pos=pos, heading=heading, speed=0.0, step=0,
                    prev_objective_dist=dist, layout=layout)


def _compass_block(pos, heading, point):
    """Body-frame direction to `point` plus the scaled distance.

    The direction vector is scaled down: the compass is a narrow-range
    sensor, so a fixed absolute perturbation budget owns a
    correspondingly larger share of the signal.
    """
    rel = point - pos
    dist = float(np.linalg.norm(rel))
    if dist < 1e-9:
        direction = np.zeros(2)
    else:
        bearing = float(np.arctan2(rel[1], rel[0]))
        delta = _wrap_angle(bearing - heading)
        direction = np.array([np.cos(delta), np.sin(delta)]) / _COMPASS_SCALE
    return direction, min(dist / _DIST_SCALE, 2.0), dist


def _hazard_scan(config: EnvConfig, layout: Layout, pos, heading) -> np.ndarray:
    scan = np.zeros(LIDAR_BINS)
    for hz in layout.hazards:
        rel = hz - pos
        dist = float(np.linalg.norm(rel))
        bearing = float(np.arctan2(rel[1], rel[0]))
        delta = _wrap_angle(bearing - heading)
        b = int((delta + np.pi) / (2.0 * np.pi) * LIDAR_BINS) % LIDAR_BINS
        edge = max(dist - config.hazard_radius, 0.0)
        scan[b] = max(scan[b], 1.0 / (1.0 + edge) / _SCAN_SCALE)
    return scan


def observe(config: EnvConfig, state: EnvState) -> np.ndarray:
    layout = state.layout
    objective = _objective(config, layout)
    direction, scaled, _ = _compass_block(state.pos, state.heading, objective)
    parts = [
        np.array([np.sin(state.heading), np.cos(state.heading), state.speed]),
        direction,
        np.array([scaled]),
        _hazard_scan(config, layout, state.pos, state.heading),
    ]
    if config.task is Task.CIRCLE:
        err = (float(np.linalg.norm(state.pos)) - config.circle_radius) / _DIST_SCALE
        parts.append(np.array([err]))
    elif config.task is Task.BUTTON:
        for b in layout.buttons:
            d, s, _ = _compass_block(state.pos, state.heading, b)
            parts.extend([d, np.array([s])])
        onehot = np.zeros(config.button_count)
        onehot[layout.target] = 1.0
        parts.append(onehot)
    return np.concatenate(parts)


def _in_hazard(config: EnvConfig, layout: Layout, pos) -> bool:
    if layout.hazards.shape[0] == 0:
        return False
    d = np.linalg.norm(layout.hazards - pos, axis=1)
    return bool(np.min(d) < config.hazard_radius)


def step(config: EnvConfig, state: EnvState, action) -> tuple[EnvState, Transition]:
    """Advance one tick.  Pure: same (state, action) gives the same result."""
    action = np.clip(as_vector(action, "action", size=ACTION_DIM), -1.0, 1.0)
    obs = observe(config, state)

    heading = _wrap_angle(state.heading + float(action[0]) * config.dt * _TURN_RATE)
    speed = _SPEED_SMOOTHING * state.speed + (1.0 - _SPEED_SMOOTHING) * float(action[1])
    pos = state.pos + speed * config.dt * np.array([np.cos(heading), np.sin(heading)])
    pos = np.clip(pos, -config.half_width, config.half_width)
    n_step = state.step + 1

    layout = state.layout
    objective = _objective(config, layout)
    dist = float(np.linalg.norm(objective - pos))

    reached = False
    if config.task is Task.CIRCLE:
        radial = float(np.linalg.norm(pos))
        if radial < 1e-9:
            tangential = 0.0
        else:
            tangent = np.array([-pos[1], pos[0]]) / radial
            velocity = speed * np.array([np.cos(heading), np.sin(heading)])
            tangential = float(velocity @ tangent)
        reward = tangential * np.exp(-abs(radial - config.circle_radius))
        if np.max(np.abs(pos)) > config.half_width - _WALL_MARGIN:
            reward -= _HAZARD_PENALTY
    else:
        reward = state.prev_objective_dist - dist - _STEP_PENALTY
        reached = dist < config.goal_radius
        if reached:
            reward += _REACH_BONUS
        if _in_hazard(config, layout, pos):
            reward -= _HAZARD_PENALTY

    done = reached or n_step >= config.horizon
    next_state = EnvState(pos=pos, heading=heading, speed=speed, step=n_step,
                          prev_objective_dist=dist, layout=layout)
    transition = Transition(obs=obs, action=action, reward=float(reward),
                            next_obs=observe(config, next_state), done=done)
    return next_state, transition
