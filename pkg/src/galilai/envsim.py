"""Point-mass "block" world whose dynamics depend on intervenable causal factors.

The block lives in the x (horizontal) / z (vertical) plane, starts at rest on
the ground and is pushed by a piecewise-constant force plan. Everything here is
a pure function of ``(factors, plan)``; the batched integrator and the scalar
:func:`step` share the same elementwise code, so results agree bitwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np

DT = 0.05
FORCE_LIMIT = 10.0
N_SEGMENTS = 6
FRAMES_PER_SEGMENT = 10
N_FRAMES = N_SEGMENTS * FRAMES_PER_SEGMENT
STATIC_VELOCITY = 1e-9
OBS_DIM = 4  # x, z, vx, vz
ACTION_DIM = 2

FACTOR_NAMES = ("mass", "gravity", "friction", "wind", "damping", "skip_frame")


class SimulationError(RuntimeError):
    pass


class FactorError(ValueError):
    pass


def _strictly_monotone(values: Sequence[float]) -> bool:
    diffs = np.diff(np.asarray(values, dtype=float))
    return bool(np.all(diffs > 0) or np.all(diffs < 0))


@dataclass(frozen=True)
class FactorAssignment:
    mass: float = 1.0
    gravity: float = -9.8
    friction: float = 0.5
    wind: float = 0.0
    damping: float = 1.0
    skip_frame: int = 1

    def __post_init__(self):
        checks = {
            "mass": self.mass > 0,
            "gravity": self.gravity < 0,
            "friction": self.friction >= 0,
            "damping": 0 < self.damping <= 1,
            "skip_frame": isinstance(self.skip_frame, (int, np.integer)) and self.skip_frame >= 1,
        }
        for name, ok in checks.items():
            if not ok:
                raise FactorError(f"invalid {name}: {getattr(self, name)!r}")
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise FactorError(f"non-finite {f.name}: {value!r}")

    def with_value(self, name: str, value: float) -> "FactorAssignment":
        if name not in FACTOR_NAMES:
            raise FactorError(f"unknown factor {name!r}")
        if name == "skip_frame":
            if float(value) != int(value):
                raise FactorError(f"skip_frame must be an integer, got {value!r}")
            value = int(value)
        else:
            value = float(value)
        return replace(self, **{name: value})

    def label(self) -> str:
        return ",".join(f"{f.name}={getattr(self, f.name):g}" for f in fields(self))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


DEFAULT_FACTORS = FactorAssignment()


@dataclass(frozen=True)
class FactorSpec:
    """One causal factor with the grids it takes when seen (varied) or unseen."""

    name: str
    default_value: float
    train_range: tuple[float, ...]
    test_range: tuple[float, ...]

    def __post_init__(self):
        if self.name not in FACTOR_NAMES:
            raise FactorError(f"unknown factor {self.name!r}")
        if self.default_value not in self.test_range:
            raise FactorError(f"{self.name}: default {self.default_value} missing from test_range")
        for rng_name in ("train_range", "test_range"):
            values = getattr(self, rng_name)
            if len(values) > 1 and not _strictly_monotone(values):
                raise FactorError(f"{self.name}: {rng_name} is not strictly monotone")
        for value in (*self.train_range, *self.test_range):
            # raises FactorError on values the simulator cannot host
            DEFAULT_FACTORS.with_value(self.name, value)

    @property
    def is_integer(self) -> bool:
        return self.name == "skip_frame"


def _grid(start: float, stop: float, n: int) -> tuple[float, ...]:
    return tuple(round(float(v), 6) for v in np.linspace(start, stop, n))


_MASS = _grid(0.2, 2.0, 10)
_GRAVITY = (-2.0,) + _grid(-3.92, -19.6, 9)
_FRICTION = _grid(0.1, 1.0, 10)
_WIND = (0.0,) + _grid(2.0, 19.6, 10)
_DAMPING = _grid(0.1, 1.0, 10)
_SKIP = (1, 2, 3, 4, 6)

FACTOR_SPECS: dict[str, FactorSpec] = {
    "mass": FactorSpec("mass", 1.0, _MASS, _MASS),
    "gravity": FactorSpec("gravity", -9.8, _GRAVITY, _GRAVITY),
    "friction": FactorSpec("friction", 0.5, _FRICTION, _FRICTION),
    "wind": FactorSpec("wind", 0.0, _WIND, _WIND),
    "damping": FactorSpec("damping", 1.0, _DAMPING, _DAMPING),
    "skip_frame": FactorSpec("skip_frame", 1, _SKIP, _SKIP),
}


@dataclass
class EnvState:
    position: np.ndarray = field(default_factory=lambda: np.zeros(2))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    frame_index: int = 0

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])


@dataclass
class Trajectory:
    observations: np.ndarray  # (n_obs, OBS_DIM)
    source_env: str
    frames: np.ndarray  # frame index of each observation

    def __len__(self) -> int:
        return len(self.observations)


def emission_frames(skip_frame: int, n_frames: int = N_FRAMES) -> np.ndarray:
    """Frames at which a sensor refreshing every ``skip_frame`` frames reports."""
    frames = list(range(0, n_frames + 1, skip_frame))
    if frames[-1] != n_frames:
        frames.append(n_frames)
    return np.asarray(frames)


def _factor_arrays(factors: Sequence[FactorAssignment]):
    return tuple(
        np.array([getattr(f, name) for f in factors], dtype=float)
        for name in ("mass", "gravity", "friction", "wind", "damping")
    )


def _advance(pos, vel, force, mass, gravity, friction, wind, damping, dt):
    """Semi-implicit Euler update; all arguments broadcast elementwise.

    ``pos``, ``vel`` and ``force`` have a trailing axis of size 2, the factor
    arrays broadcast against the remaining leading axes.
    """
    f = np.clip(force, -FORCE_LIMIT, FORCE_LIMIT) * damping[..., None]
    x, z = pos[..., 0], pos[..., 1]
    vx, vz = vel[..., 0], vel[..., 1]

    grounded = z <= 0.0
    push = f[..., 0] + wind
    max_friction = np.where(grounded, friction * mass * np.abs(gravity), 0.0)

    static = grounded & (np.abs(vx) < STATIC_VELOCITY)
    # static: friction holds the block unless the push exceeds it
    breakaway = np.sign(push) * np.maximum(np.abs(push) - max_friction, 0.0)
    ax_static = breakaway / mass
    ax_kinetic = (push - max_friction * np.sign(vx)) / mass
    ax = np.where(static, ax_static, ax_kinetic)
    vx_static = np.where(static, 0.0, vx)
    vx_new = vx_static + ax * dt
    # kinetic friction may stop the block but never reverses it
    reversed_ = grounded & ~static & (vx_new * vx < 0)
    vx_new = np.where(reversed_, 0.0, vx_new)

    az = f[..., 1] / mass + gravity
    vz_new = vz + az * dt

    x_new = x + vx_new * dt
    z_new = z + vz_new * dt
    below = z_new < 0.0
    z_new = np.where(below, 0.0, z_new)
    vz_new = np.where(below, 0.0, vz_new)

    new_pos = np.stack([x_new, z_new], axis=-1)
    new_vel = np.stack([vx_new, vz_new], axis=-1)
    if not (np.all(np.isfinite(new_pos)) and np.all(np.isfinite(new_vel))):
        raise SimulationError("numeric divergence")
    return new_pos, new_vel


def step(state: EnvState, action, factors: FactorAssignment, dt: float = DT) -> EnvState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    action = np.asarray(action, dtype=float)
    pos = np.asarray(state.position, dtype=float)
    vel = np.asarray(state.velocity, dtype=float)
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(vel)) and np.all(np.isfinite(action))):
        raise SimulationError("numeric divergence")
    params = _factor_arrays([factors])
    new_pos, new_vel = _advance(pos[None], vel[None], action[None], *params, dt)
    return EnvState(new_pos[0], new_vel[0], state.frame_index + 1)


def validate_plan(plan) -> np.ndarray:
    plan = np.asarray(plan, dtype=float)
    if plan.shape != (N_SEGMENTS, ACTION_DIM):
        raise ValueError(f"plan must have shape {(N_SEGMENTS, ACTION_DIM)}, got {plan.shape}")
    if not np.all(np.isfinite(plan)):
        raise SimulationError("numeric divergence")
    return plan


def simulate_states(factors: Sequence[FactorAssignment], plans, dt: float = DT) -> np.ndarray:
    """Full-rate state history for every (plan, env) pair.

    Returns an array of shape ``(n_plans, n_envs, N_FRAMES + 1, OBS_DIM)``.
    Emission (skip_frame) is not applied here.
    """
    plans = np.asarray(plans, dtype=float)
    if plans.ndim == 2:
        plans = plans[None]
    if plans.shape[1:] != (N_SEGMENTS, ACTION_DIM):
        raise ValueError(f"plans must have shape (n, {N_SEGMENTS}, {ACTION_DIM})")
    if not np.all(np.isfinite(plans)):
        raise SimulationError("numeric divergence")
    n_plans, n_envs = len(plans), len(factors)
    params = tuple(np.broadcast_to(p, (n_plans, n_envs)) for p in _factor_arrays(factors))

    pos = np.zeros((n_plans, n_envs, 2))
    vel = np.zeros((n_plans, n_envs, 2))
    out = np.empty((n_plans, n_envs, N_FRAMES + 1, OBS_DIM))
    out[:, :, 0, :2] = pos
    out[:, :, 0, 2:] = vel
    for t in range(N_FRAMES):
        force = np.broadcast_to(plans[:, None, t // FRAMES_PER_SEGMENT, :], (n_plans, n_envs, 2))
        pos, vel = _advance(pos, vel, force, *params, dt)
        out[:, :, t + 1, :2] = pos
        out[:, :, t + 1, 2:] = vel
    return out


def rollout_batch(factors: Sequence[FactorAssignment], plans, dt: float = DT) -> list[list[Trajectory]]:
    """Roll every plan in every environment: ``result[plan][env]``."""
    states = simulate_states(factors, plans, dt)
    frames = [emission_frames(f.skip_frame) for f in factors]
    labels = [f.label() for f in factors]
    return [
        [Trajectory(states[p, e, frames[e]], labels[e], frames[e]) for e in range(len(factors))]
        for p in range(len(states))
    ]


def rollout(factors: FactorAssignment, plan, dt: float = DT) -> Trajectory:
    plan = validate_plan(plan)
    return rollout_batch([factors], plan[None], dt)[0][0]


def make_env_set(seen: FactorSpec | str, seen_values: Sequence[float],
                 overrides: FactorAssignment = DEFAULT_FACTORS) -> list[FactorAssignment]:
    name = seen if isinstance(seen, str) else seen.name
    if len(seen_values) == 0:
        raise FactorError("seen_values must be non-empty")
    return [overrides.with_value(name, v) for v in seen_values]
