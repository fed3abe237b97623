"""Open-loop cross-entropy-method search over whole force plans.

A plan is scored by rolling it in every environment of a fixed set and handing
the resulting trajectories to a reward function. The sampling distribution
starts uniform over the action box and is refit to the elites as a diagonal
Gaussian afterwards.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from galilai import envsim
from galilai.curiosity import Bipartition
from galilai.envsim import ACTION_DIM, FactorAssignment, Trajectory

RewardFn = Callable[[Sequence[Trajectory], np.ndarray], "tuple[float, Optional[Bipartition]]"]


class DegenerateReward(RuntimeError):
    pass


@dataclass(frozen=True)
class CEMConfig:
    n_samples: int = 20
    elite_fraction: float = 0.10
    n_iterations: int = 20
    n_segments: int = envsim.N_SEGMENTS
    frames_per_segment: int = envsim.FRAMES_PER_SEGMENT
    variance_floor: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        for name in ("n_samples", "n_iterations", "n_segments", "frames_per_segment"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.elite_fraction <= 1 or self.n_elites < 1:
            raise ValueError("elite_fraction must select at least one plan")
        if self.variance_floor <= 0:
            raise ValueError("variance_floor must be positive")
        if (self.n_segments, self.frames_per_segment) != (envsim.N_SEGMENTS, envsim.FRAMES_PER_SEGMENT):
            raise ValueError("plan layout is fixed by the simulator")

    @property
    def n_elites(self) -> int:
        # round before ceil so 20 * 0.1 stays 2
        return math.ceil(round(self.n_samples * self.elite_fraction, 9))

    def with_seed(self, seed: int) -> "CEMConfig":
        return CEMConfig(**{**self.to_dict(), "seed": int(seed)})

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "elite_fraction": self.elite_fraction,
            "n_iterations": self.n_iterations,
            "n_segments": self.n_segments,
            "frames_per_segment": self.frames_per_segment,
            "variance_floor": self.variance_floor,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class PlanDistribution:
    mode: str  # "uniform" or "gaussian"
    low: np.ndarray | None = None
    high: np.ndarray | None = None
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    @classmethod
    def uniform(cls, n_segments: int = envsim.N_SEGMENTS,
                low: float | None = None, high: float | None = None) -> "PlanDistribution":
        low = -envsim.FORCE_LIMIT if low is None else low
        high = envsim.FORCE_LIMIT if high is None else high
        shape = (n_segments, ACTION_DIM)
        lo, hi = np.full(shape, float(low)), np.full(shape, float(high))
        if np.any(lo >= hi):
            raise ValueError("uniform distribution needs low < high")
        return cls("uniform", low=lo, high=hi)

    @classmethod
    def gaussian(cls, mean, std, variance_floor: float = 1e-3) -> "PlanDistribution":
        return cls("gaussian", mean=np.asarray(mean, float), std=np.maximum(np.asarray(std, float), variance_floor))


@dataclass
class PlanScore:
    plan: np.ndarray
    reward: float
    bipartition: Optional[Bipartition]
    iteration: int = 0
    history: list[float] = field(default_factory=list)  # best-so-far reward after each iteration
    evaluated_plans: np.ndarray | None = None  # every plan scored, (n_iter * n_samples, segs, 2)

    def to_dict(self) -> dict:
        return {
            "plan": self.plan.tolist(),
            "reward": self.reward,
            "bipartition": None if self.bipartition is None else self.bipartition.to_dict(),
            "iteration": self.iteration,
            "history": list(self.history),
        }


def sample_plans(dist: PlanDistribution, n: int, rng_seed) -> np.ndarray:
    """Draw ``n`` plans, shape ``(n, segments, 2)``, clamped to the action box."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    if dist.mode == "uniform":
        plans = rng.uniform(dist.low, dist.high, size=(n, *dist.low.shape))
    elif dist.mode == "gaussian":
        plans = dist.mean + dist.std * rng.standard_normal((n, *dist.mean.shape))
    else:
        raise ValueError(f"unknown distribution mode {dist.mode!r}")
    return np.clip(plans, -envsim.FORCE_LIMIT, envsim.FORCE_LIMIT)


def update_distribution(elites, variance_floor: float = 1e-3) -> PlanDistribution:
    elites = np.asarray(elites, dtype=float)
    if len(elites) == 0:
        raise ValueError("need at least one elite")
    return PlanDistribution.gaussian(elites.mean(axis=0), elites.std(axis=0), variance_floor)


def select_elites(rewards: np.ndarray, n_elites: int) -> np.ndarray:
    # stable sort keeps the lower index first among equal rewards
    return np.argsort(-rewards, kind="stable")[:n_elites]


def optimize(env_set: Sequence[FactorAssignment], reward_fn: RewardFn, config: CEMConfig = CEMConfig(),
             dt: float = envsim.DT) -> PlanScore:
    if len(env_set) < 2:
        raise ValueError("optimize needs at least two environments")
    rng = np.random.default_rng(config.seed)
    dist = PlanDistribution.uniform(config.n_segments)
    best: PlanScore | None = None
    history: list[float] = []
    evaluated = []

    for it in range(config.n_iterations):
        plans = sample_plans(dist, config.n_samples, rng)
        evaluated.append(plans)
        rollouts = envsim.rollout_batch(env_set, plans, dt)
        rewards = np.full(len(plans), -np.inf)
        parts: list[Optional[Bipartition]] = [None] * len(plans)
        for p, trajectories in enumerate(rollouts):
            reward, part = reward_fn(trajectories, plans[p])
            if np.isfinite(reward):
                rewards[p], parts[p] = float(reward), part
        if not np.any(np.isfinite(rewards)):
            raise DegenerateReward("degenerate reward")

        top = int(select_elites(rewards, 1)[0])
        if best is None or rewards[top] > best.reward:
            best = PlanScore(plans[top].copy(), float(rewards[top]), parts[top], it)
        history.append(best.reward)

        idx = select_elites(rewards, config.n_elites)
        idx = idx[np.isfinite(rewards[idx])]
        dist = update_distribution(plans[idx], config.variance_floor)

    best.history = history
    best.evaluated_plans = np.concatenate(evaluated)
    return best
