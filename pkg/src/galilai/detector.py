"""Two-round active-experimentation check for out-of-task-distribution (OOTD) shifts.

Round 1 searches for the plan that best splits the training environments in
two. The test environment is rolled with that plan and joins the nearer
cluster (its belief set). Round 2 repeats the search on the belief set plus the
test environment; the test environment is flagged OOTD when the winning split
leaves it alone in its own cluster.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from galilai import curiosity, envsim
from galilai.curiosity import Bipartition
from galilai.envsim import FactorAssignment, Trajectory
from galilai.planner import CEMConfig, PlanScore, optimize


class EmptyBelief(ValueError):
    pass


def align(trajectories: Sequence[Trajectory]) -> list[np.ndarray]:
    """Index-align observation streams, cutting every one to the shortest.

    The agent has no clock beyond its own observation counter: when a sensor
    refreshes slowly, observation ``i`` is compared with observation ``i`` of
    the others even though it was taken later in the episode.
    """
    n = min(len(t) for t in trajectories)
    return [t.observations[:n] for t in trajectories]


def aligned_reward(trajectories: Sequence[Trajectory], plan=None):
    return curiosity.curiosity_reward(align(trajectories), plan)


@dataclass
class BeliefSet:
    member_envs: list[FactorAssignment]
    member_indices: list[int]  # positions in the round-1 training list
    source_plan: np.ndarray
    source_partition: Bipartition

    def __post_init__(self):
        if not self.member_envs:
            raise EmptyBelief("empty belief")

    def to_dict(self) -> dict:
        return {
            "member_envs": [e.to_dict() for e in self.member_envs],
            "member_indices": list(self.member_indices),
            "source_plan": self.source_plan.tolist(),
            "source_partition": self.source_partition.to_dict(),
        }


@dataclass
class DetectionOutcome:
    is_ootd: bool
    round1: PlanScore
    round2: PlanScore
    belief: BeliefSet
    test_cluster_isolated: bool
    others_cohesive: bool
    test_env: FactorAssignment | None = None
    seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "method": "galilai",
            "is_ootd": self.is_ootd,
            "test_cluster_isolated": self.test_cluster_isolated,
            "others_cohesive": self.others_cohesive,
            "seed": self.seed,
            "test_env": None if self.test_env is None else self.test_env.to_dict(),
            "round1": self.round1.to_dict(),
            "round2": self.round2.to_dict(),
            "belief": self.belief.to_dict(),
        }


def round1(training_envs: Sequence[FactorAssignment], planner_config: CEMConfig) -> PlanScore:
    if len(training_envs) < 2:
        raise ValueError("round 1 needs at least two training environments")
    return optimize(training_envs, aligned_reward, planner_config)


def form_belief(test_env: FactorAssignment, training_envs: Sequence[FactorAssignment],
                round1_result: PlanScore) -> BeliefSet:
    plan = round1_result.plan
    trajectories = envsim.rollout_batch([*training_envs, test_env], plan[None])[0]
    dm = curiosity.distance_matrix(align(trajectories))
    test_index = len(training_envs)
    label = curiosity.assign_trajectory(dm, test_index, round1_result.bipartition)
    part = round1_result.bipartition
    members = sorted(part.cluster_a if label == 0 else part.cluster_b)
    return BeliefSet([training_envs[i] for i in members], members, plan.copy(), part)


def round2(test_env: FactorAssignment, belief: BeliefSet,
           planner_config: CEMConfig) -> tuple[PlanScore, DetectionOutcome]:
    if len(belief.member_envs) < 1:
        raise EmptyBelief("empty belief")
    envs = [test_env, *belief.member_envs]  # test env is index 0
    result = optimize(envs, aligned_reward, planner_config)
    part = result.bipartition
    test_cluster = part.cluster_of(0)
    others = part.cluster_b if test_cluster is part.cluster_a else part.cluster_a

    # identical trajectories are never strictly separated: an isolated test
    # env must also sit at a positive distance from every belief member
    trajectories = envsim.rollout_batch(envs, result.plan[None])[0]
    dm = curiosity.distance_matrix(align(trajectories))
    separated = bool(dm[0, 1:].min() > 0.0)

    isolated = test_cluster == frozenset({0}) and separated
    cohesive = others == frozenset(range(1, len(envs)))
    outcome = DetectionOutcome(
        is_ootd=isolated and cohesive,
        round1=PlanScore(belief.source_plan, float("nan"), belief.source_partition),
        round2=result,
        belief=belief,
        test_cluster_isolated=isolated,
        others_cohesive=cohesive,
        test_env=test_env,
    )
    return result, outcome


def derive_seeds(seed: int, n: int = 2) -> list[int]:
    ss = np.random.SeedSequence(int(seed))
    return [int(s.generate_state(1)[0]) for s in ss.spawn(n)]


def detect(training_envs: Sequence[FactorAssignment], test_env: FactorAssignment,
           planner_config: CEMConfig = CEMConfig(), seed: int = 0) -> DetectionOutcome:
    seed1, seed2 = derive_seeds(seed)
    r1 = round1(training_envs, planner_config.with_seed(seed1))
    belief = form_belief(test_env, training_envs, r1)
    _, outcome = round2(test_env, belief, planner_config.with_seed(seed2))
    outcome.round1 = r1
    outcome.seed = int(seed)
    return outcome
