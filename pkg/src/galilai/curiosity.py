"""Trajectory distances, exhaustive two-cluster splits and the curiosity score.

The score of a split ``A | B`` over a distance matrix ``d`` is::

    min_{i in A, j in B} d[i, j] - max_{i, i' in A} d[i, i'] - max_{j, j' in B} d[j, j']

with the spread of a singleton cluster taken as 0. Clusters are small (at most
15 members), so every split is enumerated and the maximum is exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from galilai.envsim import Trajectory

MAX_EXHAUSTIVE = 15


class IncomparableTrajectories(ValueError):
    pass


class ClusterRangeError(ValueError):
    pass


@dataclass(frozen=True)
class Bipartition:
    cluster_a: frozenset[int]
    cluster_b: frozenset[int]
    score: float = float("nan")

    def __post_init__(self):
        if not self.cluster_a or not self.cluster_b:
            raise ValueError("both clusters must be non-empty")
        if self.cluster_a & self.cluster_b:
            raise ValueError("clusters must be disjoint")
        if 0 in self.cluster_b:
            # canonical form: index 0 always lives in cluster_a
            a, b = self.cluster_b, self.cluster_a
            object.__setattr__(self, "cluster_a", a)
            object.__setattr__(self, "cluster_b", b)

    @classmethod
    def from_mask(cls, mask: Sequence[bool], score: float = float("nan")) -> "Bipartition":
        a = frozenset(i for i, m in enumerate(mask) if m)
        b = frozenset(i for i, m in enumerate(mask) if not m)
        return cls(a, b, score)

    @property
    def n(self) -> int:
        return len(self.cluster_a) + len(self.cluster_b)

    def cluster_of(self, index: int) -> frozenset[int]:
        return self.cluster_a if index in self.cluster_a else self.cluster_b

    def same_split(self, other: "Bipartition") -> bool:
        return self.cluster_a == other.cluster_a and self.cluster_b == other.cluster_b

    def to_dict(self) -> dict:
        return {
            "cluster_a": sorted(self.cluster_a),
            "cluster_b": sorted(self.cluster_b),
            "score": self.score,
        }


def _observation_stack(trajectories: Sequence[Trajectory | np.ndarray]) -> np.ndarray:
    obs = [np.asarray(getattr(t, "observations", t), dtype=float) for t in trajectories]
    lengths = {o.shape for o in obs}
    if len(lengths) != 1:
        raise IncomparableTrajectories("incomparable trajectories")
    return np.stack(obs)


def standardize(observations: np.ndarray) -> np.ndarray:
    """Per-dimension z-score over every trajectory and time step in the batch."""
    flat = observations.reshape(-1, observations.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    return (observations - mean) / std


def distance_matrix(trajectories: Sequence[Trajectory | np.ndarray]) -> np.ndarray:
    """Pairwise L2 distances between standardized, flattened trajectories."""
    z = standardize(_observation_stack(trajectories))
    flat = z.reshape(len(z), -1)
    diff = flat[:, None, :] - flat[None, :, :]
    dm = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return dm


def trajectory_distance(t1: Trajectory | np.ndarray, t2: Trajectory | np.ndarray) -> float:
    return float(distance_matrix([t1, t2])[0, 1])


def validate_distance_matrix(dm) -> np.ndarray:
    dm = np.asarray(dm, dtype=float)
    if dm.ndim != 2 or dm.shape[0] != dm.shape[1]:
        raise ValueError("distance matrix must be square")
    if not np.all(np.isfinite(dm)) or np.any(dm < 0):
        raise ValueError("distance matrix entries must be finite and non-negative")
    if not np.array_equal(dm, dm.T) or np.any(np.diag(dm) != 0):
        raise ValueError("distance matrix must be symmetric with zero diagonal")
    return dm


def curiosity_score(dm, partition: Bipartition) -> float:
    dm = np.asarray(dm, dtype=float)
    a = sorted(partition.cluster_a)
    b = sorted(partition.cluster_b)
    if partition.n != len(dm) or max(a + b) >= len(dm):
        raise ValueError("partition does not match the distance matrix")
    inter = dm[np.ix_(a, b)].min()
    spread_a = dm[np.ix_(a, a)].max()
    spread_b = dm[np.ix_(b, b)].max()
    return float(inter - spread_a - spread_b)


@lru_cache(maxsize=None)
def enumerate_masks(n: int) -> np.ndarray:
    """All canonical splits of ``n`` items as boolean rows (True = cluster_a).

    Index 0 is always in cluster_a; rows are ordered lexicographically by the
    sorted index tuple of cluster_a so ``argmax`` breaks ties the documented way.
    """
    if not 2 <= n <= MAX_EXHAUSTIVE:
        raise ClusterRangeError("cluster count out of exhaustive range")
    rows = []
    for bits in range(2 ** (n - 1) - 1):
        members = (0,) + tuple(i + 1 for i in range(n - 1) if bits >> i & 1)
        rows.append(members)
    rows.sort()
    masks = np.zeros((len(rows), n), dtype=bool)
    for r, members in enumerate(rows):
        masks[r, list(members)] = True
    masks.setflags(write=False)
    return masks


@lru_cache(maxsize=None)
def _pair_masks(n: int):
    """Upper-triangle pair membership per split: (inter, within_a, within_b)."""
    masks = enumerate_masks(n)
    i, j = np.triu_indices(n, k=1)
    a_i, a_j = masks[:, i], masks[:, j]
    return (i, j), a_i != a_j, a_i & a_j, ~a_i & ~a_j


def score_all(dm: np.ndarray) -> np.ndarray:
    """Curiosity score of every canonical split, in :func:`enumerate_masks` order."""
    (i, j), inter_m, a_m, b_m = _pair_masks(len(dm))
    d = dm[i, j]
    inter = np.where(inter_m, d, np.inf).min(axis=1)
    # singleton clusters have no pairs and fall back to a spread of 0
    spread_a = np.where(a_m, d, 0.0).max(axis=1)
    spread_b = np.where(b_m, d, 0.0).max(axis=1)
    return inter - spread_a - spread_b


def best_bipartition(dm) -> Bipartition:
    dm = np.asarray(dm, dtype=float)
    n = len(dm)
    if not 2 <= n <= MAX_EXHAUSTIVE:
        raise ClusterRangeError("cluster count out of exhaustive range")
    scores = score_all(dm)
    best = int(np.argmax(scores))
    return Bipartition.from_mask(enumerate_masks(n)[best], float(scores[best]))


def assign_trajectory(dm_extended, new_index: int, partition: Bipartition) -> int:
    """Cluster (0 = cluster_a, 1 = cluster_b) nearest on mean distance to ``new_index``."""
    dm = np.asarray(dm_extended, dtype=float)
    row = dm[new_index]
    mean_a = row[sorted(partition.cluster_a)].mean()
    mean_b = row[sorted(partition.cluster_b)].mean()
    return 0 if mean_a <= mean_b else 1


def curiosity_reward(trajectories: Sequence[Trajectory | np.ndarray], plan=None) -> tuple[float, Bipartition]:
    """Planner reward: the best split score of one plan's trajectory set."""
    part = best_bipartition(distance_matrix(trajectories))
    return part.score, part
