import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from galilai import curiosity, envsim, planner
from galilai.detector import aligned_reward
from galilai.planner import CEMConfig, DegenerateReward, PlanDistribution, optimize

SMALL = CEMConfig(n_samples=10, n_iterations=5)
PAIR = envsim.make_env_set("mass", [0.5, 1.0])


def test_elite_count():
    assert CEMConfig().n_elites == 2
    assert CEMConfig(n_samples=25).n_elites == 3


@pytest.mark.parametrize("kwargs", [{"n_samples": 0}, {"elite_fraction": 0.0}, {"variance_floor": 0.0},
                                    {"n_segments": 5}])
def test_config_rejects(kwargs):
    with pytest.raises(ValueError):
        CEMConfig(**kwargs)


def test_uniform_samples_in_bounds_and_deterministic():
    dist = PlanDistribution.uniform()
    a = planner.sample_plans(dist, 500, 7)
    assert a.shape == (500, 6, 2)
    assert a.min() >= -10.0 and a.max() <= 10.0
    assert np.array_equal(a, planner.sample_plans(dist, 500, 7))


def test_narrow_gaussian_stays_near_zero():
    dist = PlanDistribution.gaussian(np.zeros((6, 2)), np.zeros((6, 2)), 1e-3)
    plans = planner.sample_plans(dist, 100, 0)
    assert np.abs(plans).max() < 0.01


def test_wide_gaussian_is_clamped():
    dist = PlanDistribution.gaussian(np.zeros((6, 2)), np.full((6, 2), 100.0))
    plans = planner.sample_plans(dist, 100, 0)
    assert np.abs(plans).max() == 10.0


def test_update_single_elite_uses_floor():
    elite = np.random.default_rng(0).uniform(-5, 5, (1, 6, 2))
    dist = planner.update_distribution(elite, 1e-3)
    assert np.array_equal(dist.mean, elite[0])
    assert np.all(dist.std == 1e-3)


def test_update_population_moments():
    elites = np.stack([np.full((6, 2), 1.0), np.full((6, 2), 3.0)])
    dist = planner.update_distribution(elites)
    assert np.allclose(dist.mean, 2.0) and np.allclose(dist.std, 1.0)
    sym = planner.update_distribution(np.stack([np.full((6, 2), -4.0), np.full((6, 2), 4.0)]))
    assert np.allclose(sym.mean, 0.0)


def test_select_elites_ties_prefer_lower_index():
    assert list(planner.select_elites(np.array([1.0, 3.0, 3.0, 2.0]), 2)) == [1, 2]
    assert list(planner.select_elites(np.zeros(5), 3)) == [0, 1, 2]


def test_constant_reward():
    out = optimize(PAIR, lambda t, p: (4.2, None), SMALL)
    assert out.reward == 4.2 and out.iteration == 0
    assert out.history == [4.2] * 5


def test_negative_norm_reward_moves_toward_zero_plan():
    def reward(trajs, plan):
        return -float(np.linalg.norm(plan)), None

    out = optimize(PAIR, reward, CEMConfig(seed=3))
    assert out.history[-1] >= out.history[0]
    assert np.all(np.diff(out.history) >= 0)
    assert -out.reward < 0.5 * np.sqrt(12 * 100 / 3)  # well under a typical uniform draw


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_best_so_far_monotone(seed):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(6, 2))
    out = optimize(PAIR, lambda t, p: (float(np.sum(w * p)), None), CEMConfig(n_iterations=8, seed=seed))
    assert np.all(np.diff(out.history) >= 0)
    assert np.abs(out.plan).max() <= 10.0


def test_non_finite_rewards_are_discarded():
    calls = iter(range(10**6))

    def reward(trajs, plan):
        return (float("nan"), None) if next(calls) % 2 else (1.0, None)

    out = optimize(PAIR, reward, SMALL)
    assert out.reward == 1.0


def test_degenerate_reward():
    with pytest.raises(DegenerateReward, match="degenerate reward"):
        optimize(PAIR, lambda t, p: (float("inf"), None), SMALL)
    with pytest.raises(DegenerateReward):
        optimize(PAIR, lambda t, p: (float("nan"), None), SMALL)


def test_needs_two_envs():
    with pytest.raises(ValueError):
        optimize(PAIR[:1], lambda t, p: (0.0, None), SMALL)


def test_determinism_and_evaluated_plans():
    a = optimize(PAIR, aligned_reward, SMALL.with_seed(11))
    b = optimize(PAIR, aligned_reward, SMALL.with_seed(11))
    assert np.array_equal(a.plan, b.plan) and a.reward == b.reward
    assert np.array_equal(a.evaluated_plans, b.evaluated_plans)
    assert a.evaluated_plans.shape == (50, 6, 2)


def test_force_limit_follows_simulator(monkeypatch):
    monkeypatch.setattr(envsim, "FORCE_LIMIT", 3.0)
    plans = planner.sample_plans(PlanDistribution.uniform(), 200, 0)
    assert np.abs(plans).max() <= 3.0


def test_mass_split_is_contiguous_and_optimal():
    envs = envsim.make_env_set("mass", [round(0.1 * i, 6) for i in range(1, 10)])
    out = optimize(envs, aligned_reward, CEMConfig(seed=0))
    a = sorted(out.bipartition.cluster_a)
    assert a == list(range(len(a)))  # light block first, heavy block second
    trajs = envsim.rollout_batch(envs, out.plan[None])[0]
    dm = curiosity.distance_matrix(trajs)
    scores = curiosity.score_all(dm)
    assert out.reward == scores.max()
    assert out.bipartition.same_split(curiosity.best_bipartition(dm))
