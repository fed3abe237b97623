"""How separable is the test environment from its round-2 belief set at all?

Runs the planner with a reward that scores only the split isolating the test
environment (index 0): min distance to the belief minus the belief's spread.
A negative best value means no plan in the search isolates the test env, so
the curiosity-driven round 2 cannot flag it either.

    python3 scripts/margin_probe.py scripts/configs/gravity_mass.json --unseen -19.6 -2.0 -9.8
"""
import argparse

from galilai import curiosity, detector, harness
from galilai.planner import CEMConfig, optimize


def isolation_margin(trajectories, plan=None):
    dm = curiosity.distance_matrix(detector.align(trajectories))
    return float(dm[0, 1:].min() - dm[1:, 1:].max()), None


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("config")
    ap.add_argument("--unseen", type=float, nargs="+", required=True)
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args()
    spec = harness.load_config(args.config)
    train = harness.training_envs(spec)
    search = CEMConfig(n_samples=60, n_iterations=40)

    for u in args.unseen:
        test = harness.test_env(spec, u)
        r1 = detector.round1(train, spec.planner.with_seed(0))
        belief = detector.form_belief(test, train, r1)
        envs = [test, *belief.member_envs]
        best = max(optimize(envs, isolation_margin, search.with_seed(s)).reward for s in range(args.seeds))
        print(f"unseen={u:g} belief={belief.member_indices} best isolation margin={best:.3f}")


if __name__ == "__main__":
    main()
