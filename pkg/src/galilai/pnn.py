"""Probabilistic-ensemble baseline.

Each environment gets an ensemble of small feed-forward networks predicting a
diagonal Gaussian over the next state from ``(state, action)``. Members are
trained on Gaussian negative log likelihood with Adam, collapsed to a single
Gaussian by mixture moments, and the test environment is flagged when its
model sits further (in KL) from the training models than a threshold measured
on in-distribution reruns.

Networks are stored with a leading "stack" axis so that many independent
members train in one vectorised loop; a lone network is a stack of one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from galilai import envsim
from galilai.envsim import FactorAssignment

HIDDEN = 64
VAR_FLOOR = 1e-6
LOG_2PI = np.log(2.0 * np.pi)


class TrainingDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class PNNConfig:
    ensemble_size: int = 10
    epochs: int = 40
    lr: float = 1e-3
    batch_size: int = 64
    threshold_seeds: int = 5
    probe_size: int = 512
    max_records: int | None = None  # per-dataset subsample; None keeps everything

    def __post_init__(self):
        for name in ("ensemble_size", "epochs", "batch_size", "threshold_seeds", "probe_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.max_records is not None and self.max_records < 1:
            raise ValueError("max_records must be positive")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TransitionDataset:
    states: np.ndarray  # (N, 4)
    actions: np.ndarray  # (N, 2)
    next_states: np.ndarray  # (N, 4)
    source_env: str = ""

    def __post_init__(self):
        n = len(self.states)
        if n == 0:
            raise ValueError("dataset is empty")
        if len(self.actions) != n or len(self.next_states) != n:
            raise ValueError("inconsistent record counts")
        if self.states.shape[1] != self.next_states.shape[1]:
            raise ValueError("state and next_state dimensions differ")
        for arr in (self.states, self.actions, self.next_states):
            if not np.all(np.isfinite(arr)):
                raise ValueError("dataset contains non-finite values")

    def __len__(self) -> int:
        return len(self.states)

    @property
    def inputs(self) -> np.ndarray:
        return np.concatenate([self.states, self.actions], axis=1)

    def subsample(self, n: int | None, seed) -> "TransitionDataset":
        if n is None or n >= len(self):
            return self
        idx = np.sort(np.random.default_rng(seed).choice(len(self), size=n, replace=False))
        return TransitionDataset(self.states[idx], self.actions[idx], self.next_states[idx], self.source_env)


@dataclass
class GaussianPrediction:
    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.variance = np.asarray(self.variance, dtype=float)
        if self.mean.shape != self.variance.shape:
            raise ValueError("mean and variance shapes differ")
        if not (np.all(self.variance > 0) and np.all(np.isfinite(self.variance))):
            raise ValueError("variances must be positive and finite")


@dataclass
class NetworkParams:
    """Weights of one network plus the normalisation it was trained under."""

    weights: dict[str, np.ndarray]
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    @property
    def out_dim(self) -> int:
        return len(self.y_mean)

    def predict(self, inputs: np.ndarray) -> GaussianPrediction:
        x = (np.asarray(inputs, dtype=float) - self.x_mean) / self.x_std
        w = {k: v[None] for k, v in self.weights.items()}
        mean, var, _ = forward(w, x[None])
        return GaussianPrediction(mean[0] * self.y_std + self.y_mean, var[0] * self.y_std ** 2)


@dataclass
class Ensemble:
    members: list[NetworkParams]
    source_env: str = ""

    def __post_init__(self):
        if not self.members:
            raise ValueError("ensemble needs at least one member")
        shapes = {tuple((k, v.shape) for k, v in sorted(m.weights.items())) for m in self.members}
        if len(shapes) != 1:
            raise ValueError("ensemble members must share an architecture")

    def predict(self, inputs: np.ndarray) -> GaussianPrediction:
        return ensemble_moments([m.predict(inputs) for m in self.members])


# ---------------------------------------------------------------- data


def collect_dataset(env: FactorAssignment, evaluated_plans, source_env: str | None = None) -> TransitionDataset:
    plans = np.asarray(evaluated_plans, dtype=float)
    if plans.ndim == 2:
        plans = plans[None]
    if len(plans) == 0:
        raise ValueError("need at least one plan")
    # full-rate states, independent of the env's sensor refresh
    states = envsim.simulate_states([env], plans)[:, 0]  # (P, T+1, 4)
    frame_actions = np.clip(np.repeat(plans, envsim.FRAMES_PER_SEGMENT, axis=1),
                            -envsim.FORCE_LIMIT, envsim.FORCE_LIMIT)
    return TransitionDataset(
        states[:, :-1].reshape(-1, envsim.OBS_DIM),
        frame_actions.reshape(-1, envsim.ACTION_DIM),
        states[:, 1:].reshape(-1, envsim.OBS_DIM),
        source_env if source_env is not None else env.label(),
    )


def _norm_stats(arr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = arr.mean(axis=0)
    std = arr.std(axis=0)
    return mean, np.where(std > 1e-8, std, 1.0)


# ---------------------------------------------------------------- network


def init_weights(in_dim: int, out_dim: int, seeds: Sequence[int]) -> dict[str, np.ndarray]:
    """Glorot-uniform weights for a stack of ``len(seeds)`` networks."""
    sizes = [(in_dim, HIDDEN), (HIDDEN, HIDDEN), (HIDDEN, 2 * out_dim)]
    stacks: dict[str, list] = {k: [] for k in ("W1", "b1", "W2", "b2", "W3", "b3")}
    for seed in seeds:
        rng = np.random.default_rng(seed)
        for i, (fan_in, fan_out) in enumerate(sizes, start=1):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            stacks[f"W{i}"].append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            stacks[f"b{i}"].append(np.zeros(fan_out))
    return {k: np.stack(v) for k, v in stacks.items()}


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def forward(w: dict[str, np.ndarray], x: np.ndarray):
    """Stacked forward pass. ``x`` is (S, B, in); returns mean, variance, cache."""
    h1 = np.tanh(x @ w["W1"] + w["b1"][:, None, :])
    h2 = np.tanh(h1 @ w["W2"] + w["b2"][:, None, :])
    out = h2 @ w["W3"] + w["b3"][:, None, :]
    k = out.shape[-1] // 2
    mean, pre = out[..., :k], out[..., k:]
    var = _softplus(pre) + VAR_FLOOR
    return mean, var, (x, h1, h2, pre)


def nll(w, x, y) -> np.ndarray:
    """Mean Gaussian negative log likelihood per stacked network, shape (S,)."""
    mean, var, _ = forward(w, x)
    per = 0.5 * (np.log(var) + (y - mean) ** 2 / var + LOG_2PI)
    return per.sum(axis=-1).mean(axis=-1)


def nll_and_grad(w, x, y):
    mean, var, (x_in, h1, h2, pre) = forward(w, x)
    batch = x.shape[1]
    resid = y - mean
    loss = (0.5 * (np.log(var) + resid ** 2 / var + LOG_2PI)).sum(axis=-1).mean(axis=-1)

    d_mean = -resid / var / batch
    d_var = 0.5 * (1.0 / var - resid ** 2 / var ** 2) / batch
    d_pre = d_var * _sigmoid(pre)
    d_out = np.concatenate([d_mean, d_pre], axis=-1)

    t = np.swapaxes
    grads = {"W3": t(h2, 1, 2) @ d_out, "b3": d_out.sum(axis=1)}
    d_h2 = (d_out @ t(w["W3"], 1, 2)) * (1.0 - h2 ** 2)
    grads["W2"] = t(h1, 1, 2) @ d_h2
    grads["b2"] = d_h2.sum(axis=1)
    d_h1 = (d_h2 @ t(w["W2"], 1, 2)) * (1.0 - h1 ** 2)
    grads["W1"] = t(x_in, 1, 2) @ d_h1
    grads["b1"] = d_h1.sum(axis=1)
    return loss, grads


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            self.params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainingLog:
    epoch_nll: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))  # (epochs, S)


def train_stack(datasets: Sequence[TransitionDataset], seeds: Sequence[int], epochs: int = 40,
                lr: float = 1e-3, batch_size: int = 64) -> tuple[list[NetworkParams], TrainingLog]:
    """Train one network per ``(dataset, seed)`` pair in a single vectorised loop.

    All datasets must hold the same number of records. Each network shuffles
    with its own seed, so results do not depend on what it is stacked with.
    """
    if len(datasets) != len(seeds) or not datasets:
        raise ValueError("need one seed per dataset")
    n = len(datasets[0])
    if any(len(d) != n for d in datasets):
        raise ValueError("stacked datasets must have equal sizes")

    stats = []
    xs, ys = [], []
    for d in datasets:
        xm, xsd = _norm_stats(d.inputs)
        ym, ysd = _norm_stats(d.next_states)
        stats.append((xm, xsd, ym, ysd))
        xs.append((d.inputs - xm) / xsd)
        ys.append((d.next_states - ym) / ysd)
    X, Y = np.stack(xs), np.stack(ys)
    S = len(datasets)

    w = init_weights(X.shape[-1], Y.shape[-1], seeds)
    opt = Adam(w, lr=lr)
    rngs = [np.random.default_rng([int(s), 1]) for s in seeds]
    rows = np.arange(S)[:, None]
    log = np.zeros((epochs, S))

    for epoch in range(epochs):
        perms = np.stack([r.permutation(n) for r in rngs])
        total = np.zeros(S)
        for start in range(0, n, batch_size):
            idx = perms[:, start:start + batch_size]
            loss, grads = nll_and_grad(w, X[rows, idx], Y[rows, idx])
            if not np.all(np.isfinite(loss)):
                raise TrainingDivergence("training divergence")
            opt.step(grads)
            total += loss * idx.shape[1]
        log[epoch] = total / n

    nets = [
        NetworkParams({k: v[i].copy() for k, v in w.items()}, *stats[i])
        for i in range(S)
    ]
    return nets, TrainingLog(log)


def train_network(data: TransitionDataset, epochs: int = 40, lr: float = 1e-3, init_seed: int = 0,
                  batch_size: int = 64) -> NetworkParams:
    nets, _ = train_stack([data], [init_seed], epochs, lr, batch_size)
    return nets[0]


# ---------------------------------------------------------------- ensembles and divergence


def ensemble_moments(preds: Sequence[GaussianPrediction]) -> GaussianPrediction:
    """Collapse a uniform mixture of Gaussians to one with matching moments."""
    if not preds:
        raise ValueError("need at least one prediction")
    if len(preds) == 1:
        return GaussianPrediction(preds[0].mean.copy(), preds[0].variance.copy())
    means = np.stack([p.mean for p in preds])
    variances = np.stack([p.variance for p in preds])
    mu = means.mean(axis=0)
    # mean(var + mu_m^2) - mu^2, rearranged to avoid cancellation
    var = variances.mean(axis=0) + ((means - mu) ** 2).mean(axis=0)
    return GaussianPrediction(mu, var)


def gaussian_kl(p: GaussianPrediction, q: GaussianPrediction):
    """KL(p || q) for diagonal Gaussians, summed over the last axis."""
    if p.mean.shape != q.mean.shape:
        raise ValueError("dimension mismatch")
    vp, vq = p.variance, q.variance
    kl = 0.5 * (np.log(vq / vp) + (vp + (p.mean - q.mean) ** 2) / vq - 1.0)
    out = kl.sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------- detection


@dataclass
class BaselineOutcome:
    is_ootd: bool
    statistic: float
    threshold: float
    threshold_statistics: list[float]
    seed: int | None = None
    test_env: FactorAssignment | None = None

    def to_dict(self) -> dict:
        return {
            "method": "pnn",
            "is_ootd": self.is_ootd,
            "kl_statistic": self.statistic,
            "threshold": self.threshold,
            "threshold_statistics": list(self.threshold_statistics),
            "seed": self.seed,
            "test_env": None if self.test_env is None else self.test_env.to_dict(),
        }


def _seed_ints(seed, key: int, n: int) -> list[int]:
    ss = np.random.SeedSequence([int(seed), key])
    return [int(x) for x in ss.generate_state(n)]


def kl_statistic(test_model: Ensemble, train_models: Sequence[Ensemble], probe: np.ndarray) -> float:
    """Probe-averaged KL(test || train), averaged over training environments."""
    p = test_model.predict(probe)
    return float(np.mean([np.mean(gaussian_kl(p, m.predict(probe))) for m in train_models]))


def baseline_detect(test_env: FactorAssignment, training_envs: Sequence[FactorAssignment], plans,
                    threshold_seeds: int | None = None, detect_seed: int = 0,
                    config: PNNConfig = PNNConfig(), unseen_factor: str | None = None,
                    unseen_default: float | None = None,
                    threshold_plans: Sequence | None = None) -> BaselineOutcome:
    """Flag ``test_env`` when its learned dynamics drift past the in-distribution KL level.

    The threshold reruns the test environment with the unseen factor restored
    to ``unseen_default``, each time under a held-out seed (fresh weight
    initialisation, and fresh data when ``threshold_plans`` supplies one plan
    set per seed), and averages the resulting statistics.
    """
    if len(training_envs) < 1:
        raise ValueError("need at least one training environment")
    n_thresh = config.threshold_seeds if threshold_seeds is None else threshold_seeds
    M = config.ensemble_size
    plans = np.asarray(plans, dtype=float)

    reference = test_env
    if unseen_factor is not None:
        default = envsim.FACTOR_SPECS[unseen_factor].default_value if unseen_default is None else unseen_default
        reference = test_env.with_value(unseen_factor, default)

    data_seed = _seed_ints(detect_seed, 0, 1)[0]
    datasets = [collect_dataset(e, plans).subsample(config.max_records, data_seed)
                for e in [*training_envs, test_env]]
    for t in range(n_thresh):
        t_plans = plans if threshold_plans is None else np.asarray(threshold_plans[t], dtype=float)
        t_seed = _seed_ints(detect_seed, 100 + t, 1)[0]
        datasets.append(collect_dataset(reference, t_plans).subsample(config.max_records, t_seed))

    # equal budgets: trim to the smallest dataset
    n_min = min(len(d) for d in datasets)
    datasets = [d.subsample(n_min, data_seed) for d in datasets]

    n_models = len(datasets)
    init_seeds = _seed_ints(detect_seed, 1, n_models * M)
    stacked = [d for d in datasets for _ in range(M)]
    nets, _ = train_stack(stacked, init_seeds, config.epochs, config.lr, config.batch_size)
    ensembles = [Ensemble(nets[i * M:(i + 1) * M], datasets[i].source_env) for i in range(n_models)]

    n_train = len(training_envs)
    train_models = ensembles[:n_train]
    test_model = ensembles[n_train]
    threshold_models = ensembles[n_train + 1:]

    pooled = np.concatenate([d.inputs for d in datasets[:n_train + 1]])
    probe_rng = np.random.default_rng(_seed_ints(detect_seed, 2, 1)[0])
    probe = pooled[probe_rng.integers(0, len(pooled), size=config.probe_size)]

    statistic = kl_statistic(test_model, train_models, probe)
    thresh_stats = [kl_statistic(m, train_models, probe) for m in threshold_models]
    threshold = float(np.mean(thresh_stats)) if thresh_stats else 0.0
    return BaselineOutcome(statistic > threshold, statistic, threshold, thresh_stats, detect_seed, test_env)
