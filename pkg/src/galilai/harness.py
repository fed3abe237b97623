"""Grid experiments over (unseen, seen) factor pairs.

Training environments sweep the seen factor (nudged off the nominal grid by a
small relative offset) with every other factor at its default. Each test
environment takes one nominal seen value and one value of the unseen factor;
it is out-of-task-distribution exactly when the unseen value differs from the
default.
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from galilai import detector, envsim, pnn
from galilai.envsim import FACTOR_SPECS, FactorAssignment, FactorSpec
from galilai.planner import CEMConfig

log = logging.getLogger(__name__)

TRAIN_OFFSET = 0.04
METHODS = ("galilai", "pnn")

TOP_LEVEL_KEYS = {"seen_factor", "unseen_factor", "planner", "pnn", "seeds_per_cell", "base_seed"}
SEEN_KEYS = {"name", "values", "test_values", "train_offset"}
UNSEEN_KEYS = {"name", "values"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    seen_factor: FactorSpec
    unseen_factor: FactorSpec
    seen_values: tuple[float, ...]
    unseen_values: tuple[float, ...]
    test_seen_values: tuple[float, ...]
    seeds_per_cell: int = 10
    method: str = "galilai"
    planner: CEMConfig = CEMConfig()
    pnn: pnn.PNNConfig = pnn.PNNConfig()
    base_seed: int = 0
    train_offset: float = TRAIN_OFFSET
    output_path: str | None = None

    def __post_init__(self):
        if self.seen_factor.name == self.unseen_factor.name:
            raise ConfigError("seen and unseen factors must differ")
        if self.seeds_per_cell < 1:
            raise ConfigError("seeds_per_cell must be at least 1")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if not self.seen_values or not self.unseen_values or not self.test_seen_values:
            raise ConfigError("factor value lists must be non-empty")

    def with_method(self, method: str) -> "GridSpec":
        return _replace(self, method=method)

    def to_dict(self) -> dict:
        return {
            "seen_factor": {
                "name": self.seen_factor.name,
                "values": list(self.seen_values),
                "test_values": list(self.test_seen_values),
                "train_offset": self.train_offset,
            },
            "unseen_factor": {"name": self.unseen_factor.name, "values": list(self.unseen_values)},
            "planner": {k: v for k, v in self.planner.to_dict().items() if k != "seed"},
            "pnn": self.pnn.to_dict(),
            "seeds_per_cell": self.seeds_per_cell,
            "base_seed": self.base_seed,
            "method": self.method,
        }


def _replace(spec: GridSpec, **changes) -> GridSpec:
    kwargs = {f.name: getattr(spec, f.name) for f in fields(spec)}
    kwargs.update(changes)
    return GridSpec(**kwargs)


def _check_keys(obj: dict, allowed: set, where: str):
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _factor_entry(raw, allowed: set, where: str) -> dict:
    if isinstance(raw, str):
        raw = {"name": raw}
    if not isinstance(raw, dict) or "name" not in raw:
        raise ConfigError(f"{where} must be a factor name or an object with 'name'")
    _check_keys(raw, allowed, where)
    if raw["name"] not in FACTOR_SPECS:
        raise ConfigError(f"{where}: unknown factor {raw['name']!r}")
    return raw


def median_value(values: Sequence[float]) -> float:
    return float(np.median(np.asarray(values, dtype=float)))


def spec_from_dict(cfg: dict, method: str = "galilai") -> GridSpec:
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys(cfg, TOP_LEVEL_KEYS, "config")
    for key in ("seen_factor", "unseen_factor"):
        if key not in cfg:
            raise ConfigError(f"missing required key {key!r}")

    seen = _factor_entry(cfg["seen_factor"], SEEN_KEYS, "seen_factor")
    unseen = _factor_entry(cfg["unseen_factor"], UNSEEN_KEYS, "unseen_factor")
    seen_spec, unseen_spec = FACTOR_SPECS[seen["name"]], FACTOR_SPECS[unseen["name"]]

    seen_values = tuple(seen.get("values", seen_spec.train_range))
    unseen_values = tuple(unseen.get("values", unseen_spec.test_range))
    test_values = seen.get("test_values", "median")
    if test_values == "median":
        test_values = (median_value(seen_values),)
    elif test_values == "all":
        test_values = seen_values
    test_values = tuple(test_values)

    planner_cfg = cfg.get("planner", {})
    _check_keys(planner_cfg, {f.name for f in fields(CEMConfig)} - {"seed"}, "planner")
    pnn_cfg = cfg.get("pnn", {})
    _check_keys(pnn_cfg, {f.name for f in fields(pnn.PNNConfig)}, "pnn")

    try:
        for name, values in ((seen["name"], seen_values + test_values), (unseen["name"], unseen_values)):
            for v in values:
                envsim.DEFAULT_FACTORS.with_value(name, v)
        return GridSpec(
            seen_factor=seen_spec,
            unseen_factor=unseen_spec,
            seen_values=seen_values,
            unseen_values=unseen_values,
            test_seen_values=test_values,
            seeds_per_cell=int(cfg.get("seeds_per_cell", 10)),
            method=method,
            planner=CEMConfig(**planner_cfg),
            pnn=pnn.PNNConfig(**pnn_cfg),
            base_seed=int(cfg.get("base_seed", 0)),
            train_offset=float(seen.get("train_offset", TRAIN_OFFSET)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | os.PathLike, method: str = "galilai") -> GridSpec:
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return _replace(spec_from_dict(cfg, method), output_path=None)


# ---------------------------------------------------------------- environments


def training_values(spec: GridSpec) -> list[float]:
    if spec.seen_factor.is_integer:
        return list(spec.seen_values)
    return [round(v * (1.0 + spec.train_offset), 12) for v in spec.seen_values]


def training_envs(spec: GridSpec) -> list[FactorAssignment]:
    return envsim.make_env_set(spec.seen_factor, training_values(spec))


def test_env(spec: GridSpec, unseen_value: float, seen_value: float | None = None) -> FactorAssignment:
    if seen_value is None:
        seen_value = median_value(spec.seen_values)
    return (envsim.DEFAULT_FACTORS
            .with_value(spec.seen_factor.name, seen_value)
            .with_value(spec.unseen_factor.name, unseen_value))


def is_ground_truth_ootd(spec: GridSpec, unseen_value: float) -> bool:
    return unseen_value != spec.unseen_factor.default_value


def cell_seed(base_seed: int, i: int, j: int, s: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), i, j, s]).generate_state(1)[0])


# ---------------------------------------------------------------- cells


@dataclass
class CellResult:
    unseen_value: float
    seen_value: float
    seed: int
    ground_truth_ootd: bool
    is_ootd: bool | None = None
    error: str | None = None
    record: dict = field(default_factory=dict)

    @property
    def correct(self) -> bool | None:
        return None if self.is_ootd is None else self.is_ootd == self.ground_truth_ootd

    def to_dict(self) -> dict:
        return {
            "unseen_value": self.unseen_value,
            "seen_value": self.seen_value,
            "seed": self.seed,
            "ground_truth_ootd": self.ground_truth_ootd,
            "is_ootd": self.is_ootd,
            "error": self.error,
            "outcome": self.record,
        }


def threshold_plan_sets(spec: GridSpec, seed: int) -> list[np.ndarray]:
    """Round-1 plan sets from held-out planner seeds, one per threshold rerun."""
    envs = training_envs(spec)
    seeds = np.random.SeedSequence([int(seed), 7]).generate_state(spec.pnn.threshold_seeds)
    return [detector.round1(envs, spec.planner.with_seed(int(s))).evaluated_plans for s in seeds]


def run_cell(spec: GridSpec, unseen_value: float, seed: int, seen_value: float | None = None,
             method: str | None = None) -> CellResult:
    """One detection run. Failures are captured on the result, not raised."""
    method = method or spec.method
    if seen_value is None:
        seen_value = median_value(spec.seen_values)
    result = CellResult(float(unseen_value), float(seen_value), int(seed),
                        is_ground_truth_ootd(spec, unseen_value))
    try:
        train = training_envs(spec)
        test = test_env(spec, unseen_value, seen_value)
        if method == "galilai":
            outcome = detector.detect(train, test, spec.planner, seed)
        elif method == "pnn":
            # same round-1 planner run as the galilai method for this seed
            seed1, _ = detector.derive_seeds(seed)
            r1 = detector.round1(train, spec.planner.with_seed(seed1))
            outcome = pnn.baseline_detect(
                test, train, r1.evaluated_plans, detect_seed=seed, config=spec.pnn,
                unseen_factor=spec.unseen_factor.name,
                threshold_plans=threshold_plan_sets(spec, seed),
            )
        else:
            raise ConfigError(f"unknown method {method!r}")
        result.is_ootd = bool(outcome.is_ootd)
        result.record = outcome.to_dict()
    except Exception as exc:  # a failed cell must not abort the grid
        log.warning("cell unseen=%s seen=%s seed=%s failed: %s", unseen_value, seen_value, seed, exc)
        result.error = f"{type(exc).__name__}: {exc}"
    return result


# ---------------------------------------------------------------- grid


@dataclass
class GridResult:
    spec: dict
    unseen_values: list[float]
    seen_values: list[float]
    detections: np.ndarray  # (n_unseen, n_seen) counts
    completed: np.ndarray  # runs without error per cell
    seeds_per_cell: int
    records: list[dict] = field(default_factory=list)

    @property
    def missing(self) -> np.ndarray:
        return self.seeds_per_cell - self.completed

    def correct_counts(self) -> np.ndarray:
        default = self.spec["unseen_default"]
        out = self.detections.copy()
        for i, u in enumerate(self.unseen_values):
            if u == default:
                out[i] = self.completed[i] - self.detections[i]
        return out

    def column(self, unseen_value: float) -> np.ndarray:
        return self.detections[self.unseen_values.index(unseen_value)]

    def to_dict(self) -> dict:
        return {
            "spec": self.spec,
            "unseen_values": self.unseen_values,
            "seen_values": self.seen_values,
            "detections": self.detections.tolist(),
            "completed": self.completed.tolist(),
            "missing": self.missing.tolist(),
            "seeds_per_cell": self.seeds_per_cell,
            "records": self.records,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridResult":
        return cls(d["spec"], list(d["unseen_values"]), list(d["seen_values"]),
                   np.asarray(d["detections"], dtype=int), np.asarray(d["completed"], dtype=int),
                   int(d["seeds_per_cell"]), list(d.get("records", [])))


def _run_job(args):
    spec, i, j, s = args
    seed = cell_seed(spec.base_seed, i, j, s)
    return i, j, s, run_cell(spec, spec.unseen_values[i], seed, spec.test_seen_values[j])


def run_grid(spec: GridSpec, workers: int | None = 1) -> GridResult:
    jobs = [
        (spec, i, j, s)
        for i in range(len(spec.unseen_values))
        for j in range(len(spec.test_seen_values))
        for s in range(spec.seeds_per_cell)
    ]
    workers = workers or os.cpu_count() or 1
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(_run_job, jobs))
    else:
        done = [_run_job(job) for job in jobs]
    done.sort(key=lambda t: t[:3])

    shape = (len(spec.unseen_values), len(spec.test_seen_values))
    detections = np.zeros(shape, dtype=int)
    completed = np.zeros(shape, dtype=int)
    records = []
    for i, j, s, cell in done:
        if cell.error is None:
            completed[i, j] += 1
            detections[i, j] += int(cell.is_ootd)
        records.append({"cell": [i, j, s], **cell.to_dict()})

    meta = spec.to_dict()
    meta["unseen_default"] = spec.unseen_factor.default_value
    return GridResult(meta, [float(u) for u in spec.unseen_values],
                      [float(v) for v in spec.test_seen_values], detections, completed,
                      spec.seeds_per_cell, records)


def summarize(result: GridResult) -> list[str]:
    lines = []
    for i, u in enumerate(result.unseen_values):
        counts = " ".join(f"{c:2d}" for c in result.detections[i])
        lines.append(f"unseen={u:g}: detections [{counts}] / {result.seeds_per_cell}")
    return lines


def dumps(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True)
