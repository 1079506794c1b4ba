"""Experiment configuration: one JSON file per experiment, strictly
validated (unknown keys are rejected, every nested invariant is checked on
load, and error messages name the offending field)."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .data import GaussianMixtureTask
from .errors import ConfigError
from .losses import CalibrationSpec, CostSpec
from .models import Architecture

__all__ = [
    "ExperimentConfig",
    "DataSpec",
    "ClientSpec",
    "TrainSpec",
    "SweepSpec",
    "CompareSpec",
    "VerifySpec",
    "load_config",
    "parse_config",
    "config_hash",
    "default_config",
]


def default_config() -> dict:
    """Desk-scale reference experiment: a balanced 2-D Gaussian task and a
    legacy client pre-trained on a rotated copy of it, which leaves the
    client systematically (and confidently) wrong in a wedge of the plane."""
    return {
        "seed": 20240601,
        "task": {
            "prior_pos": 0.5,
            "mean_pos": [1.0, 0.0],
            "mean_neg": [-1.0, 0.0],
            "cov_pos": [[1.0, 0.0], [0.0, 1.0]],
            "cov_neg": [[1.0, 0.0], [0.0, 1.0]],
        },
        "data": {"n_train": 5000, "n_test": 10000},
        "client": {
            "architecture": {"widths": [2, 8, 8, 1], "activation": "none"},
            "pretrain": {"learning_rate": 0.01, "epochs": 1, "batch_size": 1, "n": 4000},
            "drift_rotation_deg": 75.0,
        },
        "rejector": {"architecture": {"widths": [2, 16, 1], "activation": "relu"}},
        "expert": {"architecture": {"widths": [2, 32, 32, 1], "activation": "relu"}},
        "costs": {"c1": 1.0, "ce": 0.05},
        "calibration": {"alpha1": 0.5, "alpha2": 2.0, "beta": 2.0},
        "training": {"learning_rate": 0.02, "epochs": 80, "batch_size": 8},
        "sweep": {"ce_values": [0.0, 0.05, 0.1, 0.2, 0.4, 0.8]},
        "compare": {
            "ce_values": [0.0, 0.02, 0.05, 0.1, 0.2, 0.4, 0.8],
            "thresholds": [0.02, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.49],
            "rates": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
        },
        "verify": {
            "grid_step": 0.01,
            "boundary_tol": 0.001,
            "cost_grid": [[1.0, 0.0], [1.0, 0.1], [1.0, 0.3], [0.5, 0.1]],
            "n_values": [500, 2000, 8000],
            "repeats": 5,
            "n_holdout": 200000,
            "slope_range": [-0.7, -0.3],
        },
    }


def _check_keys(section: dict, path: str, required: tuple, optional: tuple = ()) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: expected an object")
    unknown = set(section) - set(required) - set(optional)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    missing = set(required) - set(section)
    if missing:
        raise ConfigError(f"{path}: missing keys {sorted(missing)}")


def _number(section: dict, path: str, key: str):
    v = section[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}: expected a number, got {v!r}")
    return v


def _int(section: dict, path: str, key: str) -> int:
    v = section[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}.{key}: expected an integer, got {v!r}")
    return v


def _wrap(path: str, fn, *args):
    try:
        return fn(*args)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


@dataclass(frozen=True)
class DataSpec:
    n_train: int
    n_test: int
    train_csv: str | None = None
    test_csv: str | None = None


@dataclass(frozen=True)
class ClientSpec:
    arch: Architecture
    pretrain_lr: float
    pretrain_epochs: int
    pretrain_batch: int
    pretrain_n: int
    drift_rotation_deg: float


@dataclass(frozen=True)
class TrainSpec:
    learning_rate: float
    epochs: int
    batch_size: int
    max_grad_norm: float | None = 10.0


@dataclass(frozen=True)
class SweepSpec:
    ce_values: tuple


@dataclass(frozen=True)
class CompareSpec:
    ce_values: tuple
    thresholds: tuple
    rates: tuple


@dataclass(frozen=True)
class VerifySpec:
    grid_step: float
    boundary_tol: float
    cost_grid: tuple
    n_values: tuple
    repeats: int
    n_holdout: int
    slope_range: tuple


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    task: GaussianMixtureTask | None
    data: DataSpec
    client: ClientSpec
    rejector_arch: Architecture
    expert_arch: Architecture
    costs: CostSpec
    calibration: CalibrationSpec
    training: TrainSpec
    sweep: SweepSpec
    compare: CompareSpec
    verify: VerifySpec
    raw: dict


def _parse_arch(section: dict, path: str) -> Architecture:
    _check_keys(section, path, ("widths",), ("activation",))
    widths = section["widths"]
    if not isinstance(widths, list) or not all(isinstance(w, int) for w in widths):
        raise ConfigError(f"{path}.widths: expected a list of integers")
    return _wrap(f"{path}", Architecture, tuple(widths), section.get("activation", "relu"))


def _parse_task(section: dict, path: str) -> GaussianMixtureTask:
    _check_keys(section, path, ("prior_pos", "mean_pos", "mean_neg", "cov_pos", "cov_neg"))
    return _wrap(path, GaussianMixtureTask,
                 _number(section, path, "prior_pos"),
                 np.asarray(section["mean_pos"], dtype=float),
                 np.asarray(section["mean_neg"], dtype=float),
                 np.asarray(section["cov_pos"], dtype=float),
                 np.asarray(section["cov_neg"], dtype=float))


def parse_config(raw: dict) -> ExperimentConfig:
    _check_keys(raw, "config",
                ("seed", "data", "client", "rejector", "expert", "costs",
                 "calibration", "training"),
                ("task", "sweep", "compare", "verify"))
    seed = _int(raw, "config", "seed")

    task = _parse_task(raw["task"], "task") if "task" in raw else None

    d = raw["data"]
    _check_keys(d, "data", ("n_train", "n_test"), ("train_csv", "test_csv"))
    data = DataSpec(_int(d, "data", "n_train"), _int(d, "data", "n_test"),
                    d.get("train_csv"), d.get("test_csv"))
    if data.n_train < 1 or data.n_test < 1:
        raise ConfigError("data.n_train and data.n_test must be >= 1")
    if task is None and (data.train_csv is None or data.test_csv is None):
        raise ConfigError("config: need either a task or both train_csv and test_csv")

    c = raw["client"]
    _check_keys(c, "client", ("architecture", "pretrain"), ("drift_rotation_deg",))
    p = c["pretrain"]
    _check_keys(p, "client.pretrain", ("learning_rate", "epochs", "batch_size", "n"))
    client = ClientSpec(
        arch=_parse_arch(c["architecture"], "client.architecture"),
        pretrain_lr=_number(p, "client.pretrain", "learning_rate"),
        pretrain_epochs=_int(p, "client.pretrain", "epochs"),
        pretrain_batch=_int(p, "client.pretrain", "batch_size"),
        pretrain_n=_int(p, "client.pretrain", "n"),
        drift_rotation_deg=float(c.get("drift_rotation_deg", 0.0)),
    )
    if client.pretrain_lr <= 0:
        raise ConfigError("client.pretrain.learning_rate must be > 0")
    if client.pretrain_epochs < 1 or client.pretrain_batch < 1 or client.pretrain_n < 1:
        raise ConfigError("client.pretrain epochs, batch_size and n must be >= 1")
    if client.drift_rotation_deg != 0.0 and (task is None or task.dim != 2):
        raise ConfigError("client.drift_rotation_deg needs a 2-D synthetic task")

    _check_keys(raw["rejector"], "rejector", ("architecture",))
    _check_keys(raw["expert"], "expert", ("architecture",))
    rejector_arch = _parse_arch(raw["rejector"]["architecture"], "rejector.architecture")
    expert_arch = _parse_arch(raw["expert"]["architecture"], "expert.architecture")

    _check_keys(raw["costs"], "costs", ("c1", "ce"))
    costs = _wrap("costs", CostSpec, _number(raw["costs"], "costs", "c1"),
                  _number(raw["costs"], "costs", "ce"))

    _check_keys(raw["calibration"], "calibration", ("alpha1", "alpha2"), ("beta",))
    calib = _wrap("calibration", CalibrationSpec,
                  _number(raw["calibration"], "calibration", "alpha1"),
                  _number(raw["calibration"], "calibration", "alpha2"),
                  raw["calibration"].get("beta", 2.0))

    t = raw["training"]
    _check_keys(t, "training", ("learning_rate", "epochs", "batch_size"), ("max_grad_norm",))
    clip = t.get("max_grad_norm", 10.0)
    if clip is not None and (isinstance(clip, bool) or not isinstance(clip, (int, float)) or clip <= 0):
        raise ConfigError("training.max_grad_norm must be a positive number or null")
    training = TrainSpec(_number(t, "training", "learning_rate"),
                         _int(t, "training", "epochs"), _int(t, "training", "batch_size"),
                         None if clip is None else float(clip))
    if training.learning_rate <= 0 or training.epochs < 1 or training.batch_size < 1:
        raise ConfigError("training: learning_rate > 0, epochs >= 1, batch_size >= 1")

    defaults = default_config()

    s = raw.get("sweep", defaults["sweep"])
    _check_keys(s, "sweep", ("ce_values",))
    if not isinstance(s["ce_values"], list) or not s["ce_values"]:
        raise ConfigError("sweep.ce_values: expected a nonempty list of numbers")
    if any(v < 0 for v in s["ce_values"]):
        raise ConfigError("sweep.ce_values: costs must be nonnegative")
    sweep = SweepSpec(tuple(float(v) for v in s["ce_values"]))

    comp = raw.get("compare", defaults["compare"])
    _check_keys(comp, "compare", ("ce_values", "thresholds", "rates"))
    compare = CompareSpec(tuple(float(v) for v in comp["ce_values"]),
                          tuple(float(v) for v in comp["thresholds"]),
                          tuple(float(v) for v in comp["rates"]))
    if list(compare.thresholds) != sorted(compare.thresholds):
        raise ConfigError("compare.thresholds must be sorted ascending")
    if any(not (0.0 <= r <= 1.0) for r in compare.rates):
        raise ConfigError("compare.rates must lie in [0, 1]")

    v = raw.get("verify", defaults["verify"])
    _check_keys(v, "verify", (), ("grid_step", "boundary_tol", "cost_grid",
                                  "n_values", "repeats", "n_holdout", "slope_range"))
    merged = {**defaults["verify"], **v}
    cost_grid = tuple(_wrap("verify.cost_grid", CostSpec, float(c1), float(ce))
                      for c1, ce in merged["cost_grid"])
    verify = VerifySpec(float(merged["grid_step"]), float(merged["boundary_tol"]),
                        cost_grid, tuple(int(n) for n in merged["n_values"]),
                        int(merged["repeats"]), int(merged["n_holdout"]),
                        tuple(float(x) for x in merged["slope_range"]))
    if not (0.0 < verify.grid_step < 0.5):
        raise ConfigError("verify.grid_step must be in (0, 0.5)")

    return ExperimentConfig(seed=seed, task=task, data=data, client=client,
                            rejector_arch=rejector_arch, expert_arch=expert_arch,
                            costs=costs, calibration=calib, training=training,
                            sweep=sweep, compare=compare, verify=verify, raw=raw)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return parse_config(raw)


def config_hash(raw: dict) -> str:
    """Stable hash of the canonical JSON encoding of a config."""
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]
