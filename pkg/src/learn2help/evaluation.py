"""Inference rule, metrics, baseline rejectors, cost sweeps and the
risk-gap convergence diagnostic.

Coverage throughout means the fraction of inputs deferred to the expert.
Curve points from different methods are compared at matched coverage by
linear interpolation, since each method hits coverage at different knob
values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, GaussianMixtureTask, sample_task
from .errors import ConfigError, EstimationError
from .losses import CalibrationSpec, CostSpec, generalized_loss_batch
from .models import FixedClient, Scorer, SgdConfig, client_scores, forward, forward_batch, logistic
from .training import HelpSystem, train_help, train_rejector_only

__all__ = [
    "EvalReport",
    "CurvePoint",
    "METHODS",
    "predict",
    "predict_batch",
    "evaluate",
    "accuracy",
    "confidence_baseline_curve",
    "random_baseline_curve",
    "cost_sweep",
    "risk_gap_slope",
    "accuracy_at_coverage",
]

METHODS = frozenset({
    "learn2help_joint",
    "learn2help_rejector_only",
    "confidence_sigmoid",
    "confidence_distance",
    "random",
})


@dataclass(frozen=True)
class EvalReport:
    """Aggregate metrics plus the four cross-partition accuracies.

    A partition with no members reports None for its accuracies rather
    than a fabricated 0/0 value.
    """

    accuracy: float
    coverage: float
    generalized_risk: float
    client_acc_on_kept: float | None
    client_acc_on_deferred: float | None
    expert_acc_on_kept: float | None
    expert_acc_on_deferred: float | None
    n: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "coverage": self.coverage,
            "generalized_risk": self.generalized_risk,
            "client_acc_on_kept": self.client_acc_on_kept,
            "client_acc_on_deferred": self.client_acc_on_deferred,
            "expert_acc_on_kept": self.expert_acc_on_kept,
            "expert_acc_on_deferred": self.expert_acc_on_deferred,
            "n": self.n,
        }


@dataclass(frozen=True)
class CurvePoint:
    """One (knob, coverage, accuracy) measurement for a named method."""

    knob: float
    accuracy: float
    coverage: float
    method: str

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method tag {self.method!r}")


def _label(scores) -> np.ndarray:
    """Deterministic score-to-label rule: positive scores vote +1."""
    return np.where(np.asarray(scores) > 0.0, 1, -1)


def predict(sys: HelpSystem, x) -> tuple[int, bool]:
    """Route one input: the rejector decides first, and the client scorer
    is evaluated only when the input is kept local."""
    r_score, _ = forward(sys.rejector, x)
    if r_score <= 0.0:
        e_score, _ = forward(sys.expert, x)
        return int(_label(e_score)), True
    m_score, _ = forward(sys.client.scorer, x)
    return int(_label(m_score)), False


def predict_batch(sys: HelpSystem, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized predict; the client scorer only ever sees the kept rows."""
    r_sc = forward_batch(sys.rejector, X)
    deferred = r_sc <= 0.0
    labels = np.empty(X.shape[0], dtype=np.int64)
    if deferred.any():
        labels[deferred] = _label(forward_batch(sys.expert, X[deferred]))
    kept = ~deferred
    if kept.any():
        labels[kept] = _label(forward_batch(sys.client.scorer, X[kept]))
    return labels, deferred


def _partition_accuracy(correct: np.ndarray, mask: np.ndarray) -> float | None:
    if not mask.any():
        return None
    return float(np.mean(correct[mask]))


def evaluate(sys: HelpSystem, ds: Dataset, costs: CostSpec) -> EvalReport:
    """Exact empirical means of correctness, deferral and generalized loss,
    plus both models' accuracies on both sides of the deferral split."""
    m_sc = client_scores(sys.client, ds.X)
    e_sc = forward_batch(sys.expert, ds.X)
    r_sc = forward_batch(sys.rejector, ds.X)
    deferred = r_sc <= 0.0
    client_correct = _label(m_sc) == ds.y
    expert_correct = _label(e_sc) == ds.y
    system_correct = np.where(deferred, expert_correct, client_correct)
    losses = generalized_loss_batch(m_sc, e_sc, r_sc, ds.y, costs)
    return EvalReport(
        accuracy=float(np.mean(system_correct)),
        coverage=float(np.mean(deferred)),
        generalized_risk=float(np.mean(losses)),
        client_acc_on_kept=_partition_accuracy(client_correct, ~deferred),
        client_acc_on_deferred=_partition_accuracy(client_correct, deferred),
        expert_acc_on_kept=_partition_accuracy(expert_correct, ~deferred),
        expert_acc_on_deferred=_partition_accuracy(expert_correct, deferred),
        n=len(ds),
    )


def accuracy(scorer: Scorer, ds: Dataset) -> float:
    """Plain accuracy of one scorer used alone."""
    return float(np.mean(_label(forward_batch(scorer, ds.X)) == ds.y))


def _mixture_accuracy(client: FixedClient, expert: Scorer, ds: Dataset,
                      deferred: np.ndarray) -> tuple[float, float]:
    client_correct = _label(client_scores(client, ds.X)) == ds.y
    expert_correct = _label(forward_batch(expert, ds.X)) == ds.y
    acc = float(np.mean(np.where(deferred, expert_correct, client_correct)))
    return acc, float(np.mean(deferred))


def confidence_baseline_curve(client: FixedClient, expert: Scorer, ds: Dataset,
                              thresholds, variant: str) -> list[CurvePoint]:
    """Defer by thresholding the client's own confidence.

    sigmoid variant: defer when |q_hat - 1/2| < t (low-margin inputs).
    distance variant: defer when q_hat * (1 - q_hat) > t (high-ambiguity
    inputs, computed on the logistic-squashed score).

    The two variants rank inputs identically; t_dist = 1/4 - t_sig^2 maps
    one threshold scale onto the other.
    """
    if variant not in ("sigmoid", "distance"):
        raise ConfigError(f"variant must be 'sigmoid' or 'distance', got {variant!r}")
    thresholds = list(thresholds)
    if sorted(thresholds) != thresholds:
        raise ConfigError("thresholds must be sorted ascending")
    q_hat = logistic(client_scores(client, ds.X))
    method = "confidence_sigmoid" if variant == "sigmoid" else "confidence_distance"
    points = []
    for t in thresholds:
        if variant == "sigmoid":
            deferred = np.abs(q_hat - 0.5) < t
        else:
            deferred = q_hat * (1.0 - q_hat) > t
        acc, cov = _mixture_accuracy(client, expert, ds, deferred)
        points.append(CurvePoint(knob=float(t), accuracy=acc, coverage=cov, method=method))
    return points


def random_baseline_curve(client: FixedClient, expert: Scorer, ds: Dataset,
                          rates, seed: int) -> list[CurvePoint]:
    """Defer each sample independently with the given probability."""
    rates = list(rates)
    if any(not (0.0 <= r <= 1.0) for r in rates):
        raise ConfigError("rates must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    points = []
    for rate in rates:
        deferred = rng.random(len(ds)) < rate
        acc, cov = _mixture_accuracy(client, expert, ds, deferred)
        points.append(CurvePoint(knob=float(rate), accuracy=acc, coverage=cov, method="random"))
    return points


def cost_sweep(task: GaussianMixtureTask, client: FixedClient, ce_values,
               c1: float, calib: CalibrationSpec, cfg: SgdConfig,
               n_train: int = 5000, n_test: int = 10000,
               rejector_arch=None, expert_arch=None,
               rejector_only_expert: Scorer | None = None,
               ) -> tuple[list[CurvePoint], list[EvalReport]]:
    """One full joint training and evaluation per deferral cost.

    Train and test sets are drawn once and shared across the sweep; each
    run gets a fresh training seed. Pass rejector_only_expert to sweep the
    rejector-only arm against a frozen expert instead.
    """
    ce_values = [float(c) for c in ce_values]
    if not ce_values:
        raise ConfigError("ce_values must be nonempty")
    seeds = np.random.SeedSequence(cfg.seed).spawn(2 + len(ce_values))
    train_seed = int(seeds[0].generate_state(1)[0])
    test_seed = int(seeds[1].generate_state(1)[0])
    train_ds = sample_task(task, n_train, train_seed)
    test_ds = sample_task(task, n_test, test_seed)
    method = "learn2help_joint" if rejector_only_expert is None else "learn2help_rejector_only"
    points, reports = [], []
    for ce, child in zip(ce_values, seeds[2:]):
        costs = CostSpec(c1, ce)
        run_cfg = replace(cfg, seed=int(child.generate_state(1)[0]))
        if rejector_only_expert is None:
            system = train_help(train_ds, client, costs, calib, run_cfg,
                                rejector_arch, expert_arch)
        else:
            system = train_rejector_only(train_ds, client, rejector_only_expert,
                                         costs, calib, run_cfg, rejector_arch)
        report = evaluate(system, test_ds, costs)
        points.append(CurvePoint(knob=ce, accuracy=report.accuracy,
                                 coverage=report.coverage, method=method))
        reports.append(report)
    return points, reports


def risk_gap_slope(task: GaussianMixtureTask, client: FixedClient, costs: CostSpec,
                   calib: CalibrationSpec, cfg: SgdConfig, n_values, repeats: int,
                   n_holdout: int = 200_000, rejector_arch=None, expert_arch=None,
                   ) -> tuple[float, list[tuple[int, float]]]:
    """Least-squares slope of log(mean |train risk - held-out risk|) against
    log(n) for jointly trained systems.

    Gaps are averaged over the repeats at each n before taking logs; an n
    whose mean gap is exactly zero is excluded, and fewer than three
    surviving points is an error rather than a fabricated slope.
    """
    n_values = [int(n) for n in n_values]
    if len(n_values) < 3 or sorted(n_values) != n_values or len(set(n_values)) != len(n_values):
        raise ConfigError("n_values must be at least 3 strictly increasing sizes")
    if repeats < 3:
        raise ConfigError(f"repeats must be >= 3, got {repeats}")
    seeds = np.random.SeedSequence(cfg.seed).spawn(1 + len(n_values) * repeats)
    holdout = sample_task(task, n_holdout, int(seeds[0].generate_state(1)[0]))
    rows = []
    k = 1
    for n in n_values:
        gaps = []
        for _ in range(repeats):
            child = int(seeds[k].generate_state(1)[0])
            k += 1
            train_ds = sample_task(task, n, child)
            run_cfg = replace(cfg, seed=child)
            system = train_help(train_ds, client, costs, calib, run_cfg,
                                rejector_arch, expert_arch)
            train_risk = evaluate(system, train_ds, costs).generalized_risk
            test_risk = evaluate(system, holdout, costs).generalized_risk
            gaps.append(abs(train_risk - test_risk))
        rows.append((n, float(np.mean(gaps))))
    usable = [(n, g) for n, g in rows if g > 0.0]
    if len(usable) < 3:
        raise EstimationError(
            f"only {len(usable)} of {len(rows)} sizes had a nonzero risk gap; "
            "cannot fit a convergence slope"
        )
    log_n = np.log([n for n, _ in usable])
    log_gap = np.log([g for _, g in usable])
    slope = float(np.polyfit(log_n, log_gap, 1)[0])
    return slope, rows


def accuracy_at_coverage(points, coverage: float) -> float:
    """Linearly interpolate a curve's accuracy at the requested coverage.

    Points may hit coverage in any order; they are sorted and duplicate
    coverages averaged before interpolation. Requesting a coverage outside
    the curve's observed range is a contract violation, not extrapolation.
    """
    cov = np.array([p.coverage for p in points], dtype=float)
    acc = np.array([p.accuracy for p in points], dtype=float)
    if cov.size == 0:
        raise ConfigError("cannot interpolate an empty curve")
    order = np.argsort(cov)
    cov, acc = cov[order], acc[order]
    uniq, inverse = np.unique(cov, return_inverse=True)
    mean_acc = np.zeros_like(uniq)
    counts = np.zeros_like(uniq)
    np.add.at(mean_acc, inverse, acc)
    np.add.at(counts, inverse, 1.0)
    mean_acc /= counts
    if not (uniq[0] <= coverage <= uniq[-1]):
        raise ConfigError(
            f"coverage {coverage} outside the curve's range [{uniq[0]}, {uniq[-1]}]"
        )
    return float(np.interp(coverage, uniq, mean_acc))
