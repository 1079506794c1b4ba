"""Ground-truth machinery on synthetic tasks: Bayes-optimal rules, the
conditional expected surrogate, its closed-form minimizers, a brute-force
minimizer that is independent of those closed forms, and Monte-Carlo risk.

Everything here works on a single conditional slice of the problem. Fixing
an input x reduces the population objective to a function of four numbers:
eta = P(Y=1|x), q = P(M=1|x), and the two costs. The brute-force minimizer
deliberately avoids the closed-form solutions so the two routes can check
each other; sign agreement between the surrogate minimizer and the Bayes
rules across an (eta, q, costs) grid is the package's main theory gate.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .data import GaussianMixtureTask, posterior_eta, sample_task
from .errors import ConfigError
from .losses import (
    EXPONENT_CLAMP,
    CalibrationSpec,
    CostSpec,
    client_error_prob,
    select_alpha,
    select_alpha_batch,
)
from .models import FixedClient, client_scores, logistic

__all__ = [
    "ConditionalPoint",
    "GridRow",
    "bayes_expert",
    "bayes_rejector",
    "posterior_cost_compare",
    "conditional_expected_surrogate",
    "closed_form_estar",
    "closed_form_rstar",
    "brute_min_conditional",
    "bayes_risk_mc",
    "calibration_sign_grid",
    "write_grid_csv",
]

# Search box for the brute-force minimizer. At +-15 with beta=2 the paired
# exponents reach the +-30 clamp exactly, so the box covers every value the
# clamped objective can distinguish.
_BOX = 15.0
_COARSE_POINTS = 61
# Ternary search: 30 * (2/3)^84 < 1e-14, far below the 1e-6 contract.
_TERNARY_ITERS = 84
_SWEEPS = 3


@dataclass(frozen=True)
class ConditionalPoint:
    """One conditional slice (eta, q, costs) with its induced client error
    probability p_err = q + eta - 2*q*eta."""

    eta: float
    q: float
    p_err: float
    costs: CostSpec

    def __post_init__(self):
        if not (0.0 <= self.eta <= 1.0) or not (0.0 <= self.q <= 1.0):
            raise ConfigError(f"eta and q must be in [0, 1], got {self.eta}, {self.q}")
        expected = client_error_prob(self.q, self.eta)
        if abs(self.p_err - expected) > 1e-12:
            raise ConfigError(
                f"p_err={self.p_err} inconsistent with (q, eta): expected {expected}"
            )

    @classmethod
    def from_eta_q(cls, eta: float, q: float, costs: CostSpec) -> "ConditionalPoint":
        return cls(eta, q, client_error_prob(q, eta), costs)


def bayes_expert(eta: float) -> int:
    """Bayes label for the expert: +1 iff eta > 1/2, -1 otherwise (the
    eta = 1/2 tie goes to -1 by convention)."""
    if not (0.0 <= eta <= 1.0):
        raise ConfigError(f"eta must be in [0, 1], got {eta}")
    return 1 if eta > 0.5 else -1


def bayes_rejector(eta: float, p_err: float, costs: CostSpec) -> float:
    """Bayes deferral statistic c1*(1/2 - |eta - 1/2|) - p_err + ce.

    Its value is the conditional cost of deferring minus the cost of
    keeping the prediction local, so deferring is optimal iff it is <= 0.
    """
    if not (0.0 <= eta <= 1.0) or not (0.0 <= p_err <= 1.0):
        raise ConfigError(f"eta and p_err must be in [0, 1], got {eta}, {p_err}")
    return costs.c1 * (0.5 - abs(eta - 0.5)) - p_err + costs.ce


def posterior_cost_compare(point: ConditionalPoint) -> str:
    """Directly compare the two conditional costs:

        local = p_err            (a kept mistake costs 1)
        defer = c1*min(eta, 1-eta) + ce

    Returns "defer" when deferring is at least as cheap (ties defer).
    Independent route to the sign of bayes_rejector.
    """
    local = point.p_err
    defer = point.costs.c1 * min(point.eta, 1.0 - point.eta) + point.costs.ce
    return "defer" if defer <= local else "local"


def _expected_surrogate_terms(eta, q, c1, ce, alpha, beta, e, r):
    """Four-outcome expansion of the conditional expected surrogate.

    Weights are the joint probabilities of (label, client answer) under
    conditional independence; each carries the surrogate value realized by
    that outcome. Broadcasts over numpy arrays in any argument.
    """
    exp_pos = np.exp(np.clip(0.5 * beta * (-e - r), -EXPONENT_CLAMP, EXPONENT_CLAMP))
    exp_neg = np.exp(np.clip(0.5 * beta * (e - r), -EXPONENT_CLAMP, EXPONENT_CLAMP))
    exp_ask = np.exp(np.clip(-r, -EXPONENT_CLAMP, EXPONENT_CLAMP))
    exp_keep = np.exp(np.clip(alpha * r, -EXPONENT_CLAMP, EXPONENT_CLAMP))
    both_pos = eta * q * (c1 * exp_pos + ce * exp_ask)
    m_only = (1.0 - eta) * q * (exp_keep + c1 * exp_neg + ce * exp_ask)
    both_neg = (1.0 - eta) * (1.0 - q) * (c1 * exp_neg + ce * exp_ask)
    y_only = eta * (1.0 - q) * (exp_keep + c1 * exp_pos + ce * exp_ask)
    return both_pos + m_only + both_neg + y_only


def conditional_expected_surrogate(point: ConditionalPoint, alpha: float, beta: float,
                                   e, r):
    """E[surrogate | X = x] at expert score e and rejector score r.

    Accepts scalars or broadcastable arrays for e and r; uses the same
    exponent clamp as the pointwise surrogate.
    """
    if alpha <= 0 or beta <= 0:
        raise ConfigError(f"alpha and beta must be positive, got {alpha}, {beta}")
    out = _expected_surrogate_terms(point.eta, point.q, point.costs.c1, point.costs.ce,
                                    alpha, beta, np.asarray(e, dtype=float),
                                    np.asarray(r, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def closed_form_estar(eta: float, beta: float) -> float:
    """Stationary expert score ln(eta / (1 - eta)) / beta, with the log
    clamped to +-EXPONENT_CLAMP so eta in {0, 1} maps to +-30/beta."""
    if not (0.0 <= eta <= 1.0):
        raise ConfigError(f"eta must be in [0, 1], got {eta}")
    if beta <= 0:
        raise ConfigError(f"beta must be positive, got {beta}")
    if eta <= 0.0:
        logit = -EXPONENT_CLAMP
    elif eta >= 1.0:
        logit = EXPONENT_CLAMP
    else:
        logit = max(-EXPONENT_CLAMP, min(EXPONENT_CLAMP, math.log(eta / (1.0 - eta))))
    return logit / beta


def closed_form_rstar(eta: float, p_err: float, costs: CostSpec, alpha: float) -> float:
    """Stationary rejector score for beta = 2:

        r* = ln((2*c1*sqrt(eta*(1-eta)) + ce) / (alpha * p_err)) / (alpha + 1)

    The log argument's extremes are clamped like every other exponent;
    p_err = 0 makes the keep-term vanish from the expected surrogate, so by
    convention the score saturates at the positive clamp (always keep).
    """
    if alpha <= 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    if not (0.0 <= eta <= 1.0) or not (0.0 <= p_err <= 1.0):
        raise ConfigError(f"eta and p_err must be in [0, 1], got {eta}, {p_err}")
    numer = 2.0 * costs.c1 * math.sqrt(eta * (1.0 - eta)) + costs.ce
    denom = alpha * p_err
    if denom <= 0.0:
        t = EXPONENT_CLAMP
    elif numer <= 0.0:
        t = -EXPONENT_CLAMP
    else:
        t = max(-EXPONENT_CLAMP, min(EXPONENT_CLAMP, math.log(numer / denom)))
    return t / (alpha + 1.0)


def _minimize_expected_surrogate(eta, q, c1, ce, alpha, beta):
    """Vectorized brute-force minimizer over the [-BOX, BOX]^2 square.

    Stage 1 scans a coarse grid; stage 2 runs coordinate descent, each
    coordinate minimized by ternary search (valid here: the objective is a
    positive combination of exponentials of affine functions, hence convex
    and unimodal along every axis inside the box). Arrays eta, q, alpha of
    shape (m,) are minimized simultaneously.
    """
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    m = eta.shape[0]

    grid = np.linspace(-_BOX, _BOX, _COARSE_POINTS)
    best_val = np.full(m, np.inf)
    best_e = np.zeros(m)
    best_r = np.zeros(m)
    for e_val in grid:
        vals = _expected_surrogate_terms(eta[:, None], q[:, None], c1, ce,
                                         alpha[:, None], beta, e_val, grid[None, :])
        idx = np.argmin(vals, axis=1)
        row_best = vals[np.arange(m), idx]
        better = row_best < best_val
        best_val = np.where(better, row_best, best_val)
        best_e = np.where(better, e_val, best_e)
        best_r = np.where(better, grid[idx], best_r)

    def ternary(fixed_other, minimize_e: bool):
        lo = np.full(m, -_BOX)
        hi = np.full(m, _BOX)
        for _ in range(_TERNARY_ITERS):
            m1 = lo + (hi - lo) / 3.0
            m2 = hi - (hi - lo) / 3.0
            if minimize_e:
                f1 = _expected_surrogate_terms(eta, q, c1, ce, alpha, beta, m1, fixed_other)
                f2 = _expected_surrogate_terms(eta, q, c1, ce, alpha, beta, m2, fixed_other)
            else:
                f1 = _expected_surrogate_terms(eta, q, c1, ce, alpha, beta, fixed_other, m1)
                f2 = _expected_surrogate_terms(eta, q, c1, ce, alpha, beta, fixed_other, m2)
            shrink_hi = f1 < f2
            hi = np.where(shrink_hi, m2, hi)
            lo = np.where(shrink_hi, lo, m1)
        return 0.5 * (lo + hi)

    for _ in range(_SWEEPS):
        best_e = ternary(best_r, minimize_e=True)
        best_r = ternary(best_e, minimize_e=False)
    return best_e, best_r


def brute_min_conditional(point: ConditionalPoint, alpha: float, beta: float) -> tuple[float, float]:
    """Minimizer of the conditional expected surrogate found without the
    closed forms: coarse grid over [-15, 15]^2, then coordinate descent to
    well below 1e-6 resolution."""
    if alpha <= 0 or beta <= 0:
        raise ConfigError(f"alpha and beta must be positive, got {alpha}, {beta}")
    e, r = _minimize_expected_surrogate(point.eta, point.q, point.costs.c1,
                                        point.costs.ce, alpha, beta)
    return float(e[0]), float(r[0])


def bayes_risk_mc(task: GaussianMixtureTask, client: FixedClient, costs: CostSpec,
                  n_mc: int, seed: int) -> float:
    """Monte-Carlo generalized risk of the Bayes pair against the task.

    For every drawn x the expert plays sign(eta - 1/2) and the deferral
    statistic is evaluated with the exact posterior eta(x) but the client's
    own confidence logistic(m(x)) standing in for q(x); the error
    probability that enters the rule is q_hat + eta - 2*q_hat*eta.
    """
    if n_mc < 1:
        raise ConfigError(f"n_mc must be >= 1, got {n_mc}")
    ds = sample_task(task, n_mc, seed)
    eta = np.atleast_1d(posterior_eta(task, ds.X))
    m = client_scores(client, ds.X)
    q_hat = logistic(m)
    p_err = q_hat + eta - 2.0 * q_hat * eta
    r_val = costs.c1 * (0.5 - np.abs(eta - 0.5)) - p_err + costs.ce
    e_label = np.where(eta > 0.5, 1, -1)
    keep = r_val > 0.0
    local_loss = (m * ds.y <= 0.0).astype(float)
    defer_loss = np.where(e_label == ds.y, costs.ce, costs.c1 + costs.ce)
    return float(np.mean(np.where(keep, local_loss, defer_loss)))


@dataclass(frozen=True)
class GridRow:
    """One verification-grid point with its minimizer and consistency flag."""

    eta: float
    q: float
    c1: float
    ce: float
    alpha: float
    e_min: float
    r_min: float
    e_bayes_sign: int
    r_bayes_value: float
    consistent: bool
    checked: bool  # False inside the boundary exclusion bands


def calibration_sign_grid(cost_list, calib: CalibrationSpec,
                          eta_values, q_values,
                          boundary_tol: float = 1e-3) -> list[GridRow]:
    """Sign-consistency sweep: for every (eta, q, costs) grid point, pick
    alpha with the three-case rule (from the exact error probability, beta
    fixed at 2), brute-force the expected-surrogate minimizer, and compare
    its signs with the Bayes rules.

    Points within boundary_tol of a decision boundary (|eta - 1/2| or the
    Bayes deferral statistic) are recorded but not checked: consistency is
    a statement about strict signs and numerical minimizers wobble on ties.
    """
    eta_values = np.asarray(eta_values, dtype=float)
    q_values = np.asarray(q_values, dtype=float)
    eta_g, q_g = np.meshgrid(eta_values, q_values, indexing="ij")
    eta_flat = eta_g.ravel()
    q_flat = q_g.ravel()
    rows: list[GridRow] = []
    for costs in cost_list:
        p_err = q_flat + eta_flat - 2.0 * q_flat * eta_flat
        alpha = select_alpha_batch(p_err, costs, calib)
        e_min, r_min = _minimize_expected_surrogate(eta_flat, q_flat, costs.c1,
                                                    costs.ce, alpha, calib.beta)
        r_bayes = costs.c1 * (0.5 - np.abs(eta_flat - 0.5)) - p_err + costs.ce
        e_sign = np.where(eta_flat > 0.5, 1, -1)
        checked = (np.abs(r_bayes) >= boundary_tol) & (np.abs(eta_flat - 0.5) >= boundary_tol)
        e_ok = (e_min > 0.0) == (e_sign > 0)
        r_ok = (r_min > 0.0) == (r_bayes > 0.0)
        consistent = ~checked | (e_ok & r_ok)
        for i in range(eta_flat.size):
            rows.append(GridRow(
                eta=float(eta_flat[i]), q=float(q_flat[i]),
                c1=costs.c1, ce=costs.ce, alpha=float(alpha[i]),
                e_min=float(e_min[i]), r_min=float(r_min[i]),
                e_bayes_sign=int(e_sign[i]), r_bayes_value=float(r_bayes[i]),
                consistent=bool(consistent[i]), checked=bool(checked[i]),
            ))
    return rows


def write_grid_csv(rows, path) -> None:
    """Export grid rows with one header row; floats use repr round-tripping."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["eta", "q", "c1", "ce", "alpha", "e_min", "r_min",
                         "e_bayes_sign", "r_bayes_value", "consistent_flag"])
        for row in rows:
            writer.writerow([
                repr(row.eta), repr(row.q), repr(row.c1), repr(row.ce),
                repr(row.alpha), repr(row.e_min), repr(row.r_min),
                str(row.e_bayes_sign), repr(row.r_bayes_value),
                str(int(row.consistent)),
            ])
