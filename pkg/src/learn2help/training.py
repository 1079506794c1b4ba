"""Training loops: pre-train and freeze the client, then jointly fit the
rejector and expert on the calibrated surrogate; plus the standalone-expert
and rejector-only comparison arms.

All loops are SGD with per-sample calibration exponents; mini-batches
average the per-sample gradients, which preserves the expectation of the
per-sample update. The inner loop runs batched matrix backprop for speed;
it computes the same per-sample gradients as models.backward (the test
suite cross-checks the two routes). Every run is reproducible bit-for-bit
under a fixed seed: scorer initialization and the per-epoch reshuffle both
derive from the run seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset
from .errors import ConfigError
from .losses import (
    CalibrationSpec,
    CostSpec,
    EXPONENT_CLAMP,
    generalized_loss_batch,
    select_alpha_batch,
)
from .models import (
    Architecture,
    FixedClient,
    Scorer,
    SgdConfig,
    client_scores,
    default_client_arch,
    default_expert_arch,
    default_rejector_arch,
    forward_batch,
    init_scorer,
    logistic,
    sgd_step,
)

__all__ = [
    "EpochStats",
    "HelpSystem",
    "train_client",
    "train_expert_alone",
    "train_help",
    "train_rejector_only",
]


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_surrogate: float
    train_risk: float
    coverage: float


@dataclass
class HelpSystem:
    """The trained triple: frozen client, rejector, expert, and the costs
    they were trained under. history holds one EpochStats row per epoch."""

    client: FixedClient
    rejector: Scorer
    expert: Scorer
    costs: CostSpec
    history: list[EpochStats] = field(default_factory=list, compare=False)


def _derive_seeds(seed: int, n: int) -> list[int]:
    """n independent integer seeds derived deterministically from one."""
    states = np.random.SeedSequence(seed).spawn(n)
    return [int(s.generate_state(1)[0]) for s in states]


def _clip(grad: np.ndarray, max_norm: float | None) -> np.ndarray:
    if max_norm is None:
        return grad
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


def _forward_tapes(scorer: Scorer, X: np.ndarray):
    """Batched forward pass keeping per-layer inputs and pre-activations."""
    relu = scorer.arch.activation == "relu"
    slices = scorer.arch.layer_slices()
    inputs, preacts = [], []
    a = X
    for i, (w, b, fi, fo) in enumerate(slices):
        inputs.append(a)
        z = a @ scorer.params[w].reshape(fi, fo) + scorer.params[b]
        preacts.append(z)
        a = np.maximum(z, 0.0) if (i < len(slices) - 1 and relu) else z
    return a[:, 0], inputs, preacts


def _backward_sum(scorer: Scorer, inputs, preacts, upstream: np.ndarray) -> np.ndarray:
    """Sum over the batch of per-sample gradients d(upstream_i * score_i)/d params."""
    relu = scorer.arch.activation == "relu"
    slices = scorer.arch.layer_slices()
    grad = np.zeros_like(scorer.params)
    delta = upstream[:, None]
    for i in range(len(slices) - 1, -1, -1):
        w, b, fi, fo = slices[i]
        grad[w] = (inputs[i].T @ delta).ravel()
        grad[b] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ scorer.params[w].reshape(fi, fo).T
            if relu:
                delta = delta * (preacts[i - 1] > 0.0)
    return grad


def _exp_margin_sgd(ds: Dataset, arch: Architecture, cfg: SgdConfig) -> Scorer:
    """SGD on the exponential margin loss exp(-y * score).

    The loss exponent is clamped like the surrogate's, which also zeroes
    the gradient of badly misclassified samples past the clamp.
    """
    if len(ds) == 0:
        raise ConfigError("training needs a nonempty dataset")
    init_seed, shuffle_seed = _derive_seeds(cfg.seed, 2)
    scorer = init_scorer(arch, init_seed)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    n = len(ds)
    y_all = ds.y.astype(float)
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            y = y_all[idx]
            scores, inputs, preacts = _forward_tapes(scorer, ds.X[idx])
            z = -y * scores
            upstream = np.where(np.abs(z) < EXPONENT_CLAMP,
                                -y * np.exp(np.clip(z, -EXPONENT_CLAMP, EXPONENT_CLAMP)),
                                0.0)
            grad = _backward_sum(scorer, inputs, preacts, upstream) / idx.size
            sgd_step(scorer, _clip(grad, cfg.max_grad_norm), cfg.learning_rate)
    return scorer


def train_client(ds: Dataset, arch: Architecture | None, cfg: SgdConfig) -> FixedClient:
    """Pre-train the client on the exponential margin loss, then freeze it."""
    arch = arch or default_client_arch(ds.dim)
    return FixedClient(_exp_margin_sgd(ds, arch, cfg))


def train_expert_alone(ds: Dataset, arch: Architecture | None, cfg: SgdConfig) -> Scorer:
    """Train a standalone expert on all samples; the comparison arm where
    the expert never sees which inputs would actually be deferred."""
    arch = arch or default_expert_arch(ds.dim)
    return _exp_margin_sgd(ds, arch, cfg)


def _epoch_metrics(m_sc: np.ndarray, rejector: Scorer, expert: Scorer,
                   ds: Dataset, costs: CostSpec) -> tuple[float, float]:
    r_sc = forward_batch(rejector, ds.X)
    e_sc = forward_batch(expert, ds.X)
    losses = generalized_loss_batch(m_sc, e_sc, r_sc, ds.y, costs)
    return float(np.mean(losses)), float(np.mean(r_sc <= 0.0))


def _surrogate_terms(m_wrong, e_sc, r_sc, y, costs, alphas, beta):
    """Per-sample surrogate values and partials, vectorized.

    Matches losses.surrogate_loss / losses.surrogate_partials pointwise:
    clamped exponents, zero derivative past the clamp.
    """
    z_expert = 0.5 * beta * (-e_sc * y - r_sc)
    z_ask = -r_sc
    z_keep = alphas * r_sc
    v_expert = costs.c1 * np.exp(np.clip(z_expert, -EXPONENT_CLAMP, EXPONENT_CLAMP))
    v_ask = costs.ce * np.exp(np.clip(z_ask, -EXPONENT_CLAMP, EXPONENT_CLAMP))
    v_keep = m_wrong * np.exp(np.clip(z_keep, -EXPONENT_CLAMP, EXPONENT_CLAMP))
    g_expert = np.abs(z_expert) < EXPONENT_CLAMP
    g_ask = np.abs(z_ask) < EXPONENT_CLAMP
    g_keep = np.abs(z_keep) < EXPONENT_CLAMP
    loss = v_expert + v_ask + v_keep
    d_e = -0.5 * beta * y * v_expert * g_expert
    d_r = (-0.5 * beta * v_expert * g_expert - v_ask * g_ask
           + alphas * v_keep * g_keep)
    return loss, d_e, d_r


def _joint_loop(ds: Dataset, client: FixedClient, costs: CostSpec,
                calib: CalibrationSpec, cfg: SgdConfig,
                rejector: Scorer, expert: Scorer, update_expert: bool) -> HelpSystem:
    """Calibrated-surrogate SGD over rejector (and optionally expert). The
    client is frozen, so its scores, the per-sample error estimates and the
    calibration exponents are all precomputed once."""
    if len(ds) == 0:
        raise ConfigError("training needs a nonempty dataset")
    n = len(ds)
    y_all = ds.y.astype(float)
    m_sc = client_scores(client, ds.X)
    q_hat = logistic(m_sc)
    p_hat = np.where(y_all > 0, 1.0 - q_hat, q_hat)
    alphas_all = select_alpha_batch(p_hat, costs, calib)
    m_wrong_all = (m_sc * y_all <= 0.0).astype(float)

    (shuffle_seed,) = _derive_seeds(cfg.seed, 1)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    history: list[EpochStats] = []
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            Xb, yb = ds.X[idx], y_all[idx]
            e_sc, e_in, e_pre = _forward_tapes(expert, Xb)
            r_sc, r_in, r_pre = _forward_tapes(rejector, Xb)
            loss, d_e, d_r = _surrogate_terms(m_wrong_all[idx], e_sc, r_sc, yb,
                                              costs, alphas_all[idx], calib.beta)
            loss_sum += float(loss.sum())
            grad_r = _backward_sum(rejector, r_in, r_pre, d_r) / idx.size
            sgd_step(rejector, _clip(grad_r, cfg.max_grad_norm), cfg.learning_rate)
            if update_expert:
                grad_e = _backward_sum(expert, e_in, e_pre, d_e) / idx.size
                sgd_step(expert, _clip(grad_e, cfg.max_grad_norm), cfg.learning_rate)
        risk, coverage = _epoch_metrics(m_sc, rejector, expert, ds, costs)
        history.append(EpochStats(epoch, loss_sum / n, risk, coverage))
    return HelpSystem(client, rejector, expert, costs, history)


def train_help(ds: Dataset, client: FixedClient, costs: CostSpec,
               calib: CalibrationSpec, cfg: SgdConfig,
               rejector_arch: Architecture | None = None,
               expert_arch: Architecture | None = None) -> HelpSystem:
    """Jointly train rejector and expert with per-sample calibration.

    For each sample: estimate the client's conditional error probability
    from its confidence and the label, pick the calibration exponent by the
    three-case rule, evaluate the surrogate, and step both scorers. The
    client is never touched.
    """
    rej_seed, exp_seed, loop_seed = _derive_seeds(cfg.seed, 3)
    rejector = init_scorer(rejector_arch or default_rejector_arch(ds.dim), rej_seed)
    expert = init_scorer(expert_arch or default_expert_arch(ds.dim), exp_seed)
    loop_cfg = replace(cfg, seed=loop_seed)
    return _joint_loop(ds, client, costs, calib, loop_cfg, rejector, expert,
                       update_expert=True)


def train_rejector_only(ds: Dataset, client: FixedClient, expert: Scorer,
                        costs: CostSpec, calib: CalibrationSpec, cfg: SgdConfig,
                        rejector_arch: Architecture | None = None) -> HelpSystem:
    """Same loop as train_help but with both classifiers frozen: only the
    rejector learns, against the supplied pre-trained expert."""
    rej_seed, loop_seed = _derive_seeds(cfg.seed, 2)
    rejector = init_scorer(rejector_arch or default_rejector_arch(ds.dim), rej_seed)
    frozen_expert = expert.copy()
    loop_cfg = replace(cfg, seed=loop_seed)
    return _joint_loop(ds, client, costs, calib, loop_cfg, rejector, frozen_expert,
                       update_expert=False)
