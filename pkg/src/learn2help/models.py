"""Differentiable scorers (linear / small MLP) with explicit forward and
backward passes, plus the frozen legacy client wrapper.

Scorers keep their weights in one flat float64 vector so that SGD updates,
checkpointing and finite-difference gradient checks all operate on a single
array. A forward pass returns a tape holding every layer input and
pre-activation; the backward pass replays the tape to produce exact
parameter gradients for the realized architecture.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError

__all__ = [
    "Architecture",
    "Scorer",
    "Tape",
    "FixedClient",
    "SgdConfig",
    "init_scorer",
    "forward",
    "forward_batch",
    "backward",
    "sgd_step",
    "logistic",
    "client_confidence",
    "client_scores",
    "save_scorer",
    "load_scorer",
    "default_client_arch",
    "default_rejector_arch",
    "default_expert_arch",
]

_ACTIVATIONS = ("relu", "none")


@dataclass(frozen=True)
class Architecture:
    """Layer widths (input, hidden..., 1) and the hidden activation.

    activation "none" stacks affine layers without a nonlinearity, which is
    equivalent in capacity to a linear model; it exists to mirror legacy
    clients built from purely affine layers.
    """

    widths: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2:
            raise ConfigError("architecture needs at least input and output widths")
        if any(w <= 0 for w in widths):
            raise ConfigError(f"zero or negative layer width in {widths}")
        if widths[-1] != 1:
            raise ConfigError("scorers emit a single real score; last width must be 1")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"activation must be one of {_ACTIVATIONS}")
        object.__setattr__(self, "widths", widths)

    @staticmethod
    def linear(k: int) -> "Architecture":
        return Architecture((k, 1), "none")

    @staticmethod
    def mlp(widths, activation: str = "relu") -> "Architecture":
        return Architecture(tuple(widths), activation)

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def param_count(self) -> int:
        return sum(fi * fo + fo for fi, fo in zip(self.widths[:-1], self.widths[1:]))

    def layer_slices(self) -> list[tuple[slice, slice, int, int]]:
        """(weight slice, bias slice, fan_in, fan_out) per layer within the
        flat parameter vector; weights are stored row-major, biases follow."""
        out = []
        offset = 0
        for fi, fo in zip(self.widths[:-1], self.widths[1:]):
            w = slice(offset, offset + fi * fo)
            b = slice(offset + fi * fo, offset + fi * fo + fo)
            out.append((w, b, fi, fo))
            offset = b.stop
        return out


def default_client_arch(k: int) -> Architecture:
    """Three affine layers with no nonlinearity: a legacy, linear-capacity client."""
    return Architecture((k, 8, 8, 1), "none")


def default_rejector_arch(k: int) -> Architecture:
    """Two fully connected layers: a cheap rule the client can evaluate fast."""
    return Architecture((k, 16, 1), "relu")


def default_expert_arch(k: int) -> Architecture:
    """Three ReLU layers, wider than the client: the higher-capacity server model."""
    return Architecture((k, 32, 32, 1), "relu")


class Scorer:
    """Parametric map R^k -> R with parameters in one flat vector."""

    def __init__(self, arch: Architecture, params: np.ndarray):
        params = np.array(params, dtype=float)
        if params.shape != (arch.param_count,):
            raise ConfigError(
                f"parameter vector has length {params.size}, "
                f"architecture needs {arch.param_count}"
            )
        self.arch = arch
        self.params = params
        self._version = 0

    def copy(self) -> "Scorer":
        return Scorer(self.arch, self.params.copy())

    def __repr__(self) -> str:
        return f"Scorer({self.arch.widths}, {self.arch.activation!r})"


@dataclass
class Tape:
    """Activation record of one forward pass; consumed by backward()."""

    scorer: Scorer
    version: int
    inputs: list = field(default_factory=list)  # layer inputs a_0 .. a_{L-1}
    preacts: list = field(default_factory=list)  # pre-activations z_1 .. z_L


def init_scorer(arch: Architecture, seed: int) -> Scorer:
    """Weights uniform on [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero."""
    rng = np.random.default_rng(seed)
    params = np.empty(arch.param_count)
    for w, b, fi, _fo in arch.layer_slices():
        bound = 1.0 / math.sqrt(fi)
        params[w] = rng.uniform(-bound, bound, size=w.stop - w.start)
        params[b] = 0.0
    return Scorer(arch, params)


def forward(scorer: Scorer, x) -> tuple[float, Tape]:
    """Score a single input and record the tape needed for exact gradients."""
    a = np.asarray(x, dtype=float)
    if a.shape != (scorer.arch.input_dim,):
        raise ContractError(
            f"input has shape {a.shape}, scorer expects ({scorer.arch.input_dim},)"
        )
    tape = Tape(scorer=scorer, version=scorer._version)
    relu = scorer.arch.activation == "relu"
    slices = scorer.arch.layer_slices()
    for i, (w, b, fi, fo) in enumerate(slices):
        tape.inputs.append(a)
        z = a @ scorer.params[w].reshape(fi, fo) + scorer.params[b]
        tape.preacts.append(z)
        if i < len(slices) - 1 and relu:
            a = np.maximum(z, 0.0)
        else:
            a = z
    return float(a[0]), tape


def forward_batch(scorer: Scorer, X: np.ndarray) -> np.ndarray:
    """Scores for every row of an (m, k) matrix (no tape; inference only)."""
    a = np.asarray(X, dtype=float)
    if a.ndim != 2 or a.shape[1] != scorer.arch.input_dim:
        raise ContractError(
            f"input has shape {a.shape}, scorer expects (m, {scorer.arch.input_dim})"
        )
    relu = scorer.arch.activation == "relu"
    slices = scorer.arch.layer_slices()
    for i, (w, b, fi, fo) in enumerate(slices):
        a = a @ scorer.params[w].reshape(fi, fo) + scorer.params[b]
        if i < len(slices) - 1 and relu:
            a = np.maximum(a, 0.0)
    return a[:, 0]


def backward(scorer: Scorer, tape: Tape, upstream: float) -> np.ndarray:
    """d(upstream * score)/d(params), exact for the realized architecture.

    The tape must come from a forward pass on the same scorer with the same
    parameter version; anything else is a stale tape.
    """
    if tape.scorer is not scorer or tape.version != scorer._version:
        raise ContractError("stale tape: parameters changed since the forward pass")
    grad = np.zeros_like(scorer.params)
    relu = scorer.arch.activation == "relu"
    slices = scorer.arch.layer_slices()
    delta = np.array([float(upstream)])
    for i in range(len(slices) - 1, -1, -1):
        w, b, fi, fo = slices[i]
        a_in = tape.inputs[i]
        grad[w] = np.outer(a_in, delta).ravel()
        grad[b] = delta
        if i > 0:
            delta = scorer.params[w].reshape(fi, fo) @ delta
            if relu:
                delta = delta * (tape.preacts[i - 1] > 0.0)
    return grad


def sgd_step(scorer: Scorer, gradient: np.ndarray, lr: float) -> Scorer:
    """params <- params - lr * gradient (in place); returns the scorer."""
    gradient = np.asarray(gradient, dtype=float)
    if gradient.shape != scorer.params.shape:
        raise ContractError(
            f"gradient has length {gradient.size}, expected {scorer.params.size}"
        )
    if lr <= 0.0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    scorer.params -= lr * gradient
    scorer._version += 1
    return scorer


def logistic(z):
    """Numerically stable standard logistic; works on scalars and arrays."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return float(out) if out.ndim == 0 else out


class FixedClient:
    """Wrapper around a pre-trained scorer whose parameters never change.

    The wrapped parameter vector is a private read-only copy, so any attempt
    to mutate the legacy model raises instead of silently retraining it.
    """

    def __init__(self, scorer: Scorer):
        frozen = scorer.copy()
        frozen.params.setflags(write=False)
        self.scorer = frozen

    @property
    def arch(self) -> Architecture:
        return self.scorer.arch

    def score(self, x) -> float:
        s, _ = forward(self.scorer, x)
        return s


def client_confidence(client: FixedClient, x) -> float:
    """logistic(client score): the estimate of P(M = 1 | X = x) in (0, 1)."""
    return logistic(client.score(x))


def client_scores(client: FixedClient, X: np.ndarray) -> np.ndarray:
    return forward_batch(client.scorer, X)


@dataclass(frozen=True)
class SgdConfig:
    """Per-run SGD settings; batch_size 1 reproduces a pure per-sample loop.

    max_grad_norm bounds each update's gradient norm. The exponential
    losses grow like exp(|score|) on badly misclassified samples, so an
    unclipped per-sample step can kick the parameters arbitrarily far;
    clipping caps the step at learning_rate * max_grad_norm while leaving
    gradients near the optimum (which are O(1)) untouched.
    """

    learning_rate: float
    epochs: int
    batch_size: int = 1
    seed: int = 0
    max_grad_norm: float | None = 10.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_grad_norm is not None and self.max_grad_norm <= 0:
            raise ConfigError(f"max_grad_norm must be positive, got {self.max_grad_norm}")


def save_scorer(scorer: Scorer, path, seed: int | None = None, metadata: dict | None = None) -> None:
    """JSON checkpoint; parameters round-trip exactly through repr floats."""
    record = {
        "architecture": {
            "widths": list(scorer.arch.widths),
            "activation": scorer.arch.activation,
        },
        "params": [float(v) for v in scorer.params],
        "seed": seed,
        "metadata": metadata or {},
    }
    with open(path, "w") as fh:
        json.dump(record, fh, indent=1)
        fh.write("\n")


def load_scorer(path) -> tuple[Scorer, dict]:
    with open(path) as fh:
        record = json.load(fh)
    try:
        arch = Architecture(tuple(record["architecture"]["widths"]),
                            record["architecture"]["activation"])
        params = np.array(record["params"], dtype=float)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: malformed checkpoint: {exc}") from exc
    return Scorer(arch, params), record.get("metadata", {})
