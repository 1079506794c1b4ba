"""Synthetic two-class Gaussian tasks with closed-form posteriors, plus CSV ingestion.

The Gaussian mixture task is the ground-truth substrate for every oracle check
in this package: its class posterior eta(x) = P(Y=1 | X=x) is available in
closed form, so learned decision rules can be compared against exact Bayes
quantities instead of estimates.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, IngestionError

__all__ = [
    "LabeledSample",
    "Dataset",
    "GaussianMixtureTask",
    "sample_task",
    "posterior_eta",
    "posterior_eta_complement",
    "load_csv",
    "save_csv",
    "split",
    "default_task",
    "rotated_task",
]


@dataclass(frozen=True)
class LabeledSample:
    """One feature vector in R^k with its label in {-1, +1}."""

    x: np.ndarray
    y: int

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        if x.ndim != 1:
            raise ConfigError("sample features must be a 1-D vector")
        if not np.all(np.isfinite(x)):
            raise ConfigError("sample features must be finite")
        if self.y not in (-1, 1):
            raise ConfigError(f"label must be -1 or +1, got {self.y!r}")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", int(self.y))


class Dataset:
    """Ordered, immutable collection of samples sharing one feature dimension.

    Backed by a read-only (n, k) float matrix and an (n,) integer label
    vector; safe for concurrent read-only use.
    """

    def __init__(self, X, y):
        X = np.array(X, dtype=float)
        y = np.array(y)
        if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
            raise ConfigError("dataset needs a nonempty (n, k) feature matrix")
        if y.shape != (X.shape[0],):
            raise ConfigError("feature matrix and label vector disagree on sample count")
        if not np.all(np.isfinite(X)):
            raise ConfigError("dataset features must be finite")
        if not np.all((y == -1) | (y == 1)):
            raise ConfigError("labels must all be -1 or +1")
        self._X = X
        self._y = y.astype(np.int64)
        self._X.setflags(write=False)
        self._y.setflags(write=False)

    @classmethod
    def from_samples(cls, samples) -> "Dataset":
        samples = list(samples)
        if not samples:
            raise ConfigError("dataset needs at least one sample")
        dims = {s.x.shape[0] for s in samples}
        if len(dims) != 1:
            raise ConfigError(f"samples disagree on dimension: {sorted(dims)}")
        return cls(np.stack([s.x for s in samples]), np.array([s.y for s in samples]))

    @property
    def X(self) -> np.ndarray:
        return self._X

    @property
    def y(self) -> np.ndarray:
        return self._y

    @property
    def dim(self) -> int:
        return self._X.shape[1]

    def __len__(self) -> int:
        return self._X.shape[0]

    def __getitem__(self, i: int) -> LabeledSample:
        return LabeledSample(self._X[i], int(self._y[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __repr__(self) -> str:
        return f"Dataset(n={len(self)}, dim={self.dim})"


def _validate_spd(name: str, cov: np.ndarray) -> np.ndarray:
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ConfigError(f"{name} must be a square matrix")
    if not np.allclose(cov, cov.T, atol=1e-12):
        raise ConfigError(f"{name} must be symmetric")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ConfigError(f"{name} must be positive-definite") from exc
    return chol


@dataclass(frozen=True)
class GaussianMixtureTask:
    """Two-class population: Y=+1 w.p. prior_pos, X | Y ~ class Gaussian.

    The posterior P(Y=1 | X=x) follows from Bayes' rule on the two class
    densities and is evaluated in log space (see posterior_eta).
    """

    prior_pos: float
    mean_pos: np.ndarray
    mean_neg: np.ndarray
    cov_pos: np.ndarray
    cov_neg: np.ndarray

    def __post_init__(self):
        if not (0.0 < self.prior_pos < 1.0):
            raise ConfigError(f"prior_pos must be in (0, 1), got {self.prior_pos}")
        mp = np.array(self.mean_pos, dtype=float)
        mn = np.array(self.mean_neg, dtype=float)
        if mp.ndim != 1 or mn.shape != mp.shape:
            raise ConfigError("class means must be 1-D vectors of equal dimension")
        cp = np.array(self.cov_pos, dtype=float)
        cn = np.array(self.cov_neg, dtype=float)
        chol_p = _validate_spd("cov_pos", cp)
        chol_n = _validate_spd("cov_neg", cn)
        if cp.shape != (mp.size, mp.size) or cn.shape != (mp.size, mp.size):
            raise ConfigError("covariance shape must match mean dimension")
        for arr in (mp, mn, cp, cn):
            arr.setflags(write=False)
        object.__setattr__(self, "prior_pos", float(self.prior_pos))
        object.__setattr__(self, "mean_pos", mp)
        object.__setattr__(self, "mean_neg", mn)
        object.__setattr__(self, "cov_pos", cp)
        object.__setattr__(self, "cov_neg", cn)
        # Cached factorizations for density evaluation and sampling.
        object.__setattr__(self, "_chol_pos", chol_p)
        object.__setattr__(self, "_chol_neg", chol_n)
        object.__setattr__(self, "_prec_pos", np.linalg.inv(cp))
        object.__setattr__(self, "_prec_neg", np.linalg.inv(cn))
        object.__setattr__(self, "_logdet_pos", 2.0 * np.sum(np.log(np.diag(chol_p))))
        object.__setattr__(self, "_logdet_neg", 2.0 * np.sum(np.log(np.diag(chol_n))))

    @property
    def dim(self) -> int:
        return self.mean_pos.size

    def _log_density_diff(self, X: np.ndarray) -> np.ndarray:
        """log N_pos(x) - log N_neg(x), vectorized over rows of X."""
        dp = X - self.mean_pos
        dn = X - self.mean_neg
        qp = np.einsum("ij,jk,ik->i", dp, self._prec_pos, dp)
        qn = np.einsum("ij,jk,ik->i", dn, self._prec_neg, dn)
        return -0.5 * (qp - qn) - 0.5 * (self._logdet_pos - self._logdet_neg)


def default_task(k: int = 2, separation: float = 1.0) -> GaussianMixtureTask:
    """Desk-scale reference task: means +-separation*e1, unit isotropic
    covariance, balanced prior. Its Bayes accuracy is Phi(separation)."""
    mean = np.zeros(k)
    mean[0] = separation
    eye = np.eye(k)
    return GaussianMixtureTask(0.5, mean, -mean, eye, eye)


def rotated_task(task: GaussianMixtureTask, angle_deg: float) -> GaussianMixtureTask:
    """Rotate a 2-D task's class distributions about the origin.

    Used to emulate distribution drift: a legacy model pre-trained on the
    rotated task is systematically misaligned with the original one.
    """
    if task.dim != 2:
        raise ContractError("rotation is only defined for 2-D tasks")
    t = math.radians(angle_deg)
    rot = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
    return GaussianMixtureTask(
        task.prior_pos,
        rot @ task.mean_pos,
        rot @ task.mean_neg,
        rot @ task.cov_pos @ rot.T,
        rot @ task.cov_neg @ rot.T,
    )


def sample_task(task: GaussianMixtureTask, n: int, seed: int) -> Dataset:
    """Draw n i.i.d. samples: label from the prior, features from the class
    Gaussian. Bit-for-bit reproducible for a fixed seed."""
    if n < 1:
        raise ConfigError(f"sample count must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    pos = rng.random(n) < task.prior_pos
    z = rng.standard_normal((n, task.dim))
    x_pos = z @ task._chol_pos.T + task.mean_pos
    x_neg = z @ task._chol_neg.T + task.mean_neg
    X = np.where(pos[:, None], x_pos, x_neg)
    y = np.where(pos, 1, -1)
    return Dataset(X, y)


def posterior_eta(task: GaussianMixtureTask, x) -> float | np.ndarray:
    """P(Y = 1 | X = x) for the task, in [0, 1].

    Computed as a logistic of the prior log-odds plus the log-density
    difference, which stays finite far from both class means where the raw
    densities would underflow. If the log-odds are still non-finite (never
    the case for finite x) the prior is returned by convention.

    Accepts a single vector (returns float) or an (m, k) matrix (returns an
    (m,) array).
    """
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != task.dim:
        raise ContractError(f"input dimension {X.shape[-1]} != task dimension {task.dim}")
    log_odds = (
        math.log(task.prior_pos)
        - math.log1p(-task.prior_pos)
        + task._log_density_diff(X)
    )
    eta = np.where(
        np.isfinite(log_odds),
        1.0 / (1.0 + np.exp(-np.clip(log_odds, -745.0, 745.0))),
        task.prior_pos,
    )
    return float(eta[0]) if single else eta


def posterior_eta_complement(task: GaussianMixtureTask, x) -> float | np.ndarray:
    """P(Y = -1 | X = x), computed from the mirrored task so that it forms
    an independent route to 1 - posterior_eta."""
    mirrored = GaussianMixtureTask(
        1.0 - task.prior_pos, task.mean_neg, task.mean_pos, task.cov_neg, task.cov_pos
    )
    return posterior_eta(mirrored, x)


def _csv_header(k: int) -> list[str]:
    return [f"f{i}" for i in range(k)] + ["y"]


def save_csv(ds: Dataset, path) -> None:
    """Write a dataset with header f0,...,f{k-1},y.

    Floats are written with repr, which round-trips exactly through float().
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_csv_header(ds.dim))
        for i in range(len(ds)):
            writer.writerow([repr(float(v)) for v in ds.X[i]] + [str(int(ds.y[i]))])


def load_csv(path) -> Dataset:
    """Read a dataset written in the save_csv format, preserving row order.

    Ragged rows, non-numeric cells and labels outside {-1, 1} raise
    IngestionError naming the 1-based line number.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        k = len(header) - 1
        if k < 1 or header != _csv_header(k):
            raise IngestionError(f"{path}: line 1: expected header f0,...,f{{k-1}},y")
        rows = []
        labels = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != k + 1:
                raise IngestionError(
                    f"{path}: line {lineno}: expected {k + 1} fields, got {len(row)}"
                )
            try:
                values = [float(cell) for cell in row]
            except ValueError:
                raise IngestionError(f"{path}: line {lineno}: non-numeric cell") from None
            if values[-1] not in (-1.0, 1.0):
                raise IngestionError(
                    f"{path}: line {lineno}: label must be -1 or 1, got {row[-1]}"
                )
            rows.append(values[:-1])
            labels.append(int(values[-1]))
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    return Dataset(np.array(rows), np.array(labels))


def split(ds: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint shuffled partition with sizes (ceil(fraction*n), rest).

    Deterministic for a fixed seed; the union of the parts is exactly the
    original multiset of samples.
    """
    if not (0.0 < fraction < 1.0):
        raise ConfigError(f"split fraction must be in (0, 1), got {fraction}")
    n = len(ds)
    n_first = math.ceil(fraction * n)
    perm = np.random.default_rng(seed).permutation(n)
    first, second = perm[:n_first], perm[n_first:]
    if second.size == 0:
        raise ConfigError(f"fraction {fraction} leaves the second part empty for n={n}")
    return Dataset(ds.X[first], ds.y[first]), Dataset(ds.X[second], ds.y[second])
