"""Tests for the synthetic task substrate and CSV ingestion."""

import math

import numpy as np
import pytest

from learn2help.data import (
    Dataset,
    GaussianMixtureTask,
    LabeledSample,
    default_task,
    load_csv,
    posterior_eta,
    posterior_eta_complement,
    rotated_task,
    sample_task,
    save_csv,
    split,
)
from learn2help.errors import ConfigError, IngestionError


def _random_task(rng, k=2):
    mp = rng.normal(size=k)
    mn = rng.normal(size=k)
    a = rng.normal(size=(k, k))
    b = rng.normal(size=(k, k))
    return GaussianMixtureTask(
        prior_pos=float(rng.uniform(0.1, 0.9)),
        mean_pos=mp, mean_neg=mn,
        cov_pos=a @ a.T + 0.2 * np.eye(k),
        cov_neg=b @ b.T + 0.2 * np.eye(k),
    )


class TestSampling:
    def test_shape_and_label_domain(self):
        ds = sample_task(default_task(), n=4, seed=7)
        assert len(ds) == 4 and ds.dim == 2
        assert set(np.unique(ds.y)) <= {-1, 1}
        assert np.all(np.isfinite(ds.X))

    def test_symmetric_task_balanced_labels(self):
        task = GaussianMixtureTask(0.5, np.zeros(2), np.zeros(2), np.eye(2), np.eye(2))
        ds = sample_task(task, n=10_000, seed=3)
        assert abs(np.mean(ds.y == 1) - 0.5) < 0.02

    def test_prior_fraction_binomial_bound(self):
        # 3 binomial standard errors at pi=0.9, n=1e4 is 3*sqrt(.09/1e4)=0.009
        task = GaussianMixtureTask(0.9, np.array([1.0, 0.0]), np.array([-1.0, 0.0]),
                                   np.eye(2), np.eye(2))
        ds = sample_task(task, n=10_000, seed=5)
        assert abs(np.mean(ds.y == 1) - 0.9) < 0.01

    def test_prior_concentration_random_tasks(self):
        rng = np.random.default_rng(0)
        for i in range(5):
            task = _random_task(rng)
            ds = sample_task(task, n=100_000, seed=50 + i)
            se = math.sqrt(task.prior_pos * (1 - task.prior_pos) / len(ds))
            assert abs(np.mean(ds.y == 1) - task.prior_pos) <= 3 * se

    def test_deterministic_given_seed(self):
        a = sample_task(default_task(), 100, seed=11)
        b = sample_task(default_task(), 100, seed=11)
        assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)

    def test_nonpositive_count_rejected(self):
        with pytest.raises(ConfigError):
            sample_task(default_task(), 0, seed=1)

    def test_bad_covariance_rejected(self):
        with pytest.raises(ConfigError, match="positive-definite"):
            GaussianMixtureTask(0.5, np.zeros(2), np.zeros(2),
                                np.array([[1.0, 2.0], [2.0, 1.0]]), np.eye(2))
        with pytest.raises(ConfigError, match="symmetric"):
            GaussianMixtureTask(0.5, np.zeros(2), np.zeros(2),
                                np.array([[1.0, 0.5], [0.0, 1.0]]), np.eye(2))

    def test_degenerate_prior_rejected(self):
        with pytest.raises(ConfigError):
            GaussianMixtureTask(1.0, np.zeros(2), np.zeros(2), np.eye(2), np.eye(2))


class TestPosterior:
    def test_identical_classes_give_prior(self):
        task = GaussianMixtureTask(0.5, np.zeros(2), np.zeros(2), np.eye(2), np.eye(2))
        for x in ([0.0, 0.0], [3.0, -2.0], [100.0, 100.0]):
            assert posterior_eta(task, np.array(x)) == pytest.approx(0.5, abs=1e-12)

    def test_equidistant_point_is_half(self):
        task = default_task()
        assert posterior_eta(task, np.array([0.0, 7.3])) == pytest.approx(0.5, abs=1e-12)

    def test_one_dimensional_value_against_quadrature(self):
        """Bayes' rule integrated numerically over a small window around x
        must agree with the closed-form posterior."""
        task = GaussianMixtureTask(0.5, np.array([1.0]), np.array([-1.0]),
                                   np.array([[1.0]]), np.array([[1.0]]))
        x = 1.0
        delta = 1e-4
        grid = np.linspace(x - delta, x + delta, 201)

        def normal_pdf(t, mu):
            return np.exp(-0.5 * (t - mu) ** 2) / math.sqrt(2 * math.pi)

        joint_pos = 0.5 * np.mean(normal_pdf(grid, 1.0))
        joint_neg = 0.5 * np.mean(normal_pdf(grid, -1.0))
        oracle = joint_pos / (joint_pos + joint_neg)
        got = posterior_eta(task, np.array([x]))
        assert got == pytest.approx(oracle, abs=1e-6)
        assert got == pytest.approx(1.0 / (1.0 + math.exp(-2.0)), abs=1e-12)

    def test_complement_sums_to_one(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            task = _random_task(rng)
            X = rng.normal(scale=3.0, size=(50, 2))
            total = posterior_eta(task, X) + posterior_eta_complement(task, X)
            np.testing.assert_allclose(total, 1.0, atol=1e-12)

    def test_far_point_stays_finite_and_in_range(self):
        task = default_task()
        eta = posterior_eta(task, np.array([1e8, -1e8]))
        assert 0.0 <= eta <= 1.0

    def test_batch_matches_single(self):
        task = default_task()
        X = np.random.default_rng(2).normal(size=(20, 2))
        batch = posterior_eta(task, X)
        singles = np.array([posterior_eta(task, x) for x in X])
        np.testing.assert_allclose(batch, singles, rtol=0, atol=0)


class TestCsv:
    def test_small_file_roundtrip_count(self, tmp_path):
        path = tmp_path / "two.csv"
        path.write_text("f0,f1,y\n0.25,-1.5,1\n2.0,3.5,-1\n")
        ds = load_csv(path)
        assert len(ds) == 2 and ds.dim == 2
        assert list(ds.y) == [1, -1]

    def test_bad_label_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("f0,f1,y\n0.0,0.0,1\n0.0,0.0,0\n")
        with pytest.raises(IngestionError, match="line 3"):
            load_csv(path)

    def test_ragged_row_names_line(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("f0,f1,y\n0.0,0.0,1\n0.0,1\n")
        with pytest.raises(IngestionError, match="line 3"):
            load_csv(path)

    def test_non_numeric_cell_names_line(self, tmp_path):
        path = tmp_path / "text.csv"
        path.write_text("f0,f1,y\nhello,0.0,1\n")
        with pytest.raises(IngestionError, match="line 2"):
            load_csv(path)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "hdr.csv"
        path.write_text("a,b,y\n0.0,0.0,1\n")
        with pytest.raises(IngestionError, match="line 1"):
            load_csv(path)

    def test_roundtrip_bitwise(self, tmp_path):
        ds = sample_task(default_task(), 200, seed=9)
        path = tmp_path / "roundtrip.csv"
        save_csv(ds, path)
        back = load_csv(path)
        assert np.array_equal(ds.X, back.X)
        assert np.array_equal(ds.y, back.y)


class TestSplit:
    def test_sizes(self):
        ds = sample_task(default_task(), 10, seed=1)
        a, b = split(ds, 0.8, seed=2)
        assert (len(a), len(b)) == (8, 2)

    def test_deterministic(self):
        ds = sample_task(default_task(), 50, seed=1)
        a1, b1 = split(ds, 0.6, seed=4)
        a2, b2 = split(ds, 0.6, seed=4)
        assert np.array_equal(a1.X, a2.X) and np.array_equal(b1.X, b2.X)

    def test_union_is_original_multiset(self):
        ds = sample_task(default_task(), 33, seed=1)
        a, b = split(ds, 0.4, seed=8)
        merged = np.vstack([np.column_stack([a.X, a.y]), np.column_stack([b.X, b.y])])
        original = np.column_stack([ds.X, ds.y])
        key = lambda m: m[np.lexsort(m.T)]
        assert np.array_equal(key(merged), key(original))

    def test_fraction_out_of_range(self):
        ds = sample_task(default_task(), 10, seed=1)
        for frac in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(ConfigError):
                split(ds, frac, seed=0)


class TestTypesAndImmutability:
    def test_labeled_sample_validation(self):
        with pytest.raises(ConfigError):
            LabeledSample(np.array([1.0, np.inf]), 1)
        with pytest.raises(ConfigError):
            LabeledSample(np.array([1.0]), 0)

    def test_dataset_rejects_bad_labels(self):
        with pytest.raises(ConfigError):
            Dataset(np.zeros((2, 2)), np.array([1, 2]))

    def test_dataset_arrays_read_only(self):
        ds = sample_task(default_task(), 5, seed=1)
        with pytest.raises(ValueError):
            ds.X[0, 0] = 99.0
        with pytest.raises(ValueError):
            ds.y[0] = -1

    def test_from_samples_dimension_check(self):
        good = [LabeledSample(np.zeros(2), 1), LabeledSample(np.ones(2), -1)]
        assert len(Dataset.from_samples(good)) == 2
        bad = [LabeledSample(np.zeros(2), 1), LabeledSample(np.zeros(3), -1)]
        with pytest.raises(ConfigError):
            Dataset.from_samples(bad)

    def test_rotation_preserves_posterior_geometry(self):
        task = default_task()
        rot = rotated_task(task, 90.0)
        # The rotated posterior at a rotated point equals the original's.
        x = np.array([0.7, -0.3])
        x_rot = np.array([0.3, 0.7])  # 90 degree rotation of x
        assert posterior_eta(rot, x_rot) == pytest.approx(posterior_eta(task, x), abs=1e-12)
