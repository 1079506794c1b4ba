"""Tests for scorers: parameter layout, forward/backward exactness, SGD."""

import math

import numpy as np
import pytest

from learn2help.errors import ConfigError, ContractError
from learn2help.models import (
    Architecture,
    FixedClient,
    Scorer,
    SgdConfig,
    backward,
    client_confidence,
    forward,
    forward_batch,
    init_scorer,
    load_scorer,
    logistic,
    save_scorer,
    sgd_step,
)


def finite_difference_gradient(scorer, x, step=1e-5):
    """Central-difference gradient of the score w.r.t. every parameter."""
    grad = np.empty_like(scorer.params)
    for j in range(scorer.params.size):
        orig = scorer.params[j]
        scorer.params[j] = orig + step
        hi, _ = forward(scorer, x)
        scorer.params[j] = orig - step
        lo, _ = forward(scorer, x)
        scorer.params[j] = orig
        grad[j] = (hi - lo) / (2 * step)
    return grad


def random_case(rng):
    """Random (architecture, parameters, input), avoiding ReLU kinks so the
    finite-difference oracle stays valid."""
    archs = [
        Architecture.linear(3),
        Architecture.mlp([2, 8, 1]),
        Architecture.mlp([3, 8, 8, 1]),
        Architecture.mlp([2, 16, 16, 1]),
        Architecture.mlp([4, 6, 1], activation="none"),
    ]
    while True:
        arch = archs[rng.integers(len(archs))]
        scorer = init_scorer(arch, seed=int(rng.integers(2**31)))
        scorer.params += rng.normal(scale=0.3, size=scorer.params.shape)
        x = rng.normal(size=arch.input_dim)
        _, tape = forward(scorer, x)
        min_pre = min((np.min(np.abs(z)) for z in tape.preacts[:-1]), default=1.0)
        if arch.activation != "relu" or min_pre > 1e-3:
            return scorer, x


class TestArchitecture:
    def test_linear_param_count(self):
        assert Architecture.linear(2).param_count == 3

    def test_mlp_param_count(self):
        assert Architecture.mlp([2, 8, 1]).param_count == 2 * 8 + 8 + 8 * 1 + 1

    def test_zero_width_rejected(self):
        with pytest.raises(ConfigError):
            Architecture((2, 0, 1))

    def test_output_width_must_be_one(self):
        with pytest.raises(ConfigError):
            Architecture((2, 3))

    def test_unknown_activation_rejected(self):
        with pytest.raises(ConfigError):
            Architecture((2, 1), activation="tanh")


class TestInit:
    def test_same_seed_identical(self):
        a = init_scorer(Architecture.mlp([2, 8, 1]), seed=5)
        b = init_scorer(Architecture.mlp([2, 8, 1]), seed=5)
        assert np.array_equal(a.params, b.params)

    def test_different_seed_differs(self):
        a = init_scorer(Architecture.mlp([2, 8, 1]), seed=5)
        b = init_scorer(Architecture.mlp([2, 8, 1]), seed=6)
        assert not np.array_equal(a.params, b.params)

    def test_weight_bounds_and_zero_biases(self):
        arch = Architecture.mlp([4, 8, 1])
        s = init_scorer(arch, seed=0)
        for w, b, fi, _ in arch.layer_slices():
            bound = 1.0 / math.sqrt(fi)
            assert np.all(np.abs(s.params[w]) <= bound)
            assert np.all(s.params[b] == 0.0)


class TestForward:
    def test_zero_params_zero_score(self):
        s = Scorer(Architecture.linear(3), np.zeros(4))
        score, _ = forward(s, np.array([5.0, -2.0, 1.0]))
        assert score == 0.0

    def test_linear_arithmetic(self):
        s = Scorer(Architecture.linear(2), np.array([1.0, 2.0, 0.5]))
        score, _ = forward(s, np.array([1.0, 1.0]))
        assert score == pytest.approx(3.5, abs=0)

    def test_mlp_against_independent_matrix_evaluation(self):
        rng = np.random.default_rng(7)
        arch = Architecture.mlp([3, 5, 4, 1])
        s = init_scorer(arch, seed=1)
        s.params += rng.normal(scale=0.5, size=s.params.shape)
        x = rng.normal(size=3)
        # Re-evaluate with explicit matrices unpacked by hand.
        a = x
        for w, b, fi, fo in arch.layer_slices()[:-1]:
            a = np.maximum(a @ s.params[w].reshape(fi, fo) + s.params[b], 0.0)
        w, b, fi, fo = arch.layer_slices()[-1]
        expected = (a @ s.params[w].reshape(fi, fo) + s.params[b])[0]
        score, _ = forward(s, x)
        assert score == pytest.approx(expected, rel=0, abs=0)

    def test_dimension_mismatch(self):
        s = init_scorer(Architecture.linear(2), seed=0)
        with pytest.raises(ContractError):
            forward(s, np.array([1.0, 2.0, 3.0]))

    def test_batch_matches_single(self):
        rng = np.random.default_rng(3)
        s, _ = random_case(rng)
        X = rng.normal(size=(10, s.arch.input_dim))
        batch = forward_batch(s, X)
        singles = np.array([forward(s, x)[0] for x in X])
        np.testing.assert_allclose(batch, singles, rtol=0, atol=0)


class TestBackward:
    def test_linear_gradient(self):
        s = Scorer(Architecture.linear(2), np.array([0.3, -0.7, 0.1]))
        _, tape = forward(s, np.array([1.0, 1.0]))
        np.testing.assert_allclose(backward(s, tape, 1.0), [1.0, 1.0, 1.0])

    def test_zero_upstream_zero_gradient(self):
        s = init_scorer(Architecture.mlp([2, 4, 1]), seed=2)
        _, tape = forward(s, np.array([0.5, -0.5]))
        assert np.all(backward(s, tape, 0.0) == 0.0)

    def test_upstream_scaling_is_linear(self):
        rng = np.random.default_rng(5)
        s, x = random_case(rng)
        _, tape = forward(s, x)
        g1 = backward(s, tape, 1.0)
        g3 = backward(s, tape, 3.0)
        np.testing.assert_allclose(g3, 3.0 * g1, rtol=1e-15)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        for _ in range(60):
            s, x = random_case(rng)
            _, tape = forward(s, x)
            analytic = backward(s, tape, 1.0)
            numeric = finite_difference_gradient(s, x)
            err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
            assert np.max(err) < 1e-4

    def test_stale_tape_rejected(self):
        s = init_scorer(Architecture.mlp([2, 4, 1]), seed=3)
        _, tape = forward(s, np.array([1.0, 2.0]))
        sgd_step(s, np.zeros_like(s.params), 0.1)
        with pytest.raises(ContractError, match="stale"):
            backward(s, tape, 1.0)

    def test_foreign_tape_rejected(self):
        a = init_scorer(Architecture.mlp([2, 4, 1]), seed=3)
        b = init_scorer(Architecture.mlp([2, 4, 1]), seed=4)
        _, tape = forward(a, np.array([1.0, 2.0]))
        with pytest.raises(ContractError):
            backward(b, tape, 1.0)


class TestSgdStep:
    def test_zero_gradient_no_change(self):
        s = init_scorer(Architecture.linear(2), seed=0)
        before = s.params.copy()
        sgd_step(s, np.zeros(3), 0.5)
        assert np.array_equal(s.params, before)

    def test_full_step_to_zero(self):
        s = init_scorer(Architecture.linear(2), seed=0)
        sgd_step(s, s.params.copy(), 1.0)
        assert np.all(s.params == 0.0)

    def test_two_steps_equal_one_summed_step(self):
        rng = np.random.default_rng(9)
        s1 = init_scorer(Architecture.linear(4), seed=1)
        s2 = s1.copy()
        g1, g2 = rng.normal(size=(2, s1.params.size))
        sgd_step(s1, g1, 0.1)
        sgd_step(s1, g2, 0.1)
        sgd_step(s2, g1 + g2, 0.1)
        np.testing.assert_allclose(s1.params, s2.params, atol=1e-15)

    def test_length_mismatch(self):
        s = init_scorer(Architecture.linear(2), seed=0)
        with pytest.raises(ContractError):
            sgd_step(s, np.zeros(5), 0.1)


class TestClientConfidence:
    def test_zero_score_half(self):
        client = FixedClient(Scorer(Architecture.linear(2), np.zeros(3)))
        assert client_confidence(client, np.array([3.0, -1.0])) == 0.5

    def test_monotone_in_score(self):
        client = FixedClient(Scorer(Architecture.linear(1), np.array([1.0, 0.0])))
        xs = np.linspace(-30, 30, 101)
        vals = [client_confidence(client, np.array([x])) for x in xs]
        assert all(b > a for a, b in zip(vals[:-1], vals[1:]))
        assert all(0.0 < v < 1.0 for v in vals)

    def test_score_two(self):
        client = FixedClient(Scorer(Architecture.linear(1), np.array([1.0, 0.0])))
        expected = 1.0 / (1.0 + math.exp(-2.0))
        assert client_confidence(client, np.array([2.0])) == pytest.approx(expected, abs=1e-15)

    def test_logistic_symmetry(self):
        z = np.linspace(-35, 35, 201)
        np.testing.assert_allclose(logistic(z) + logistic(-z), 1.0, atol=1e-12)


class TestFixedClient:
    def test_parameters_read_only(self):
        client = FixedClient(init_scorer(Architecture.linear(2), seed=0))
        with pytest.raises(ValueError):
            client.scorer.params[0] = 1.0

    def test_wrapping_copies(self):
        scorer = init_scorer(Architecture.linear(2), seed=0)
        client = FixedClient(scorer)
        scorer.params[0] = 99.0
        assert client.scorer.params[0] != 99.0


class TestSgdConfig:
    @pytest.mark.parametrize("kwargs", [
        dict(learning_rate=0.0, epochs=1),
        dict(learning_rate=0.1, epochs=0),
        dict(learning_rate=0.1, epochs=1, batch_size=0),
        dict(learning_rate=0.1, epochs=1, max_grad_norm=-1.0),
    ])
    def test_invariants(self, kwargs):
        with pytest.raises(ConfigError):
            SgdConfig(**kwargs)


class TestCheckpoint:
    def test_roundtrip_bitwise(self, tmp_path):
        s = init_scorer(Architecture.mlp([2, 8, 8, 1], activation="none"), seed=12)
        s.params += np.random.default_rng(1).normal(size=s.params.shape)
        path = tmp_path / "scorer.json"
        save_scorer(s, path, seed=12, metadata={"role": "client"})
        loaded, meta = load_scorer(path)
        assert loaded.arch == s.arch
        assert np.array_equal(loaded.params, s.params)
        assert meta == {"role": "client"}

    def test_malformed_checkpoint(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"params": [1, 2]}')
        with pytest.raises(ConfigError):
            load_scorer(path)
