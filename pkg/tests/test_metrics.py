import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hilbert_flow.errors import ArgumentError, UnsupportedOperationError
from hilbert_flow.numerics import MLPSpec, RngStream
from hilbert_flow.metrics import (
    CSV_FIELDS,
    MetricsRecord,
    accuracy,
    angular_similarity,
    collect_metrics,
    ece,
    ensemble_predict,
    grad_cov_frobenius,
    moment_error,
    sam_sharpness,
)
from hilbert_flow.samplers import Ensemble
from hilbert_flow.targets import DatasetSpec, GaussianTarget, LogisticPosterior, MLPPosterior, make_splits, reference_sample


class QuadraticLoss:
    def loss_and_grad(self, theta, split="train"):
        theta = np.asarray(theta, dtype=float)
        return 0.5 * theta @ theta, theta.copy()


@pytest.fixture(scope="module")
def logistic():
    train, holdout = make_splits(DatasetSpec(centers=((-1.0, 0.0), (1.0, 0.0), (0.0, 1.5)), per_class=20, seed=8), 20)
    return LogisticPosterior(train, holdout, prior_precision=0.1)


def confidence_rows(conf):
    conf = np.asarray(conf)
    return np.stack([conf, 1 - conf], axis=1)


class TestSharpness:
    def test_quadratic_hand_value(self):
        assert sam_sharpness(QuadraticLoss(), [3.0, 4.0], 0.1) == pytest.approx(0.505, abs=1e-9)

    def test_zero_at_minimum(self):
        assert sam_sharpness(QuadraticLoss(), [0.0, 0.0], 0.1) == 0.0

    def test_rho_must_be_positive(self):
        with pytest.raises(ArgumentError):
            sam_sharpness(QuadraticLoss(), [1.0], 0.0)

    def test_analytic_target_unsupported(self):
        with pytest.raises(UnsupportedOperationError):
            sam_sharpness(GaussianTarget([0.0], [[1.0]]), [0.0], 0.1)

    @pytest.mark.parametrize("seed", range(3))
    def test_against_random_search(self, logistic, seed):
        rho = 0.05
        theta = np.random.default_rng(seed).normal(size=logistic.dim)
        value = sam_sharpness(logistic, theta, rho)
        base, grad = logistic.loss_and_grad(theta, "train")
        assert 0 <= value <= 2 * rho * np.linalg.norm(grad)
        dirs = np.random.default_rng(100 + seed).normal(size=(1000, logistic.dim))
        dirs *= rho / np.linalg.norm(dirs, axis=1, keepdims=True)
        losses, _ = logistic.loss_grad_many(theta + dirs, logistic.train)
        assert np.max(losses - base) <= 1.1 * value

    def test_vectorized_matches_scalar(self, logistic):
        X = np.random.default_rng(3).normal(size=(3, logistic.dim))
        rec = collect_metrics(Ensemble(X), logistic, 0.05)
        expected = [sam_sharpness(logistic, x, 0.05) for x in X]
        np.testing.assert_allclose(rec.sharpness_per_particle, expected, rtol=1e-12, atol=1e-15)


class TestAngularSimilarity:
    def test_hand_value(self):
        value = angular_similarity([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        assert value == pytest.approx(math.sqrt(2) / 3, abs=1e-6)
        assert value == pytest.approx(0.4714, abs=1e-4)

    def test_identical(self):
        assert angular_similarity([[1.0, 2.0]] * 4) == pytest.approx(1.0, abs=1e-15)

    def test_orthogonal(self):
        assert angular_similarity([[1.0, 0.0], [0.0, 3.0]]) == 0.0

    def test_zero_gradients_are_excluded(self):
        assert angular_similarity([[1.0, 0.0], [0.0, 0.0], [2.0, 0.0]]) == pytest.approx(1.0)
        assert math.isnan(angular_similarity([[1.0, 0.0], [0.0, 0.0]]))

    def test_needs_two(self):
        with pytest.raises(ArgumentError):
            angular_similarity([[1.0, 0.0]])

    @given(st.lists(st.floats(0.1, 10), min_size=4, max_size=4))
    @settings(max_examples=30, deadline=None)
    def test_scale_invariance(self, scales):
        G = np.random.default_rng(0).normal(size=(4, 3))
        scaled = G * np.asarray(scales)[:, None]
        assert angular_similarity(scaled) == pytest.approx(angular_similarity(G), abs=1e-12)


class TestGradCovFrobenius:
    def test_hand_value(self):
        assert grad_cov_frobenius([[-1.0], [1.0]]) == 2.0

    def test_identical(self):
        assert grad_cov_frobenius([[0.3, -1.0]] * 5) == 0.0

    def test_matches_dense_covariance(self):
        G = np.random.default_rng(1).normal(size=(6, 4))
        assert grad_cov_frobenius(G) == pytest.approx(np.linalg.norm(np.cov(G, rowvar=False), "fro"), rel=1e-12)

    @given(st.floats(0.01, 100))
    @settings(max_examples=30, deadline=None)
    def test_quadratic_scaling(self, c):
        G = np.random.default_rng(2).normal(size=(5, 3))
        assert grad_cov_frobenius(c * G) == pytest.approx(c**2 * grad_cov_frobenius(G), rel=1e-10)

    def test_needs_two(self):
        with pytest.raises(ArgumentError):
            grad_cov_frobenius([[1.0, 2.0]])


class TestECE:
    def test_hand_value(self):
        P = confidence_rows([0.9, 0.8, 0.6, 0.55])
        labels = [0, 1, 0, 1]
        assert ece(P, labels, bins=2) == pytest.approx(0.2125, abs=1e-12)

    def test_reachable_range_bins(self):
        # over [1/2, 1] the two bins split {0.6, 0.55} from {0.9, 0.8}
        P = confidence_rows([0.9, 0.8, 0.6, 0.55])
        assert ece(P, [0, 1, 0, 1], bins=2, lower=None) == pytest.approx(0.5 * 0.075 + 0.5 * 0.35, abs=1e-12)

    def test_max_gap(self):
        P = confidence_rows([0.9, 0.8, 0.6, 0.55])
        assert ece(P, [0, 1, 0, 1], bins=2, lower=None, max_gap=True) == pytest.approx(0.35, abs=1e-12)
        assert ece(P, [0, 1, 0, 1], bins=2, max_gap=True) == pytest.approx(0.2125, abs=1e-12)

    def test_confident_and_correct(self):
        P = np.eye(3)[[0, 1, 2, 1]]
        assert ece(P, [0, 1, 2, 1]) == 0.0

    def test_single_bin_calibrated(self):
        P = confidence_rows([0.7, 0.8, 0.9, 0.6, 0.5])
        labels = [0, 0, 0, 1, 1]
        acc = np.mean(P.argmax(axis=1) == labels)
        conf = P.max(axis=1).mean()
        assert ece(P, labels, bins=1) == pytest.approx(abs(acc - conf), abs=1e-12)
        balanced = confidence_rows([0.75, 0.75, 0.75, 0.75])
        assert ece(balanced, [0, 0, 0, 1], bins=1) == pytest.approx(0.0, abs=1e-12)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(4)
        P = rng.dirichlet(np.ones(4), size=50)
        y = rng.integers(0, 4, size=50)
        perm = rng.permutation(50)
        assert ece(P[perm], y[perm]) == pytest.approx(ece(P, y), abs=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_unit_interval(self, seed):
        rng = np.random.default_rng(seed)
        P = rng.dirichlet(np.ones(3) * 0.3, size=40)
        assert 0.0 <= ece(P, rng.integers(0, 3, size=40)) <= 1.0

    def test_rejects_bad_input(self):
        with pytest.raises(ArgumentError):
            ece(np.zeros((0, 2)), [])
        with pytest.raises(ArgumentError):
            ece([[0.6, 0.6]], [0])
        with pytest.raises(ArgumentError):
            ece([[0.5, 0.5]], [0], bins=0)


class TestEnsemblePredict:
    def test_single_particle_is_softmax(self, logistic):
        theta = np.random.default_rng(0).normal(size=logistic.dim)
        P = ensemble_predict(Ensemble(theta[None, :]), logistic, logistic.holdout.inputs)
        np.testing.assert_array_equal(P, logistic.predict_proba(theta[None, :], logistic.holdout.inputs)[0])

    def test_opposite_predictions_average_to_uniform(self):
        train, holdout = make_splits(DatasetSpec(per_class=5), 5)
        t = LogisticPosterior(train, holdout)
        # W (2, 2) then b (2,): swapping the class rows swaps the probabilities
        a = np.array([3.0, -1.0, -3.0, 1.0, 0.5, -0.5])
        b = np.array([-3.0, 1.0, 3.0, -1.0, -0.5, 0.5])
        P = ensemble_predict(Ensemble(np.stack([a, b])), t, holdout.inputs)
        np.testing.assert_allclose(P, 0.5, atol=1e-12)

    def test_rows_sum_to_one(self):
        train, holdout = make_splits(DatasetSpec(per_class=10), 10)
        t = MLPPosterior(MLPSpec(2, 5, 2), train, holdout)
        X = np.random.default_rng(1).normal(size=(4, t.dim))
        P = ensemble_predict(Ensemble(X), t, holdout.inputs)
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)

    def test_analytic_target_unsupported(self):
        with pytest.raises(UnsupportedOperationError):
            ensemble_predict(Ensemble([[0.0]]), GaussianTarget([0.0], [[1.0]]), np.zeros((1, 1)))

    def test_accuracy(self):
        assert accuracy([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]], [0, 1, 1]) == pytest.approx(2 / 3)


class TestMomentError:
    def test_exact_samples(self):
        target = GaussianTarget([0.0, 0.0], np.eye(2))
        x = reference_sample(target, 10_000, RngStream(0, 3))
        assert moment_error(Ensemble(x), target) < 0.1

    def test_single_particle_at_mean(self):
        cov = np.array([[2.0, 0.5], [0.5, 1.0]])
        target = GaussianTarget([1.0, -1.0], cov)
        assert moment_error(Ensemble([[1.0, -1.0]]), target) == pytest.approx(np.linalg.norm(cov, "fro"))

    def test_shift(self):
        target = GaussianTarget([0.0, 0.0], np.eye(2))
        x = reference_sample(target, 10_000, RngStream(1, 3))
        v = np.array([0.3, 0.4])
        grown = moment_error(Ensemble(x + v), target) - moment_error(Ensemble(x), target)
        assert grown == pytest.approx(0.5, abs=0.05)

    def test_data_target_unsupported(self, logistic):
        with pytest.raises(UnsupportedOperationError):
            moment_error(Ensemble(np.zeros((1, logistic.dim))), logistic)


class TestCollect:
    def test_data_record_fields(self, logistic):
        X = np.random.default_rng(2).normal(size=(3, logistic.dim))
        rec = collect_metrics(Ensemble(X, step=7), logistic, 0.05)
        assert rec.step == 7
        assert rec.sharpness_per_particle.shape == (3,)
        assert 0 <= rec.ece <= 1 and 0 <= rec.accuracy <= 1
        assert -1 <= rec.mean_angular_similarity <= 1
        assert rec.grad_cov_frobenius >= 0
        assert rec.moment_error is None
        assert tuple(rec.as_row()) == CSV_FIELDS

    def test_single_particle_leaves_diversity_undefined(self, logistic):
        rec = collect_metrics(Ensemble(np.zeros((1, logistic.dim))), logistic, 0.05)
        assert rec.mean_angular_similarity is None and rec.grad_cov_frobenius is None

    def test_analytic_record(self):
        rec = collect_metrics(Ensemble([[1.0], [-1.0]]), GaussianTarget([0.0], [[1.0]]), 0.05)
        assert rec.moment_error == pytest.approx(1.0)
        assert rec.train_loss is None
        assert rec.mean_angular_similarity == pytest.approx(-1.0)

    def test_record_defaults(self):
        assert MetricsRecord(step=0).sharpness_mean is None
