"""Log-posterior oracles and synthetic datasets.

Data targets use the tempered empirical posterior
``log p(theta|S) = log p(theta) - L_S(theta) + const`` where ``L_S`` is the
*mean* cross-entropy over the training set, with an isotropic zero-mean
Gaussian prior of precision ``prior_precision``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import ArgumentError, UnsupportedOperationError
from .numerics import (
    LabeledDataset,
    MLPSpec,
    RngStream,
    mlp_logits_many,
    mlp_loss_and_grad_many,
    softmax,
)


def _check_many(theta, dim):
    T = np.asarray(theta, dtype=float)
    single = T.ndim == 1
    T = np.atleast_2d(T)
    if T.shape[1] != dim:
        raise ArgumentError(f"parameter dimension {T.shape[1]} != target dimension {dim}")
    return T, single


class Target:
    """Common interface. Subclasses fill in ``dim`` and ``score_many``."""

    dim: int
    analytic: bool = False

    def score_many(self, thetas, batch=None):
        """grad log p(theta|S) for each row of a (k, d) stack."""
        raise NotImplementedError

    def log_posterior_grad(self, theta, batch=None):
        T, single = _check_many(theta, self.dim)
        G = self.score_many(T, batch)
        return G[0] if single else G

    def empirical_loss(self, theta, which="train"):
        raise UnsupportedOperationError(f"{type(self).__name__} has no empirical loss")

    def loss_and_grad(self, theta, which="train"):
        raise UnsupportedOperationError(f"{type(self).__name__} has no empirical loss")

    def loss_grad_many(self, thetas, batch=None):
        raise UnsupportedOperationError(f"{type(self).__name__} has no empirical loss")

    def reference_sample(self, count, rng):
        raise UnsupportedOperationError(f"{type(self).__name__} cannot be sampled exactly")


class GaussianTarget(Target):
    analytic = True

    def __init__(self, mean, covariance):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(covariance, dtype=float))
        if cov.shape != (self.mean.size, self.mean.size):
            raise ArgumentError("covariance shape does not match mean")
        if not np.allclose(cov, cov.T):
            raise ArgumentError("covariance must be symmetric")
        self.chol = np.linalg.cholesky(cov)  # raises LinAlgError if not SPD
        self.covariance = cov
        self.precision = np.linalg.inv(cov)
        self.dim = self.mean.size

    def score_many(self, thetas, batch=None):
        T, _ = _check_many(thetas, self.dim)
        return -np.einsum("kd,de->ke", T - self.mean, self.precision)

    def reference_sample(self, count, rng: RngStream):
        if count == 0:
            return np.zeros((0, self.dim))
        z = rng.normal((count, self.dim))
        return self.mean + z @ self.chol.T

    @property
    def moments(self):
        return self.mean, self.covariance


class GaussianMixtureTarget(Target):
    analytic = True

    def __init__(self, weights, components):
        w = np.asarray(weights, dtype=float)
        if abs(w.sum() - 1.0) > 1e-12 or np.any(w < 0):
            raise ArgumentError("mixture weights must lie on the simplex")
        if len(components) != w.size or not components:
            raise ArgumentError("one component per weight required")
        self.weights = w
        self.components = list(components)
        self.dim = self.components[0].dim
        if any(c.dim != self.dim for c in self.components):
            raise ArgumentError("mixture components differ in dimension")
        self._logdets = np.array([2 * np.log(np.diag(c.chol)).sum() for c in self.components])

    def score_many(self, thetas, batch=None):
        T, _ = _check_many(thetas, self.dim)
        logr = []
        scores = []
        for w, c, logdet in zip(self.weights, self.components, self._logdets):
            diff = T - c.mean
            quad = np.einsum("kd,de,ke->k", diff, c.precision, diff)
            logr.append(np.log(w) - 0.5 * logdet - 0.5 * quad)
            scores.append(-np.einsum("kd,de->ke", diff, c.precision))
        logr = np.stack(logr, axis=1)
        logr -= logr.max(axis=1, keepdims=True)
        r = np.exp(logr)
        r /= r.sum(axis=1, keepdims=True)
        return np.einsum("kc,ckd->kd", r, np.stack(scores))

    def reference_sample(self, count, rng: RngStream):
        if count == 0:
            return np.zeros((0, self.dim))
        which = rng.categorical(self.weights, count)
        z = rng.normal((count, self.dim))
        out = np.empty((count, self.dim))
        for ci, c in enumerate(self.components):
            sel = which == ci
            out[sel] = c.mean + z[sel] @ c.chol.T
        return out

    @property
    def moments(self):
        mean = sum(w * c.mean for w, c in zip(self.weights, self.components))
        second = sum(
            w * (c.covariance + np.outer(c.mean, c.mean)) for w, c in zip(self.weights, self.components)
        )
        return mean, second - np.outer(mean, mean)


class ClassifierPosterior(Target):
    """Softmax classifier posterior; ``hidden_dim=0`` gives multinomial logistic regression."""

    def __init__(self, spec: MLPSpec, train: LabeledDataset, holdout: LabeledDataset, prior_precision=1e-2):
        if prior_precision < 0:
            raise ArgumentError("prior_precision must be nonnegative")
        for split in (train, holdout):
            if split.input_dim != spec.input_dim or split.n_classes != spec.class_count:
                raise ArgumentError("dataset does not match the model spec")
        self.spec = spec
        self.train = train
        self.holdout = holdout
        self.prior_precision = float(prior_precision)
        self.dim = spec.n_params

    def _split(self, which):
        if isinstance(which, LabeledDataset):
            return which
        if which == "train":
            return self.train
        if which == "holdout":
            return self.holdout
        raise ArgumentError(f"unknown split {which!r}")

    def loss_grad_many(self, thetas, batch=None):
        T, _ = _check_many(thetas, self.dim)
        return mlp_loss_and_grad_many(self.spec, T, self.train if batch is None else batch)

    def score_many(self, thetas, batch=None):
        T, _ = _check_many(thetas, self.dim)
        _, g = self.loss_grad_many(T, batch)
        return -self.prior_precision * T - g

    def empirical_loss(self, theta, which="train"):
        return self.loss_and_grad(theta, which)[0]

    def loss_and_grad(self, theta, which="train"):
        T, _ = _check_many(theta, self.dim)
        loss, g = mlp_loss_and_grad_many(self.spec, T[:1], self._split(which))
        return float(loss[0]), g[0]

    def predict_proba(self, theta, inputs):
        T, single = _check_many(theta, self.dim)
        P = softmax(mlp_logits_many(self.spec, T, inputs))
        return P[0] if single else P

    def prior_sample(self, rng: RngStream):
        if self.prior_precision == 0:
            raise ArgumentError("flat prior cannot be sampled")
        return rng.normal(self.dim) / np.sqrt(self.prior_precision)


def LogisticPosterior(train, holdout, prior_precision=1e-2):
    spec = MLPSpec(train.input_dim, 0, train.n_classes)
    return ClassifierPosterior(spec, train, holdout, prior_precision)


def MLPPosterior(spec, train, holdout, prior_precision=1e-2):
    return ClassifierPosterior(spec, train, holdout, prior_precision)


def log_posterior_grad(target: Target, theta, batch=None):
    return target.log_posterior_grad(theta, batch)


def empirical_loss(target: Target, theta, which="train"):
    return target.empirical_loss(theta, which)


def reference_sample(target: Target, count: int, rng: RngStream):
    return target.reference_sample(count, rng)


# -- synthetic data -----------------------------------------------------------

BLOBS = "blobs"
ARCS = "arcs"


@dataclass(frozen=True)
class DatasetSpec:
    """``stream`` separates train (0) from holdout (1) draws of the same generator."""

    generator: str = BLOBS
    centers: tuple = ((-2.0, -2.0), (2.0, 2.0))
    spread: float = 1.0
    noise: float = 0.1
    per_class: int = 50
    seed: int = 0
    stream: int = 0
    extra_dims: int = 0

    def __post_init__(self):
        if self.generator not in (BLOBS, ARCS):
            raise ArgumentError(f"unknown generator {self.generator!r}")
        if self.per_class < 1:
            raise ArgumentError("per_class must be >= 1")
        if self.generator == BLOBS and not self.spread > 0:
            raise ArgumentError("spread must be positive")
        if self.generator == ARCS and not self.noise > 0:
            raise ArgumentError("noise must be positive")
        if self.extra_dims < 0:
            raise ArgumentError("extra_dims must be nonnegative")
        object.__setattr__(self, "centers", tuple(tuple(float(v) for v in c) for c in self.centers))


# stream ids for dataset draws live far away from particle stream ids
_DATA_STREAM_BASE = 1 << 40


def make_dataset(spec: DatasetSpec) -> LabeledDataset:
    """Balanced, deterministic dataset for ``(spec, seed, stream)``.

    ``extra_dims`` appends standard-normal nuisance features carrying no
    label information.
    """
    rng = RngStream(spec.seed, _DATA_STREAM_BASE + spec.stream)
    k = spec.per_class
    if spec.generator == BLOBS:
        centers = np.asarray(spec.centers, dtype=float)
        C = len(centers)
        x = np.repeat(centers, k, axis=0) + spec.spread * rng.normal((C * k, centers.shape[1]))
        y = np.repeat(np.arange(C), k)
    else:
        C = 2
        t = np.pi * rng.uniform(2 * k)
        upper = np.stack([np.cos(t[:k]), np.sin(t[:k])], axis=1)
        lower = np.stack([1.0 - np.cos(t[k:]), 0.5 - np.sin(t[k:])], axis=1)
        x = np.concatenate([upper, lower]) + spec.noise * rng.normal((2 * k, 2))
        y = np.repeat(np.arange(2), k)
    if spec.extra_dims:
        x = np.concatenate([x, rng.normal((len(x), spec.extra_dims))], axis=1)
    return LabeledDataset(x, y, C)


def make_splits(spec: DatasetSpec, holdout_per_class=None):
    train = make_dataset(replace(spec, stream=0))
    hold = replace(spec, stream=1, per_class=holdout_per_class or spec.per_class)
    return train, make_dataset(hold)


def save_csv(dataset: LabeledDataset, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(dataset.input_dim)] + ["label"])
        for row, label in zip(dataset.inputs, dataset.labels):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


def load_csv(path, n_classes=None) -> LabeledDataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[-1] != "label":
        raise ArgumentError("last CSV column must be 'label'")
    x = np.array([[float(v) for v in r[:-1]] for r in body], dtype=float).reshape(len(body), len(header) - 1)
    y = np.array([int(r[-1]) for r in body], dtype=np.int64)
    return LabeledDataset(x, y, n_classes or int(y.max()) + 1)
