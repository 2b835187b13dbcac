"""Sharpness, gradient diversity, calibration and moment diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, UnsupportedOperationError
from .numerics import quiet_overflow

CSV_FIELDS = (
    "step",
    "train_loss",
    "holdout_loss",
    "sharpness_mean",
    "sharpness_max",
    "angular_similarity",
    "grad_cov_frobenius",
    "ece",
    "accuracy",
    "moment_error",
)

_GRAD_FLOOR = 1e-12


@dataclass
class MetricsRecord:
    step: int
    train_loss: float | None = None
    holdout_loss: float | None = None
    sharpness_per_particle: np.ndarray | None = None
    mean_angular_similarity: float | None = None
    grad_cov_frobenius: float | None = None
    ece: float | None = None
    accuracy: float | None = None
    moment_error: float | None = None
    extras: dict = field(default_factory=dict)

    @property
    def sharpness_mean(self):
        s = self.sharpness_per_particle
        return None if s is None else float(np.mean(s))

    @property
    def sharpness_max(self):
        s = self.sharpness_per_particle
        return None if s is None else float(np.max(s))

    def as_row(self) -> dict:
        return {
            "step": self.step,
            "train_loss": self.train_loss,
            "holdout_loss": self.holdout_loss,
            "sharpness_mean": self.sharpness_mean,
            "sharpness_max": self.sharpness_max,
            "angular_similarity": self.mean_angular_similarity,
            "grad_cov_frobenius": self.grad_cov_frobenius,
            "ece": self.ece,
            "accuracy": self.accuracy,
            "moment_error": self.moment_error,
        }


def sam_sharpness(target, theta, rho: float, split="train") -> float:
    """One-ascent-step estimate of max_{|e| <= rho} L(theta + e) - L(theta).

    ``target`` needs a ``loss_and_grad(theta, split)`` method; analytic
    targets raise UnsupportedOperationError.
    """
    if not rho > 0:
        raise ArgumentError("rho must be positive")
    loss, grad = target.loss_and_grad(theta, split)
    norm = np.linalg.norm(grad)
    if norm < _GRAD_FLOOR:
        return 0.0
    perturbed, _ = target.loss_and_grad(np.asarray(theta, dtype=float) + rho * grad / norm, split)
    return float(perturbed - loss)


def _sharpness_many(target, X, rho, split):
    data = target._split(split)
    loss, grad = target.loss_grad_many(X, data)
    norms = np.linalg.norm(grad, axis=1)
    safe = np.where(norms < _GRAD_FLOOR, 1.0, norms)
    step = np.where((norms < _GRAD_FLOOR)[:, None], 0.0, rho * grad / safe[:, None])
    perturbed, _ = target.loss_grad_many(X + step, data)
    return np.where(norms < _GRAD_FLOOR, 0.0, perturbed - loss), loss, grad


def angular_similarity(gradients) -> float:
    """Mean pairwise cosine over i < j; zero-norm gradients are left out of the pairs."""
    G = np.atleast_2d(np.asarray(gradients, dtype=float))
    if G.shape[0] < 2:
        raise ArgumentError("angular similarity needs at least two gradients")
    norms = np.linalg.norm(G, axis=1)
    keep = norms > 0
    if keep.sum() < 2:
        return float("nan")
    U = G[keep] / norms[keep, None]
    C = U @ U.T
    iu = np.triu_indices(U.shape[0], k=1)
    return float(np.mean(C[iu]))


def gradient_covariance(gradients):
    G = np.atleast_2d(np.asarray(gradients, dtype=float))
    if G.shape[0] < 2:
        return np.zeros((G.shape[1], G.shape[1]))
    centered = G - G.mean(axis=0)
    return centered.T @ centered / (G.shape[0] - 1)


def grad_cov_frobenius(gradients) -> float:
    """Frobenius norm of the sample covariance (divisor m - 1) of the gradient vectors."""
    G = np.atleast_2d(np.asarray(gradients, dtype=float))
    if G.shape[0] < 2:
        raise ArgumentError("gradient covariance needs at least two gradients")
    centered = G - G.mean(axis=0)
    # |C|_F^2 = |A A^T|_F^2 / (m-1)^2, cheaper than forming the d x d matrix
    small = centered @ centered.T
    return float(np.sqrt(np.sum(small * small)) / (G.shape[0] - 1))


def ensemble_predict(ensemble, target, inputs):
    """Average of per-particle softmax probabilities."""
    if getattr(target, "analytic", True) or not hasattr(target, "predict_proba"):
        raise UnsupportedOperationError("ensemble prediction needs a classifier target")
    X = ensemble.particles if hasattr(ensemble, "particles") else ensemble
    P = target.predict_proba(np.atleast_2d(X), inputs)
    return P.mean(axis=0)


def accuracy(probabilities, labels) -> float:
    P = np.asarray(probabilities, dtype=float)
    return float(np.mean(P.argmax(axis=1) == np.asarray(labels)))


def ece(probabilities, labels, bins: int = 15, lower=0.0, max_gap=False) -> float:
    """Binned expected calibration error over max-probability confidence.

    Bins split [lower, 1] into ``bins`` equal widths. ``lower=None`` uses
    1/C, the smallest possible top-class probability, so no bin is wasted
    on unreachable confidences. Each bin is half-open on the left except
    the first. ``max_gap=True``
    returns the maximum calibration error over non-empty bins instead of
    the weighted mean.
    """
    P = np.atleast_2d(np.asarray(probabilities, dtype=float))
    y = np.asarray(labels).ravel()
    if P.shape[0] == 0 or y.size != P.shape[0]:
        raise ArgumentError("need one label per nonempty probability row")
    if bins < 1:
        raise ArgumentError("bins must be >= 1")
    if np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-6):
        raise ArgumentError("probability rows must sum to 1")
    lo = 1.0 / P.shape[1] if lower is None else float(lower)
    conf = P.max(axis=1)
    correct = (P.argmax(axis=1) == y).astype(float)
    edges = np.linspace(lo, 1.0, bins + 1)
    idx = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, bins - 1)
    n = conf.size
    total = 0.0
    worst = 0.0
    for b in range(bins):
        sel = idx == b
        nb = int(sel.sum())
        if nb == 0:
            continue
        gap = abs(correct[sel].mean() - conf[sel].mean())
        total += nb / n * gap
        worst = max(worst, gap)
    return float(worst if max_gap else total)


def moment_error(ensemble, target) -> float:
    """|mean - mu| + |cov - Sigma|_F; covariance of a single particle is taken as zero."""
    if not getattr(target, "analytic", False):
        raise UnsupportedOperationError("moment error needs an analytic target")
    X = np.atleast_2d(ensemble.particles if hasattr(ensemble, "particles") else ensemble)
    mu, sigma = target.moments
    mean = X.mean(axis=0)
    cov = np.atleast_2d(np.cov(X, rowvar=False, ddof=1)) if X.shape[0] > 1 else np.zeros_like(sigma)
    return float(np.linalg.norm(mean - mu) + np.linalg.norm(cov - sigma, "fro"))


@quiet_overflow
def collect_metrics(ensemble, target, rho: float, bins: int = 15) -> MetricsRecord:
    X = np.atleast_2d(ensemble.particles)
    m = X.shape[0]
    rec = MetricsRecord(step=ensemble.step)
    if target.analytic:
        grads = -target.score_many(X)
        rec.moment_error = moment_error(ensemble, target)
    else:
        sharp, loss, grads = _sharpness_many(target, X, rho, "train")
        rec.train_loss = float(loss.mean())
        rec.sharpness_per_particle = sharp
        hold_loss, _ = target.loss_grad_many(X, target.holdout)
        rec.holdout_loss = float(hold_loss.mean())
        probs = ensemble_predict(ensemble, target, target.holdout.inputs)
        rec.accuracy = accuracy(probs, target.holdout.labels)
        rec.ece = ece(probs, target.holdout.labels, bins)
    if m >= 2:
        sim = angular_similarity(grads)
        rec.mean_angular_similarity = None if np.isnan(sim) else sim
        rec.grad_cov_frobenius = grad_cov_frobenius(grads)
    return rec
