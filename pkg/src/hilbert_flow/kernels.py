"""Positive-definite kernels on parameter space.

RBF: ``k(a, b) = exp(-|a - b|^2 / (2 sigma^2))``.
Polynomial: ``k(a, b) = (a.b / sigma^2 + offset)^degree``; ``sigma`` acts as an
inner-product scale and the default ``sigma = 1`` gives plain
``(a.b + offset)^degree``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DegenerateEnsembleError

RBF = "rbf"
POLYNOMIAL = "polynomial"
FIXED = "fixed"
MEDIAN = "median"


@dataclass(frozen=True)
class KernelSpec:
    family: str = RBF
    sigma: float = 1.0
    degree: int = 10
    offset: float = 1.0
    bandwidth_policy: str = FIXED

    def __post_init__(self):
        if self.family not in (RBF, POLYNOMIAL):
            raise ArgumentError(f"unknown kernel family {self.family!r}")
        if self.bandwidth_policy not in (FIXED, MEDIAN):
            raise ArgumentError(f"unknown bandwidth policy {self.bandwidth_policy!r}")
        if not self.sigma > 0:
            raise ArgumentError("sigma must be positive")
        if self.family == POLYNOMIAL and self.degree < 1:
            raise ArgumentError("polynomial degree must be >= 1")

    def with_sigma(self, sigma: float) -> "KernelSpec":
        return KernelSpec(self.family, float(sigma), self.degree, self.offset, self.bandwidth_policy)


def _pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ArgumentError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def kernel_eval(spec: KernelSpec, a, b) -> float:
    a, b = _pair(a, b)
    if spec.family == RBF:
        diff = a - b
        return float(np.exp(-np.dot(diff, diff) / (2.0 * spec.sigma**2)))
    return float((np.dot(a, b) / spec.sigma**2 + spec.offset) ** spec.degree)


def kernel_grad_second(spec: KernelSpec, a, b):
    """Gradient of ``kernel_eval(spec, a, b)`` with respect to ``b``."""
    a, b = _pair(a, b)
    if spec.family == RBF:
        return (a - b) / spec.sigma**2 * kernel_eval(spec, a, b)
    scale = spec.sigma**2
    base = np.dot(a, b) / scale + spec.offset
    return spec.degree * base ** (spec.degree - 1) * a / scale


def _as_particles(ensemble):
    X = ensemble.particles if hasattr(ensemble, "particles") else ensemble
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] < 1:
        raise ArgumentError("ensemble is empty")
    return X


def _sq_dists(X):
    diff = X[:, None, :] - X[None, :, :]
    return np.einsum("ijd,ijd->ij", diff, diff)


def gram_matrix(spec: KernelSpec, ensemble):
    X = _as_particles(ensemble)
    if spec.family == RBF:
        return np.exp(-_sq_dists(X) / (2.0 * spec.sigma**2))
    return (X @ X.T / spec.sigma**2 + spec.offset) ** spec.degree


def gram_and_repulsion(spec: KernelSpec, X):
    """Gram matrix K and the repulsion rows ``R[i] = sum_j grad_{x_j} k(x_i, x_j)``."""
    X = _as_particles(X)
    m = X.shape[0]
    if spec.family == RBF:
        K = np.exp(-_sq_dists(X) / (2.0 * spec.sigma**2))
        # grad_{x_j} k(x_i, x_j) = (x_i - x_j) K_ij / sigma^2
        R = (K.sum(axis=1)[:, None] * X - K @ X) / spec.sigma**2
        return K, R
    scale = spec.sigma**2
    base = np.einsum("id,jd->ij", X, X) / scale + spec.offset
    K = base**spec.degree
    coeff = spec.degree * base ** (spec.degree - 1) / scale
    R = coeff.sum(axis=1)[:, None] * X
    return K, R


def median_bandwidth(ensemble) -> float:
    """Median heuristic: sigma^2 = med^2 / (2 ln(m + 1)) over pairwise distances."""
    X = _as_particles(ensemble)
    m = X.shape[0]
    if m < 2:
        raise DegenerateEnsembleError("median bandwidth needs at least two particles")
    iu = np.triu_indices(m, k=1)
    med = float(np.median(np.sqrt(_sq_dists(X)[iu])))
    if med <= 0.0:
        raise DegenerateEnsembleError("median pairwise distance is zero")
    return float(np.sqrt(med**2 / (2.0 * np.log(m + 1))))
