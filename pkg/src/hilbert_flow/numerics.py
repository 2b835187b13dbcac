"""Vector math plumbing: seeded streams, cross-entropy, a tanh MLP with
hand-written backprop, and a central finite-difference gradient oracle."""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, NumericalError

_MASK64 = (1 << 64) - 1


class RngStream:
    """Deterministic random stream keyed by ``(master_seed, stream_id)``.

    Backed by the Philox4x64 counter-based generator with the two 64-bit
    integers packed into its 128-bit key, so distinct stream ids are
    independent by construction and the n-th draw depends only on the key
    and n. Normals are produced with the Box-Muller transform on top of
    the uniform source.
    """

    def __init__(self, master_seed: int, stream_id: int = 0):
        self.master_seed = int(master_seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = (self.stream_id << 64) | self.master_seed
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def uniform(self, size=None):
        """Uniform draws on [0, 1)."""
        return self._gen.random(size)

    def normal(self, size=None):
        """Standard normal draws (Box-Muller, both branches used)."""
        shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
        count = int(np.prod(shape, dtype=np.int64))
        pairs = (count + 1) // 2
        u = self._gen.random((pairs, 2))
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))  # 1-u in (0, 1]
        angle = 2.0 * np.pi * u[:, 1]
        z = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1).ravel()[:count]
        if size is None:
            return float(z[0])
        return z.reshape(shape)

    def permutation(self, n: int):
        """Random permutation of ``range(n)`` driven by this stream's uniforms."""
        return np.argsort(self._gen.random(n), kind="stable")

    def categorical(self, weights, size: int):
        cdf = np.cumsum(np.asarray(weights, dtype=float))
        cdf /= cdf[-1]
        return np.minimum(np.searchsorted(cdf, self._gen.random(size), side="right"), len(cdf) - 1)


def seeded_stream(master_seed: int, stream_id: int) -> RngStream:
    return RngStream(master_seed, stream_id)


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix ``inputs`` (n, D) with integer ``labels`` in [0, n_classes)."""

    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.asarray(self.labels, dtype=np.int64).ravel()
        if x.shape[0] != y.shape[0]:
            raise ArgumentError(f"{x.shape[0]} inputs but {y.shape[0]} labels")
        if y.size < 1:
            raise ArgumentError("dataset must contain at least one sample")
        if self.n_classes < 1 or y.min() < 0 or y.max() >= self.n_classes:
            raise ArgumentError("labels must lie in [0, n_classes)")
        if not np.all(np.isfinite(x)):
            raise ArgumentError("features must be finite")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.inputs[idx], self.labels[idx], self.n_classes)


@dataclass(frozen=True)
class MLPSpec:
    """One-hidden-layer tanh network. ``hidden_dim=0`` means a linear softmax model."""

    input_dim: int
    hidden_dim: int
    class_count: int

    def __post_init__(self):
        if self.input_dim < 1 or self.class_count < 1 or self.hidden_dim < 0:
            raise ArgumentError(f"invalid MLP dimensions {self}")

    @property
    def n_params(self) -> int:
        if self.hidden_dim == 0:
            return self.class_count * (self.input_dim + 1)
        return self.hidden_dim * (self.input_dim + 1) + self.class_count * (self.hidden_dim + 1)

    def unpack(self, params):
        """Split a (k, d) stack of flat parameter vectors into weight arrays.

        Layout is W1 (H, D), b1 (H), W2 (C, H), b2 (C), row-major.
        """
        p = np.asarray(params, dtype=float)
        k = p.shape[0]
        D, H, C = self.input_dim, self.hidden_dim, self.class_count
        if H == 0:
            W = p[:, : C * D].reshape(k, C, D)
            return W, p[:, C * D :]
        o = 0
        W1 = p[:, o : o + H * D].reshape(k, H, D)
        o += H * D
        b1 = p[:, o : o + H]
        o += H
        W2 = p[:, o : o + C * H].reshape(k, C, H)
        o += C * H
        b2 = p[:, o : o + C]
        return W1, b1, W2, b2


def log_softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax(logits, axis=-1):
    return np.exp(log_softmax(logits, axis=axis))


def softmax_cross_entropy(logits, label: int) -> float:
    z = np.asarray(logits, dtype=float).ravel()
    if not 0 <= label < z.size:
        raise ArgumentError(f"label {label} out of range for {z.size} classes")
    return float(-log_softmax(z)[label])


def mlp_logits_many(spec: MLPSpec, params, inputs):
    """Logits of shape (k, n, C) for a (k, d) stack of parameter vectors."""
    x = np.asarray(inputs, dtype=float)
    if spec.hidden_dim == 0:
        W, b = spec.unpack(params)
        return np.einsum("kcd,nd->knc", W, x) + b[:, None, :]
    W1, b1, W2, b2 = spec.unpack(params)
    hidden = np.tanh(np.einsum("khd,nd->knh", W1, x) + b1[:, None, :])
    return np.einsum("kch,knh->knc", W2, hidden) + b2[:, None, :]


def mlp_loss_and_grad_many(spec: MLPSpec, params, batch: LabeledDataset):
    """Mean cross-entropy and its gradient for each row of a (k, d) parameter stack.

    Rows are processed independently: the result for row i does not depend
    on the other rows.
    """
    P = np.atleast_2d(np.asarray(params, dtype=float))
    if P.shape[1] != spec.n_params:
        raise ArgumentError(f"expected {spec.n_params} parameters, got {P.shape[1]}")
    if batch.input_dim != spec.input_dim:
        raise ArgumentError(f"batch has {batch.input_dim} features, spec expects {spec.input_dim}")
    x, y, n = batch.inputs, batch.labels, batch.n
    onehot = np.zeros((n, spec.class_count))
    onehot[np.arange(n), y] = 1.0

    if spec.hidden_dim == 0:
        W, b = spec.unpack(P)
        logits = np.einsum("kcd,nd->knc", W, x) + b[:, None, :]
        logp = log_softmax(logits)
        loss = -logp[:, np.arange(n), y].mean(axis=1)
        dlogits = (np.exp(logp) - onehot) / n
        gW = np.einsum("knc,nd->kcd", dlogits, x)
        gb = dlogits.sum(axis=1)
        return loss, np.concatenate([gW.reshape(len(P), -1), gb], axis=1)

    W1, b1, W2, b2 = spec.unpack(P)
    hidden = np.tanh(np.einsum("khd,nd->knh", W1, x) + b1[:, None, :])
    logits = np.einsum("kch,knh->knc", W2, hidden) + b2[:, None, :]
    logp = log_softmax(logits)
    loss = -logp[:, np.arange(n), y].mean(axis=1)

    dlogits = (np.exp(logp) - onehot) / n
    gW2 = np.einsum("knc,knh->kch", dlogits, hidden)
    gb2 = dlogits.sum(axis=1)
    dpre = np.einsum("knc,kch->knh", dlogits, W2) * (1.0 - hidden**2)
    gW1 = np.einsum("knh,nd->khd", dpre, x)
    gb1 = dpre.sum(axis=1)
    k = len(P)
    grad = np.concatenate([gW1.reshape(k, -1), gb1, gW2.reshape(k, -1), gb2], axis=1)
    return loss, grad


def mlp_loss_and_grad(spec: MLPSpec, params, batch: LabeledDataset):
    p = np.asarray(params, dtype=float)
    if p.ndim != 1:
        raise ArgumentError("params must be a flat vector")
    loss, grad = mlp_loss_and_grad_many(spec, p[None, :], batch)
    return float(loss[0]), grad[0]


def finite_difference_gradient(f, theta, h: float = 1e-5):
    """Central differences (f(θ + h e_i) - f(θ - h e_i)) / 2h, one coordinate at a time."""
    if h <= 0:
        raise ArgumentError("step h must be positive")
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros_like(theta)
    x = theta.copy()
    for i in range(theta.size):
        x[i] = theta[i] + h
        fp = float(f(x))
        x[i] = theta[i] - h
        fm = float(f(x))
        x[i] = theta[i]
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError(f"non-finite function value near coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def quiet_overflow(fn):
    """Silence numpy overflow warnings; callers detect divergence with explicit finite checks."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with np.errstate(over="ignore", invalid="ignore"):
            return fn(*args, **kwargs)

    return wrapper
