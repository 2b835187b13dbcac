"""Particle update engines: FHBI ascent/descent, SVGD, SAM, SGLD, ensembles.

Every multi-particle step is bulk-synchronous: all directions are computed
from one snapshot of the ensemble and applied together. Per-particle work
is split into fixed chunks (one per particle) before it is handed to the
thread pool, so the worker count never changes any floating-point result.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, DegenerateEnsembleError, DivergenceError
from .kernels import MEDIAN, KernelSpec, gram_and_repulsion, median_bandwidth
from .metrics import MetricsRecord, collect_metrics
from .numerics import RngStream, quiet_overflow

FHBI = "fhbi"
SVGD = "svgd"
SGLD = "sgld"
SAM = "sam"
ENSEMBLE = "ensemble"
ALGOS = (FHBI, SVGD, SGLD, SAM, ENSEMBLE)

CONSTANT = "constant"
COSINE = "cosine"

_PHI_FLOOR = 1e-12
# data shuffling uses its own stream, away from the per-particle ids 0..m-1
_SHUFFLE_STREAM = 1 << 32


@dataclass
class Ensemble:
    particles: np.ndarray
    step: int = 0

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.particles, dtype=float))
        if X.shape[0] < 1:
            raise ArgumentError("ensemble needs at least one particle")
        self.particles = X

    @property
    def m(self) -> int:
        return self.particles.shape[0]

    def copy(self) -> "Ensemble":
        return Ensemble(self.particles.copy(), self.step)


@dataclass(frozen=True)
class SamplerConfig:
    algo: str = FHBI
    m: int = 4
    rho: float = 0.03
    lr: float = 0.1
    epochs: int = 50
    batch_size: int = 32
    kernel: KernelSpec = field(default_factory=KernelSpec)
    seed: int = 0
    lr_schedule: str = CONSTANT
    warmup_epochs: int = 0
    init_std: float | None = None

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ArgumentError(f"unknown algorithm {self.algo!r}")
        if self.m < 1:
            raise ArgumentError("m must be >= 1")
        if self.algo == SAM and self.m != 1:
            raise ArgumentError("SAM is a single-particle method; use m = 1")
        if self.rho < 0:
            raise ArgumentError("rho must be nonnegative")
        if not self.lr > 0:
            raise ArgumentError("lr must be positive")
        if self.epochs < 0 or self.batch_size < 1 or self.warmup_epochs < 0:
            raise ArgumentError("epochs, batch_size and warmup_epochs must be nonnegative/positive")
        if self.lr_schedule not in (CONSTANT, COSINE):
            raise ArgumentError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.init_std is not None and not self.init_std > 0:
            raise ArgumentError("init_std must be positive")


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("HILBERT_FLOW_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _particles(ensemble):
    return ensemble.particles if isinstance(ensemble, Ensemble) else np.atleast_2d(np.asarray(ensemble, float))


def resolve_kernel(kernel: KernelSpec, X) -> KernelSpec:
    """Apply the median bandwidth policy to a snapshot; falls back to the fixed sigma
    when the ensemble is too small or collapsed for the heuristic."""
    if kernel.bandwidth_policy != MEDIAN or kernel.family != "rbf":
        return kernel
    try:
        return kernel.with_sigma(median_bandwidth(X))
    except DegenerateEnsembleError:
        return kernel


def _direction_row(K_row, G, R_row, m):
    return -(K_row @ G + R_row) / m


def _score(target, X, batch):
    return target.score_many(X, batch)


def phi_direction(ensemble, target, kernel: KernelSpec, batch=None, perturbation=None):
    """phi(theta_i) = -(1/m) sum_j [k(theta_i, theta_j) g_j + grad_{theta_j} k(theta_i, theta_j)]
    with g_j the log-posterior gradient at theta_j + perturbation."""
    X = _particles(ensemble)
    m, d = X.shape
    if perturbation is not None:
        perturbation = np.asarray(perturbation, dtype=float)
        if perturbation.shape != (d,):
            raise ArgumentError(f"perturbation must have shape ({d},)")
    kernel = resolve_kernel(kernel, X)
    K, R = gram_and_repulsion(kernel, X)
    G = _score(target, X if perturbation is None else X + perturbation, batch)
    return np.stack([_direction_row(K[i], G, R[i], m) for i in range(m)])


def _ascent_from_phi(phi, rho):
    out = np.zeros_like(phi)
    for i, row in enumerate(phi):
        norm = np.linalg.norm(row)
        if norm >= _PHI_FLOOR:
            out[i] = rho * row / norm
    return out


def fhbi_ascent(ensemble, target, kernel: KernelSpec, rho: float, batch=None):
    """Per-particle adversarial perturbations rho * phi_i / |phi_i| (zero where |phi_i| < 1e-12)."""
    if rho < 0:
        raise ArgumentError("rho must be nonnegative")
    return _ascent_from_phi(phi_direction(ensemble, target, kernel, batch), rho)


def _check_finite(new, step):
    bad = ~np.all(np.isfinite(new), axis=1)
    if bad.any():
        raise DivergenceError(int(np.argmax(bad)), step)


@quiet_overflow
def fhbi_descent(ensemble, perturbations, target, kernel: KernelSpec, lr: float, batch=None):
    """theta_i <- theta_i - lr * psi(theta_i, eps_i), where psi scores every theta_j at
    theta_j + eps_i while the kernel terms use the unperturbed snapshot."""
    X = _particles(ensemble)
    step = ensemble.step if isinstance(ensemble, Ensemble) else 0
    m = X.shape[0]
    E = np.asarray(perturbations, dtype=float)
    if E.shape != X.shape:
        raise ArgumentError("one perturbation per particle required")
    kernel = resolve_kernel(kernel, X)
    K, R = gram_and_repulsion(kernel, X)

    def psi(i):
        return _direction_row(K[i], _score(target, X + E[i], batch), R[i], m)

    new = X - lr * np.stack(_map(psi, range(m)))
    _check_finite(new, step)
    return Ensemble(new, step + 1)


@quiet_overflow
def svgd_step(ensemble, target, kernel: KernelSpec, lr: float, batch=None):
    X = _particles(ensemble)
    step = ensemble.step if isinstance(ensemble, Ensemble) else 0
    new = X - lr * phi_direction(X, target, kernel, batch)
    _check_finite(new, step)
    return Ensemble(new, step + 1)


def fhbi_step(ensemble, target, config: SamplerConfig, batch=None, lr=None):
    """One ascent + descent pass on a shared batch and a shared bandwidth."""
    lr = config.lr if lr is None else lr
    X = _particles(ensemble)
    kernel = resolve_kernel(config.kernel, X)
    eps = fhbi_ascent(ensemble, target, kernel, config.rho, batch)
    return fhbi_descent(ensemble, eps, target, kernel, lr, batch)


@quiet_overflow
def sgld_step(particle, target, lr: float, batch, rng: RngStream, noise=True):
    """theta + (lr/2) grad log p(theta|S) + sqrt(lr) xi."""
    if not lr > 0:
        raise ArgumentError("lr must be positive")
    theta = np.asarray(particle, dtype=float)
    drift = 0.5 * lr * target.log_posterior_grad(theta, batch)
    xi = rng.normal(theta.size) if noise else np.zeros_like(theta)
    new = theta + drift + math.sqrt(lr) * xi
    if not np.all(np.isfinite(new)):
        raise DivergenceError(0, 0)
    return new


@quiet_overflow
def sam_step(particle, target, rho: float, lr: float, batch=None):
    """SAM on the loss alone (no prior term)."""
    if rho < 0:
        raise ArgumentError("rho must be nonnegative")
    theta = np.asarray(particle, dtype=float)
    _, g = target.loss_grad_many(theta[None, :], batch)
    g = g[0]
    norm = np.linalg.norm(g)
    eps = rho * g / norm if norm >= _PHI_FLOOR else np.zeros_like(g)
    _, g_adv = target.loss_grad_many((theta + eps)[None, :], batch)
    new = theta - lr * g_adv[0]
    if not np.all(np.isfinite(new)):
        raise DivergenceError(0, 0)
    return new


# -- trajectory runner ---------------------------------------------------------


@dataclass
class Trajectory:
    snapshots: list = field(default_factory=list)
    records: list = field(default_factory=list)
    diverged: bool = False
    error: str | None = None

    @property
    def final(self) -> Ensemble:
        return self.snapshots[-1]

    def __iter__(self):
        return iter(zip(self.snapshots, self.records))

    def __len__(self):
        return len(self.records)


def _start(config: SamplerConfig, target):
    rngs = [RngStream(config.seed, i) for i in range(config.m)]
    rows = []
    for rng in rngs:
        if config.init_std is not None:
            rows.append(config.init_std * rng.normal(target.dim))
        elif target.analytic:
            rows.append(2.0 * rng.normal(target.dim))
        else:
            rows.append(target.prior_sample(rng))
    # SGLD noise continues each particle's stream after its initial draw
    return Ensemble(np.stack(rows), 0), rngs


def initial_ensemble(config: SamplerConfig, target) -> Ensemble:
    """Per-particle streams (stream id = particle index) draw the starting points:
    the prior for data targets, N(0, 4 I) for analytic ones, N(0, init_std^2 I) if set."""
    return _start(config, target)[0]


def steps_per_epoch(config: SamplerConfig, target) -> int:
    if target.analytic:
        return 1
    return math.ceil(target.train.n / config.batch_size)


def learning_rate(config: SamplerConfig, t: int, total: int, per_epoch: int) -> float:
    lr = config.lr
    if config.lr_schedule == COSINE and total > 0:
        lr *= 0.5 * (1.0 + math.cos(math.pi * t / total))
    ramp = config.warmup_epochs * per_epoch
    if ramp > 0 and t < ramp:
        lr *= (t + 1) / ramp
    return lr


def _epoch_batches(config, target, rng):
    if target.analytic:
        yield None
        return
    order = rng.permutation(target.train.n)
    for start in range(0, target.train.n, config.batch_size):
        yield target.train.subset(order[start : start + config.batch_size])


def advance(ensemble, target, config: SamplerConfig, batch, lr, rngs):
    """Apply one step of ``config.algo`` and return the new ensemble."""
    X = ensemble.particles
    if config.algo == FHBI:
        return fhbi_step(ensemble, target, config, batch, lr)
    if config.algo == SVGD:
        return svgd_step(ensemble, target, config.kernel, lr, batch)
    if config.algo == SGLD:
        fn = lambda i: sgld_step(X[i], target, lr, batch, rngs[i])
    else:
        rho = config.rho if config.algo == SAM else 0.0
        fn = lambda i: sam_step(X[i], target, rho, lr, batch)
    try:
        new = np.stack(_map(fn, range(ensemble.m)))
    except DivergenceError:
        new = np.full_like(X, np.nan)
    _check_finite(new, ensemble.step)
    return Ensemble(new, ensemble.step + 1)


def run_sampler(config: SamplerConfig, target, cadence: int = 1, sharpness_rho=None, bins: int = 15,
                keep_snapshots=True) -> Trajectory:
    """Run ``epochs`` passes over the training data and record metrics every ``cadence`` steps.

    The initial and final states are always recorded. A divergence stops the
    run; the partial trajectory comes back with ``diverged`` set.
    """
    if cadence < 1:
        raise ArgumentError("cadence must be >= 1")
    rho_metric = sharpness_rho if sharpness_rho is not None else (config.rho or 0.03)
    ensemble, rngs = _start(config, target)
    shuffle_rng = RngStream(config.seed, _SHUFFLE_STREAM)
    per_epoch = steps_per_epoch(config, target)
    total = config.epochs * per_epoch

    traj = Trajectory()

    def record(ens):
        traj.records.append(collect_metrics(ens, target, rho_metric, bins))
        traj.snapshots.append(ens.copy() if keep_snapshots else Ensemble(ens.particles, ens.step))

    record(ensemble)
    for _ in range(config.epochs):
        for batch in _epoch_batches(config, target, shuffle_rng):
            lr = learning_rate(config, ensemble.step, total, per_epoch)
            try:
                ensemble = advance(ensemble, target, config, batch, lr, rngs)
            except DivergenceError as exc:
                traj.diverged = True
                traj.error = str(exc)
                return traj
            if ensemble.step % cadence == 0 or ensemble.step == total:
                record(ensemble)
    return traj


def final_particles(config: SamplerConfig, target) -> np.ndarray:
    """Run without metrics bookkeeping and return the final particle array."""
    ensemble, rngs = _start(config, target)
    shuffle_rng = RngStream(config.seed, _SHUFFLE_STREAM)
    per_epoch = steps_per_epoch(config, target)
    total = config.epochs * per_epoch
    for _ in range(config.epochs):
        for batch in _epoch_batches(config, target, shuffle_rng):
            lr = learning_rate(config, ensemble.step, total, per_epoch)
            ensemble = advance(ensemble, target, config, batch, lr, rngs)
    return ensemble.particles
