"""Experiment configs, seeded runs, sweeps, paired comparisons and plot-data export.

Config files are flat ``dotted.key = value`` lines. ``#`` starts a comment.
Values are Python literals (numbers, lists, quoted strings, True/False/None)
or bare words, which are read as strings. A ``sweep.<key> = [v1, v2, ...]``
line expands the run over those values (Cartesian product across keys).

Example::

    target.kind = blobs
    target.hidden_dim = 16
    sampler.algo = fhbi
    sampler.rho = 0.05
    sweep.sampler.m = [1, 4, 10]
"""

from __future__ import annotations

import ast
import csv
import itertools
import json
import math
import re
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ArgumentError, ConfigError
from .kernels import KernelSpec
from .metrics import CSV_FIELDS
from .numerics import MLPSpec
from .samplers import SamplerConfig, run_sampler, worker_count
from .targets import (
    ARCS,
    BLOBS,
    DatasetSpec,
    GaussianMixtureTarget,
    GaussianTarget,
    LogisticPosterior,
    MLPPosterior,
    make_splits,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2

# key -> default; None marks "no default / derived later"
DEFAULTS = {
    "target.kind": None,
    "target.model": "mlp",
    "target.hidden_dim": 16,
    "target.prior_precision": 1e-2,
    "target.centers": [[-2.0, -2.0], [2.0, 2.0]],
    "target.spread": 1.0,
    "target.noise": 0.2,
    "target.per_class": 50,
    "target.holdout_per_class": 200,
    "target.extra_dims": 0,
    "target.seed": None,
    "target.mean": [0.0],
    "target.covariance": None,
    "target.weights": [0.5, 0.5],
    "target.means": [[-3.0], [3.0]],
    "target.covariances": None,
    "sampler.algo": None,
    "sampler.m": 4,
    "sampler.rho": 0.03,
    "sampler.lr": 0.1,
    "sampler.epochs": 50,
    "sampler.batch_size": 32,
    "sampler.seed": 0,
    "sampler.lr_schedule": "constant",
    "sampler.warmup_epochs": 0,
    "sampler.init_std": 0.5,
    "kernel.family": "rbf",
    "kernel.sigma": 1.0,
    "kernel.degree": 10,
    "kernel.offset": 1.0,
    "kernel.bandwidth": "fixed",
    "metrics.cadence": 1,
    "metrics.bins": 15,
    "metrics.sharpness_rho": None,
    "output_dir": "runs/experiment",
}

TARGET_KINDS = (BLOBS, ARCS, "gaussian", "mixture")
REQUIRED = ("target.kind", "sampler.algo")


@dataclass
class ExperimentConfig:
    values: dict
    sweep: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def output_dir(self) -> Path:
        return Path(self.values["output_dir"])

    @property
    def seed(self) -> int:
        return int(self.values["sampler.seed"])

    def with_values(self, **updates) -> "ExperimentConfig":
        vals = dict(self.values)
        for k, v in updates.items():
            vals[k.replace("__", ".")] = v
        return validate(vals, dict(self.sweep))

    def set(self, key, value) -> "ExperimentConfig":
        vals = dict(self.values)
        vals[key] = value
        return validate(vals, dict(self.sweep))

    def sampler_config(self) -> SamplerConfig:
        v = self.values
        kernel = KernelSpec(
            family=v["kernel.family"],
            sigma=float(v["kernel.sigma"]),
            degree=int(v["kernel.degree"]),
            offset=float(v["kernel.offset"]),
            bandwidth_policy=v["kernel.bandwidth"],
        )
        return SamplerConfig(
            algo=v["sampler.algo"],
            m=int(v["sampler.m"]),
            rho=float(v["sampler.rho"]),
            lr=float(v["sampler.lr"]),
            epochs=int(v["sampler.epochs"]),
            batch_size=int(v["sampler.batch_size"]),
            kernel=kernel,
            seed=int(v["sampler.seed"]),
            lr_schedule=v["sampler.lr_schedule"],
            warmup_epochs=int(v["sampler.warmup_epochs"]),
            init_std=None if v["sampler.init_std"] is None else float(v["sampler.init_std"]),
        )

    def build_target(self):
        v = self.values
        kind = v["target.kind"]
        if kind == "gaussian":
            mean = np.atleast_1d(np.asarray(v["target.mean"], dtype=float))
            cov = v["target.covariance"]
            cov = np.eye(mean.size) if cov is None else np.asarray(cov, dtype=float)
            return GaussianTarget(mean, cov)
        if kind == "mixture":
            means = [np.atleast_1d(np.asarray(mu, dtype=float)) for mu in v["target.means"]]
            covs = v["target.covariances"] or [np.eye(mu.size) for mu in means]
            comps = [GaussianTarget(mu, np.atleast_2d(np.asarray(c, float))) for mu, c in zip(means, covs)]
            return GaussianMixtureTarget(v["target.weights"], comps)
        seed = v["target.seed"] if v["target.seed"] is not None else v["sampler.seed"]
        spec = DatasetSpec(
            generator=kind,
            centers=tuple(tuple(c) for c in v["target.centers"]),
            spread=float(v["target.spread"]),
            noise=float(v["target.noise"]),
            per_class=int(v["target.per_class"]),
            seed=int(seed),
            extra_dims=int(v["target.extra_dims"]),
        )
        train, holdout = make_splits(spec, int(v["target.holdout_per_class"]))
        prior = float(v["target.prior_precision"])
        if v["target.model"] == "logistic":
            return LogisticPosterior(train, holdout, prior)
        mlp = MLPSpec(train.input_dim, int(v["target.hidden_dim"]), train.n_classes)
        return MLPPosterior(mlp, train, holdout, prior)

    def sharpness_rho(self) -> float:
        r = self.values["metrics.sharpness_rho"]
        if r is not None:
            return float(r)
        return float(self.values["sampler.rho"]) or 0.03

    def to_text(self) -> str:
        lines = [f"{k} = {_fmt(v)}" for k, v in self.values.items() if v is not None]
        lines += [f"sweep.{k} = {_fmt(v)}" for k, v in self.sweep.items()]
        return "\n".join(lines) + "\n"


def _fmt(v):
    return v if isinstance(v, str) else repr(v)


def _parse_value(raw: str):
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        if any(ch in raw for ch in "[](){}'\","):
            raise
        return raw


def parse_config(text: str) -> ExperimentConfig:
    values = {}
    sweep = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line=lineno)
        key, raw = (s.strip() for s in line.split("=", 1))
        if not key or not raw:
            raise ConfigError(f"empty key or value in {line!r}", line=lineno)
        try:
            value = _parse_value(raw)
        except (ValueError, SyntaxError):
            raise ConfigError(f"cannot parse value {raw!r}", line=lineno, field=key) from None
        if key.startswith("sweep."):
            sub = key[len("sweep.") :]
            if sub not in DEFAULTS:
                raise ConfigError(f"unknown key {sub!r}", line=lineno, field=sub)
            if not isinstance(value, list) or not value:
                raise ConfigError(f"sweep values for {sub!r} must be a nonempty list", line=lineno, field=sub)
            sweep[sub] = value
            continue
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}", line=lineno, field=key)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", line=lineno, field=key)
        values[key] = value
    return validate(values, sweep)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def validate(values: dict, sweep=None) -> ExperimentConfig:
    """Fill defaults and check every field; raises ConfigError naming the field."""
    for key in values:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}", field=key)
    full = {k: values.get(k, d) for k, d in DEFAULTS.items()}
    for key in REQUIRED:
        if full[key] is None:
            raise ConfigError(f"missing required key {key!r}", field=key)
    if isinstance(full["sampler.algo"], str):
        full["sampler.algo"] = full["sampler.algo"].lower()
    for key in ("kernel.family", "kernel.bandwidth", "sampler.lr_schedule", "target.kind", "target.model"):
        if isinstance(full[key], str):
            full[key] = full[key].lower()
    if full["target.kind"] not in TARGET_KINDS:
        raise ConfigError(f"target.kind must be one of {TARGET_KINDS}", field="target.kind")
    if full["target.model"] not in ("mlp", "logistic"):
        raise ConfigError("target.model must be 'mlp' or 'logistic'", field="target.model")
    if full["kernel.bandwidth"] == "median_heuristic":
        full["kernel.bandwidth"] = "median"
    if int(full["metrics.cadence"]) < 1:
        raise ConfigError("metrics.cadence must be >= 1", field="metrics.cadence")
    if int(full["metrics.bins"]) < 1:
        raise ConfigError("metrics.bins must be >= 1", field="metrics.bins")
    cfg = ExperimentConfig(full, dict(sweep or {}))
    for build, fields in (
        (cfg.sampler_config, "sampler"),
        (cfg.build_target, "target"),
    ):
        try:
            build()
        except ConfigError:
            raise
        except (ArgumentError, ValueError, TypeError, np.linalg.LinAlgError) as exc:
            name = _guess_field(str(exc), fields, full)
            raise ConfigError(f"invalid value for {name!r}: {exc}", field=name) from None
    return cfg


def _guess_field(message, prefix, values):
    msg = message.lower()
    for scope in (prefix, ""):
        for key in values:
            if key.startswith(scope) and re.search(rf"\b{re.escape(key.split('.')[-1])}\b", msg):
                return key
    return prefix


def expand_sweep(config: ExperimentConfig) -> list:
    """Cartesian product over the sweep axes; each run gets its own output subdirectory."""
    if not config.sweep:
        return [config]
    keys = list(config.sweep)
    out = []
    for combo in itertools.product(*(config.sweep[k] for k in keys)):
        vals = dict(config.values)
        tag = []
        for k, v in zip(keys, combo):
            vals[k] = v
            tag.append(f"{k.split('.')[-1]}={v}")
        vals["output_dir"] = str(Path(config.values["output_dir"]) / "_".join(tag))
        out.append(validate(vals, {}))
    return out


def version_string() -> str:
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"{__version__}-g{desc}" if desc else __version__


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float) and not math.isfinite(value):
        return ""
    return repr(value) if isinstance(value, float) else str(value)


def write_metrics_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for rec in records:
            row = rec.as_row()
            w.writerow([_cell(row[f]) for f in CSV_FIELDS])


def read_metrics_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def execute(config: ExperimentConfig):
    """Run the sampler for ``config`` without touching the filesystem.

    Returns ``(trajectory, summary)``.
    """
    target = config.build_target()
    scfg = config.sampler_config()
    start = time.perf_counter()
    traj = run_sampler(
        scfg,
        target,
        cadence=int(config["metrics.cadence"]),
        sharpness_rho=config.sharpness_rho(),
        bins=int(config["metrics.bins"]),
        keep_snapshots=False,
    )
    final = traj.records[-1]
    holdout = [r.holdout_loss for r in traj.records if r.holdout_loss is not None]
    summary = {
        "status": "diverged" if traj.diverged else "ok",
        "error": traj.error,
        "steps": final.step,
        "records": len(traj.records),
        "final": {k: v for k, v in final.as_row().items()},
        "holdout_accuracy": final.accuracy,
        "best_holdout_loss": min(holdout) if holdout else None,
        "wall_time_s": time.perf_counter() - start,
        "version": version_string(),
        "config": config.to_text(),
    }
    return traj, summary


def run_experiment(config: ExperimentConfig, output_dir=None) -> dict:
    """Run one config, write ``metrics.csv`` and ``summary.json``; return the summary.

    ``summary["exit_code"]`` is 0 on success and 2 if the run diverged (the
    partial CSV is kept).
    """
    out = Path(output_dir) if output_dir is not None else config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    traj, summary = execute(config)
    write_metrics_csv(traj.records, out / "metrics.csv")
    summary["exit_code"] = EXIT_DIVERGED if traj.diverged else EXIT_OK
    summary["metrics_csv"] = str(out / "metrics.csv")
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def run_sweep(config: ExperimentConfig) -> list:
    configs = expand_sweep(config)
    return _parallel(run_experiment, configs)


def _parallel(fn, items):
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _label(config: ExperimentConfig, index: int) -> str:
    return f"{index}:{config['sampler.algo']}"


def _series(records, attr):
    vals = [getattr(r, attr) for r in records]
    return np.array([np.nan if v is None else v for v in vals], dtype=float)


def run_statistics(records) -> dict:
    """Final-state metrics plus trajectory summaries used by paired comparisons."""
    final = records[-1]
    sharp = _series(records, "sharpness_mean")
    ang = _series(records, "mean_angular_similarity")
    half = sharp[len(sharp) // 2 :]
    stats = {k: v for k, v in final.as_row().items() if k != "step"}
    stats["sharpness_std_late"] = float(np.nanstd(half)) if np.isfinite(half).any() else None
    stats["angular_similarity_mean"] = float(np.nanmean(ang)) if np.isfinite(ang).any() else None
    return stats


COMPARE_METRICS = (
    "train_loss",
    "holdout_loss",
    "sharpness_mean",
    "sharpness_max",
    "sharpness_std_late",
    "angular_similarity",
    "angular_similarity_mean",
    "grad_cov_frobenius",
    "ece",
    "accuracy",
    "moment_error",
)


def compare(configs, paired_seeds: int = 5, seeds=None) -> dict:
    """Run every config on a shared seed list.

    Returns a dict with ``rows`` (metric, config, mean, std, n) for the
    table and ``paired`` (per-seed differences of config i minus config 0
    for the sharpness and angular-similarity statistics). ``runs`` holds the
    raw per-seed statistics.
    """
    if paired_seeds < 1:
        raise ArgumentError("paired_seeds must be >= 1")
    seeds = list(seeds) if seeds is not None else list(range(paired_seeds))
    jobs = [(ci, s) for ci in range(len(configs)) for s in seeds]

    def one(job):
        ci, s = job
        traj, _ = execute(configs[ci].set("sampler.seed", s))
        return run_statistics(traj.records)

    results = _parallel(one, jobs)
    runs = {(ci, s): r for (ci, s), r in zip(jobs, results)}
    rows = []
    for ci, cfg in enumerate(configs):
        for metric in COMPARE_METRICS:
            vals = [runs[(ci, s)][metric] for s in seeds]
            vals = np.array([np.nan if v is None else v for v in vals], dtype=float)
            if np.isnan(vals).all():
                continue
            rows.append(
                {
                    "config": _label(cfg, ci),
                    "metric": metric,
                    "mean": float(np.nanmean(vals)),
                    "std": float(np.nanstd(vals, ddof=1)) if np.sum(~np.isnan(vals)) > 1 else 0.0,
                    "n": int(np.sum(~np.isnan(vals))),
                }
            )
    paired = []
    for ci in range(1, len(configs)):
        for s in seeds:
            for metric in ("sharpness_mean", "sharpness_std_late", "angular_similarity_mean"):
                a, b = runs[(ci, s)][metric], runs[(0, s)][metric]
                if a is None or b is None:
                    continue
                paired.append(
                    {
                        "config": _label(configs[ci], ci),
                        "baseline": _label(configs[0], 0),
                        "seed": s,
                        "metric": metric,
                        "difference": a - b,
                    }
                )
    return {"rows": rows, "paired": paired, "runs": runs, "seeds": seeds}


def write_comparison_csv(result: dict, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "config", "baseline", "seed", "metric", "mean", "std", "n", "difference"])
        for r in result["rows"]:
            w.writerow(["summary", r["config"], "", "", r["metric"], repr(r["mean"]), repr(r["std"]), r["n"], ""])
        for p in result["paired"]:
            w.writerow(["paired", p["config"], p["baseline"], p["seed"], p["metric"], "", "", "", repr(p["difference"])])


def export_plot_data(csv_paths, metric: str, run_ids=None) -> list:
    """Long-format rows ``(run_id, step, value)`` sorted by (run_id, step)."""
    rows = []
    for idx, path in enumerate(csv_paths):
        run_id = run_ids[idx] if run_ids else Path(path).parent.name or Path(path).stem
        records = read_metrics_csv(path)
        if records and metric not in records[0]:
            raise ArgumentError(f"metric {metric!r} not found in {path}")
        if not records:
            with open(path, newline="") as fh:
                header = next(csv.reader(fh), [])
            if metric not in header:
                raise ArgumentError(f"metric {metric!r} not found in {path}")
        for rec in records:
            cell = rec[metric]
            rows.append((str(run_id), int(rec["step"]), float(cell) if cell != "" else None))
    rows.sort(key=lambda r: (r[0], r[1]))
    return rows


def write_plot_data(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_id", "step", "value"])
        for run_id, step, value in rows:
            w.writerow([run_id, step, "" if value is None else repr(value)])
