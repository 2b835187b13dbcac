"""Command line entry point: ``hilbert-flow {run,sweep,compare,export}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ArgumentError, ConfigError
from .harness import (
    EXIT_CONFIG,
    EXIT_DIVERGED,
    EXIT_OK,
    compare,
    expand_sweep,
    export_plot_data,
    load_config,
    run_experiment,
    version_string,
    write_comparison_csv,
    write_plot_data,
)


def _load(path, args):
    cfg = load_config(path)
    if args.seed is not None:
        cfg = cfg.set("sampler.seed", args.seed)
    if args.output_dir is not None:
        cfg = cfg.set("output_dir", args.output_dir)
    return cfg


def _report(summary):
    final = summary["final"]
    keys = ("train_loss", "holdout_loss", "accuracy", "ece", "sharpness_mean", "moment_error")
    shown = ", ".join(f"{k}={final[k]:.4g}" for k in keys if final.get(k) is not None)
    print(f"[{summary['status']}] steps={summary['steps']} {shown} -> {summary['metrics_csv']}")


def cmd_run(args):
    summary = run_experiment(_load(args.config, args))
    _report(summary)
    return summary["exit_code"]


def cmd_sweep(args):
    cfg = _load(args.config, args)
    code = EXIT_OK
    for sub in expand_sweep(cfg):
        summary = run_experiment(sub)
        _report(summary)
        code = max(code, summary["exit_code"])
    return code


def cmd_compare(args):
    configs = [_load(p, args) for p in args.configs]
    result = compare(configs, paired_seeds=args.seeds)
    out = Path(args.output_dir or "runs/compare")
    out.mkdir(parents=True, exist_ok=True)
    write_comparison_csv(result, out / "comparison.csv")
    for row in result["rows"]:
        print(f"{row['config']:>14} {row['metric']:<24} {row['mean']:.5g} ± {row['std']:.3g}")
    print(f"wrote {out / 'comparison.csv'}")
    return EXIT_OK


def cmd_export(args):
    rows = export_plot_data(args.csvs, args.metric)
    if args.out:
        write_plot_data(rows, args.out)
    else:
        write_plot_data(rows, "/dev/stdout")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="hilbert-flow", description=__doc__)
    parser.add_argument("--version", action="version", version=f"hilbert-flow {version_string()}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--output-dir", default=None)
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("run", help="run one experiment config")
    p.add_argument("config")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="expand sweep.* keys and run every combination")
    p.add_argument("config")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="run configs over shared seeds and tabulate")
    p.add_argument("configs", nargs="+")
    p.add_argument("--seeds", type=int, default=5)
    common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("export", help="long-format (run_id, step, value) CSV for plotting")
    p.add_argument("csvs", nargs="+")
    p.add_argument("--metric", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ArgumentError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
