import json

import pytest

from hilbert_flow.cli import main
from hilbert_flow.errors import ArgumentError, ConfigError
from hilbert_flow.harness import (
    EXIT_CONFIG,
    EXIT_DIVERGED,
    EXIT_OK,
    compare,
    expand_sweep,
    export_plot_data,
    parse_config,
    read_metrics_csv,
    run_experiment,
    run_sweep,
    write_comparison_csv,
    write_plot_data,
)
from hilbert_flow.metrics import CSV_FIELDS

DIVERGING = """
target.kind = gaussian
sampler.algo = svgd
sampler.lr = 1e12
sampler.epochs = 100
"""

SMALL = """
target.kind = blobs
target.per_class = 10
target.holdout_per_class = 10
target.hidden_dim = 4
sampler.algo = fhbi
sampler.m = 2
sampler.epochs = 2
sampler.batch_size = 8
"""


def small(tmp_path, extra="", name="run"):
    return parse_config(SMALL + extra + f"\noutput_dir = {tmp_path / name}\n")


class TestParseConfig:
    def test_defaults(self):
        cfg = parse_config("target.kind = blobs\nsampler.algo = fhbi\n")
        s = cfg.sampler_config()
        assert (s.m, s.rho, s.lr, s.epochs, s.batch_size, s.seed) == (4, 0.03, 0.1, 50, 32, 0)
        assert s.kernel.sigma == 1.0
        assert cfg["metrics.bins"] == 15

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="foo") as info:
            parse_config("target.kind = blobs\nsampler.algo = fhbi\nfoo = 1\n")
        assert info.value.line == 3
        assert info.value.field == "foo"

    def test_syntax_error_reports_line(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config("target.kind = blobs\nsampler.algo fhbi\n")

    def test_bad_literal(self):
        with pytest.raises(ConfigError) as info:
            parse_config("target.kind = blobs\nsampler.algo = fhbi\ntarget.centers = [[1, 2]\n")
        assert info.value.line == 3

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config("target.kind = blobs\ntarget.kind = arcs\nsampler.algo = fhbi\n")

    def test_missing_required(self):
        with pytest.raises(ConfigError) as info:
            parse_config("target.kind = blobs\n")
        assert info.value.field == "sampler.algo"

    def test_invalid_value_names_field(self):
        with pytest.raises(ConfigError) as info:
            parse_config("target.kind = blobs\nsampler.algo = fhbi\nsampler.rho = -1\n")
        assert info.value.field == "sampler.rho"

    def test_comments_and_case(self):
        cfg = parse_config("# header\ntarget.kind = Blobs  # inline\nsampler.algo = SVGD\n")
        assert cfg["target.kind"] == "blobs" and cfg["sampler.algo"] == "svgd"

    def test_sweep_expansion(self, tmp_path):
        cfg = small(tmp_path, "sweep.sampler.rho = [0.01, 0.03, 0.05]\n")
        runs = expand_sweep(cfg)
        assert [r["sampler.rho"] for r in runs] == [0.01, 0.03, 0.05]
        assert len({r.output_dir for r in runs}) == 3

    def test_sweep_product(self, tmp_path):
        cfg = small(tmp_path, "sweep.sampler.rho = [0.01, 0.05]\nsweep.sampler.m = [1, 2, 3]\n")
        assert len(expand_sweep(cfg)) == 6

    def test_sweep_needs_list(self):
        with pytest.raises(ConfigError):
            parse_config("target.kind = blobs\nsampler.algo = fhbi\nsweep.sampler.m = 4\n")

    def test_text_round_trip(self, tmp_path):
        cfg = small(tmp_path, "sweep.sampler.m = [1, 2]\n")
        again = parse_config(cfg.to_text())
        assert again.values == cfg.values and again.sweep == cfg.sweep


class TestRunExperiment:
    def test_zero_epochs(self, tmp_path):
        summary = run_experiment(small(tmp_path).set("sampler.epochs", 0))
        rows = read_metrics_csv(summary["metrics_csv"])
        assert len(rows) == 1 and rows[0]["step"] == "0"
        assert summary["exit_code"] == EXIT_OK

    def test_csv_header_and_empty_cells(self, tmp_path):
        summary = run_experiment(small(tmp_path))
        lines = open(summary["metrics_csv"]).read().splitlines()
        assert lines[0] == ",".join(CSV_FIELDS)
        assert lines[1].endswith(",")  # moment_error is undefined for data targets

    def test_byte_determinism(self, tmp_path):
        a = run_experiment(small(tmp_path, name="a"))
        b = run_experiment(small(tmp_path, name="b"))
        assert open(a["metrics_csv"], "rb").read() == open(b["metrics_csv"], "rb").read()
        ja = json.load(open(tmp_path / "a" / "summary.json"))
        jb = json.load(open(tmp_path / "b" / "summary.json"))
        for j in (ja, jb):
            j.pop("wall_time_s")
            j.pop("metrics_csv")
            j.pop("config")
        assert ja == jb

    def test_summary_fields(self, tmp_path):
        run_experiment(small(tmp_path))
        summary = json.load(open(tmp_path / "run" / "summary.json"))
        for key in ("final", "best_holdout_loss", "wall_time_s", "config", "version", "exit_code", "holdout_accuracy"):
            assert key in summary
        assert "sampler.algo = fhbi" in summary["config"]

    def test_divergence(self, tmp_path):
        summary = run_experiment(parse_config(DIVERGING + f"output_dir = {tmp_path}\n"))
        assert summary["exit_code"] == EXIT_DIVERGED
        assert summary["status"] == "diverged"
        assert len(read_metrics_csv(summary["metrics_csv"])) >= 1

    def test_analytic_target(self, tmp_path):
        cfg = parse_config(
            f"target.kind = gaussian\ntarget.mean = [1.0]\nsampler.algo = svgd\nsampler.epochs = 5\n"
            f"sampler.init_std = None\noutput_dir = {tmp_path}\n"
        )
        summary = run_experiment(cfg)
        assert summary["final"]["moment_error"] > 0
        assert summary["final"]["train_loss"] is None

    def test_sweep_writes_each_run(self, tmp_path):
        summaries = run_sweep(small(tmp_path, "sweep.sampler.m = [1, 2]\n"))
        assert len(summaries) == 2
        assert all((tmp_path / "run" / f"m={m}" / "metrics.csv").exists() for m in (1, 2))

    def test_default_blobs_accuracy(self, tmp_path):
        cfg = parse_config(f"target.kind = blobs\nsampler.algo = fhbi\nmetrics.cadence = 50\noutput_dir = {tmp_path}\n")
        assert run_experiment(cfg)["holdout_accuracy"] > 0.9


class TestCompare:
    def test_single_config_single_seed(self, tmp_path):
        cfg = small(tmp_path)
        result = compare([cfg], paired_seeds=1)
        means = {r["metric"]: r["mean"] for r in result["rows"]}
        assert means["accuracy"] == result["runs"][(0, 0)]["accuracy"]
        assert result["paired"] == []

    def test_zero_radius_pair_has_zero_differences(self, tmp_path):
        fhbi = small(tmp_path, "sampler.rho = 0.0\n")
        svgd = fhbi.set("sampler.algo", "svgd")
        result = compare([svgd, fhbi], paired_seeds=2)
        assert len(result["paired"]) == 6
        assert all(p["difference"] == 0.0 for p in result["paired"])

    def test_comparison_csv(self, tmp_path):
        result = compare([small(tmp_path)], paired_seeds=2)
        write_comparison_csv(result, tmp_path / "cmp.csv")
        lines = (tmp_path / "cmp.csv").read_text().splitlines()
        assert lines[0].startswith("kind,config")
        assert len(lines) == 1 + len(result["rows"])

    def test_needs_seeds(self, tmp_path):
        with pytest.raises(ArgumentError):
            compare([small(tmp_path)], paired_seeds=0)


class TestExport:
    @pytest.fixture
    def two_runs(self, tmp_path):
        a = run_experiment(small(tmp_path, name="a"))["metrics_csv"]
        b = run_experiment(small(tmp_path, "sampler.seed = 1\n", name="b"))["metrics_csv"]
        return a, b

    def test_row_count(self, two_runs):
        rows = export_plot_data([two_runs[0]], "train_loss")
        assert len(rows) == len(read_metrics_csv(two_runs[0]))

    def test_two_runs_sorted(self, two_runs):
        rows = export_plot_data(list(reversed(two_runs)), "train_loss")
        assert {r[0] for r in rows} == {"a", "b"}
        assert rows == sorted(rows, key=lambda r: (r[0], r[1]))

    def test_round_trip(self, two_runs, tmp_path):
        rows = export_plot_data(two_runs, "sharpness_mean")
        write_plot_data(rows, tmp_path / "plot.csv")
        back = [line.split(",") for line in (tmp_path / "plot.csv").read_text().splitlines()[1:]]
        assert [(r, int(s), float(v)) for r, s, v in back] == rows

    def test_missing_metric(self, two_runs):
        with pytest.raises(ArgumentError):
            export_plot_data(two_runs, "perplexity")


class TestCLI:
    def write(self, tmp_path, text):
        path = tmp_path / "exp.cfg"
        path.write_text(text)
        return str(path)

    def test_run_ok(self, tmp_path, capsys):
        code = main(["run", self.write(tmp_path, SMALL), "--output-dir", str(tmp_path / "out")])
        assert code == EXIT_OK
        assert (tmp_path / "out" / "metrics.csv").exists()
        assert "[ok]" in capsys.readouterr().out

    def test_config_error(self, tmp_path, capsys):
        code = main(["run", self.write(tmp_path, SMALL + "foo = 1\n"), "--output-dir", str(tmp_path)])
        assert code == EXIT_CONFIG
        assert "foo" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["run", str(tmp_path / "nope.cfg")]) == EXIT_CONFIG

    def test_diverged(self, tmp_path):
        code = main(["run", self.write(tmp_path, DIVERGING), "--output-dir", str(tmp_path)])
        assert code == EXIT_DIVERGED

    def test_seed_override(self, tmp_path):
        path = self.write(tmp_path, SMALL)
        main(["run", path, "--output-dir", str(tmp_path / "s3"), "--seed", "3"])
        summary = json.load(open(tmp_path / "s3" / "summary.json"))
        assert "sampler.seed = 3" in summary["config"]

    def test_sweep_and_export(self, tmp_path, capsys):
        path = self.write(tmp_path, SMALL + "sweep.sampler.m = [1, 2]\n")
        assert main(["sweep", path, "--output-dir", str(tmp_path / "sw")]) == EXIT_OK
        csvs = sorted(str(p) for p in (tmp_path / "sw").glob("*/metrics.csv"))
        out = tmp_path / "plot.csv"
        assert main(["export", *csvs, "--metric", "accuracy", "--out", str(out)]) == EXIT_OK
        assert out.read_text().startswith("run_id,step,value")

    def test_compare(self, tmp_path, capsys):
        path = self.write(tmp_path, SMALL)
        assert main(["compare", path, "--seeds", "2", "--output-dir", str(tmp_path / "cmp")]) == EXIT_OK
        assert (tmp_path / "cmp" / "comparison.csv").exists()

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["--version"])
        assert info.value.code == 0
        assert "hilbert-flow" in capsys.readouterr().out
