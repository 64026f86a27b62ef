"""Config parsing, persistence formats, experiment fan-out, CLI exit codes."""

import json
from pathlib import Path

import numpy as np
import pytest

from optex.cli import main
from optex.config import ConfigError, parse_config
from optex.harness import (
    TRACE_HEADER,
    canonical_trace_bytes,
    compare,
    read_trace,
    run_experiment,
    write_trace,
)


class TestParseConfig:
    def test_minimal_config_fills_defaults(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("objective.name = ackley\nmethod.name = optex\n")
        cfg = parse_config(str(cfg_file))
        assert cfg["estimator.t0"] == 150
        assert cfg["kernel.family"] == "matern"
        assert cfg["method.warmup"] == 2
        assert cfg.methods() == ("optex",)

    def test_vanilla_with_parallelism_rejected(self):
        with pytest.raises(ConfigError, match="method.n"):
            parse_config(overrides=["method.name=vanilla", "method.n=5"])

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            parse_config(overrides=["objective.nme=ackley"])

    def test_override_beats_file(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("run.seed = 3\n")
        cfg = parse_config(str(cfg_file), overrides=["run.seed=7"])
        assert cfg["run.seed"] == 7

    def test_rosenbrock_needs_dim_two(self):
        with pytest.raises(ConfigError, match="dim"):
            parse_config(overrides=["objective.name=rosenbrock_paper", "objective.dim=1"])

    def test_named_range_in_error(self):
        with pytest.raises(ConfigError, match="optimizer.lr"):
            parse_config(overrides=["optimizer.lr=0"])

    def test_capacity_must_cover_window(self):
        with pytest.raises(ConfigError, match="history.capacity"):
            parse_config(overrides=["history.capacity=10", "estimator.t0=50"])

    def test_round_trip(self, tmp_path):
        cfg = parse_config(overrides=[
            "objective.name=ackley", "objective.dim=12", "method.name=optex,vanilla",
            "run.gap_threshold=0.5", "kernel.lengthscale_mode=median"])
        echoed = tmp_path / "echo.cfg"
        echoed.write_text(cfg.echo())
        again = parse_config(str(echoed))
        assert again.values == cfg.values
        assert again.config_hash() == cfg.config_hash()

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="cannot read"):
            parse_config("/nonexistent/path.cfg")

    def test_estimator_noise_defaults_to_objective_noise(self):
        cfg = parse_config(overrides=["objective.noise_sigma=0.5"])
        assert cfg.estimator().noise_sigma2 == pytest.approx(0.25)
        cfg2 = parse_config(overrides=["objective.noise_sigma=0.5",
                                       "estimator.noise_sigma2=0.1"])
        assert cfg2.estimator().noise_sigma2 == pytest.approx(0.1)

    def test_multi_method_vanilla_normalized_to_n1(self):
        cfg = parse_config(overrides=["method.name=vanilla,optex", "method.n=4"])
        assert cfg.method_spec("vanilla").n == 1
        assert cfg.method_spec("optex").n == 4


BASE = ["objective.name=quadratic", "objective.dim=6", "run.T=30",
        "method.name=vanilla,optex", "method.n=3", "run.repeats=2",
        "run.gap_threshold=0.1", "kernel.lengthscale_mode=median"]


class TestRunExperiment:
    def test_outputs_and_schema(self, tmp_path):
        cfg = parse_config(overrides=BASE)
        traces, summary = run_experiment(cfg, tmp_path)
        assert len(traces) == 4  # 2 methods x 2 repeats
        trace_files = sorted(tmp_path.glob("trace_*.csv"))
        assert len(trace_files) == 4
        for f in trace_files:
            text = f.read_text()
            assert text.startswith(f"# config_hash={cfg.config_hash()}")
            assert TRACE_HEADER in text
        assert (tmp_path / "plot_data.csv").exists()
        assert (tmp_path / "summary.json").exists()
        echoed = (tmp_path / "config_resolved.txt").read_text()
        assert f"# config_hash={cfg.config_hash()}" in echoed

    def test_trace_read_write_bit_exact(self, tmp_path):
        cfg = parse_config(overrides=BASE)
        traces, _ = run_experiment(cfg, tmp_path)
        for f in tmp_path.glob("trace_*.csv"):
            loaded, meta = read_trace(f)
            original = next(t for t in traces
                            if t.method == meta["method"] and t.seed == int(meta["seed"]))
            for a, b in zip(loaded.rows, original.rows):
                assert a == b

    def test_byte_identical_across_thread_counts(self, tmp_path):
        # run.threads is an execution knob: same hash, same bytes
        for threads, sub in ((1, "a"), (8, "b")):
            cfg = parse_config(overrides=BASE + [f"run.threads={threads}"])
            run_experiment(cfg, tmp_path / sub)
        for f in sorted((tmp_path / "a").glob("trace_*.csv")):
            assert canonical_trace_bytes(f) == canonical_trace_bytes(tmp_path / "b" / f.name)
        assert (tmp_path / "a" / "plot_data.csv").read_bytes() == \
            (tmp_path / "b" / "plot_data.csv").read_bytes()

    def test_rerun_byte_identical(self, tmp_path):
        cfg = parse_config(overrides=BASE)
        run_experiment(cfg, tmp_path / "first")
        run_experiment(cfg, tmp_path / "second")
        for f in sorted((tmp_path / "first").glob("trace_*.csv")):
            assert canonical_trace_bytes(f) == canonical_trace_bytes(tmp_path / "second" / f.name)
        assert (tmp_path / "first" / "plot_data.csv").read_bytes() == \
            (tmp_path / "second" / "plot_data.csv").read_bytes()

    def test_plot_data_groups(self, tmp_path):
        cfg = parse_config(overrides=[
            "objective.name=quadratic", "objective.dim=4", "run.T=6",
            "method.name=vanilla,optex,linesearch,target", "method.n=2",
            "run.repeats=2"])
        run_experiment(cfg, tmp_path)
        lines = (tmp_path / "plot_data.csv").read_text().splitlines()
        assert lines[1] == "method,seed,seq_iter,optimality_gap"
        groups = {tuple(line.split(",")[:2]) for line in lines[2:]}
        assert len(groups) == 4 * 2

    def test_unreachable_threshold_marked_inf(self, tmp_path):
        cfg = parse_config(overrides=[
            "objective.name=quadratic", "objective.dim=4", "run.T=3",
            "method.name=vanilla", "method.n=1", "run.gap_threshold=1e-300"])
        _, summary = run_experiment(cfg, tmp_path)
        data = json.loads((tmp_path / "summary.json").read_text())
        assert data["rows"][0]["iterations_to_threshold"] == "inf"

    def test_summary_aggregates_recomputable(self, tmp_path):
        cfg = parse_config(overrides=BASE)
        _, summary = run_experiment(cfg, tmp_path)
        optex_rows = [r["final_best_value"] for r in summary.rows if r["method"] == "optex"]
        assert summary.aggregates["optex"]["final_best_value"]["median"] == \
            pytest.approx(float(np.median(optex_rows)))


class TestCompare:
    def test_speedup_column_present(self, tmp_path):
        cfg = parse_config(overrides=BASE)
        run_experiment(cfg, tmp_path / "runs")
        rows, lines = compare([tmp_path / "runs"], threshold=0.1)
        by = {r["method"]: r for r in rows}
        assert by["vanilla"]["speedup_vs_vanilla"] == pytest.approx(1.0)
        assert "speedup" in lines[0]

    def test_missing_vanilla_rejected(self, tmp_path):
        cfg = parse_config(overrides=[
            "objective.name=quadratic", "objective.dim=4", "run.T=5",
            "method.name=target", "method.n=2"])
        run_experiment(cfg, tmp_path / "runs")
        with pytest.raises(ValueError, match="vanilla"):
            compare([tmp_path / "runs"], threshold=0.1)

    def test_incompatible_objectives_rejected(self, tmp_path):
        for name, sub in (("quadratic", "a"), ("ackley", "b")):
            cfg = parse_config(overrides=[
                f"objective.name={name}", "objective.dim=4", "run.T=4",
                "method.name=vanilla", "method.n=1"])
            run_experiment(cfg, tmp_path / sub)
        with pytest.raises(ValueError, match="objectives differ"):
            compare([tmp_path / "a", tmp_path / "b"], threshold=0.1)

    def test_all_unreached_warns(self, tmp_path):
        cfg = parse_config(overrides=[
            "objective.name=quadratic", "objective.dim=4", "run.T=3",
            "method.name=vanilla", "method.n=1"])
        run_experiment(cfg, tmp_path / "runs")
        rows, lines = compare([tmp_path / "runs"], threshold=1e-300)
        assert any("warning" in line for line in lines)


class TestCli:
    def test_run_and_compare_commands(self, tmp_path, capsys):
        out = tmp_path / "out"
        rc = main(["run", "--set", "objective.name=quadratic",
                   "--set", "objective.dim=4", "--set", "run.T=10",
                   "--set", "method.name=vanilla,optex", "--set", "method.n=2",
                   "--out", str(out)])
        assert rc == 0
        rc = main(["compare", str(out), "--threshold", "0.5"])
        assert rc == 0
        assert "vanilla" in capsys.readouterr().out

    def test_config_error_exit_code(self, capsys):
        rc = main(["run", "--set", "method.name=vanilla", "--set", "method.n=5"])
        assert rc == 1

    def test_seed_flag_beats_set(self, tmp_path):
        out = tmp_path / "out"
        rc = main(["run", "--set", "objective.name=quadratic",
                   "--set", "objective.dim=3", "--set", "run.T=3",
                   "--set", "method.name=vanilla", "--set", "method.n=1",
                   "--set", "run.seed=1", "--seed", "9", "--out", str(out)])
        assert rc == 0
        _, meta = read_trace(next(out.glob("trace_*.csv")))
        assert meta["seed"] == "9"

    def test_diag_pass_exit_zero(self, tmp_path, capsys):
        rc = main(["diag", "infogain", "--set", "n_instances=5",
                   "--out", str(tmp_path)])
        assert rc == 0
        assert "PASS" in capsys.readouterr().out
        assert (tmp_path / "diag_infogain.csv").exists()

    def test_diag_fail_exit_three(self, tmp_path, capsys):
        # a gap no 2-iteration run can reach forces the gate to fail
        rc = main(["diag", "speedup", "--set", "T=2", "--set", "threshold=1e-300",
                   "--out", str(tmp_path)])
        assert rc == 3
        assert "FAIL" in capsys.readouterr().out

    def test_diag_bad_param_is_config_error(self, capsys):
        rc = main(["diag", "prop1", "--set", "bogus_param=1"])
        assert rc == 1

    def test_compare_missing_dir_runtime_error(self, tmp_path):
        rc = main(["compare", str(tmp_path / "empty"), "--threshold", "0.1"])
        assert rc == 2
