import json
import os

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from stochsaddle import Trace
from stochsaddle.harness import (
    ConfigError,
    ExperimentConfig,
    RateError,
    aggregate,
    config_sha,
    emit_csv,
    fit_rate,
    parse_seeds,
    presets,
    run_experiment,
)
from stochsaddle.harness.cli import main
from stochsaddle.harness.experiment import read_aggregate_csv, read_runs_csv
from stochsaddle.harness.replicate import FIGURES, Check, series_csv

QUAD_TREE = {
    "name": "quad",
    "landscape": {"name": "quadratic", "diag": [-1.0, 2.0]},
    "noise": {"kind": "gaussian_additive", "scale": 0.5, "rng_seed": 3},
    "k": 1,
    "x_schedule": {"kind": "power", "gamma": 2.0, "m": 10},
    "eigen": {"eps_v": 1.0e-8, "lipschitz": 2.0, "schedule": {"kind": "power", "gamma": 0.5, "m": 10}},
    "eps_x": 1.0e-12,
    "x0": [1.0, 1.0],
    "seeds": 4,
    "max_outer": 400,
    "grad_check_period": 20,
    "stop_at_tolerance": False,
}


def tree(**changes):
    t = json.loads(json.dumps(QUAD_TREE))
    t.update(changes)
    return t


def make_trace(seed, values, sha="s"):
    t = Trace(k=1, seed=seed, config_sha=sha, landscape="quadratic", status="converged")
    t.rows = [{"n": n, "alpha": 0.1, "grad_norm_sq": v, "dist_sq": 2 * v, "energy": 0.0, "q1": -1.0,
               "eig_iters": 0, "wall_ms": None} for n, v in values]
    return t


def read_dir(path):
    out = {}
    for root, _, files in os.walk(path):
        for f in files:
            with open(os.path.join(root, f), "rb") as fh:
                out[os.path.relpath(os.path.join(root, f), path)] = fh.read()
    return out


class TestConfig:
    @pytest.mark.parametrize(
        "value, expected",
        [(3, [0, 1, 2]), ("2..4", [2, 3, 4]), ([5, 1], [5, 1]), ({"start": 2, "stop": 4}, [2, 3])],
    )
    def test_seeds(self, value, expected):
        assert parse_seeds(value) == expected

    @pytest.mark.parametrize("value", [0, "4..2", "a..b", [], [1, 1], [-1], True])
    def test_bad_seeds(self, value):
        with pytest.raises(ConfigError):
            parse_seeds(value)

    @pytest.mark.parametrize(
        "changes",
        [
            {"typo": 1},
            {"method": "nope"},
            {"landscape": {"name": "nope"}},
            {"x0": [1.0, 2.0, 3.0]},
            {"x0": "nowhere"},
            {"x0": [np.nan, 1.0]},
            {"k": 2},
            {"eigen": {"eps_v": -1.0}},
            {"eigen": {"bogus": 1}},
            {"noise": {"kind": "coordinate_mask", "keep_fraction": 2.0}},
            {"x_schedule": {"kind": "power", "gamma": 1.0, "m": 0}},
            {"hvp_mode": "nope"},
            {"workers": 0},
        ],
    )
    def test_rejected_before_running(self, changes):
        with pytest.raises(ConfigError):
            ExperimentConfig(tree(**changes))

    def test_missing_key(self):
        t = tree()
        del t["x0"]
        with pytest.raises(ConfigError):
            ExperimentConfig(t)

    def test_sha_ignores_seeds_and_output(self):
        a = config_sha(tree())
        assert a == config_sha(tree(seeds=10, out="/tmp/x", workers=2))
        assert a != config_sha(tree(max_outer=401))
        assert len(a) == 16

    def test_yaml_echo_round_trip(self):
        text = yaml.safe_dump(tree())
        cfg = ExperimentConfig.from_text(text)
        assert cfg.echo() == text
        assert cfg.tree == tree()

    def test_named_start(self):
        t = tree(landscape={"name": "mb"}, x0="mb-default", k=1)
        assert ExperimentConfig(t).seeds == [0, 1, 2, 3]


class TestFitRate:
    n = np.logspace(1, 5, 50)

    @pytest.mark.parametrize("power", [0.0, 1.0, 2.0])
    def test_exact_power_law(self, power):
        fit = fit_rate(self.n, 3.0 / self.n ** power, (10, 1e5))
        assert fit.slope == pytest.approx(-power, abs=1e-6)
        assert fit.points == 50

    def test_window_selects(self):
        e = np.where(self.n < 1e3, 1.0 / self.n, 1e-3 * 1e3 / self.n ** 2 * 1e3)
        assert fit_rate(self.n, e, (2e3, 1e5)).slope == pytest.approx(-2.0, abs=1e-6)

    def test_needs_ten_points(self):
        with pytest.raises(RateError):
            fit_rate(self.n, 1 / self.n, (10, 20))

    def test_non_positive(self):
        e = 1 / self.n
        e[10] = 0.0
        with pytest.raises(RateError):
            fit_rate(self.n, e, (10, 1e5))


class TestAggregate:
    def test_mean_of_two_seeds(self):
        agg = aggregate([make_trace(0, [(0, 1.0), (10, 3.0)]), make_trace(1, [(0, 3.0), (10, 5.0)])])
        np.testing.assert_array_equal(agg.n, [0, 10])
        np.testing.assert_array_equal(agg.series("grad_norm_sq"), [2.0, 4.0])
        np.testing.assert_array_equal(agg.series("dist_sq"), [4.0, 8.0])
        assert agg.convergence_fraction == 1.0

    def test_mixed_configs_rejected(self):
        with pytest.raises(ConfigError):
            aggregate([make_trace(0, [(0, 1.0)], "a"), make_trace(1, [(0, 1.0)], "b")])

    def test_ragged_counts(self):
        agg = aggregate([make_trace(0, [(0, 1.0), (10, 3.0)]), make_trace(1, [(0, 3.0)])])
        np.testing.assert_array_equal(agg.count, [2, 1])
        assert agg.at(10, "grad_norm_sq") == 3.0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2 ** 31))
    def test_linearity(self, a, b, seed):
        rng = np.random.default_rng(seed)
        traces = [make_trace(s, [(n, float(v)) for n, v in zip(range(0, 50, 10), rng.lognormal(size=5))])
                  for s in range(a + b)]
        whole = aggregate(traces).series("grad_norm_sq")
        left = aggregate(traces[:a]).series("grad_norm_sq")
        right = aggregate(traces[a:]).series("grad_norm_sq")
        np.testing.assert_allclose(whole, (a * left + b * right) / (a + b), rtol=1e-12)


class TestEmit:
    def test_empty_records(self, tmp_path):
        p = tmp_path / "runs.csv"
        emit_csv([], p)
        assert p.read_text() == "seed,status,grad_norm_sq,dist_sq,iterations,trace_path,error\n"
        assert read_runs_csv(p) == []

    def test_trace_round_trip(self, tmp_path):
        t = make_trace(7, [(0, 0.5), (20, 1e-17)])
        p = tmp_path / "t.csv"
        emit_csv(t, p)
        back = Trace.read_csv(p)
        assert back.same_records(t)
        assert back.header() == t.header()

    def test_trace_json_round_trip(self):
        t = make_trace(2, [(0, 0.5), (20, 0.25)])
        assert Trace.from_json(t.to_json()).same_records(t)

    def test_aggregate_columns(self, tmp_path):
        agg = aggregate([make_trace(0, [(0, 1.0), (10, 3.0)]), make_trace(1, [(0, 3.0), (10, 5.0)])])
        p = tmp_path / "agg.csv"
        emit_csv(agg, p)
        data = read_aggregate_csv(p)
        np.testing.assert_array_equal(data["grad_norm_sq_mean"], [2.0, 4.0])
        assert {"grad_norm_sq_p10", "grad_norm_sq_p90", "count"} <= set(data)

    def test_series_csv(self):
        assert series_csv({"n": [1, 2], "err": [0.5, None]}) == "n,err\n1,0.5\n2,\n"


class TestRunExperiment:
    def test_exact_quadratic_single_seed(self):
        t = tree(noise={"kind": "exact"}, seeds=1, x_schedule={"kind": "constant", "alpha0": 0.2},
                 stop_at_tolerance=True)
        res = run_experiment(ExperimentConfig(t))
        assert [r.status for r in res.records] == ["converged"]
        assert res.records[0].grad_norm_sq < 4e-12

    def test_outputs_written(self, tmp_path):
        res = run_experiment(ExperimentConfig(tree()), out=tmp_path)
        files = read_dir(tmp_path)
        assert {"config.yaml", "runs.csv", "aggregate.csv", "summary.json"} <= set(files)
        assert sum(f.startswith("traces") for f in files) == 4
        summary = json.loads(files["summary.json"])
        assert summary["seeds"] == [0, 1, 2, 3]
        assert yaml.safe_load(files["config.yaml"]) == tree()
        assert [r.seed for r in res.records] == [0, 1, 2, 3]

    def test_replay_byte_identical(self, tmp_path):
        run_experiment(ExperimentConfig(tree()), out=tmp_path / "a")
        run_experiment(ExperimentConfig(tree()), out=tmp_path / "b")
        assert read_dir(tmp_path / "a") == read_dir(tmp_path / "b")

    def test_workers_do_not_change_output(self, tmp_path):
        run_experiment(ExperimentConfig(tree()), out=tmp_path / "a", workers=1)
        run_experiment(ExperimentConfig(tree()), out=tmp_path / "b", workers=2)
        assert read_dir(tmp_path / "a") == read_dir(tmp_path / "b")

    def test_seed_subset_matches_full_run(self):
        full = run_experiment(ExperimentConfig(tree()))
        part = run_experiment(ExperimentConfig(tree()), seeds=[2])
        assert part.traces[0].same_records(full.traces[2])

    def test_known_space_method(self):
        t = {"method": "known_space", "landscape": {"name": "lagrangian", "P": [[1.0, 0.0], [0.0, 1.0]],
                                                     "A": [[1.0, 0.0]], "b": [1.0]},
             "noise": {"kind": "exact"}, "x_schedule": {"kind": "constant", "alpha0": 0.2}, "x0": [0.0, 0.0, 0.0],
             "eps_x": 1e-20, "max_outer": 2000}
        res = run_experiment(ExperimentConfig(t))
        assert res.records[0].status == "converged"
        assert res.records[0].dist_sq < 1e-15


class TestPresets:
    """Preset parameters are the literal figure-caption values."""

    def test_mb(self):
        p = presets("fig-mb")
        assert p["decaying"]["x_schedule"] == {"kind": "power", "gamma": 0.01, "m": 100}
        assert p["constant"]["x_schedule"] == {"kind": "constant", "alpha0": 1.0e-4}
        for t in p.values():
            assert t["noise"]["kind"] == "gaussian_additive" and t["noise"]["scale"] == 100.0
            assert t["seeds"] == 100 and t["max_outer"] == 100_000
            assert t["x0"] == "mb-default"

    def test_butterfly(self):
        p = presets("fig-butterfly")
        for t in p.values():
            assert t["x_schedule"] == {"kind": "power", "gamma": 0.5, "m": 0.0, "offset": 1}
        assert p["deterministic"]["method"] == "deterministic"
        assert p["deterministic"]["max_outer"] == 10_000
        assert p["stochastic"]["noise"]["scale"] == 1.0
        assert p["stochastic"]["seeds"] == 100

    def test_nn(self):
        full = presets("fig-nn", "full")
        assert full["N100"]["landscape"]["n_samples"] == 100 and full["N100"]["noise"]["batch_size"] == 20
        assert full["N10000"]["landscape"]["n_samples"] == 10_000 and full["N10000"]["noise"]["batch_size"] == 1000
        for t in full.values():
            assert t["x_schedule"] == {"kind": "power", "gamma": 100.0, "m": 10_000}
            assert t["k"] == 16
        assert set(presets("fig-nn")) == {"N100"}

    def test_ldg(self):
        t = presets("fig-ldg")["stochastic"]
        assert t["noise"]["kind"] == "coordinate_mask" and t["noise"]["keep_fraction"] == 0.1
        assert t["x_schedule"] == {"kind": "power", "gamma": 1.0, "m": 10_000}
        assert t["x0"] == "ldg-near-d1"
        assert t["landscape"]["n_grid"] == 32
        assert presets("fig-ldg", "full")["stochastic"]["max_outer"] == 1_000_000

    @pytest.mark.parametrize("figure", FIGURES)
    @pytest.mark.parametrize("scale", ["desk", "full"])
    def test_presets_validate(self, figure, scale):
        for t in presets(figure, scale).values():
            ExperimentConfig(t)

    def test_unknown_figure(self):
        with pytest.raises(ValueError):
            presets("fig-x")

    def test_check_line(self):
        assert Check("a", True, "ok").line() == "PASS  a: ok"
        assert Check("b", False, "no").line().startswith("FAIL")


class TestCli:
    def test_eig(self, tmp_path, capsys):
        p = tmp_path / "H.csv"
        np.savetxt(p, np.diag([-3.0, -1.0, 2.0, 5.0]), delimiter=",")
        assert main(["eig", "--matrix", str(p), "--k", "2", "--eps", "1e-12"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["status"] == "converged"
        np.testing.assert_allclose(np.abs(out["vectors"]), np.eye(4)[:2], atol=1e-5)
        np.testing.assert_allclose(out["rayleigh"], [-3.0, -1.0], atol=1e-8)

    def test_eig_rejects_asymmetric(self, tmp_path, capsys):
        p = tmp_path / "H.csv"
        np.savetxt(p, np.array([[0.0, 1.0], [0.0, 0.0]]), delimiter=",")
        assert main(["eig", "--matrix", str(p), "--k", "1", "--eps", "1e-8"]) == 2

    def test_run_and_rate(self, tmp_path, capsys):
        cfg = tmp_path / "exp.yaml"
        cfg.write_text(yaml.safe_dump(tree(max_outer=2000, grad_check_period=10)))
        out = tmp_path / "out"
        assert main(["run", "--config", str(cfg), "--seeds", "0..2", "--out", str(out)]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["runs"] == 3
        assert main(["rate", "--in", str(out / "aggregate.csv"), "--window", "100:2000"]) == 0
        fit = json.loads(capsys.readouterr().out)
        assert fit["column"] == "dist_sq_mean"
        assert -2.0 < fit["slope"] < 0.0

    def test_bad_config(self, tmp_path, capsys):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text(yaml.safe_dump(tree(typo=1)))
        assert main(["run", "--config", str(cfg)]) == 2
        assert "unknown keys" in capsys.readouterr().err

    def test_bad_window(self):
        with pytest.raises(SystemExit):
            main(["rate", "--in", "x.csv", "--window", "100"])
