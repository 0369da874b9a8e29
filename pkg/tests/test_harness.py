#!/usr/bin/env python3
"""
Tests for the experiment harness: result files, seeded orchestration,
heatmaps, transfer and the DP check.
"""

import csv
import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path for imports
sys.path.append(str(Path(__file__).parent.parent))

from agent import EvalRecord
from errors import AdaMVEError, ConfigError
from grid_env import make_spec
from harness import (
    AGGREGATE_FILE,
    ERROR_CHECKPOINT,
    HEATMAP_FILE,
    LEARNING_CURVE_FILE,
    Q_CHECKPOINT,
    RESOLVED_CONFIG,
    SUMMARY_FILE,
    dp_check,
    experiment_config_from_values,
    export_horizon_heatmap,
    final_return,
    read_learning_curve,
    run_experiment,
    run_experiment_async,
    steps_to_reach,
    transfer_experiment,
    write_aggregate,
    write_learning_curve,
)
from model_error import build_error_function, save_error_function


def tiny_config(tmp_path, **values):
    base = {
        "seeds": "0,1",
        "total_steps": 120,
        "eval_interval": 40,
        "eval_episodes": 2,
        "warmup": 30,
        "batch_size": 8,
        "buffer_capacity": 500,
        "approximator": "tabular",
        "output_dir": str(tmp_path / "results"),
    }
    base.update(values)
    return experiment_config_from_values(base)


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


class TestLearningCurves:
    """Learning-curve files and their summaries"""

    def test_curve_file(self, tmp_path):
        """Rows carry returns, per-horizon errors and the mean horizon"""
        records = [EvalRecord(2000, 0.5, [0.0, 1.0], [0.0, 0.25, 0.5], 1.25),
                   EvalRecord(4000, 1.0, [1.0, 1.0], [0.0, 0.125, 0.25], 1.5)]
        path = write_learning_curve(tmp_path / LEARNING_CURVE_FILE, records, h_max=2)
        header = path.read_text().splitlines()[0]
        assert header == "env_step,mean_return,returns,err_h0,err_h1,err_h2,mean_horizon"
        assert read_learning_curve(path) == records

    def test_dqn_curve_leaves_error_columns_empty(self, tmp_path):
        """Runs without a model error write empty error cells"""
        path = write_learning_curve(tmp_path / "c.csv", [EvalRecord(10, 0.0, [0.0])], h_max=1)
        row = read_rows(path)[0]
        assert row["err_h0"] == "" and row["mean_horizon"] == ""

    def test_aggregate(self, tmp_path):
        """Means and standard errors across seeds"""
        runs = [[EvalRecord(10, 0.0, [0.0], None, 1.0)], [EvalRecord(10, 1.0, [1.0], None, 3.0)]]
        row = read_rows(write_aggregate(tmp_path / AGGREGATE_FILE, runs))[0]
        assert row["n_seeds"] == "2"
        assert float(row["mean_return"]) == pytest.approx(0.5)
        assert float(row["stderr_return"]) == pytest.approx(0.5)
        assert float(row["mean_horizon"]) == pytest.approx(2.0)
        single = read_rows(write_aggregate(tmp_path / "one.csv", runs[:1]))[0]
        assert float(single["stderr_return"]) == 0.0

    def test_aggregate_recomputable_from_seed_files(self, tmp_path):
        """Aggregate columns match a recomputation from the reread per-seed curves"""
        rng = np.random.default_rng(11)
        runs = []
        for seed in range(5):
            records = []
            for i in range(20):
                returns = [float(r) for r in rng.uniform(size=3)]
                records.append(EvalRecord((i + 1) * 2000, float(np.mean(returns)), returns,
                                          [float(e) for e in rng.uniform(size=3)], float(rng.uniform(2.0, 2.5))))
            runs.append(records)
            write_learning_curve(tmp_path / f"seed_{seed}" / LEARNING_CURVE_FILE, records, h_max=2)
        rows = read_rows(write_aggregate(tmp_path / AGGREGATE_FILE, runs))

        reread = [read_learning_curve(tmp_path / f"seed_{seed}" / LEARNING_CURVE_FILE) for seed in range(5)]
        assert reread == runs
        for i, row in enumerate(rows):
            returns = np.array([run[i].mean_return for run in reread])
            horizons = np.array([run[i].mean_horizon for run in reread])
            assert abs(float(row["mean_return"]) - returns.mean()) <= 1e-12
            assert abs(float(row["stderr_return"]) - returns.std(ddof=1) / np.sqrt(5)) <= 1e-12
            assert abs(float(row["mean_horizon"]) - horizons.mean()) <= 1e-12
            assert abs(float(row["stderr_horizon"]) - horizons.std(ddof=1) / np.sqrt(5)) <= 1e-12

    def test_curve_summaries(self):
        """steps_to_reach and final_return"""
        records = [EvalRecord(step, ret, [ret]) for step, ret in [(10, 0.1), (20, 0.6), (30, 0.9), (40, 1.0)]]
        assert steps_to_reach(records, 0.5) == 20
        assert steps_to_reach(records, 2.0) is None
        assert final_return(records, tail=2) == pytest.approx(0.95)
        assert np.isnan(final_return([]))


class TestHeatmap:
    """Weighted-horizon heatmaps"""

    def test_equal_errors_give_middle_horizon(self, tmp_path):
        """A zero error function weights horizons uniformly"""
        spec = make_spec("fourroom")
        errfn = build_error_function("replay", "tabular", 4, 0.98, 0.001)
        grid = export_horizon_heatmap(errfn, spec, 0.01, tmp_path / HEATMAP_FILE)
        assert np.nanmax(grid) == pytest.approx(2.0) and np.nanmin(grid) == pytest.approx(2.0)
        rows = read_rows(tmp_path / HEATMAP_FILE)
        assert len(rows) == 361
        assert sum(r["value"] == "" for r in rows) == 361 - 328
        image = (tmp_path / "horizon_heatmap.pgm").read_text().split("\n")
        assert image[:3] == ["P2", "19 19", "255"]

    def test_requires_error_function(self, tmp_path):
        """DQN runs have no heatmap"""
        with pytest.raises(ConfigError):
            export_horizon_heatmap(None, make_spec("fourroom"), 0.01, tmp_path / HEATMAP_FILE)

    def test_horizon_beyond_h_max_raises(self, tmp_path, monkeypatch):
        """A weighted horizon above h_max is an error, not a heatmap"""
        errfn = build_error_function("replay", "tabular", 2, 0.98, 0.001)
        monkeypatch.setattr("harness.weighted_avg_horizon", lambda weights: np.full(len(weights), 2.5))
        with pytest.raises(AdaMVEError):
            export_horizon_heatmap(errfn, make_spec("fourroom"), 0.01, tmp_path / HEATMAP_FILE)
        assert not (tmp_path / HEATMAP_FILE).exists()


class TestExperiments:
    """Seeded multi-run orchestration"""

    @pytest.mark.asyncio
    async def test_adaptive_run_files(self, tmp_path):
        """Every seed writes its curve, checkpoints and heatmap; the aggregate covers both"""
        config = tiny_config(tmp_path, algorithm="adamve", model="nowall")
        result = await run_experiment_async(config)
        out = Path(config.output_dir)
        assert (out / RESOLVED_CONFIG).exists()
        for seed in (0, 1):
            directory = out / f"seed_{seed}"
            for name in (LEARNING_CURVE_FILE, Q_CHECKPOINT, ERROR_CHECKPOINT, HEATMAP_FILE):
                assert (directory / name).exists()
            assert [r.env_step for r in read_learning_curve(directory / LEARNING_CURVE_FILE)] == [40, 80, 120]
        assert len(read_rows(result.aggregate_path)) == 3
        assert [r["status"] for r in read_rows(out / SUMMARY_FILE)] == ["ok", "ok"]

    def test_deterministic(self, tmp_path):
        """The same config and seed write identical learning curves"""
        first = run_experiment(tiny_config(tmp_path, seeds="3", algorithm="mve", model="threeroom"),
                               tmp_path / "a")
        second = run_experiment(tiny_config(tmp_path, seeds="3", algorithm="mve", model="threeroom"),
                                tmp_path / "b")
        curve = Path("seed_3") / LEARNING_CURVE_FILE
        assert (first.output_dir / curve).read_bytes() == (second.output_dir / curve).read_bytes()

    @pytest.mark.asyncio
    async def test_failed_seed_is_recorded(self, tmp_path):
        """A failing seed is reported while the others complete"""
        config = tiny_config(tmp_path, algorithm="adamve", model="oracle")
        result = await run_experiment_async(config, error_checkpoints={1: str(tmp_path / "missing.ckpt")})
        assert [r.seed for r in result.seed_results] == [0]
        assert 1 in result.failures
        statuses = {r["seed"]: r["status"] for r in read_rows(Path(config.output_dir) / SUMMARY_FILE)}
        assert statuses == {"0": "ok", "1": "failed"}
        assert read_rows(result.aggregate_path)[0]["n_seeds"] == "1"

    def test_every_seed_failing_raises(self, tmp_path):
        """No completed seed means no aggregate"""
        config = tiny_config(tmp_path, seeds="0", algorithm="adamve", reference_policy="greedy",
                             model="oracle")
        errfn_path = tmp_path / "conservative.ckpt"
        save_error_function(errfn_path, build_error_function("conservative", "tabular", 5, 0.98, 0.001))
        with pytest.raises(ConfigError):
            run_experiment(config.model_copy(update={"error_checkpoint": str(errfn_path)}))

    def test_learned_model_run(self, tmp_path):
        """An online model with selective learning trains end to end"""
        config = tiny_config(tmp_path, seeds="0", algorithm="adamve", model="learned", model_source="online",
                             sml_enabled="true", approximator="mlp", hidden_layers="8")
        result = run_experiment(config)
        assert len(result.seed_results[0].records) == 3


class TestTransferAndDP:
    """Goal transfer and the exact DP check"""

    def test_transfer_summary(self, tmp_path):
        """The transfer writes one summary row per variant and seed"""
        source = tiny_config(tmp_path, seeds="0", algorithm="adamve", model="nowall", env="fourroom",
                             output_dir=str(tmp_path / "source"))
        target = tiny_config(tmp_path, seeds="0", algorithm="adamve", model="nowall", env="fourroom2",
                             output_dir=str(tmp_path / "target"))
        result = transfer_experiment(source, target)
        rows = read_rows(result.summary_path)
        assert [r["variant"] for r in rows] == ["t_adamve", "adamve", "dqn"]
        assert (result.output_dir / "source" / "seed_0" / ERROR_CHECKPOINT).exists()

    def test_transfer_needs_same_dynamics(self, tmp_path):
        """Source and target must share a model"""
        source = tiny_config(tmp_path, algorithm="adamve", model="nowall")
        target = tiny_config(tmp_path, algorithm="adamve", model="threeroom", env="fourroom2")
        with pytest.raises(ConfigError):
            transfer_experiment(source, target)

    def test_transfer_needs_matching_horizon(self, tmp_path):
        """Source and target must agree on the error function's horizon and discount"""
        source = tiny_config(tmp_path, algorithm="adamve", model="nowall", h_max=5)
        target = tiny_config(tmp_path, algorithm="adamve", model="nowall", env="fourroom2", h_max=3)
        with pytest.raises(ConfigError) as info:
            transfer_experiment(source, target)
        assert any("h_max" in e for e in info.value.errors)
        assert not (tmp_path / "results" / "source").exists()

    def test_dp_check_files(self, tmp_path):
        """dp-check writes the bound report and exact tables"""
        config = tiny_config(tmp_path, model="nowall", dp_horizon=3, dp_td_updates=0)
        result = dp_check(config)
        for name in ("bound_report.csv", "value_table.csv", "model_error.csv"):
            assert (result.output_dir / name).exists()
        assert result.report.n_states == 328 and result.report.violations == []
        assert result.td_max_abs_diff is None

    def test_dp_check_td_comparison(self, tmp_path):
        """A short TD run produces the comparison file"""
        config = tiny_config(tmp_path, model="nowall", dp_horizon=2, dp_td_updates=50, dp_buffer_steps=200)
        result = dp_check(config)
        rows = read_rows(result.output_dir / "td_vs_dp.csv")
        assert len(rows) == 328 * 3
        assert result.td_max_abs_diff >= 0.0

    def test_dp_check_rejects_learned(self, tmp_path):
        """The learned model is not enumerable"""
        config = tiny_config(tmp_path, model="learned", model_source="online")
        with pytest.raises(ConfigError):
            dp_check(config)

