#!/usr/bin/env python3
"""
Full-length reproduction checks. Marked slow; run with ADAMVE_RUN_SLOW=1.
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path for imports
sys.path.append(str(Path(__file__).parent.parent))

from agent import RngStreams, TrainingRun, load_q_function
from dyn_models import make_model
from grid_env import Action, make_spec, step
from harness import (
    ERROR_CHECKPOINT,
    Q_CHECKPOINT,
    dp_check,
    experiment_config_from_values,
    final_return,
    horizon_grid,
    load_experiment_config,
    run_experiment,
    run_single_seed,
    steps_to_reach,
    transfer_experiment,
)
from model_error import load_error_function
from replay_buffer import TransitionBatch, TransitionSample

CONFIG_DIR = Path(__file__).parent.parent / "configs"

pytestmark = pytest.mark.slow


def config_for(name, tmp_path, **overrides):
    values = {"output_dir": str(tmp_path / name)}
    values.update({k: str(v) for k, v in overrides.items()})
    return load_experiment_config(CONFIG_DIR / f"{name}.conf", values, environ={})


def steps_or_inf(records, level):
    reached = steps_to_reach(records, level)
    return math.inf if reached is None else reached


def mean_final(result):
    return float(np.mean([r.final_return for r in result.seed_results]))


def every_transition(spec):
    samples = []
    for x, y in spec.start_cells:
        for a in Action:
            result = step(spec, (int(x), int(y)), a)
            samples.append(TransitionSample((int(x), int(y)), int(a), result.reward,
                                            tuple(result.next_state), result.terminal))
    return TransitionBatch.from_samples(samples)


def trained_horizons(config, tmp_path):
    """Weighted-horizon grid of seed 0 after a full run"""
    result = run_single_seed(config, 0, tmp_path / "run")
    errfn = load_error_function(result.directory / ERROR_CHECKPOINT, lr=0.001, frozen=True)
    qbar = load_q_function(result.directory / Q_CHECKPOINT).target
    return horizon_grid(errfn, make_spec(config.env), config.agent.tau, qbar=qbar)


class TestTDAgainstDP:
    """Tabular replay-form TD reaches the exact uniform-policy error"""

    @pytest.mark.parametrize("model", ["threeroom", "nowall"])
    def test_within_five_percent(self, tmp_path, model):
        """Max abs difference below 5% of the largest exact error"""
        config = experiment_config_from_values({
            "model": model, "dp_horizon": 5, "dp_td_updates": 200_000, "dp_buffer_steps": 20_000,
            "output_dir": str(tmp_path / model), "seeds": "0",
        })
        result = dp_check(config)
        assert result.td_max_abs_diff < 0.05 * result.dp_max_value


class TestOracleModel:
    """With a perfect model adaptive expansion is the uniform mixture"""

    def test_targets_match_uniform_mixture(self, tmp_path):
        """Once the learned error is below 1e-6 both algorithms regress to the same targets"""
        config = config_for("adamve_oracle", tmp_path, seeds="0")
        result = run_single_seed(config, 0, tmp_path / "run")
        spec = make_spec(config.env)
        errfn = load_error_function(result.directory / ERROR_CHECKPOINT, lr=0.001, frozen=True)
        q = load_q_function(result.directory / Q_CHECKPOINT)
        assert np.abs(errfn.online.table).max() < 1e-6

        adaptive = TrainingRun(config.agent, spec, make_model("oracle", spec), RngStreams.from_seed(0),
                               errfn=errfn, q=q)
        uniform_agent = config.agent.model_copy(update={"algorithm": "mve_uniform"})
        uniform = TrainingRun(uniform_agent, spec, make_model("oracle", spec), RngStreams.from_seed(0), q=q)
        batch = every_transition(spec)
        np.testing.assert_allclose(adaptive.compute_targets(batch).targets,
                                   uniform.compute_targets(batch).targets, rtol=0.0, atol=1e-9)

    def test_faster_than_dqn(self, tmp_path):
        """Both expansions reach 0.95 in fewer steps than DQN"""
        dqn = run_experiment(config_for("dqn", tmp_path))
        adaptive = run_experiment(config_for("adamve_oracle", tmp_path))
        uniform = run_experiment(config_for("mve_uniform_oracle", tmp_path))
        for expanded in (adaptive, uniform):
            wins = sum(
                steps_or_inf(e.records, 0.95) < steps_or_inf(d.records, 0.95)
                for d, e in zip(dqn.seed_results, expanded.seed_results)
            )
            assert wins >= 4


class TestImperfectModels:
    """Fixed-horizon expansion breaks on a wrong model, adaptive expansion does not"""

    @pytest.mark.parametrize("model", ["threeroom", "nowall"])
    def test_returns_against_dqn(self, tmp_path, model):
        """MVE(5) falls to half of DQN; AdaMVE keeps 95% of it and gets to 90% in half the steps"""
        dqn = run_experiment(config_for("dqn", tmp_path))
        mve = run_experiment(config_for(f"mve_{model}", tmp_path))
        adaptive = run_experiment(config_for(f"adamve_{model}", tmp_path))
        wins = 0
        for d, m, a in zip(dqn.seed_results, mve.seed_results, adaptive.seed_results):
            baseline = final_return(d.records)
            level = 0.9 * baseline
            if (final_return(m.records) <= 0.5 * baseline
                    and final_return(a.records) >= 0.95 * baseline
                    and steps_or_inf(a.records, level) <= 0.5 * steps_or_inf(d.records, level)):
                wins += 1
        assert wins >= 4

    @pytest.mark.parametrize("model", ["threeroom", "nowall"])
    def test_short_horizon_ablations(self, tmp_path, model):
        """AdaMVE finishes at least as high as MVE(1) and MVE(3)"""
        adaptive = mean_final(run_experiment(config_for(f"adamve_{model}", tmp_path)))
        for horizon in (1, 3):
            ablation = run_experiment(config_for(f"mve_h{horizon}_{model}", tmp_path))
            assert adaptive >= mean_final(ablation)


class TestHorizonAdaptivity:
    """Weighted horizons shrink where the model is wrong"""

    @pytest.mark.parametrize("kind", ["conservative", "greedy", "replay"])
    def test_threeroom_broken_room_has_short_horizons(self, tmp_path, kind):
        """Mean horizon in the bottom-left room is below 0.5 and 3x smaller than elsewhere"""
        grid = trained_horizons(config_for("adamve_threeroom", tmp_path, seeds="0", reference_policy=kind), tmp_path)
        xs, ys = np.meshgrid(np.arange(19), np.arange(19), indexing="ij")
        broken = (xs < 9) & (ys < 9) & ~np.isnan(grid)
        others = ~((xs < 9) & (ys < 9)) & ~np.isnan(grid)
        assert grid[broken].mean() < 0.5
        assert grid[others].mean() > 3 * grid[broken].mean()

    @pytest.mark.parametrize("kind", ["conservative", "greedy", "replay"])
    def test_nowall_short_horizons_next_to_walls(self, tmp_path, kind):
        """Cells touching an internal wall average below 0.6x the horizon of cells 3+ away"""
        spec = make_spec("fourroom")
        grid = trained_horizons(config_for("adamve_nowall", tmp_path, seeds="0", reference_policy=kind), tmp_path)
        walls = np.array(sorted(spec.walls))
        xs, ys = np.meshgrid(np.arange(19), np.arange(19), indexing="ij")
        chebyshev = np.max(np.abs(np.stack([xs, ys], axis=-1)[:, :, None, :] - walls[None, None, :, :]), axis=-1)
        to_wall = chebyshev.min(axis=-1)
        is_open = ~np.isnan(grid)
        near = grid[is_open & (to_wall == 1)]
        far = grid[is_open & (to_wall >= 3)]
        assert near.mean() < 0.6 * far.mean()


class TestTransfer:
    """Reusing a model error learned on another goal"""

    def test_conservative_transfer_is_faster(self, tmp_path):
        """T-AdaMVE gets to 90% of its final return before AdaMVE from scratch"""
        result = transfer_experiment(config_for("transfer_source", tmp_path),
                                     config_for("transfer_target", tmp_path), output_dir=tmp_path / "transfer")
        wins = sum(
            steps_or_inf(t.records, 0.9 * t.final_return) < steps_or_inf(s.records, 0.9 * s.final_return)
            for t, s in zip(result.variants["t_adamve"].seed_results, result.variants["adamve"].seed_results)
        )
        assert wins >= 4

    @pytest.mark.parametrize("kind", ["greedy", "replay"])
    def test_other_kinds_are_reported(self, tmp_path, kind):
        """Greedy and replay transfers run to a full summary"""
        result = transfer_experiment(config_for("transfer_source", tmp_path, reference_policy=kind),
                                     config_for("transfer_target", tmp_path, reference_policy=kind),
                                     output_dir=tmp_path / "transfer")
        rows = result.summary_path.read_text().splitlines()
        assert len(rows) == 1 + 3 * 5
