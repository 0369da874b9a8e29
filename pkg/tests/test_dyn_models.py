#!/usr/bin/env python3
"""
Tests for the dynamics models, the W-reward, model fitting and
selective model learning.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path for imports
sys.path.append(str(Path(__file__).parent.parent))

from dyn_models import (
    LearnedModel,
    NoWallModel,
    OracleModel,
    ThreeRoomModel,
    exact_w_distance,
    fit_step,
    make_model,
    select_for_sml,
)
from errors import ModelError, ModelErrorFunctionError
from grid_env import Action, make_spec, step, transition_batch
from model_error import build_error_function
from replay_buffer import TransitionBatch, TransitionSample


@pytest.fixture
def spec():
    return make_spec("fourroom")


def oracle_batch(spec, cells, actions):
    samples = []
    for (x, y), a in zip(cells, actions):
        result = step(spec, (int(x), int(y)), int(a))
        samples.append(TransitionSample((int(x), int(y)), int(a), result.reward, tuple(result.next_state),
                                        result.terminal))
    return TransitionBatch.from_samples(samples)


class TestHandCraftedModels:
    """Oracle, threeroom and nowall predictions and W-rewards"""

    def test_oracle_has_zero_w(self, spec):
        """The oracle's W-reward is 0 everywhere"""
        model = OracleModel(spec)
        cells = np.repeat(spec.open_cells, 5, axis=0)
        actions = np.tile(np.arange(5), len(spec.open_cells))
        true_next = transition_batch(spec, cells, actions)
        assert np.all(model.w_reward_batch(cells, actions, true_next) == 0.0)

    def test_nowall_crosses_walls(self, spec):
        """(8,0) Right predicts the wall cell (9,0) with W = 1"""
        model = NoWallModel(spec)
        assert model.predict_sample((8, 0), Action.RIGHT).tolist() == [9.0, 0.0]
        assert model.w_reward((8, 0), Action.RIGHT, (8, 0)) == pytest.approx(1.0)
        assert model.predict_sample((0, 0), Action.LEFT).tolist() == [0.0, 0.0]

    def test_nowall_exact_away_from_walls(self, spec):
        """Away from the internal walls nowall equals the oracle"""
        model = NoWallModel(spec)
        assert model.w_reward((3, 3), Action.UP, (3, 4)) == 0.0

    def test_threeroom_exact_outside_broken_room(self, spec):
        """Outside the bottom-left room threeroom is exact"""
        model = ThreeRoomModel(spec)
        assert model.predict_sample((14, 15), Action.RIGHT).tolist() == [15.0, 15.0]
        assert model.w_reward((14, 15), Action.RIGHT, (15, 15)) == 0.0

    def test_threeroom_uniform_inside_broken_room(self, spec):
        """Inside the bottom-left room predictions are uniform over open cells"""
        model = ThreeRoomModel(spec)
        rng = np.random.default_rng(0)
        states = np.tile([[2.0, 2.0]], (3000, 1))
        preds = model.predict_batch(states, np.full(3000, int(Action.UP)), rng)
        assert not any(spec.is_wall(int(x), int(y)) for x, y in preds)
        assert len({tuple(p) for p in preds}) > 250
        with pytest.raises(ModelError):
            model.predict_sample((2, 2), Action.UP)

    def test_threeroom_w_is_mean_distance(self, spec):
        """W in the broken room is the mean distance from the true next state to the open cells"""
        model = ThreeRoomModel(spec)
        expected = np.linalg.norm(spec.open_cells - np.array([2, 3]), axis=1).mean()
        assert model.w_reward((2, 2), Action.UP, (2, 3)) == pytest.approx(expected)
        uniform = np.full(len(spec.open_cells), 1.0 / len(spec.open_cells))
        exact = exact_w_distance(spec.open_cells, uniform, np.array([[2, 3]]), np.array([1.0]))
        assert exact == pytest.approx(expected, rel=1e-6)

    def test_transition_matrices_are_stochastic(self, spec):
        """Every row of every enumerable model sums to 1"""
        for model in (OracleModel(spec), ThreeRoomModel(spec), NoWallModel(spec)):
            matrix = model.transition_matrix()
            assert matrix.shape == (361, 5, 361)
            np.testing.assert_allclose(matrix.sum(axis=2), 1.0)
        cells, probs = ThreeRoomModel(spec).distribution((2, 2), Action.UP)
        assert len(cells) == 328
        assert probs == pytest.approx(np.full(328, 1 / 328))

    def test_unknown_and_learned_factory(self, spec):
        """make_model validates names and needs an rng for the learned model"""
        with pytest.raises(ModelError):
            make_model("perfect", spec)
        with pytest.raises(ModelError):
            make_model("learned", spec)
        with pytest.raises(ModelError):
            make_model("learned", spec, np.random.default_rng(0), hidden=(4,)).transition_matrix()


class TestLearnedModel:
    """Network dynamics model"""

    def test_identity_network_predicts_stay(self, spec):
        """A linear network copying the coordinates is exact for Stay"""
        model = LearnedModel(spec, np.random.default_rng(0), hidden=())
        model.network.weights[0][:] = 0.0
        model.network.weights[0][:2, :2] = np.eye(2)
        model.network.biases[0][:] = 0.0
        np.testing.assert_allclose(model.predict_sample((7, 12), Action.STAY), [7.0, 12.0])
        assert model.w_reward((7, 12), Action.STAY, (7, 12)) == pytest.approx(0.0, abs=1e-12)
        assert model.w_reward((7, 12), Action.UP, (7, 13)) == pytest.approx(1.0)

    def test_fit_step_reduces_loss(self, spec):
        """Repeated fit steps on oracle transitions lower the regression loss"""
        rng = np.random.default_rng(5)
        model = LearnedModel(spec, rng, hidden=(32,), lr=0.01)
        cells = spec.open_cells[rng.integers(len(spec.open_cells), size=64)]
        batch = oracle_batch(spec, cells, rng.integers(0, 5, size=64))
        first = fit_step(model, batch)
        for _ in range(300):
            last = fit_step(model, batch)
        assert last < 0.5 * first
        assert model.updates == 301

    def test_fit_step_rejects(self, spec):
        """Only the learned model fits, and never on an empty batch"""
        batch = oracle_batch(spec, [(1, 1)], [0])
        with pytest.raises(ModelError):
            fit_step(OracleModel(spec), batch)
        model = LearnedModel(spec, np.random.default_rng(0), hidden=(4,))
        with pytest.raises(ModelError):
            fit_step(model, batch.subset(np.array([], dtype=int)))


class TestSelectiveLearning:
    """Low-error subset selection"""

    @pytest.fixture
    def ranked(self, spec):
        errfn = build_error_function("replay", "tabular", h_max=2, gamma=0.98, lr=0.1)
        cells = [(1, 1), (2, 2), (3, 3), (4, 4)]
        for (x, y), err in zip(cells, [3.0, 1.0, 2.0, 1.0]):
            errfn.online.table[y * 19 + x, 1] = err
        return errfn, oracle_batch(spec, cells, [0, 1, 2, 3])

    def test_keeps_lowest_in_batch_order(self, ranked):
        """50% of four keeps the two tied lowest, in batch order"""
        errfn, batch = ranked
        kept = select_for_sml(batch, errfn, h_sml=1, x_percent=50)
        assert kept.states.tolist() == [[2, 2], [4, 4]]

    def test_rounds_up(self, ranked):
        """60% of four keeps three"""
        errfn, batch = ranked
        kept = select_for_sml(batch, errfn, h_sml=1, x_percent=60)
        assert kept.actions.tolist() == [1, 2, 3]
        assert len(select_for_sml(batch, errfn, h_sml=1, x_percent=100)) == 4

    def test_invalid_arguments(self, ranked):
        """Percent outside (0, 100] and horizons outside [1, H_max] are rejected"""
        errfn, batch = ranked
        with pytest.raises(ModelError):
            select_for_sml(batch, errfn, h_sml=1, x_percent=0)
        with pytest.raises(ModelErrorFunctionError):
            select_for_sml(batch, errfn, h_sml=3, x_percent=50)


class TestTransportDistance:
    """Linear-program W-distance"""

    def test_point_masses(self):
        """Two point masses are their Euclidean distance apart"""
        assert exact_w_distance([[0, 0]], [1.0], [[3, 4]], [1.0]) == pytest.approx(5.0)

    def test_bad_weights(self):
        """Weights must be probability vectors"""
        with pytest.raises(ModelError):
            exact_w_distance([[0, 0]], [0.5], [[1, 1]], [1.0])
