#!/usr/bin/env python3
"""
Approximate Dynamics Models

Hand-crafted and learned next-state predictors for the FourRoom gridworld,
and the W-reward: the Wasserstein distance between the true next-state
distribution and a model's prediction. The true dynamics are a point mass,
so W reduces to the (expected) Euclidean distance to the true next state.

Variants:
    oracle     exact copy of the environment transition
    threeroom  uniform over every open cell when the agent is in the
               bottom-left room, exact elsewhere
    nowall     ignores internal walls (can predict wall cells), keeps the
               outer boundary
    learned    ReLU network from (scaled coordinates, one-hot action) to
               next-state coordinates, fitted online
"""

import logging
import math
from abc import ABC, abstractmethod
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog

from errors import ModelError, ModelErrorFunctionError
from funcapprox import COORDINATE_SCALE, MLPApproximator, OptimizerState
from grid_env import ACTION_DELTAS, NUM_ACTIONS, GridSpec, snap_to_grid, transition_batch

logger = logging.getLogger(__name__)

MODEL_VARIANTS = ("oracle", "threeroom", "nowall", "learned")
DEFAULT_MODEL_LR = 0.001


class DynamicsModel(ABC):
    """Common interface of the dynamics models"""

    variant = "abstract"
    enumerable = True
    stochastic = False

    def __init__(self, spec: GridSpec):
        self.spec = spec
        self._matrix: Optional[np.ndarray] = None

    @abstractmethod
    def predict_batch(self, states: np.ndarray, actions: np.ndarray,
                      rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Sample next states for (B, 2) states; returns (B, 2) floats"""

    @abstractmethod
    def w_reward_batch(self, states: np.ndarray, actions: np.ndarray, true_next: np.ndarray) -> np.ndarray:
        """W-reward for each (s, a) given the environment's actual next state"""

    def predict_sample(self, s: Sequence[float], a: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        return self.predict_batch(np.asarray([s], dtype=np.float64), np.asarray([a]), rng)[0]

    def w_reward(self, s: Sequence[int], a: int, true_next: Sequence[int]) -> float:
        return float(self.w_reward_batch(np.asarray([s]), np.asarray([a]), np.asarray([true_next]))[0])

    def _build_matrix(self) -> np.ndarray:
        raise ModelError(f"The {self.variant} model has no enumerable transition distribution")

    def transition_matrix(self) -> np.ndarray:
        """Dense P_hat[cell, action, next_cell] over all grid cells, walls included"""
        if not self.enumerable:
            raise ModelError(f"The {self.variant} model has no enumerable transition distribution")
        if self._matrix is None:
            self._matrix = self._build_matrix()
        return self._matrix

    def distribution(self, s: Sequence[int], a: int) -> Tuple[np.ndarray, np.ndarray]:
        """Support (K, 2) and probabilities (K,) of P_hat(.|s, a)"""
        row = self.transition_matrix()[self.spec.cell_index(int(s[0]), int(s[1])), int(a)]
        support = np.flatnonzero(row)
        cells = np.stack([support % self.spec.width, support // self.spec.width], axis=1)
        return cells, row[support]


def _all_cells(spec: GridSpec) -> np.ndarray:
    """Every cell in row-major order, matching GridSpec.cell_index"""
    ys, xs = np.divmod(np.arange(spec.n_cells), spec.width)
    return np.stack([xs, ys], axis=1)


def _deterministic_matrix(spec: GridSpec, move) -> np.ndarray:
    cells = _all_cells(spec)
    matrix = np.zeros((spec.n_cells, NUM_ACTIONS, spec.n_cells))
    for a in range(NUM_ACTIONS):
        nxt = move(cells, np.full(len(cells), a))
        matrix[np.arange(spec.n_cells), a, nxt[:, 1] * spec.width + nxt[:, 0]] = 1.0
    return matrix


class OracleModel(DynamicsModel):
    """The true transition function"""

    variant = "oracle"

    def predict_batch(self, states, actions, rng=None):
        cells = snap_to_grid(self.spec, states)
        return transition_batch(self.spec, cells, actions).astype(np.float64)

    def w_reward_batch(self, states, actions, true_next):
        pred = self.predict_batch(states, actions)
        return np.linalg.norm(pred - np.asarray(true_next, dtype=np.float64), axis=1)

    def _build_matrix(self):
        return _deterministic_matrix(self.spec, lambda c, a: transition_batch(self.spec, c, a))


class ThreeRoomModel(OracleModel):
    """Exact outside the bottom-left room, uniform over open cells inside it"""

    variant = "threeroom"
    stochastic = True

    def in_broken_room(self, cells: np.ndarray) -> np.ndarray:
        cells = np.asarray(cells)
        return (cells[:, 0] < self.spec.width // 2) & (cells[:, 1] < self.spec.height // 2)

    def predict_batch(self, states, actions, rng=None):
        cells = snap_to_grid(self.spec, states)
        pred = transition_batch(self.spec, cells, actions).astype(np.float64)
        broken = self.in_broken_room(cells)
        if broken.any():
            if rng is None:
                raise ModelError("The threeroom model needs a random generator to sample")
            open_cells = self.spec.open_cells
            pred[broken] = open_cells[rng.integers(len(open_cells), size=int(broken.sum()))]
        return pred

    def w_reward_batch(self, states, actions, true_next):
        cells = snap_to_grid(self.spec, states)
        true_next = np.asarray(true_next, dtype=np.float64)
        exact = transition_batch(self.spec, cells, actions).astype(np.float64)
        w = np.linalg.norm(exact - true_next, axis=1)
        broken = self.in_broken_room(cells)
        if broken.any():
            diffs = self.spec.open_cells[None, :, :] - true_next[broken][:, None, :]
            w[broken] = np.linalg.norm(diffs, axis=2).mean(axis=1)
        return w

    def _build_matrix(self):
        matrix = super()._build_matrix()
        broken = self.in_broken_room(_all_cells(self.spec))
        uniform = np.zeros(self.spec.n_cells)
        uniform[self.spec.open_cells[:, 1] * self.spec.width + self.spec.open_cells[:, 0]] = 1.0 / len(self.spec.open_cells)
        matrix[broken] = uniform
        return matrix


class NoWallModel(OracleModel):
    """Moves through internal walls; blocked only by the outer boundary"""

    variant = "nowall"

    def _move(self, cells: np.ndarray, actions: np.ndarray) -> np.ndarray:
        moved = cells + ACTION_DELTAS[np.asarray(actions, dtype=np.int64)]
        inside = (
            (moved[:, 0] >= 0) & (moved[:, 0] < self.spec.width)
            & (moved[:, 1] >= 0) & (moved[:, 1] < self.spec.height)
        )
        return np.where(inside[:, None], moved, cells)

    def predict_batch(self, states, actions, rng=None):
        return self._move(snap_to_grid(self.spec, states), actions).astype(np.float64)

    def _build_matrix(self):
        return _deterministic_matrix(self.spec, self._move)


class LearnedModel(DynamicsModel):
    """
    Network regressor of absolute next-state coordinates.

    Inputs are (x/18, y/18, one-hot action); outputs are next-state
    coordinates divided by 18. Predictions are real-valued and not snapped.
    """

    variant = "learned"
    enumerable = False

    def __init__(self, spec: GridSpec, rng: np.random.Generator,
                 hidden: Sequence[int] = (200, 200, 200), lr: float = DEFAULT_MODEL_LR):
        super().__init__(spec)
        self.network = MLPApproximator(2 + NUM_ACTIONS, 2, hidden, rng=rng)
        self.optimizer: OptimizerState = self.network.make_optimizer(lr)
        self.updates = 0

    @staticmethod
    def features(states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64)
        one_hot = np.eye(NUM_ACTIONS)[np.asarray(actions, dtype=np.int64)]
        return np.concatenate([states * COORDINATE_SCALE, one_hot], axis=1)

    def predict_batch(self, states, actions, rng=None):
        return self.network.eval(self.features(states, actions)) / COORDINATE_SCALE

    def w_reward_batch(self, states, actions, true_next):
        pred = self.predict_batch(states, actions)
        return np.linalg.norm(pred - np.asarray(true_next, dtype=np.float64), axis=1)


def make_model(variant: str, spec: GridSpec, rng: Optional[np.random.Generator] = None,
               hidden: Sequence[int] = (200, 200, 200), lr: float = DEFAULT_MODEL_LR) -> DynamicsModel:
    if variant == "oracle":
        return OracleModel(spec)
    if variant == "threeroom":
        return ThreeRoomModel(spec)
    if variant == "nowall":
        return NoWallModel(spec)
    if variant == "learned":
        if rng is None:
            raise ModelError("The learned model needs a random generator for initialisation")
        return LearnedModel(spec, rng, hidden, lr)
    raise ModelError(f"Unknown model '{variant}'", [f"Must be one of: {', '.join(MODEL_VARIANTS)}"])


def fit_step(model: DynamicsModel, batch, lr: Optional[float] = None) -> float:
    """
    One gradient step of the learned model on a transition batch.

    Returns:
        Pre-step loss: half the mean squared error over both coordinates, in
        scaled feature units

    Raises:
        ModelError: For non-learned models or an empty batch
    """
    if not isinstance(model, LearnedModel):
        raise ModelError(f"fit_step needs the learned model, got {model.variant}")
    n = len(batch.actions)
    if n == 0:
        raise ModelError("Cannot fit the dynamics model on an empty batch")
    if lr is not None:
        model.optimizer.lr = lr

    inputs = model.features(batch.states, batch.actions)
    targets = np.asarray(batch.next_states, dtype=np.float64) * COORDINATE_SCALE
    # one row per (sample, coordinate)
    loss = model.network.grad_step(
        model.optimizer,
        np.concatenate([inputs, inputs]),
        np.concatenate([np.zeros(n, dtype=np.int64), np.ones(n, dtype=np.int64)]),
        np.concatenate([targets[:, 0], targets[:, 1]]),
    )
    model.updates += 1
    return loss


def select_for_sml(batch, errfn, h_sml: int, x_percent: float, qbar=None):
    """
    Keep the x% of a batch with the smallest learned model error Ê(s, h_sml).

    Entries are ranked ascending with ties resolved by batch order; the kept
    entries are returned in their original batch order.
    """
    if not 0 < x_percent <= 100:
        raise ModelError(f"x_percent must lie in (0, 100], got {x_percent}")
    if not 1 <= h_sml <= errfn.h_max:
        raise ModelErrorFunctionError(f"h_sml must lie in [1, {errfn.h_max}], got {h_sml}")
    n = len(batch.actions)
    if n == 0:
        return batch
    keep = math.ceil(x_percent / 100.0 * n)
    errs = errfn.state_errors(batch.states, qbar)[:, h_sml]
    chosen = np.sort(np.argsort(errs, kind="stable")[:keep])
    return batch.subset(chosen)


def exact_w_distance(support_p: np.ndarray, weights_p: np.ndarray,
                     support_q: np.ndarray, weights_q: np.ndarray) -> float:
    """
    Wasserstein-1 distance between two discrete distributions on the plane,
    solved as a transport linear program with Euclidean ground cost.
    """
    support_p = np.atleast_2d(np.asarray(support_p, dtype=np.float64))
    support_q = np.atleast_2d(np.asarray(support_q, dtype=np.float64))
    p = np.asarray(weights_p, dtype=np.float64)
    q = np.asarray(weights_q, dtype=np.float64)
    if abs(p.sum() - 1.0) > 1e-9 or abs(q.sum() - 1.0) > 1e-9:
        raise ModelError("Distribution weights must each sum to 1")

    cost = np.linalg.norm(support_p[:, None, :] - support_q[None, :, :], axis=2)
    m, n = cost.shape
    a_eq = []
    for i in range(m):
        row = np.zeros((m, n))
        row[i, :] = 1
        a_eq.append(row.reshape(-1))
    for j in range(n):
        col = np.zeros((m, n))
        col[:, j] = 1
        a_eq.append(col.reshape(-1))
    a_eq = np.array(a_eq)
    b_eq = np.concatenate([p, q])
    # the last marginal constraint is implied by the others
    result = linprog(cost.reshape(-1), A_eq=a_eq[:-1], b_eq=b_eq[:-1], bounds=(0, None), method="highs")
    if not result.success:
        raise ModelError(f"Transport problem failed: {result.message}")
    return float(result.fun)
