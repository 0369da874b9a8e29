#!/usr/bin/env python3
"""
Exact Dynamic Programming Oracle

Finite-horizon backward induction over the enumerated grid (all 361 cells,
walls included so wall-blind model predictions stay enumerable). Provides
ground truth for the expanded values, the cumulative model error, and a
numerical check of the value-error bound

    |V_model,H(s) - V_true,H(s)| <= K * gamma * E(s, H)

with K estimated from finite differences of the model values.

Transitions into the goal pay the goal reward and end the trajectory, so no
value is bootstrapped through the goal.
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from dyn_models import DynamicsModel, OracleModel
from errors import AdaMVEError, BoundViolationError, ModelError
from grid_env import NUM_ACTIONS, GridSpec

logger = logging.getLogger(__name__)

MAX_DP_HORIZON = 10
ZERO_ERROR_TOLERANCE = 1e-12


def format_float(value: float) -> str:
    """Shortest float text that reads back to the same double; used by every result file"""
    return repr(float(value))


class EnvironmentDynamics(OracleModel):
    """The true environment seen as an enumerable transition source"""
    variant = "environment"


@dataclass
class ValueTable:
    """values[h, cell] for h = 0..H over all grid cells"""
    values: np.ndarray
    spec: GridSpec
    gamma: float
    policy_name: str = "custom"
    source_name: str = "environment"

    @property
    def horizon(self) -> int:
        return self.values.shape[0] - 1

    def at(self, x: int, y: int, h: int) -> float:
        return float(self.values[h, self.spec.cell_index(x, y)])

    def open_values(self, h: int) -> np.ndarray:
        cells = self.spec.open_cells
        return self.values[h, cells[:, 1] * self.spec.width + cells[:, 0]]


@dataclass
class ErrorTable(ValueTable):
    """Exact cumulative model error; action_values[h, cell, a] holds the action form"""
    action_values: Optional[np.ndarray] = None


@dataclass
class BoundReport:
    """Per-open-cell comparison of the value error with its bound"""
    cells: np.ndarray  # (N, 2)
    lhs: np.ndarray
    rhs: np.ndarray
    exact_error: np.ndarray
    k_hat: float
    pairwise_k: float
    pairwise_rhs: np.ndarray
    violations: List[Tuple[int, int, float, float]] = field(default_factory=list)
    pairwise_violations: List[Tuple[int, int, float, float]] = field(default_factory=list)

    @property
    def n_states(self) -> int:
        return len(self.cells)


# Policies: (n_cells, 5) action distributions

def uniform_policy(spec: GridSpec) -> np.ndarray:
    return np.full((spec.n_cells, NUM_ACTIONS), 1.0 / NUM_ACTIONS)


def always_action_policy(spec: GridSpec, action: int) -> np.ndarray:
    policy = np.zeros((spec.n_cells, NUM_ACTIONS))
    policy[:, int(action)] = 1.0
    return policy


def greedy_policy(q_values: np.ndarray) -> np.ndarray:
    """One-hot argmax policy of an (n_cells, 5) Q table, lowest index on ties"""
    policy = np.zeros_like(q_values, dtype=np.float64)
    policy[np.arange(len(q_values)), np.argmax(q_values, axis=1)] = 1.0
    return policy


def _check_inputs(source: DynamicsModel, policy: np.ndarray, horizon: int) -> None:
    if not source.enumerable:
        raise ModelError(f"Exact DP needs an enumerable model, got {source.variant}")
    if not 0 <= horizon <= MAX_DP_HORIZON:
        raise AdaMVEError(f"DP horizon must lie in [0, {MAX_DP_HORIZON}], got {horizon}")
    if policy.shape != (source.spec.n_cells, NUM_ACTIONS):
        raise AdaMVEError(f"Policy must have shape ({source.spec.n_cells}, {NUM_ACTIONS}), got {policy.shape}")


def _goal_mask(spec: GridSpec) -> np.ndarray:
    mask = np.zeros(spec.n_cells, dtype=bool)
    mask[spec.cell_index(spec.goal.x, spec.goal.y)] = True
    return mask


def exact_h_values(source: DynamicsModel, policy: np.ndarray, vbar: np.ndarray, horizon: int,
                   gamma: float, policy_name: str = "custom") -> ValueTable:
    """
    Backward induction of the h-step value for h = 0..horizon:

        v[h](s) = sum_a pi(a|s) sum_s' P(s'|s,a) [R(s') + gamma (1 - goal(s')) v[h-1](s')]
    """
    _check_inputs(source, policy, horizon)
    spec = source.spec
    matrix = source.transition_matrix()
    goal = _goal_mask(spec)
    reward = spec.goal_reward * goal.astype(np.float64)

    values = np.zeros((horizon + 1, spec.n_cells))
    values[0] = np.asarray(vbar, dtype=np.float64)
    for h in range(1, horizon + 1):
        continuation = reward + gamma * np.where(goal, 0.0, values[h - 1])
        per_action = matrix @ continuation  # (cells, actions)
        values[h] = (policy * per_action).sum(axis=1)
    return ValueTable(values, spec, gamma, policy_name, source.variant)


def w_reward_table(model: DynamicsModel) -> np.ndarray:
    """Exact W(s, a) for every cell and action against the true next state"""
    spec = model.spec
    ys, xs = np.divmod(np.arange(spec.n_cells), spec.width)
    cells = np.stack([xs, ys], axis=1)
    truth = EnvironmentDynamics(spec)
    table = np.zeros((spec.n_cells, NUM_ACTIONS))
    for a in range(NUM_ACTIONS):
        actions = np.full(spec.n_cells, a)
        table[:, a] = model.w_reward_batch(cells, actions, truth.predict_batch(cells, actions))
    return table


def _true_successors(spec: GridSpec) -> np.ndarray:
    """(cells, actions) index of the true next cell"""
    ys, xs = np.divmod(np.arange(spec.n_cells), spec.width)
    cells = np.stack([xs, ys], axis=1).astype(np.float64)
    truth = EnvironmentDynamics(spec)
    successors = np.zeros((spec.n_cells, NUM_ACTIONS), dtype=np.int64)
    for a in range(NUM_ACTIONS):
        nxt = truth.predict_batch(cells, np.full(spec.n_cells, a)).astype(np.int64)
        successors[:, a] = nxt[:, 1] * spec.width + nxt[:, 0]
    return successors


def _error_induction(model: DynamicsModel, horizon: int, gamma: float, reduce) -> ErrorTable:
    spec = model.spec
    w = w_reward_table(model)
    successors = _true_successors(spec)
    goal = _goal_mask(spec)
    state_form = np.zeros((horizon + 1, spec.n_cells))
    action_form = np.zeros((horizon + 1, spec.n_cells, NUM_ACTIONS))
    for h in range(1, horizon + 1):
        nxt = np.where(goal[successors], 0.0, state_form[h - 1][successors])
        action_form[h] = w + gamma * nxt
        state_form[h] = reduce(action_form[h])
    return ErrorTable(state_form, spec, gamma, source_name=model.variant, action_values=action_form)


def exact_model_error(model: DynamicsModel, policy: np.ndarray, horizon: int, gamma: float,
                      policy_name: str = "custom") -> ErrorTable:
    """
    Cumulative model error along true trajectories of a fixed policy:

        E(s, a, h) = W(s, a) + gamma (1 - goal(s')) E(s', h - 1)
        E(s, h) = sum_a pi(a|s) E(s, a, h)
    """
    _check_inputs(model, policy, horizon)
    table = _error_induction(model, horizon, gamma, lambda q: (policy * q).sum(axis=1))
    table.policy_name = policy_name
    return table


def exact_conservative_error(model: DynamicsModel, horizon: int, gamma: float) -> ErrorTable:
    """Error under the error-maximising reference policy: E(s, h) = max_a E(s, a, h)"""
    _check_inputs(model, uniform_policy(model.spec), horizon)
    table = _error_induction(model, horizon, gamma, lambda q: q.max(axis=1))
    table.policy_name = "conservative"
    return table


def _folded_values(table: ValueTable) -> np.ndarray:
    """Model values with the goal cell carrying goal_reward / gamma"""
    values = table.values.copy()
    if table.gamma > 0:
        values[:, table.spec.cell_index(table.spec.goal.x, table.spec.goal.y)] = table.spec.goal_reward / table.gamma
    return values


def adjacent_lipschitz(table: ValueTable) -> float:
    """max over h and 4-adjacent open-cell pairs of |V(s1) - V(s2)|"""
    spec = table.spec
    values = _folded_values(table)
    best = 0.0
    for x, y in spec.open_cells:
        for nx, ny in ((x + 1, y), (x, y + 1)):
            if spec.in_bounds(nx, ny) and not spec.is_wall(nx, ny):
                diff = np.abs(values[:, spec.cell_index(x, y)] - values[:, spec.cell_index(nx, ny)]).max()
                best = max(best, float(diff))
    return best


def pairwise_lipschitz(table: ValueTable) -> float:
    """max over h and all distinct cell pairs of |V(s1) - V(s2)| / ||s1 - s2||"""
    spec = table.spec
    values = _folded_values(table)
    ys, xs = np.divmod(np.arange(spec.n_cells), spec.width)
    coords = np.stack([xs, ys], axis=1).astype(np.float64)
    dist = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=2)
    np.fill_diagonal(dist, np.inf)
    best = 0.0
    for h in range(values.shape[0]):
        gaps = np.abs(values[h][:, None] - values[h][None, :]) / dist
        best = max(best, float(gaps.max()))
    return best


def value_bound_check(model: DynamicsModel, policy: np.ndarray, vbar: np.ndarray, horizon: int,
                   gamma: float, policy_name: str = "custom") -> BoundReport:
    """
    Compare the exact value error of a model with its error bound on every
    open cell.

    Violations of the estimated bound are reported and logged. A nonzero value
    error where the exact cumulative model error is zero raises.

    Raises:
        BoundViolationError: If a zero-error state has a nonzero value error
    """
    _check_inputs(model, policy, horizon)
    spec = model.spec
    model_table = exact_h_values(model, policy, vbar, horizon, gamma, policy_name)
    true_table = exact_h_values(EnvironmentDynamics(spec), policy, vbar, horizon, gamma, policy_name)
    errors = exact_model_error(model, policy, horizon, gamma, policy_name)

    cells = spec.open_cells
    lhs = np.abs(model_table.open_values(horizon) - true_table.open_values(horizon))
    exact_error = errors.open_values(horizon)

    k_hat = adjacent_lipschitz(model_table)
    pairwise_k = pairwise_lipschitz(model_table)
    rhs = k_hat * gamma * exact_error
    pairwise_rhs = pairwise_k * gamma * exact_error

    zero_error = exact_error == 0.0
    broken = zero_error & (lhs > ZERO_ERROR_TOLERANCE)
    if broken.any():
        details = [f"({x},{y}): value error {d!r}" for (x, y), d in zip(cells[broken], lhs[broken])]
        raise BoundViolationError(
            f"{model.variant} model: states with zero model error have nonzero value error", details[:10]
        )

    report = BoundReport(cells, lhs, rhs, exact_error, k_hat, pairwise_k, pairwise_rhs)
    for (x, y), left, right, right_all in zip(cells, lhs, rhs, pairwise_rhs):
        if left > right + ZERO_ERROR_TOLERANCE:
            report.violations.append((int(x), int(y), float(left), float(right)))
        if left > right_all + ZERO_ERROR_TOLERANCE:
            report.pairwise_violations.append((int(x), int(y), float(left), float(right_all)))

    for x, y, left, right in report.violations:
        logger.warning(f"Bound violated at ({x},{y}) for {model.variant}/{policy_name}, H={horizon}: "
                       f"value error {left:.6g} > K_hat {k_hat:.6g} * gamma * E {right:.6g}")
    logger.info(f"Bound check {model.variant}/{policy_name} H={horizon}: K_hat={k_hat:.6g}, "
                f"pairwise K={pairwise_k:.6g}, {len(report.violations)} violations, "
                f"max value error {lhs.max():.6g}")
    return report


# Alias under the operation name used by the public interface
theorem1_check = value_bound_check


# Result files

def write_value_table_csv(path: Union[str, Path], table: ValueTable) -> Path:
    """x,y,h,value rows for every open cell and horizon"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["x", "y", "h", "value"])
        for x, y in table.spec.open_cells:
            for h in range(table.horizon + 1):
                writer.writerow([int(x), int(y), h, format_float(table.at(x, y, h))])
    return path


def write_bound_report_csv(path: Union[str, Path], report: BoundReport) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    violating = {(x, y) for x, y, _, _ in report.violations}
    pairwise = {(x, y) for x, y, _, _ in report.pairwise_violations}
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["x", "y", "lhs", "rhs", "exact_error", "violation", "pairwise_violation"])
        for (x, y), left, right, err in zip(report.cells, report.lhs, report.rhs, report.exact_error):
            key = (int(x), int(y))
            writer.writerow([key[0], key[1], format_float(left), format_float(right), format_float(err),
                             int(key in violating), int(key in pairwise)])
    return path
