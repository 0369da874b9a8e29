#!/usr/bin/env python3
"""
Model-based value expansion.

A single greedy rollout through the dynamics model yields the expanded value
for every horizon h = 0..H_max at once:

    v[h] = sum_{t<h} gamma^t R(s_t, a_t) + gamma^h max_a Q_bar(s_h, a)

The horizons are blended with softmax weights over the negative cumulative
model error, so horizons the model cannot be trusted on fade out.
"""

import logging
from typing import Callable, Optional

import numpy as np

from errors import ExpansionError
from grid_env import GridSpec, is_goal, snap_to_grid

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.01

RewardFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def goal_reward_fn(spec: GridSpec) -> RewardFn:
    """The known environment reward: goal_reward when the snapped next state is the goal"""
    def reward(states: np.ndarray, actions: np.ndarray, next_states: np.ndarray) -> np.ndarray:
        return spec.goal_reward * is_goal(spec, snap_to_grid(spec, next_states)).astype(np.float64)
    return reward


def rollout_values(model, reward_fn: RewardFn, q, qbar, states: np.ndarray, h_max: int,
                   gamma: float, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    Expanded values for a batch of start states.

    Args:
        model: Dynamics model used for the rollout
        reward_fn: Known reward R(s, a, s')
        q: Online Q approximator; the rollout policy is greedy in it
        qbar: Target Q approximator used to bootstrap every horizon
        states: (B, 2) start states
        h_max: Longest horizon
        gamma: Discount factor
        rng: Random stream for stochastic models

    Returns:
        (B, h_max + 1) array of v[h]
    """
    if h_max < 0:
        raise ExpansionError(f"h_max must be nonnegative, got {h_max}")
    spec = model.spec
    current = np.asarray(states, dtype=np.float64).copy()
    n = len(current)
    values = np.zeros((n, h_max + 1))
    values[:, 0] = qbar.eval(snap_to_grid(spec, current).astype(np.float64)).max(axis=1)

    returns = np.zeros(n)
    discount = 1.0
    alive = np.ones(n, dtype=bool)
    for t in range(h_max):
        cells = snap_to_grid(spec, current).astype(np.float64)
        actions = np.argmax(q.eval(cells), axis=1)
        predicted = model.predict_batch(current, actions, rng)
        rewards = reward_fn(current, actions, predicted)

        returns = returns + alive * discount * rewards
        discount *= gamma
        reached = alive & is_goal(spec, snap_to_grid(spec, predicted))
        bootstrap = qbar.eval(snap_to_grid(spec, predicted).astype(np.float64)).max(axis=1)

        step_value = returns + discount * bootstrap
        values[:, t + 1] = np.where(alive & ~reached, step_value,
                                    np.where(reached, returns, values[:, t]))
        alive &= ~reached
        current = np.where(alive[:, None], predicted, current)
    return values


def horizon_weights(errs: np.ndarray, tau: float = DEFAULT_TEMPERATURE) -> np.ndarray:
    """
    Softmax of -errs / tau over the last axis.

    The minimum error is subtracted first, so adding a constant to every
    error leaves the weights unchanged.
    """
    if tau <= 0:
        raise ExpansionError(f"Temperature must be positive, got {tau}")
    errs = np.asarray(errs, dtype=np.float64)
    if not np.all(np.isfinite(errs)):
        raise ExpansionError("Model errors must be finite")
    shifted = errs - errs.min(axis=-1, keepdims=True)
    logits = np.exp(-shifted / tau)
    return logits / logits.sum(axis=-1, keepdims=True)


def mixed_target(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Convex combination of the horizon values"""
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if values.shape[-1] != weights.shape[-1]:
        raise ExpansionError(
            f"Horizon values have {values.shape[-1]} entries, weights have {weights.shape[-1]}"
        )
    return (values * weights).sum(axis=-1)


def weighted_avg_horizon(weights: np.ndarray) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    return (weights * np.arange(weights.shape[-1])).sum(axis=-1)


def mve_target(values: np.ndarray, horizon: int) -> np.ndarray:
    """Fixed-horizon expansion: v[H]"""
    values = np.asarray(values)
    if not 0 <= horizon < values.shape[-1]:
        raise ExpansionError(f"Horizon {horizon} outside the rollout's range [0, {values.shape[-1] - 1}]")
    return values[..., horizon]


def uniform_target(values: np.ndarray) -> np.ndarray:
    """Equal-weight mixture of all horizons"""
    return np.asarray(values, dtype=np.float64).mean(axis=-1)
