#!/usr/bin/env python3
"""
Cumulative Model Error Functions

TD learning of the h-step cumulative model error: the discounted sum of
W-rewards collected along h steps of a reference policy. The error is the
value function of an auxiliary MDP whose reward is the W-reward, so it is
learned with one-step TD targets

    E(s, a, h) <- W(s, a) + gamma * E_bar(s', a', h - 1)

for every h in 1..H_max at once, with E(., 0) = 0 pinned.

Reference policies:
    conservative  a' maximises the target error (action form)
    greedy        a' maximises the target Q-function (action form)
    replay        no action selection, state-form bootstrap (on-policy for the
                  buffer's behaviour mixture)
"""

import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np

from errors import ModelErrorFunctionError
from funcapprox import (
    DEFAULT_HIDDEN_LAYERS,
    Approximator,
    build_approximator,
    load_checkpoint,
    polyak_update,
    save_checkpoint,
)
from grid_env import NUM_ACTIONS

logger = logging.getLogger(__name__)


class ReferencePolicyKind(str, Enum):
    CONSERVATIVE = "conservative"
    GREEDY = "greedy"
    REPLAY = "replay"

    @property
    def form(self) -> str:
        return "state" if self is ReferencePolicyKind.REPLAY else "action"


def error_output_dim(form: str, h_max: int) -> int:
    return (h_max + 1) * NUM_ACTIONS if form == "action" else h_max + 1


def error_pinned_heads(form: str) -> Sequence[int]:
    """Heads of the h = 0 slice"""
    return tuple(range(NUM_ACTIONS)) if form == "action" else (0,)


class ErrorFunction:
    """
    Online and target approximators of the cumulative model error.

    Action form lays heads out as index h * 5 + a; state form uses index h.
    Reads are clamped at zero.
    """

    def __init__(self, online: Approximator, kind: Union[str, ReferencePolicyKind], h_max: int,
                 gamma: float, lr: float, target: Optional[Approximator] = None,
                 optimizer_mode: str = "adam", frozen: bool = False):
        self.kind = ReferencePolicyKind(kind)
        self.form = self.kind.form
        if h_max < 1:
            raise ModelErrorFunctionError(f"h_max must be at least 1, got {h_max}")
        expected = error_output_dim(self.form, h_max)
        if online.output_dim != expected:
            raise ModelErrorFunctionError(
                f"{self.form}-form error function with h_max={h_max} needs {expected} heads, "
                f"approximator has {online.output_dim}"
            )
        self.online = online
        self.target = target if target is not None else online.copy()
        self.h_max = h_max
        self.gamma = gamma
        self.optimizer = online.make_optimizer(lr, mode=optimizer_mode)
        self.frozen = frozen
        self.updates = 0
        self.metadata: Dict[str, str] = {}

    # Reads

    def _raw(self, approximator: Approximator, states: np.ndarray) -> np.ndarray:
        return np.maximum(approximator.eval(np.asarray(states, dtype=np.float64)), 0.0)

    def action_errors(self, states: np.ndarray, use_target: bool = False) -> np.ndarray:
        """(B, H_max + 1, 5) clamped action-form errors"""
        if self.form != "action":
            raise ModelErrorFunctionError("Action-form reads need a conservative or greedy error function")
        approx = self.target if use_target else self.online
        return self._raw(approx, states).reshape(-1, self.h_max + 1, NUM_ACTIONS)

    def state_errors(self, states: np.ndarray, qbar: Optional[Approximator] = None,
                     use_target: bool = False) -> np.ndarray:
        """(B, H_max + 1) clamped state-form errors, aggregated per reference policy"""
        approx = self.target if use_target else self.online
        if self.form == "state":
            return self._raw(approx, states)
        per_action = self.action_errors(states, use_target)
        if self.kind is ReferencePolicyKind.CONSERVATIVE:
            return per_action.max(axis=2)
        if qbar is None:
            raise ModelErrorFunctionError("Greedy error reads need the target Q-function")
        greedy = np.argmax(qbar.eval(np.asarray(states, dtype=np.float64)), axis=1)
        return per_action[np.arange(len(greedy)), :, greedy]

    def update_target(self, mix: float) -> None:
        polyak_update(self.target, self.online, mix)


def eval_state_error(errfn: ErrorFunction, s: Sequence[int], h: int, qbar: Optional[Approximator] = None) -> float:
    """Ê(s, h) for one state"""
    if not 0 <= h <= errfn.h_max:
        raise ModelErrorFunctionError(f"Horizon {h} out of range [0, {errfn.h_max}]")
    return float(errfn.state_errors(np.asarray([s]), qbar)[0, h])


def td_targets(errfn: ErrorFunction, batch, model, qbar: Optional[Approximator] = None):
    """
    Regression inputs, head indices and targets for every (sample, h >= 1).

    Returns:
        Tuple of (inputs (B*H, 2), heads (B*H,), targets (B*H,))
    """
    n = len(batch.actions)
    w = model.w_reward_batch(batch.states, batch.actions, batch.next_states)
    not_terminal = ~np.asarray(batch.terminals, dtype=bool)
    rows = np.arange(n)

    if errfn.form == "action":
        nxt = errfn.action_errors(batch.next_states, use_target=True)  # (B, H+1, 5)
        if errfn.kind is ReferencePolicyKind.GREEDY:
            if qbar is None:
                raise ModelErrorFunctionError("The greedy reference policy needs the target Q-function")
            successor = np.argmax(qbar.eval(np.asarray(batch.next_states, dtype=np.float64)), axis=1)
            bootstrap = nxt[rows, :, successor]  # (B, H+1)
        else:
            bootstrap = nxt.max(axis=2)
    else:
        bootstrap = errfn.state_errors(batch.next_states, use_target=True)

    inputs, heads, targets = [], [], []
    for h in range(1, errfn.h_max + 1):
        targets.append(w + errfn.gamma * bootstrap[:, h - 1] * not_terminal)
        if errfn.form == "action":
            heads.append(h * NUM_ACTIONS + np.asarray(batch.actions, dtype=np.int64))
        else:
            heads.append(np.full(n, h, dtype=np.int64))
        inputs.append(batch.states)
    return (np.concatenate(inputs).astype(np.float64), np.concatenate(heads), np.concatenate(targets))


def td_update(errfn: ErrorFunction, batch, model, qbar: Optional[Approximator] = None,
              kind: Optional[Union[str, ReferencePolicyKind]] = None) -> float:
    """
    One TD step on all horizons of the error function.

    Returns:
        Pre-step loss (0.0 when the error function is frozen)

    Raises:
        ModelErrorFunctionError: Kind/form mismatch, empty batch, or missing
            target Q-function for the greedy kind
    """
    if kind is not None and ReferencePolicyKind(kind).form != errfn.form:
        raise ModelErrorFunctionError(
            f"Reference policy '{ReferencePolicyKind(kind).value}' needs the "
            f"{ReferencePolicyKind(kind).form} form, error function has the {errfn.form} form"
        )
    if kind is not None and ReferencePolicyKind(kind) is not errfn.kind:
        raise ModelErrorFunctionError(
            f"Error function was built for '{errfn.kind.value}', got '{ReferencePolicyKind(kind).value}'"
        )
    if len(batch.actions) == 0:
        raise ModelErrorFunctionError("td_update needs a nonempty batch")
    if errfn.frozen:
        return 0.0

    inputs, heads, targets = td_targets(errfn, batch, model, qbar)
    loss = errfn.online.grad_step(errfn.optimizer, inputs, heads, targets)
    errfn.updates += 1
    return loss


def build_error_function(kind: Union[str, ReferencePolicyKind], variant: str, h_max: int, gamma: float,
                         lr: float, rng: Optional[np.random.Generator] = None,
                         hidden: Sequence[int] = DEFAULT_HIDDEN_LAYERS, optimizer_mode: str = "adam",
                         width: int = 19, height: int = 19) -> ErrorFunction:
    kind = ReferencePolicyKind(kind)
    online = build_approximator(
        variant, error_output_dim(kind.form, h_max), rng=rng, hidden=hidden,
        pinned_heads=error_pinned_heads(kind.form), width=width, height=height,
    )
    return ErrorFunction(online, kind, h_max, gamma, lr, optimizer_mode=optimizer_mode)


def validate_error_function(errfn: ErrorFunction, kind: str, h_max: int, gamma: float,
                            dynamics_signature: Optional[str] = None) -> Dict[str, Any]:
    """
    Check a loaded error function against the run that will use it.

    The dynamics check applies only when the checkpoint recorded a signature.

    Returns:
        Dict with 'valid' boolean and 'errors' list
    """
    errors = []
    if errfn.kind.value != kind:
        errors.append(f"error function is {errfn.kind.value}, run asks for {kind}")
    if errfn.h_max != h_max:
        errors.append(f"error function has h_max={errfn.h_max}, run uses h_max={h_max}")
    if abs(errfn.gamma - gamma) > 1e-12:
        errors.append(f"error function was learned with gamma={errfn.gamma!r}, run uses gamma={gamma!r}")
    recorded = errfn.metadata.get("dynamics")
    if dynamics_signature is not None and recorded is not None and recorded != dynamics_signature:
        errors.append(f"error function was learned on dynamics {recorded} "
                      f"({errfn.metadata.get('env', 'unknown env')}), run uses {dynamics_signature}")
    return {"valid": len(errors) == 0, "errors": errors}


def save_error_function(path: Union[str, Path], errfn: ErrorFunction, extra: Optional[Dict[str, str]] = None) -> Path:
    metadata = {"kind": errfn.kind.value, "h_max": str(errfn.h_max), "gamma": repr(errfn.gamma),
                "role": "model_error"}
    metadata.update(extra or {})
    return save_checkpoint(path, errfn.online, metadata)


def load_error_function(path: Union[str, Path], lr: float, frozen: bool = False,
                        optimizer_mode: str = "adam") -> ErrorFunction:
    """Rebuild a saved error function; the target starts as a copy of the online weights"""
    approximator, metadata = load_checkpoint(path)
    if metadata.get("role") != "model_error":
        raise ModelErrorFunctionError(f"Checkpoint {path} does not hold a model error function")
    errfn = ErrorFunction(approximator, metadata["kind"], int(metadata["h_max"]), float(metadata["gamma"]),
                          lr, optimizer_mode=optimizer_mode, frozen=frozen)
    errfn.metadata = dict(metadata)
    logger.info(f"Loaded {errfn.kind.value} error function (h_max={errfn.h_max}, frozen={frozen}) from {path}")
    return errfn
