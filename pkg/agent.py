#!/usr/bin/env python3
"""
Value-expansion agents for the FourRoom gridworld.

One TrainingRun owns an environment, a replay buffer, a Q-function with its
target copy, an optional cumulative model error function and the dynamics
model. Every environment step performs, in order:

    1. an epsilon-greedy environment step stored in the buffer
    2. one fit step of an online-learned model (optionally on the
       low-error subset of the batch)
    3. one TD step of the model error function (adaptive expansion only)
    4. one Q regression step toward r + gamma * T(s')
    5. Polyak mixing of the target Q-function and target error function

T(s') is max_a Q_bar(s', a) for DQN, v[H] for fixed-horizon expansion, the
mean of v[0..H_max] for the uniform mixture and the error-weighted mixture
for adaptive expansion. Goal transitions do not bootstrap; timeouts do.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from config_utils import ConfigValidator, raise_if_invalid, split_list
from dyn_models import DynamicsModel, fit_step, select_for_sml
from errors import ApproximatorError, ConfigError
from funcapprox import Approximator, build_approximator, load_checkpoint, polyak_update, save_checkpoint
from grid_env import NUM_ACTIONS, FourRoomEnv, GridSpec, reset, step
from model_error import ErrorFunction, build_error_function, td_update, validate_error_function
from replay_buffer import ReplayBuffer, TransitionBatch, TransitionSample
from value_expansion import (
    goal_reward_fn,
    horizon_weights,
    mixed_target,
    mve_target,
    rollout_values,
    uniform_target,
    weighted_avg_horizon,
)

logger = logging.getLogger(__name__)

RNG_STREAMS = ("env", "explore", "buffer", "model", "init", "eval")


class AgentConfig(BaseModel):
    """Agent hyperparameters; defaults follow the gridworld settings"""
    algorithm: str = Field(default="adamve", description="dqn, mve (fixed horizon), mve_uniform or adamve")
    mve_horizon: int = Field(default=5, description="Rollout horizon H of fixed-horizon expansion")
    h_max: int = Field(default=5, description="Longest rollout horizon of the mixture algorithms")
    tau: float = Field(default=0.01, description="Softmax temperature of the horizon weights")
    reference_policy: str = Field(default="conservative", description="conservative, greedy or replay")
    model_source: str = Field(default="fixed", description="fixed (hand-crafted model) or online (learned model)")
    sml_enabled: bool = Field(default=False, description="Fit the learned model only on low-error samples")
    sml_horizon: int = Field(default=1, description="Horizon h of the error used to rank samples")
    sml_percent: float = Field(default=50.0, description="Percentage of each batch kept for model fitting")
    approximator: str = Field(default="tabular", description="tabular or mlp for Q and the model error")
    hidden_layers: Tuple[int, ...] = Field(default=(200, 200, 200), description="Hidden widths of every network")
    epsilon: float = Field(default=0.2, description="Exploration rate of the behaviour policy")
    gamma: float = Field(default=0.98, description="Discount factor")
    batch_size: int = Field(default=128, description="Minibatch size of every update")
    q_lr: float = Field(default=0.001, description="Learning rate of the Q-function")
    error_lr: Optional[float] = Field(default=None, description="Learning rate of the model error; defaults to "
                                                                  "q_lr for tabular and 0.0001 for networks")
    model_lr: float = Field(default=0.001, description="Learning rate of the online dynamics model")
    optimizer: str = Field(default="adam", description="adam, or sgd for exact hand-checked updates")
    buffer_capacity: int = Field(default=1_000_000, description="Replay buffer size")
    warmup: int = Field(default=2000, description="Transitions stored before learning starts")
    target_mix: float = Field(default=0.001, description="Polyak coefficient of the target networks, every step")
    freeze_error: bool = Field(default=False, description="Keep a loaded model error function fixed")

    @field_validator('algorithm')
    @classmethod
    def validate_algorithm(cls, v):
        raise_if_invalid(ConfigValidator.validate_choice(v, ConfigValidator.VALID_ALGORITHMS, "algorithm"))
        return v

    @field_validator('reference_policy')
    @classmethod
    def validate_reference_policy(cls, v):
        raise_if_invalid(ConfigValidator.validate_choice(v, ConfigValidator.VALID_REFERENCE_POLICIES,
                                                         "reference_policy"))
        return v

    @field_validator('model_source')
    @classmethod
    def validate_model_source(cls, v):
        raise_if_invalid(ConfigValidator.validate_choice(v, ConfigValidator.VALID_MODEL_SOURCES, "model_source"))
        return v

    @field_validator('approximator')
    @classmethod
    def validate_approximator(cls, v):
        raise_if_invalid(ConfigValidator.validate_choice(v, ConfigValidator.VALID_APPROXIMATORS, "approximator"))
        return v

    @field_validator('optimizer')
    @classmethod
    def validate_optimizer(cls, v):
        raise_if_invalid(ConfigValidator.validate_choice(v, ConfigValidator.VALID_OPTIMIZERS, "optimizer"))
        return v

    @field_validator('hidden_layers', mode='before')
    @classmethod
    def validate_hidden_layers(cls, v):
        v = tuple(int(w) for w in split_list(v))
        raise_if_invalid(ConfigValidator.validate_hidden_layers(v))
        return v

    @field_validator('q_lr', 'model_lr', 'tau', 'batch_size', 'buffer_capacity')
    @classmethod
    def validate_positive(cls, v, info):
        raise_if_invalid(ConfigValidator.validate_positive(v, info.field_name))
        return v

    @field_validator('error_lr')
    @classmethod
    def validate_error_lr(cls, v):
        if v is not None:
            raise_if_invalid(ConfigValidator.validate_positive(v, "error_lr"))
        return v

    @field_validator('epsilon', 'gamma', 'target_mix')
    @classmethod
    def validate_unit_interval(cls, v, info):
        raise_if_invalid(ConfigValidator.validate_unit_interval(v, info.field_name))
        return v

    @model_validator(mode='after')
    def validate_combination(self):
        errors = []
        expanding = self.algorithm in ("mve", "mve_uniform", "adamve")
        if expanding:
            errors += ConfigValidator.validate_horizon(self.h_max, "h_max", minimum=1)["errors"]
        if self.algorithm == "mve":
            errors += ConfigValidator.validate_horizon(self.mve_horizon, "mve_horizon", minimum=1)["errors"]
        if self.sml_enabled:
            if self.algorithm != "adamve":
                errors.append("sml_enabled needs the adamve algorithm (it ranks samples by the learned error)")
            if self.model_source != "online":
                errors.append("sml_enabled needs model_source = online")
            if not 1 <= self.sml_horizon <= self.h_max:
                errors.append(f"sml_horizon must lie in [1, h_max], got {self.sml_horizon}")
            if not 0 < self.sml_percent <= 100:
                errors.append(f"sml_percent must lie in (0, 100], got {self.sml_percent}")
        if self.warmup > self.buffer_capacity:
            errors.append(f"warmup ({self.warmup}) exceeds buffer_capacity ({self.buffer_capacity})")
        if self.warmup < 1:
            errors.append("warmup must be at least 1")
        if errors:
            raise ValueError('; '.join(errors))
        return self

    @property
    def rollout_horizon(self) -> int:
        return self.mve_horizon if self.algorithm == "mve" else self.h_max

    @property
    def resolved_error_lr(self) -> float:
        if self.error_lr is not None:
            return self.error_lr
        return self.q_lr if self.approximator == "tabular" else 0.0001


@dataclass
class RngStreams:
    """Independent per-purpose random generators spawned from one seed"""
    env: np.random.Generator
    explore: np.random.Generator
    buffer: np.random.Generator
    model: np.random.Generator
    init: np.random.Generator
    eval: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "RngStreams":
        children = np.random.SeedSequence(seed).spawn(len(RNG_STREAMS))
        return cls(*(np.random.default_rng(child) for child in children))


class QFunction:
    """Online Q approximator over the five actions plus its target copy"""

    def __init__(self, online: Approximator, lr: float, optimizer_mode: str = "adam",
                 target: Optional[Approximator] = None):
        if online.output_dim != NUM_ACTIONS:
            raise ApproximatorError(f"Q-functions need {NUM_ACTIONS} outputs, got {online.output_dim}")
        self.online = online
        self.target = target if target is not None else online.copy()
        self.optimizer = online.make_optimizer(lr, mode=optimizer_mode)

    def eval(self, states: np.ndarray) -> np.ndarray:
        return self.online.eval(np.asarray(states, dtype=np.float64))

    def update(self, batch: TransitionBatch, targets: np.ndarray) -> float:
        return self.online.grad_step(self.optimizer, batch.states.astype(np.float64), batch.actions, targets)

    def update_target(self, mix: float) -> None:
        polyak_update(self.target, self.online, mix)


def build_q_function(config: AgentConfig, rng: np.random.Generator, spec: GridSpec) -> QFunction:
    online = build_approximator(config.approximator, NUM_ACTIONS, rng=rng, hidden=config.hidden_layers,
                                width=spec.width, height=spec.height)
    return QFunction(online, config.q_lr, optimizer_mode=config.optimizer)


def save_q_function(path: Union[str, Path], q: QFunction, metadata: Optional[dict] = None) -> Path:
    meta = {"role": "q_function"}
    meta.update(metadata or {})
    return save_checkpoint(path, q.online, meta)


def load_q_function(path: Union[str, Path], lr: float = 0.001) -> QFunction:
    approximator, metadata = load_checkpoint(path)
    if metadata.get("role") != "q_function":
        raise ApproximatorError(f"Checkpoint {path} does not hold a Q-function")
    return QFunction(approximator, lr)


def act_eps_greedy(q, s, epsilon: float, rng: np.random.Generator) -> int:
    """
    Uniform random action with probability epsilon, else the greedy action.
    Greedy ties go to the lowest action index.
    """
    if rng.random() < epsilon:
        return int(rng.integers(NUM_ACTIONS))
    return int(np.argmax(q.eval(np.asarray([s], dtype=np.float64))[0]))


@dataclass
class EvaluationResult:
    mean_return: float
    returns: List[float]


def evaluate(q, spec: GridSpec, n_episodes: int, rng: np.random.Generator) -> EvaluationResult:
    """Greedy episodes from random starts; never touches a replay buffer"""
    if n_episodes < 1:
        raise ValueError(f"n_episodes must be at least 1, got {n_episodes}")
    returns = []
    for _ in range(n_episodes):
        s = reset(spec, rng)
        total = 0.0
        for t in range(spec.max_episode_steps):
            a = int(np.argmax(q.eval(np.asarray([s], dtype=np.float64))[0]))
            result = step(spec, s, a, t)
            total += result.reward
            s = result.next_state
            if result.done:
                break
        returns.append(total)
    return EvaluationResult(float(np.mean(returns)), returns)


@dataclass
class TargetInfo:
    """Q regression targets and the expansion quantities behind them"""
    targets: np.ndarray
    horizon_values: Optional[np.ndarray] = None  # (n_nonterminal, H + 1)
    weights: Optional[np.ndarray] = None
    horizons: Optional[np.ndarray] = None  # weighted average horizon per nonterminal sample


@dataclass
class StepDiagnostics:
    env_step: int
    reward: float
    done: bool
    q_loss: Optional[float] = None
    error_loss: Optional[float] = None
    model_loss: Optional[float] = None
    mean_horizon: Optional[float] = None
    episode_return: Optional[float] = None


@dataclass
class EvalRecord:
    """One evaluation row of a learning curve"""
    env_step: int
    mean_return: float
    returns: List[float]
    mean_errors: Optional[List[float]] = None
    mean_horizon: Optional[float] = None


class TrainingRun:
    """Sequential training of one seed"""

    def __init__(self, config: AgentConfig, spec: GridSpec, model: Optional[DynamicsModel],
                 streams: RngStreams, errfn: Optional[ErrorFunction] = None,
                 q: Optional[QFunction] = None):
        self.config = config
        self.spec = spec
        self.streams = streams
        if config.algorithm != "dqn" and model is None:
            raise ValueError(f"Algorithm {config.algorithm} needs a dynamics model")
        self.model = model
        self.reward_fn = goal_reward_fn(spec)
        self.env = FourRoomEnv(spec)
        self.buffer = ReplayBuffer(config.buffer_capacity, config.warmup)
        self.q = q if q is not None else build_q_function(config, streams.init, spec)

        self.errfn = errfn
        if errfn is not None:
            result = validate_error_function(errfn, config.reference_policy, config.h_max, config.gamma,
                                             spec.dynamics_signature)
            if not result["valid"]:
                raise ConfigError("Model error function does not match this run", result["errors"])
        if config.algorithm == "adamve" and self.errfn is None:
            self.errfn = build_error_function(
                config.reference_policy, config.approximator, config.h_max, config.gamma,
                config.resolved_error_lr, rng=streams.init, hidden=config.hidden_layers,
                optimizer_mode=config.optimizer, width=spec.width, height=spec.height,
            )
        if self.errfn is not None and config.freeze_error:
            self.errfn.frozen = True

        self.env_steps = 0
        self.episode_return = 0.0
        self._needs_reset = True
        self.records: List[EvalRecord] = []

    # Targets

    def compute_targets(self, batch: TransitionBatch) -> TargetInfo:
        """y = r for goal transitions, r + gamma * T(s') otherwise"""
        cfg = self.config
        targets = batch.rewards.astype(np.float64).copy()
        bootstrap = ~batch.terminals
        if not bootstrap.any():
            return TargetInfo(targets)
        next_states = batch.next_states[bootstrap].astype(np.float64)

        info = TargetInfo(targets)
        if cfg.algorithm == "dqn":
            tail = self.q.target.eval(next_states).max(axis=1)
        else:
            values = rollout_values(self.model, self.reward_fn, self.q.online, self.q.target, next_states,
                                    cfg.rollout_horizon, cfg.gamma, self.streams.model)
            info.horizon_values = values
            if cfg.algorithm == "mve":
                tail = mve_target(values, cfg.mve_horizon)
            elif cfg.algorithm == "mve_uniform":
                tail = uniform_target(values)
            else:
                errs = self.errfn.state_errors(next_states, qbar=self.q.target)
                weights = horizon_weights(errs, cfg.tau)
                tail = mixed_target(values, weights)
                info.weights = weights
                info.horizons = weighted_avg_horizon(weights)
        targets[bootstrap] += cfg.gamma * tail
        return info

    # Training

    def _environment_step(self) -> StepDiagnostics:
        if self._needs_reset:
            self.env.reset(self.streams.env)
            self.episode_return = 0.0
            self._needs_reset = False
        s = self.env.state
        a = act_eps_greedy(self.q, s, self.config.epsilon, self.streams.explore)
        result = self.env.step(a)
        self.buffer.push(TransitionSample(tuple(s), a, result.reward, tuple(result.next_state),
                                          result.terminal, result.timeout))
        self.env_steps += 1
        self.episode_return += result.reward
        diag = StepDiagnostics(self.env_steps, result.reward, result.done)
        if result.done:
            diag.episode_return = self.episode_return
            self._needs_reset = True
        return diag

    def train_step(self) -> StepDiagnostics:
        """One environment step followed by at most one update of each learner"""
        cfg = self.config
        diag = self._environment_step()
        if not self.buffer.ready():
            return diag

        if cfg.model_source == "online":
            batch = self.buffer.sample(cfg.batch_size, self.streams.buffer)
            if cfg.sml_enabled and self.errfn is not None:
                batch = select_for_sml(batch, self.errfn, cfg.sml_horizon, cfg.sml_percent, qbar=self.q.target)
            diag.model_loss = fit_step(self.model, batch, cfg.model_lr)

        if self.errfn is not None and cfg.algorithm == "adamve":
            batch = self.buffer.sample(cfg.batch_size, self.streams.buffer)
            diag.error_loss = td_update(self.errfn, batch, self.model, qbar=self.q.target)

        batch = self.buffer.sample(cfg.batch_size, self.streams.buffer)
        info = self.compute_targets(batch)
        diag.q_loss = self.q.update(batch, info.targets)
        if info.horizons is not None:
            diag.mean_horizon = float(info.horizons.mean())

        self.q.update_target(cfg.target_mix)
        if self.errfn is not None and not self.errfn.frozen:
            self.errfn.update_target(cfg.target_mix)
        return diag

    # Evaluation

    def error_summary(self) -> Tuple[Optional[List[float]], Optional[float]]:
        """Mean Ê(s, h) per h and mean weighted horizon over open cells"""
        if self.errfn is None:
            return None, None
        cells = self.spec.open_cells.astype(np.float64)
        errs = self.errfn.state_errors(cells, qbar=self.q.target)
        horizons = weighted_avg_horizon(horizon_weights(errs, self.config.tau))
        return [float(v) for v in errs.mean(axis=0)], float(horizons.mean())

    def evaluate_now(self, n_episodes: int) -> EvalRecord:
        result = evaluate(self.q, self.spec, n_episodes, self.streams.eval)
        mean_errors, mean_horizon = self.error_summary()
        record = EvalRecord(self.env_steps, result.mean_return, result.returns, mean_errors, mean_horizon)
        self.records.append(record)
        return record

    def run(self, total_steps: int, eval_interval: int = 2000, n_eval: int = 10,
            on_eval: Optional[Callable[[EvalRecord], None]] = None) -> List[EvalRecord]:
        """Train for total_steps environment steps, evaluating every eval_interval"""
        for _ in range(total_steps):
            self.train_step()
            if self.env_steps % eval_interval == 0:
                record = self.evaluate_now(n_eval)
                horizon = "" if record.mean_horizon is None else f", mean horizon {record.mean_horizon:.3f}"
                logger.info(f"[{self.config.algorithm}] step {record.env_step}: "
                            f"mean return {record.mean_return:.3f}{horizon}")
                if on_eval is not None:
                    on_eval(record)
        return self.records
