#!/usr/bin/env python3
"""
Experiment Harness

Seeded multi-run orchestration around TrainingRun: learning-curve files per
seed and their aggregate, horizon heatmaps, the goal-transfer experiment and
the exact-DP consistency check. Seeds run concurrently in an executor; each
seed owns its environment, learners and random streams, so (config, seed)
fixes every result byte.
"""

import asyncio
import csv
import logging
import traceback
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from agent import (
    AgentConfig,
    EvalRecord,
    RngStreams,
    TrainingRun,
    evaluate,
    load_q_function,
    save_q_function,
)
from config_utils import (
    ConfigValidator,
    build_model,
    format_config,
    partition_values,
    raise_if_invalid,
    resolve_values,
    split_list,
)
from dp_oracle import (
    always_action_policy,
    exact_h_values,
    exact_model_error,
    format_float,
    uniform_policy,
    value_bound_check,
    write_bound_report_csv,
    write_value_table_csv,
)
from dyn_models import make_model
from errors import AdaMVEError, ConfigError
from grid_env import Action, FourRoomEnv, GridSpec, make_spec
from model_error import ErrorFunction, build_error_function, load_error_function, save_error_function, td_update
from monitoring.run_monitor import RunMonitor
from replay_buffer import ReplayBuffer, TransitionSample
from value_expansion import horizon_weights, weighted_avg_horizon

logger = logging.getLogger(__name__)

LEARNING_CURVE_FILE = "learning_curve.csv"
AGGREGATE_FILE = "aggregate_learning_curve.csv"
SUMMARY_FILE = "experiment_summary.csv"
HEATMAP_FILE = "horizon_heatmap.csv"
HEATMAP_IMAGE = "horizon_heatmap.pgm"
Q_CHECKPOINT = "q_function.ckpt"
ERROR_CHECKPOINT = "model_error.ckpt"
RESOLVED_CONFIG = "config.resolved"
DP_POLICIES = ("uniform",) + tuple(f"always_{a.name.lower()}" for a in Action)


class ExperimentConfig(BaseModel):
    """Experiment settings; agent hyperparameters live in `agent`"""
    env: str = Field(default="fourroom", description="fourroom or fourroom2")
    layout_file: Optional[str] = Field(default=None, description="Custom 19x19 layout replacing the named env")
    model: str = Field(default="oracle", description="oracle, threeroom, nowall or learned")
    seeds: List[int] = Field(default=[0, 1, 2, 3, 4], description="One run per seed")
    total_steps: int = Field(default=200_000, description="Environment steps per run")
    eval_interval: int = Field(default=2000, description="Environment steps between evaluations")
    eval_episodes: int = Field(default=10, description="Greedy episodes per evaluation")
    output_dir: str = Field(default="results", description="Directory receiving every result file")
    error_checkpoint: Optional[str] = Field(default=None, description="Pretrained model error to start from")
    workers: int = Field(default=1, description="Seeds run concurrently (processes when > 1)")
    heatmap: bool = Field(default=True, description="Export the horizon heatmap after adaptive runs")
    dp_horizon: int = Field(default=5, description="Horizon of the exact DP check")
    dp_policy: str = Field(default="uniform", description="uniform or always_<action> for the DP check")
    dp_td_updates: int = Field(default=200_000, description="TD updates of the TD-vs-DP comparison (0 skips it)")
    dp_buffer_steps: int = Field(default=20_000, description="Uniform-random transitions behind the TD comparison")
    agent: AgentConfig = Field(default_factory=AgentConfig, description="Agent hyperparameters")

    @field_validator('env')
    @classmethod
    def validate_env(cls, v):
        raise_if_invalid(ConfigValidator.validate_choice(v, ConfigValidator.VALID_ENVIRONMENTS, "env"))
        return v

    @field_validator('model')
    @classmethod
    def validate_model(cls, v):
        raise_if_invalid(ConfigValidator.validate_choice(v, ConfigValidator.VALID_MODELS, "model"))
        return v

    @field_validator('seeds', mode='before')
    @classmethod
    def validate_seeds(cls, v):
        v = [int(s) for s in split_list(v)]
        raise_if_invalid(ConfigValidator.validate_seeds(v))
        return v

    @field_validator('layout_file', 'error_checkpoint')
    @classmethod
    def validate_files(cls, v, info):
        result = ConfigValidator.validate_file_path(v, info.field_name)
        raise_if_invalid(result)
        return result["normalized_path"]

    @field_validator('total_steps', 'eval_interval', 'eval_episodes', 'workers', 'dp_buffer_steps')
    @classmethod
    def validate_positive(cls, v, info):
        raise_if_invalid(ConfigValidator.validate_positive(v, info.field_name))
        return v

    @field_validator('dp_horizon')
    @classmethod
    def validate_dp_horizon(cls, v):
        raise_if_invalid(ConfigValidator.validate_horizon(v, "dp_horizon"))
        return v

    @field_validator('dp_policy')
    @classmethod
    def validate_dp_policy(cls, v):
        raise_if_invalid(ConfigValidator.validate_choice(v, DP_POLICIES, "dp_policy"))
        return v

    @model_validator(mode='after')
    def validate_combination(self):
        errors = []
        learned = self.model == "learned"
        if learned and self.agent.model_source != "online":
            errors.append("model = learned needs model_source = online")
        if not learned and self.agent.model_source == "online":
            errors.append(f"model_source = online needs model = learned, got {self.model}")
        if self.dp_td_updates < 0:
            errors.append("dp_td_updates must be nonnegative")
        if errors:
            raise ValueError('; '.join(errors))
        return self

    def flat_values(self) -> Dict[str, Any]:
        values = self.model_dump(exclude={"agent"})
        values.update(self.agent.model_dump())
        return values


def experiment_keys() -> List[str]:
    return [k for k in ExperimentConfig.model_fields if k != "agent"] + list(AgentConfig.model_fields)


def experiment_config_from_values(values: Mapping[str, Any]) -> ExperimentConfig:
    """Build an ExperimentConfig from one flat mapping of both key sets"""
    experiment_values, agent_values = partition_values(values, ExperimentConfig, AgentConfig)
    experiment_values.pop("agent", None)
    agent = build_model(AgentConfig, agent_values)
    return build_model(ExperimentConfig, {**experiment_values, "agent": agent})


def load_experiment_config(path: Optional[Union[str, Path]] = None,
                           overrides: Optional[Mapping[str, str]] = None,
                           environ: Optional[Mapping[str, str]] = None) -> ExperimentConfig:
    """defaults < config file < ADAMVE_* environment < overrides"""
    values = resolve_values(experiment_keys(), path, overrides, environ)
    return experiment_config_from_values(values)


# Result records

@dataclass
class SeedResult:
    seed: int
    records: List[EvalRecord]
    directory: Path
    final_return: float


@dataclass
class ExperimentResult:
    output_dir: Path
    seed_results: List[SeedResult]
    failures: Dict[int, str] = field(default_factory=dict)
    aggregate_path: Optional[Path] = None


def steps_to_reach(records: Sequence[EvalRecord], level: float) -> Optional[int]:
    """First evaluation step whose mean return reaches level"""
    for record in records:
        if record.mean_return >= level:
            return record.env_step
    return None


def final_return(records: Sequence[EvalRecord], tail: int = 5) -> float:
    """Mean return over the last `tail` evaluations"""
    if not records:
        return float("nan")
    return float(np.mean([r.mean_return for r in records[-tail:]]))


def learning_curve_header(h_max: int) -> List[str]:
    return ["env_step", "mean_return", "returns"] + [f"err_h{h}" for h in range(h_max + 1)] + ["mean_horizon"]


def write_learning_curve(path: Union[str, Path], records: Sequence[EvalRecord], h_max: int) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(learning_curve_header(h_max))
        for record in records:
            errors = record.mean_errors or [None] * (h_max + 1)
            writer.writerow(
                [record.env_step, format_float(record.mean_return), ";".join(format_float(r) for r in record.returns)]
                + ["" if e is None else format_float(e) for e in errors]
                + ["" if record.mean_horizon is None else format_float(record.mean_horizon)]
            )
    return path


def read_learning_curve(path: Union[str, Path]) -> List[EvalRecord]:
    records = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            err_keys = sorted((k for k in row if k.startswith("err_h")), key=lambda k: int(k[5:]))
            errors = [float(row[k]) for k in err_keys] if err_keys and row[err_keys[0]] != "" else None
            records.append(EvalRecord(
                env_step=int(row["env_step"]),
                mean_return=float(row["mean_return"]),
                returns=[float(r) for r in row["returns"].split(";") if r],
                mean_errors=errors,
                mean_horizon=float(row["mean_horizon"]) if row["mean_horizon"] else None,
            ))
    return records


def _mean_and_stderr(values: np.ndarray) -> Tuple[float, float]:
    if len(values) > 1:
        return float(values.mean()), float(values.std(ddof=1) / np.sqrt(len(values)))
    return float(values.mean()), 0.0


def write_aggregate(path: Union[str, Path], runs: Sequence[Sequence[EvalRecord]]) -> Path:
    """Per-evaluation mean and standard error across seeds"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_rows = min(len(r) for r in runs)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["env_step", "n_seeds", "mean_return", "stderr_return", "mean_horizon", "stderr_horizon"])
        for i in range(n_rows):
            returns = np.array([run[i].mean_return for run in runs])
            mean_return, se_return = _mean_and_stderr(returns)
            horizons = [run[i].mean_horizon for run in runs if run[i].mean_horizon is not None]
            if horizons:
                mean_h, se_h = _mean_and_stderr(np.array(horizons))
                horizon_cells = [format_float(mean_h), format_float(se_h)]
            else:
                horizon_cells = ["", ""]
            writer.writerow([runs[0][i].env_step, len(runs), format_float(mean_return), format_float(se_return)]
                            + horizon_cells)
    return path


# Heatmaps

def horizon_grid(errfn: ErrorFunction, spec: GridSpec, tau: float, qbar=None) -> np.ndarray:
    """Weighted average horizon per cell as an array indexed [x, y]; NaN on walls"""
    cells = spec.open_cells
    errs = errfn.state_errors(cells.astype(np.float64), qbar=qbar)
    horizons = weighted_avg_horizon(horizon_weights(errs, tau))
    if horizons.max() > errfn.h_max + 1e-12:
        raise AdaMVEError(f"Weighted horizon {horizons.max()!r} exceeds h_max={errfn.h_max}")
    grid = np.full((spec.width, spec.height), np.nan)
    grid[cells[:, 0], cells[:, 1]] = horizons
    return grid


def export_horizon_heatmap(errfn: Optional[ErrorFunction], spec: GridSpec, tau: float,
                           path: Union[str, Path], qbar=None, image: bool = True) -> np.ndarray:
    """
    Write x,y,value rows (value empty on walls) and optionally a P2 graymap
    with walls black and horizons 0..h_max scaled to 1..255.
    """
    if errfn is None:
        raise ConfigError("Horizon heatmaps need a trained model error function")
    grid = horizon_grid(errfn, spec, tau, qbar)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["x", "y", "value"])
        for y in range(spec.height):
            for x in range(spec.width):
                value = grid[x, y]
                writer.writerow([x, y, "" if np.isnan(value) else format_float(value)])

    if image:
        lines = ["P2", f"{spec.width} {spec.height}", "255"]
        for y in range(spec.height - 1, -1, -1):
            row = []
            for x in range(spec.width):
                value = grid[x, y]
                row.append("0" if np.isnan(value) else str(1 + int(round(value / errfn.h_max * 254))))
            lines.append(" ".join(row))
        path.with_suffix(".pgm").write_text("\n".join(lines) + "\n")

    logger.info(f"Horizon heatmap written to {path} (mean {np.nanmean(grid):.3f})")
    return grid


# Single runs

def run_single_seed(config: ExperimentConfig, seed: int, output_dir: Optional[Union[str, Path]] = None,
                    error_checkpoint: Optional[Union[str, Path]] = None) -> SeedResult:
    """Train one seed and write its learning curve, checkpoints and heatmap"""
    agent_config = config.agent
    directory = Path(output_dir or config.output_dir) / f"seed_{seed}"
    directory.mkdir(parents=True, exist_ok=True)
    streams = RngStreams.from_seed(seed)
    spec = make_spec(config.env, config.layout_file)
    model = make_model(config.model, spec, rng=streams.init, hidden=agent_config.hidden_layers,
                       lr=agent_config.model_lr)

    errfn = None
    checkpoint = error_checkpoint or config.error_checkpoint
    if checkpoint is not None and agent_config.algorithm == "adamve":
        errfn = load_error_function(checkpoint, agent_config.resolved_error_lr,
                                    frozen=agent_config.freeze_error, optimizer_mode=agent_config.optimizer)

    label = f"{agent_config.algorithm}/{config.model}/seed {seed}"
    logger.info(f"Starting run {label} for {config.total_steps} steps")
    run = TrainingRun(agent_config, spec, model, streams, errfn=errfn)
    monitor = RunMonitor(label)
    records = run.run(config.total_steps, config.eval_interval, config.eval_episodes, on_eval=monitor.record)

    write_learning_curve(directory / LEARNING_CURVE_FILE, records, agent_config.h_max)
    save_q_function(directory / Q_CHECKPOINT, run.q, {"seed": str(seed), "env": spec.name})
    if run.errfn is not None:
        save_error_function(directory / ERROR_CHECKPOINT, run.errfn,
                            {"seed": str(seed), "env": spec.name, "dynamics": spec.dynamics_signature})
        if config.heatmap:
            export_horizon_heatmap(run.errfn, spec, agent_config.tau, directory / HEATMAP_FILE, qbar=run.q.target)

    result = SeedResult(seed, records, directory, final_return(records))
    logger.info(f"Finished run {label}: final return {result.final_return:.3f}")
    return result


def _seed_job(config_values: Dict[str, Any], seed: int, output_dir: str,
              error_checkpoint: Optional[str] = None) -> SeedResult:
    """Executor entry point; rebuilds the config so it crosses process boundaries"""
    config = ExperimentConfig(**config_values)
    return run_single_seed(config, seed, output_dir, error_checkpoint)


def _make_executor(workers: int) -> Executor:
    if workers > 1:
        return ProcessPoolExecutor(max_workers=workers)
    return ThreadPoolExecutor(max_workers=1)


async def _run_jobs(jobs: Sequence[Tuple[Callable, tuple]], workers: int) -> List[Any]:
    """Run callables in an executor; exceptions are returned in place of results"""
    loop = asyncio.get_running_loop()
    executor = _make_executor(workers)
    try:
        futures = [loop.run_in_executor(executor, fn, *args) for fn, args in jobs]
        return await asyncio.gather(*futures, return_exceptions=True)
    finally:
        executor.shutdown(wait=True)


def _collect(seeds: Sequence[int], outcomes: Sequence[Any], label: str) -> Tuple[List[SeedResult], Dict[int, str]]:
    completed, failures = [], {}
    for seed, outcome in zip(seeds, outcomes):
        if isinstance(outcome, BaseException):
            reason = outcome.one_line() if hasattr(outcome, "one_line") else f"{type(outcome).__name__}: {outcome}"
            failures[seed] = reason
            trace = "".join(traceback.format_exception(type(outcome), outcome, outcome.__traceback__))
            logger.error(f"[{label}] seed {seed} failed: {reason}\n{trace}")
        else:
            completed.append(outcome)
    return completed, failures


def _write_summary(path: Path, seeds: Sequence[int], completed: Sequence[SeedResult], failures: Dict[int, str]) -> None:
    by_seed = {r.seed: r for r in completed}
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["seed", "status", "final_return", "message"])
        for seed in seeds:
            if seed in by_seed:
                writer.writerow([seed, "ok", format_float(by_seed[seed].final_return), ""])
            else:
                writer.writerow([seed, "failed", "", failures.get(seed, "")])


async def run_experiment_async(config: ExperimentConfig, output_dir: Optional[Union[str, Path]] = None,
                               error_checkpoints: Optional[Mapping[int, str]] = None) -> ExperimentResult:
    """
    One run per seed, then the aggregate over the seeds that completed.

    Raises:
        ConfigError: If no seed completes
    """
    out = Path(output_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / RESOLVED_CONFIG).write_text(format_config(config.flat_values()))

    values = config.model_dump()
    checkpoints = error_checkpoints or {}
    jobs = [(_seed_job, (values, seed, str(out), checkpoints.get(seed))) for seed in config.seeds]
    outcomes = await _run_jobs(jobs, config.workers)
    completed, failures = _collect(config.seeds, outcomes, config.agent.algorithm)
    _write_summary(out / SUMMARY_FILE, config.seeds, completed, failures)
    if not completed:
        raise ConfigError(f"Every seed of the experiment in {out} failed", list(failures.values()))

    completed.sort(key=lambda r: config.seeds.index(r.seed))
    aggregate = write_aggregate(out / AGGREGATE_FILE, [r.records for r in completed])
    logger.info(f"Experiment written to {out}: {len(completed)} seeds completed, {len(failures)} failed")
    return ExperimentResult(out, completed, failures, aggregate)


def run_experiment(config: ExperimentConfig, output_dir: Optional[Union[str, Path]] = None) -> ExperimentResult:
    return asyncio.run(run_experiment_async(config, output_dir))


# Transfer

@dataclass
class TransferResult:
    output_dir: Path
    variants: Dict[str, ExperimentResult]
    summary_path: Path


async def transfer_experiment_async(source: ExperimentConfig, target: ExperimentConfig,
                                    finetune: bool = False,
                                    output_dir: Optional[Union[str, Path]] = None) -> TransferResult:
    """
    Train the model error on the source env, then compare on the target env:
    t_adamve (transferred error, frozen unless finetune), adamve from scratch
    and dqn.
    """
    source_spec = make_spec(source.env, source.layout_file)
    target_spec = make_spec(target.env, target.layout_file)
    if not source_spec.same_dynamics(target_spec):
        raise ConfigError(f"Transfer needs environments with identical dynamics, got {source.env} and {target.env}")
    if source.agent.algorithm != "adamve":
        raise ConfigError("The transfer source must train the adamve algorithm")
    if source.model != target.model:
        raise ConfigError(f"Source model {source.model} differs from target model {target.model}")
    mismatched = [f"{key}: source {getattr(source.agent, key)!r}, target {getattr(target.agent, key)!r}"
                  for key in ("reference_policy", "h_max", "gamma")
                  if getattr(source.agent, key) != getattr(target.agent, key)]
    if mismatched:
        raise ConfigError("The transferred error function would not fit the target run", mismatched)

    out = Path(output_dir or target.output_dir)
    source_result = await run_experiment_async(source, out / "source")
    checkpoints = {r.seed: str(r.directory / ERROR_CHECKPOINT) for r in source_result.seed_results}
    seeds = [s for s in target.seeds if s in checkpoints]
    if not seeds:
        raise ConfigError("No source run produced a model error checkpoint")

    def variant(algorithm: str, **agent_updates) -> ExperimentConfig:
        agent = target.agent.model_copy(update={"algorithm": algorithm, **agent_updates})
        return target.model_copy(update={"agent": agent, "seeds": seeds, "error_checkpoint": None})

    kind = source.agent.reference_policy
    variants = {
        "t_adamve": variant("adamve", reference_policy=kind, freeze_error=not finetune),
        "adamve": variant("adamve", reference_policy=kind),
        "dqn": variant("dqn"),
    }
    results: Dict[str, ExperimentResult] = {}
    for name, config in variants.items():
        results[name] = await run_experiment_async(
            config, out / name, error_checkpoints=checkpoints if name == "t_adamve" else None)

    summary_path = out / "transfer_summary.csv"
    with open(summary_path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["variant", "seed", "final_return", "steps_to_90"])
        for name, result in results.items():
            for seed_result in result.seed_results:
                level = 0.9 * seed_result.final_return
                reached = steps_to_reach(seed_result.records, level)
                writer.writerow([name, seed_result.seed, format_float(seed_result.final_return),
                                 "" if reached is None else reached])
    logger.info(f"Transfer {source.env} -> {target.env} ({kind}, finetune={finetune}) written to {out}")
    return TransferResult(out, results, summary_path)


def transfer_experiment(source: ExperimentConfig, target: ExperimentConfig, finetune: bool = False,
                        output_dir: Optional[Union[str, Path]] = None) -> TransferResult:
    return asyncio.run(transfer_experiment_async(source, target, finetune, output_dir))


# Exact DP check

@dataclass
class DPCheckResult:
    output_dir: Path
    report: Any
    td_max_abs_diff: Optional[float] = None
    dp_max_value: Optional[float] = None


def dp_policy(spec: GridSpec, name: str) -> np.ndarray:
    if name == "uniform":
        return uniform_policy(spec)
    action = Action[name[len("always_"):].upper()]
    return always_action_policy(spec, action)


def fill_uniform_buffer(spec: GridSpec, n_steps: int, rng: np.random.Generator) -> ReplayBuffer:
    """Transitions of the uniform-random policy from random resets"""
    buffer = ReplayBuffer(capacity=n_steps, warmup=1)
    env = FourRoomEnv(spec)
    done = True
    for _ in range(n_steps):
        if done:
            env.reset(rng)
        s = env.state
        a = int(rng.integers(len(Action)))
        result = env.step(a)
        buffer.push(TransitionSample(tuple(s), a, result.reward, tuple(result.next_state),
                                     result.terminal, result.timeout))
        done = result.done
    return buffer


def train_replay_error(model, spec: GridSpec, config: AgentConfig, h_max: int, n_updates: int,
                       buffer_steps: int, streams: RngStreams) -> ErrorFunction:
    """Tabular replay-form TD learning of the model error on a uniform-random buffer"""
    buffer = fill_uniform_buffer(spec, buffer_steps, streams.env)
    errfn = build_error_function("replay", "tabular", h_max, config.gamma, config.resolved_error_lr,
                                 optimizer_mode=config.optimizer, width=spec.width, height=spec.height)
    for i in range(n_updates):
        batch = buffer.sample(config.batch_size, streams.buffer)
        td_update(errfn, batch, model)
        errfn.update_target(config.target_mix)
        if (i + 1) % 50_000 == 0:
            logger.info(f"TD-vs-DP: {i + 1}/{n_updates} updates")
    return errfn


def dp_check(config: ExperimentConfig, output_dir: Optional[Union[str, Path]] = None) -> DPCheckResult:
    """
    Exact bound report plus, when dp_td_updates > 0, the comparison of
    TD-learned replay-form errors with exact DP under the uniform policy.
    """
    if config.model == "learned":
        raise ConfigError("dp-check needs an enumerable model; the learned model is not")
    out = Path(output_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = make_spec(config.env, config.layout_file)
    model = make_model(config.model, spec)
    gamma = config.agent.gamma
    horizon = config.dp_horizon
    policy = dp_policy(spec, config.dp_policy)
    vbar = np.zeros(spec.n_cells)

    report = value_bound_check(model, policy, vbar, horizon, gamma, config.dp_policy)
    write_bound_report_csv(out / "bound_report.csv", report)
    write_value_table_csv(out / "value_table.csv", exact_h_values(model, policy, vbar, horizon, gamma, config.dp_policy))
    write_value_table_csv(out / "model_error.csv", exact_model_error(model, policy, horizon, gamma, config.dp_policy))
    result = DPCheckResult(out, report)

    if config.dp_td_updates > 0:
        streams = RngStreams.from_seed(config.seeds[0])
        errfn = train_replay_error(model, spec, config.agent, horizon, config.dp_td_updates,
                                   config.dp_buffer_steps, streams)
        exact = exact_model_error(model, uniform_policy(spec), horizon, gamma, "uniform")
        cells = spec.open_cells
        learned = errfn.state_errors(cells.astype(np.float64))
        with open(out / "td_vs_dp.csv", "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["x", "y", "h", "td", "dp", "abs_diff"])
            for i, (x, y) in enumerate(cells):
                for h in range(horizon + 1):
                    td, dp = learned[i, h], exact.at(x, y, h)
                    writer.writerow([int(x), int(y), h, format_float(td), format_float(dp), format_float(abs(td - dp))])
        exact_open = np.stack([exact.open_values(h) for h in range(horizon + 1)], axis=1)
        result.td_max_abs_diff = float(np.abs(learned - exact_open).max())
        result.dp_max_value = float(exact_open.max())
        logger.info(f"TD-vs-DP ({config.model}): max abs diff {result.td_max_abs_diff:.4g}, "
                    f"max exact error {result.dp_max_value:.4g}")
    return result


# Checkpoint-driven helpers used by the CLI

def evaluate_checkpoint(config: ExperimentConfig, q_checkpoint: Union[str, Path], n_episodes: int, seed: int):
    spec = make_spec(config.env, config.layout_file)
    q = load_q_function(q_checkpoint, config.agent.q_lr)
    return evaluate(q, spec, n_episodes, RngStreams.from_seed(seed).eval)


def heatmap_from_checkpoint(config: ExperimentConfig, error_checkpoint: Union[str, Path],
                            q_checkpoint: Optional[Union[str, Path]] = None,
                            output_dir: Optional[Union[str, Path]] = None) -> np.ndarray:
    spec = make_spec(config.env, config.layout_file)
    errfn = load_error_function(error_checkpoint, config.agent.resolved_error_lr, frozen=True)
    qbar = load_q_function(q_checkpoint).online if q_checkpoint is not None else None
    out = Path(output_dir or config.output_dir)
    return export_horizon_heatmap(errfn, spec, config.agent.tau, out / HEATMAP_FILE, qbar=qbar)
