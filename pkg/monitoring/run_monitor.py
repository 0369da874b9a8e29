#!/usr/bin/env python3
"""
Run Monitor for AdaMVE training runs

Tracks throughput, resident memory and CPU of a training run at every
evaluation and logs a periodic run report. Nothing here is written into
result files.
"""

import logging
import os
import statistics
import sys
import time
from collections import deque
from dataclasses import asdict, dataclass
from typing import Any, Deque, Dict, Optional

import psutil

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from agent import EvalRecord  # noqa: E402

logger = logging.getLogger(__name__)


@dataclass
class RunMetrics:
    """Resource snapshot taken at one evaluation"""
    timestamp: float
    env_steps: int
    steps_per_second: float
    memory_mb: float
    cpu_percent: float
    mean_return: float
    mean_horizon: Optional[float]


class RunMonitor:
    """Resource and progress monitor attached to one TrainingRun"""

    def __init__(self, label: str, report_every: int = 10, history: int = 100):
        self.label = label
        self.report_every = report_every
        self.metrics_history: Deque[RunMetrics] = deque(maxlen=history)
        self._process = psutil.Process(os.getpid())
        self._started = time.perf_counter()
        self._last_time = self._started
        self._last_steps = 0
        self._evaluations = 0
        self._process.cpu_percent(None)

    def record(self, record: EvalRecord) -> RunMetrics:
        """Snapshot resources after an evaluation; used as TrainingRun.run's on_eval callback"""
        now = time.perf_counter()
        elapsed = max(now - self._last_time, 1e-9)
        metrics = RunMetrics(
            timestamp=time.time(),
            env_steps=record.env_step,
            steps_per_second=(record.env_step - self._last_steps) / elapsed,
            memory_mb=self._process.memory_info().rss / (1024 * 1024),
            cpu_percent=self._process.cpu_percent(None),
            mean_return=record.mean_return,
            mean_horizon=record.mean_horizon,
        )
        self.metrics_history.append(metrics)
        self._last_time = now
        self._last_steps = record.env_step
        self._evaluations += 1
        if self._evaluations % self.report_every == 0:
            self.report()
        return metrics

    def report(self) -> None:
        if not self.metrics_history:
            return
        recent = list(self.metrics_history)[-self.report_every:]
        current = recent[-1]
        avg_speed = statistics.mean(m.steps_per_second for m in recent)
        avg_memory = statistics.mean(m.memory_mb for m in recent)

        logger.info(f"=== Run Report ({self.label}) ===")
        logger.info(f"Environment steps: {current.env_steps}")
        logger.info(f"Throughput: {avg_speed:.0f} steps/s (current: {current.steps_per_second:.0f})")
        logger.info(f"Memory Usage: {avg_memory:.1f}MB (current: {current.memory_mb:.1f}MB)")
        logger.info(f"CPU Usage: {current.cpu_percent:.1f}%")
        logger.info(f"Mean return: {current.mean_return:.3f}")
        if current.mean_horizon is not None:
            logger.info(f"Mean weighted horizon: {current.mean_horizon:.3f}")

    def get_summary(self) -> Dict[str, Any]:
        history = list(self.metrics_history)
        return {
            "label": self.label,
            "evaluations": self._evaluations,
            "wall_time_s": time.perf_counter() - self._started,
            "peak_memory_mb": max((m.memory_mb for m in history), default=0.0),
            "mean_steps_per_second": statistics.mean(m.steps_per_second for m in history) if history else 0.0,
            "last": asdict(history[-1]) if history else None,
        }
