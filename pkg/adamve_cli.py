#!/usr/bin/env python3
"""
AdaMVE command line

Subcommands:
    train      run every seed of an experiment and aggregate the curves
    eval       evaluate a saved Q-function greedily
    heatmap    export the weighted-horizon heatmap of a saved model error
    transfer   train the model error on one goal, reuse it on another
    dp-check   exact value-error bound report and TD-vs-DP comparison

Exit status is 0 on success, 2 for configuration problems and 1 for runtime
failures; the reason is printed on one line.
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

import numpy as np

from agent import EvaluationResult
from config_utils import load_environment, parse_overrides
from errors import AdaMVEError, ConfigError
from harness import (
    dp_check,
    evaluate_checkpoint,
    heatmap_from_checkpoint,
    load_experiment_config,
    run_experiment,
    transfer_experiment,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def configure_logging(level_name: Optional[str]) -> None:
    level_name = (level_name or os.environ.get("ADAMVE_LOG_LEVEL") or "INFO").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        raise ConfigError(f"Unknown log level '{level_name}'")
    logging.basicConfig(level=level, format='%(asctime)s - %(levelname)s - %(message)s', force=True)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help="Flat key = value config file")
    common.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                        help="Override one config key (repeatable)")
    common.add_argument('--output-dir', help="Directory for result files (overrides output_dir)")
    common.add_argument('--log-level', help="DEBUG, INFO, WARNING or ERROR")

    parser = argparse.ArgumentParser(description="Adaptive model-based value expansion on FourRoom gridworlds")
    sub = parser.add_subparsers(dest='command', required=True)

    sub.add_parser('train', parents=[common], help="Train every configured seed")

    eval_parser = sub.add_parser('eval', parents=[common], help="Evaluate a saved Q-function")
    eval_parser.add_argument('--checkpoint', required=True, help="Q-function checkpoint")
    eval_parser.add_argument('--episodes', type=int, default=10, help="Greedy evaluation episodes")
    eval_parser.add_argument('--seed', type=int, default=0, help="Seed of the evaluation resets")

    heatmap_parser = sub.add_parser('heatmap', parents=[common], help="Export the weighted-horizon heatmap")
    heatmap_parser.add_argument('--error-checkpoint', required=True, help="Model error checkpoint")
    heatmap_parser.add_argument('--q-checkpoint', help="Q-function checkpoint (greedy reference policy)")

    transfer_parser = sub.add_parser('transfer', parents=[common], help="Goal-transfer experiment")
    transfer_parser.add_argument('--source-config', required=True, help="Config of the source environment")
    transfer_parser.add_argument('--target-config', required=True, help="Config of the target environment")
    transfer_parser.add_argument('--finetune', action='store_true', help="Keep training the transferred error")

    sub.add_parser('dp-check', parents=[common], help="Exact DP bound report")
    return parser


def _load(path: Optional[str], args: argparse.Namespace):
    overrides = parse_overrides(args.overrides)
    if args.output_dir:
        overrides["output_dir"] = args.output_dir
    return load_experiment_config(path, overrides)


def run_command(args: argparse.Namespace) -> None:
    if args.command == 'train':
        result = run_experiment(_load(args.config, args))
        print(f"Wrote {len(result.seed_results)} seed runs to {result.output_dir}"
              + (f" ({len(result.failures)} failed)" if result.failures else ""))

    elif args.command == 'eval':
        evaluation: EvaluationResult = evaluate_checkpoint(_load(args.config, args), args.checkpoint,
                                                           args.episodes, args.seed)
        print(f"mean_return={evaluation.mean_return:.6g} returns={';'.join(f'{r:g}' for r in evaluation.returns)}")

    elif args.command == 'heatmap':
        grid = heatmap_from_checkpoint(_load(args.config, args), args.error_checkpoint, args.q_checkpoint)
        print(f"Heatmap written; open-cell mean horizon {float(np.nanmean(grid)):.4g}")

    elif args.command == 'transfer':
        result = transfer_experiment(_load(args.source_config, args), _load(args.target_config, args),
                                     finetune=args.finetune)
        print(f"Transfer results in {result.output_dir}; summary {result.summary_path}")

    elif args.command == 'dp-check':
        result = dp_check(_load(args.config, args))
        report = result.report
        print(f"{report.n_states} states, K_hat={report.k_hat:.6g}, {len(report.violations)} bound violations")


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    load_environment()
    try:
        configure_logging(args.log_level)
        run_command(args)
        return EXIT_OK
    except ConfigError as e:
        print(f"error: {e.one_line()}", file=sys.stderr)
        return EXIT_CONFIG
    except AdaMVEError as e:
        logger.debug("Run failed", exc_info=True)
        print(f"error: {e.one_line()}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:
        logger.debug("Unexpected failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
