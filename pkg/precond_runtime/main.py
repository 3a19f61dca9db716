#!/usr/bin/env python3
"""
Main entry point for the Shadow Preconditioner Runtime.

Command-line interface with four commands:

    train         --config c.json
    sweep         --axis staleness --values 1,2,3,5,10
    bench-spikes  --job-cost 5x
    report        --dir runs/

plus `rank-optimizers` for the ill-conditioned quadratic comparison.
Exit codes: 0 success, 2 configuration error, 3 invariant-audit failure,
1 any other failure.
"""

import argparse
import json
import logging
import logging.handlers
import sys
from pathlib import Path
from typing import List, Optional

from . import config
from .core.harness import (bench_spikes, classifier_preset, default_sweep_values, rank_optimizers,
                           run_training, sweep)
from .core.metrics import report
from .errors import ConfigInvalidError, InvariantAuditError, PrecondRuntimeError
from .models.run_config import RunConfig
from .utils.run_files import RunFileHandler


class PrecondRuntimeApplication:
    """
    Command-line application for the Shadow Preconditioner Runtime.

    Handles logging setup, configuration loading, command dispatch and the
    mapping of failures to exit codes.
    """

    def __init__(self, log_dir: Optional[Path] = None, debug: bool = False):
        """Initialize the application."""
        self.app_name = config.APP_NAME
        self.version = config.APP_VERSION
        self.log_dir = Path(log_dir) if log_dir else config.LOGS_DIR

        self.setup_logging(debug)
        self.logger = logging.getLogger(__name__)
        self.logger.info(f"Starting {self.app_name} v{self.version}")

    def setup_logging(self, debug: bool = False):
        """Setup application logging configuration."""
        handlers = [logging.StreamHandler(sys.stderr)]
        try:
            self.log_dir.mkdir(parents=True, exist_ok=True)
            handlers.append(logging.handlers.RotatingFileHandler(
                self.log_dir / config.LOG_FILE_NAME, maxBytes=config.LOG_FILE_MAX_SIZE,
                backupCount=config.LOG_BACKUP_COUNT, encoding='utf-8'))
        except OSError as e:
            print(f"Logging to console only, cannot open log directory {self.log_dir}: {e}",
                  file=sys.stderr)

        logging.basicConfig(
            level=logging.DEBUG if debug or config.DEBUG_MODE else getattr(logging, config.LOG_LEVEL),
            format=config.LOG_FORMAT,
            handlers=handlers,
            force=True,
        )

    def load_config(self, path: Optional[str]) -> RunConfig:
        """Load a run configuration, or the classifier preset when no path is given."""
        if path is None:
            self.logger.info("No config given, using the synthetic-classifier preset")
            return classifier_preset()
        return RunConfig.load(path)

    # Commands

    def cmd_train(self, args) -> int:
        cfg = self.load_config(args.config)
        changes = {}
        if args.steps is not None:
            changes['task'] = {'steps': args.steps}
        run = {}
        if args.seed is not None:
            run['seed'] = args.seed
        if args.audit:
            run['audit'] = True
        output_dir = args.output_dir or cfg.run.output_dir or str(config.RUNS_DIR / "train")
        run['output_dir'] = output_dir
        if args.trace:
            run['trace_path'] = args.trace
        changes['run'] = run
        cfg = cfg.replace(**changes)

        summary = run_training(cfg)
        print(f"final loss {summary.final_loss:.6g}  eval {summary.final_eval_loss:.6g}  "
              f"simulated {summary.total_sim_us / 1e6:.3f}s  outputs in {output_dir}")
        return config.EXIT_OK

    def cmd_sweep(self, args) -> int:
        cfg = self.load_config(args.config)
        values = _parse_values(args.axis, args.values)
        output_dir = Path(args.output_dir or config.RUNS_DIR / f"sweep_{args.axis}")
        rows = sweep(cfg, args.axis, values, output_dir)
        for row in rows:
            print(f"{args.axis}={row['value']}: total {row['total_sim_us']:.1f}us  "
                  f"wait {row['barrier_wait_us']:.1f}us  eval {row['final_eval_loss']:.5g}")
        return config.EXIT_OK

    def cmd_bench_spikes(self, args) -> int:
        cfg = self.load_config(args.config)
        results = bench_spikes(cfg, _parse_multiple(args.job_cost), args.staleness)
        for mode, result in results.items():
            spikes = result['spikes']
            print(f"{mode:>5}: median {spikes['median']:.1f}us  max {spikes['max']:.1f}us  "
                  f"ratio {spikes['spike_ratio']:.3f}  final loss {result['final_loss']:.5g}")
        if args.output_dir:
            handler = RunFileHandler(Path(args.output_dir))
            handler.require(handler.write_json(Path(args.output_dir) / "bench_spikes.json", results))
        return config.EXIT_OK

    def cmd_report(self, args) -> int:
        result = report(args.dir, args.output_dir)
        print(f"{len(result['rows'])} runs, totals: {json.dumps(result['totals'], sort_keys=True)}")
        return config.EXIT_OK

    def cmd_rank_optimizers(self, args) -> int:
        lr_grid = tuple(float(value) for value in args.lrs.split(',')) if args.lrs else config.LR_GRID
        ranking = rank_optimizers(args.condition, args.dim, args.seed, lr_grid)
        for method, result in sorted(ranking.items(), key=lambda item: item[1]['steps']):
            print(f"{method:>8}: {result['steps']} steps (lr {result['lr']})")
        return config.EXIT_OK

    def run(self, args) -> int:
        """Run one command and map failures to exit codes."""
        try:
            return args.handler(self, args)
        except ConfigInvalidError as e:
            self.logger.error(f"Configuration error: {e}")
            return config.EXIT_CONFIG_ERROR
        except InvariantAuditError as e:
            self.logger.error(f"Invariant audit failed: {e}")
            return config.EXIT_AUDIT_FAILURE
        except KeyboardInterrupt:
            self.logger.info("Interrupted by user")
            return config.EXIT_FAILURE
        except PrecondRuntimeError as e:
            self.logger.error(f"{type(e).__name__}: {e}")
            return config.EXIT_FAILURE
        except Exception as e:
            self.logger.exception(f"Unexpected error: {e}")
            return config.EXIT_FAILURE


def _parse_multiple(value) -> float:
    """Parse '5x' or '5' into 5.0."""
    text = str(value).strip().lower().rstrip('x')
    try:
        return float(text)
    except ValueError:
        raise ConfigInvalidError(f"job cost must look like '5x', got {value!r}")


def _parse_values(axis: str, text: Optional[str]) -> List:
    """Parse a comma-separated value list, or return the axis defaults."""
    if not text:
        return list(default_sweep_values(axis))
    values = []
    for part in text.split(','):
        part = part.strip()
        if axis == 'budget' and part.lower() == 'inf':
            values.append('inf')
            continue
        try:
            values.append(int(part))
        except ValueError:
            raise ConfigInvalidError(f"sweep value must be an integer, got {part!r}")
    return values


def build_parser() -> argparse.ArgumentParser:
    """Create the argument parser."""
    parser = argparse.ArgumentParser(prog='precond-runtime', description=config.APP_DESCRIPTION)
    parser.add_argument('--version', action='version', version=f'{config.APP_NAME} {config.APP_VERSION}')
    parser.add_argument('--debug', action='store_true', help='Enable debug logging')
    parser.add_argument('--log-dir', help='Directory for the log file')
    commands = parser.add_subparsers(dest='command', required=True)

    train = commands.add_parser('train', help='Run one training job')
    train.add_argument('--config', help='Run configuration JSON')
    train.add_argument('--output-dir', help='Run directory for loss, series, trace and summary')
    train.add_argument('--trace', help='Extra path for trace.jsonl')
    train.add_argument('--steps', type=int, help='Override task.steps')
    train.add_argument('--seed', type=int, help='Override run.seed')
    train.add_argument('--audit', action='store_true', help='Check invariants every step')
    train.set_defaults(handler=PrecondRuntimeApplication.cmd_train)

    sweep_cmd = commands.add_parser('sweep', help='Run one job per value of an axis')
    sweep_cmd.add_argument('--axis', choices=('staleness', 'nodes', 'budget'), default='staleness')
    sweep_cmd.add_argument('--values', help='Comma-separated values (default: protocol values)')
    sweep_cmd.add_argument('--config', help='Base run configuration JSON')
    sweep_cmd.add_argument('--output-dir', help='Directory for per-value runs and sweep.csv')
    sweep_cmd.set_defaults(handler=PrecondRuntimeApplication.cmd_sweep)

    bench = commands.add_parser('bench-spikes', help='Compare synchronous and asynchronous step times')
    bench.add_argument('--job-cost', default='5x', help="Refresh cost in step-times, e.g. '5x'")
    bench.add_argument('--staleness', type=int, default=config.DEFAULT_STALENESS_S,
                       help='S of the asynchronous run')
    bench.add_argument('--config', help='Base run configuration JSON')
    bench.add_argument('--output-dir', help='Directory for bench_spikes.json')
    bench.set_defaults(handler=PrecondRuntimeApplication.cmd_bench_spikes)

    report_cmd = commands.add_parser('report', help='Summarize run directories')
    report_cmd.add_argument('--dir', required=True, help='Directory holding runs')
    report_cmd.add_argument('--output-dir', help='Where to write the report (default: --dir)')
    report_cmd.set_defaults(handler=PrecondRuntimeApplication.cmd_report)

    ranking = commands.add_parser('rank-optimizers', help='Steps to target on the quadratic task')
    ranking.add_argument('--condition', type=float, default=config.QUADRATIC_CONDITION)
    ranking.add_argument('--dim', type=int, default=8)
    ranking.add_argument('--seed', type=int, default=config.DEFAULT_SEED)
    ranking.add_argument('--lrs', help='Comma-separated learning rates')
    ranking.set_defaults(handler=PrecondRuntimeApplication.cmd_rank_optimizers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    args = build_parser().parse_args(argv)
    app = PrecondRuntimeApplication(args.log_dir, args.debug)
    return app.run(args)


if __name__ == "__main__":
    sys.exit(main())
