"""
Command-Line Module

`mimo-duality` front end with three commands:
- run: Monte-Carlo SNR sweep to CSV, plots, workbook and run log
- solve: one design instance dumped as JSON
- verify: randomised duality and fixed-point property checks
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from datetime import datetime
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from dotenv import load_dotenv
from tqdm import tqdm

from .channel_model import channel_rng, realize_channel
from .config_loader import ExperimentSpec, default_experiment_spec, parse_config_file
from .errors import ConfigError, MimoDualityError
from .experiment_runner import calibrate_p_sum, run_experiment
from .link_simulator import snr_to_noise
from .output_generator import create_log_file, create_results_workbook, emit_csv, emit_plots
from .problems import DesignMode, Problem
from .solver import evaluate, evaluation_view, solve
from .verification import run_verification

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
JOBS_ENV = "MIMO_DUALITY_JOBS"
LOG_LEVEL_ENV = "MIMO_DUALITY_LOG_LEVEL"

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def configure_logging(level: Optional[str]) -> None:
    name = (level or os.environ.get(LOG_LEVEL_ENV) or "INFO").upper()
    logging.basicConfig(level=getattr(logging, name, logging.INFO), format=LOG_FORMAT, force=True)


def _default_jobs() -> int:
    value = os.environ.get(JOBS_ENV, "")
    try:
        return max(1, int(value)) if value else 1
    except ValueError:
        logger.warning("ignoring non-integer %s=%r", JOBS_ENV, value)
        return 1


def load_spec(config: Optional[Path], seed: Optional[int] = None) -> ExperimentSpec:
    spec = parse_config_file(config) if config else default_experiment_spec()
    if seed is not None:
        spec = replace(spec, seed=seed)
    return spec


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mimo-duality",
        description="Robust sum-AMSE transceiver design for multiuser MIMO downlinks",
    )
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Monte-Carlo SNR sweep")
    run.add_argument("--config", type=Path, default=None, help="Experiment config file (KEY=VALUE)")
    run.add_argument("--out", type=Path, required=True, help="Aggregate CSV output path")
    run.add_argument("--plots", type=Path, default=None, help="Directory for gnuplot data and scripts")
    run.add_argument("--workbook", type=Path, default=None, help="Excel summary workbook path")
    run.add_argument("--seed", type=int, default=None, help="Override the config seed")
    run.add_argument("--jobs", type=int, default=None, help=f"Worker processes (default ${JOBS_ENV} or 1)")
    run.add_argument("--log-level", dest="run_log_level", default=None, help=argparse.SUPPRESS)

    single = commands.add_parser("solve", help="Design one instance and dump it as JSON")
    single.add_argument("--problem", type=Problem.parse, required=True, help="p1 ... p10 (p5 excluded)")
    single.add_argument("--snr-db", type=float, required=True)
    single.add_argument("--mode", type=DesignMode.parse, default=DesignMode.ROBUST, help="robust, naive or perfect")
    single.add_argument("--config", type=Path, default=None)
    single.add_argument("--seed", type=int, default=None)
    single.add_argument("--realization", type=int, default=0)
    single.add_argument("--algorithm", type=int, choices=(1, 2), default=2,
                        help="1: duality steps only, 2: with GP power allocation")
    single.add_argument("--json", type=Path, default=None, help="Output file (stdout when omitted)")

    verify = commands.add_parser("verify", help="Run the duality property checks")
    verify.add_argument("--instances", type=int, default=20)
    verify.add_argument("--seed", type=int, default=7)

    return parser


def cmd_run(args: argparse.Namespace) -> int:
    spec = load_spec(args.config, args.seed)
    jobs = args.jobs if args.jobs is not None else _default_jobs()
    start_time = datetime.now()
    logger.info(
        "running %d SNR points x %d realizations x %d problems x %d modes on %d worker(s)",
        len(spec.snr_grid_db), spec.n_realizations, len(spec.problems), len(spec.design_modes), jobs,
    )

    with tqdm(total=1, desc="trials", unit="trial") as bar:
        def progress(label: str, completed: int, total: int) -> None:
            bar.total = total
            bar.set_postfix_str(label)
            bar.update(completed - bar.n)

        records = run_experiment(spec, jobs=jobs, progress_callback=progress)

    written = [emit_csv(records, args.out)]
    if args.plots:
        written.extend(emit_plots(records, args.plots))
    if args.workbook:
        written.append(create_results_workbook(records, args.workbook))

    log_path = create_log_file(args.out.parent, spec.source, written, records, start_time, datetime.now())
    logger.info("results written to %s (log: %s)", args.out, log_path)
    return EXIT_OK


def _complex_list(matrix: np.ndarray) -> list:
    """Nested lists with every entry as [re, im]."""
    return np.stack([matrix.real, matrix.imag], axis=-1).tolist()


def cmd_solve(args: argparse.Namespace) -> int:
    spec = load_spec(args.config, args.seed)
    problem, mode = args.problem, args.mode

    channel = realize_channel(spec.base, channel_rng(spec.seed, args.realization))
    p_sum, _ = calibrate_p_sum(spec, problem, args.snr_db, channel)
    config = spec.base.with_noise(snr_to_noise(spec.base, args.snr_db, p_sum, spec.noise_weights))
    options = replace(spec.solve_options(problem, mode), use_gp_step=args.algorithm == 2)

    result = solve(config, channel, options)
    eval_config, eval_channel = evaluation_view(config, channel, mode)
    amse, report = evaluate(result.transceiver, eval_channel, eval_config)

    dump = {
        "problem": problem.value,
        "design_mode": mode.value,
        "algorithm": args.algorithm,
        "snr_db": args.snr_db,
        "p_sum": p_sum,
        "seed": spec.seed,
        "realization": args.realization,
        "sum_amse": amse,
        "iterations": result.iterations,
        "converged": result.converged,
        "skipped_duality_steps": result.skipped_duality_steps,
        "amse_trace": result.amse_trace,
        "objective_trace": result.objective_trace,
        "power": {
            "total": report.total,
            "antenna": report.antenna.tolist(),
            "user": report.user.tolist(),
            "symbol": report.symbol.tolist(),
            "max_violation": report.max_violation(spec.limits),
        },
        "transceiver": {
            "B": [_complex_list(b) for b in result.transceiver.B],
            "W": [_complex_list(w) for w in result.transceiver.W],
        },
    }
    text = json.dumps(dump, indent=2)
    if args.json:
        args.json.parent.mkdir(parents=True, exist_ok=True)
        args.json.write_text(text + "\n", encoding="utf-8")
        logger.info("wrote %s", args.json)
    else:
        print(text)
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    results = run_verification(instances=args.instances, seed=args.seed)
    for result in results:
        print(result.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


COMMANDS = {
    "run": cmd_run,
    "solve": cmd_solve,
    "verify": cmd_verify,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns the process exit code."""
    load_dotenv()
    args = build_parser().parse_args(argv)
    configure_logging(getattr(args, "run_log_level", None) or args.log_level)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except MimoDualityError as exc:
        logger.error("%s", exc)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
