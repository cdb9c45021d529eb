"""
Experiment Runner Module

Monte-Carlo harness: one trial per (SNR, realisation, problem, design
mode), run serially or on a process pool, with per-trial random streams
so results do not depend on the worker count.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .channel_model import ChannelSet, channel_rng, realize_channel
from .config_loader import ExperimentSpec
from .errors import MimoDualityError
from .link_simulator import aser_qpsk, snr_to_noise
from .problems import DesignMode, Problem
from .solver import SolveResult, evaluate, evaluation_view, solve

logger = logging.getLogger(__name__)

NAN = float("nan")
# perfect-CSI designs spent on settling the SNR-axis power of P2-P4
CALIBRATION_ROUNDS = 5
CALIBRATION_TOL = 1e-3


@dataclass
class TrialRecord:
    """Outcome of one design-and-evaluate trial."""
    snr_db: float
    problem: str
    design_mode: str
    realization: int
    sum_amse: float
    aser: float
    total_power: float
    max_violation: float
    iterations: int
    converged: bool = False
    success: bool = True
    error_message: str = ""


@dataclass
class AggregateRow:
    """Mean over the successful realisations of one (SNR, problem, mode) cell."""
    snr_db: float
    problem: str
    design_mode: str
    sum_amse: float
    aser: float
    total_power: float
    max_violation: float
    iterations: float
    trials: int
    failures: int


@dataclass(frozen=True)
class TrialKey:
    snr_index: int
    realization: int
    problem_index: int
    mode_index: int


def trial_keys(spec: ExperimentSpec) -> list[TrialKey]:
    """All trials of `spec` in canonical order."""
    return [
        TrialKey(s, r, p, m)
        for s in range(len(spec.snr_grid_db))
        for p in range(len(spec.problems))
        for m in range(len(spec.design_modes))
        for r in range(spec.n_realizations)
    ]


def _sort_key(key: TrialKey) -> tuple[int, int, int, int]:
    return key.snr_index, key.problem_index, key.mode_index, key.realization


def calibrate_p_sum(
    spec: ExperimentSpec,
    problem: Problem,
    snr_db: float,
    channel: ChannelSet,
) -> tuple[float, Optional[SolveResult]]:
    """
    Total power on the SNR axis of one (problem, SNR, realisation).

    For P2-P4 without an explicit P_SUM this is the power the perfect-CSI
    design actually spends. The noise depends on that power, so the design
    is repeated until the power settles.

    Args:
        spec: Experiment description
        problem: Problem being designed
        snr_db: SNR point in dB
        channel: Realisation shared by every mode

    Returns:
        (p_sum, perfect-CSI SolveResult designed at that p_sum), or
        (p_sum, None) when the nominal value is used
    """
    p_sum = spec.p_sum_for(problem)
    if not spec.calibrates_p_sum(problem):
        return p_sum, None

    options = spec.solve_options(problem, DesignMode.PERFECT)
    result = None
    for _ in range(CALIBRATION_ROUNDS):
        config = spec.base.with_noise(snr_to_noise(spec.base, snr_db, p_sum, spec.noise_weights))
        try:
            result = solve(config, channel, options)
        except MimoDualityError as exc:
            nominal = spec.p_sum_for(problem)
            logger.warning("P_sum calibration failed (%s, %g dB), using %g: %s", problem.value, snr_db, nominal, exc)
            return nominal, None
        spent = result.power_usage.total
        if abs(spent - p_sum) <= CALIBRATION_TOL * p_sum:
            return p_sum, result
        p_sum = spent
    logger.debug("P_sum calibration for %s at %g dB stopped at %.6g", problem.value, snr_db, p_sum)
    return p_sum, None


def run_trial(spec: ExperimentSpec, key: TrialKey) -> TrialRecord:
    """Realise, design, evaluate and measure ASER for one trial."""
    snr_db = float(spec.snr_grid_db[key.snr_index])
    problem: Problem = spec.problems[key.problem_index]
    mode: DesignMode = spec.design_modes[key.mode_index]

    try:
        # the same realisation is shared by every SNR, problem and mode
        channel = realize_channel(spec.base, channel_rng(spec.seed, key.realization))
        p_sum, perfect = calibrate_p_sum(spec, problem, snr_db, channel)
        noise = snr_to_noise(spec.base, snr_db, p_sum, spec.noise_weights)
        config = spec.base.with_noise(noise)

        if mode is DesignMode.PERFECT and perfect is not None:
            result = perfect
        else:
            result = solve(config, channel, spec.solve_options(problem, mode))
        eval_config, eval_channel = evaluation_view(config, channel, mode)
        amse, report = evaluate(result.transceiver, eval_channel, eval_config)

        aser_rng = np.random.default_rng(
            np.random.SeedSequence(
                spec.seed,
                spawn_key=(key.realization, key.snr_index, key.problem_index, key.mode_index),
            )
        )
        aser = aser_qpsk(result.transceiver, eval_channel.H_true, noise, spec.aser_symbols, aser_rng)
    except (MimoDualityError, np.linalg.LinAlgError) as exc:
        logger.warning(
            "trial failed (snr=%g dB, %s, %s, realization %d): %s",
            snr_db, problem.value, mode.value, key.realization, exc,
        )
        return TrialRecord(
            snr_db=snr_db,
            problem=problem.value,
            design_mode=mode.value,
            realization=key.realization,
            sum_amse=NAN,
            aser=NAN,
            total_power=NAN,
            max_violation=NAN,
            iterations=0,
            success=False,
            error_message=str(exc),
        )

    return TrialRecord(
        snr_db=snr_db,
        problem=problem.value,
        design_mode=mode.value,
        realization=key.realization,
        sum_amse=amse,
        aser=aser,
        total_power=report.total,
        max_violation=max(0.0, report.violation(problem.family, spec.limits)),
        iterations=result.iterations,
        converged=result.converged,
    )


def run_experiment(
    spec: ExperimentSpec,
    jobs: int = 1,
    progress_callback: Optional[Callable[[str, int, int], None]] = None,
) -> list[TrialRecord]:
    """
    Run every trial of `spec`.

    Args:
        spec: Experiment description
        jobs: Worker processes; 1 runs in-process
        progress_callback: Callback function(trial_label, completed, total)

    Returns:
        TrialRecords in canonical order (SNR, problem, mode, realisation)
    """
    keys = trial_keys(spec)
    total = len(keys)
    results: dict[TrialKey, TrialRecord] = {}

    def report(key: TrialKey, record: TrialRecord) -> None:
        results[key] = record
        if progress_callback:
            label = f"{record.snr_db:g}dB|{record.problem}|{record.design_mode}|r{record.realization}"
            progress_callback(label, len(results), total)

    if jobs <= 1:
        for key in keys:
            report(key, run_trial(spec, key))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(run_trial, spec, key): key for key in keys}
            for future in as_completed(futures):
                report(futures[future], future.result())

    failed = sum(1 for r in results.values() if not r.success)
    if failed:
        logger.warning("%d of %d trials failed", failed, total)
    return [results[key] for key in sorted(keys, key=_sort_key)]


def _mean(values: list[float]) -> float:
    return float(np.mean(values)) if values else NAN


def aggregate(records: list[TrialRecord]) -> list[AggregateRow]:
    """Average successful trials per (SNR, problem, mode), keeping first-seen order."""
    groups: dict[tuple[float, str, str], list[TrialRecord]] = {}
    for record in records:
        groups.setdefault((record.snr_db, record.problem, record.design_mode), []).append(record)

    rows = []
    for (snr_db, problem, mode), group in groups.items():
        ok = [r for r in group if r.success]
        rows.append(AggregateRow(
            snr_db=snr_db,
            problem=problem,
            design_mode=mode,
            sum_amse=_mean([r.sum_amse for r in ok]),
            aser=_mean([r.aser for r in ok]),
            total_power=_mean([r.total_power for r in ok]),
            max_violation=max((r.max_violation for r in ok), default=NAN),
            iterations=_mean([float(r.iterations) for r in ok]),
            trials=len(group),
            failures=len(group) - len(ok),
        ))
    return rows


def is_missing(value: float) -> bool:
    return isinstance(value, float) and math.isnan(value)
