"""
Output Generator Module

Writes experiment results: the aggregate CSV, gnuplot data and scripts,
an optional Excel summary workbook and the plain-text run log.
"""

import csv
import logging
from datetime import datetime
from pathlib import Path
from typing import Optional

import openpyxl
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side
from openpyxl.utils import get_column_letter

from .experiment_runner import AggregateRow, TrialRecord, aggregate, is_missing
from .plot_templates import METRICS, PlotTemplateManager

logger = logging.getLogger(__name__)

CSV_HEADER = [
    "snr_db",
    "problem",
    "design_mode",
    "sum_amse",
    "aser",
    "total_power",
    "max_violation",
    "iterations",
]
# smallest ASER written to plot data; the ASER axis is logarithmic
ASER_PLOT_FLOOR = 1e-7


def format_float(value: float) -> str:
    """15 significant digits; NaN for cells with no successful trial."""
    if is_missing(value):
        return "nan"
    return f"{value:.15g}"


def _plot_value(metric: str, value: float) -> str:
    if metric == "aser" and not is_missing(value):
        value = max(value, ASER_PLOT_FLOOR)
    return format_float(value)


def _csv_row(row: AggregateRow) -> list[str]:
    return [
        format_float(row.snr_db),
        row.problem,
        row.design_mode,
        format_float(row.sum_amse),
        format_float(row.aser),
        format_float(row.total_power),
        format_float(row.max_violation),
        format_float(row.iterations),
    ]


def emit_csv(records: list[TrialRecord], path: Path) -> Path:
    """
    Write one aggregate row per (SNR, problem, design mode).

    Args:
        records: Trial records in canonical order
        path: Output CSV file

    Returns:
        Path to the written file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in aggregate(records):
            writer.writerow(_csv_row(row))
    return path


def emit_plots(
    records: list[TrialRecord],
    out_dir: Path,
    manager: Optional[PlotTemplateManager] = None,
) -> list[Path]:
    """
    Write one data file per problem and one gnuplot script per (metric, problem).

    Data files hold the SNR in column 1 and one column per design mode.
    ASER values below ASER_PLOT_FLOOR are raised to it so the log axis
    keeps every point; the CSV keeps the measured values.

    Returns:
        Paths of every file written
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manager = manager or PlotTemplateManager()
    rows = aggregate(records)
    written: list[Path] = []

    problems = list(dict.fromkeys(r.problem for r in rows))
    modes = list(dict.fromkeys(r.design_mode for r in rows))
    for problem in problems:
        cells = {(r.snr_db, r.design_mode): r for r in rows if r.problem == problem}
        snrs = sorted({snr for snr, _ in cells})
        for metric in METRICS:
            data_path = out_dir / f"{metric}_{problem.lower()}.dat"
            lines = ["# snr_db " + " ".join(modes)]
            for snr in snrs:
                values = [
                    _plot_value(metric, getattr(cells[(snr, mode)], metric)) if (snr, mode) in cells else "nan"
                    for mode in modes
                ]
                lines.append(" ".join([format_float(snr), *values]))
            data_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

            script_path = out_dir / f"{metric}_{problem.lower()}.gp"
            script_path.write_text(
                manager.build_script(metric, problem, data_path.name, modes),
                encoding="utf-8",
            )
            written.extend([data_path, script_path])

    logger.info("wrote %d plot files to %s", len(written), out_dir)
    return written


def create_results_workbook(
    records: list[TrialRecord],
    output_path: Path,
) -> Path:
    """
    Excel summary: an "Aggregates" sheet and a "Trials" sheet.

    Failed trials are listed with their error in red.
    """
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)

    wb = openpyxl.Workbook()
    if wb.active is not None:
        wb.remove(wb.active)

    header_fill = PatternFill(start_color="4472C4", end_color="4472C4", fill_type="solid")
    header_font_white = Font(bold=True, size=11, color="FFFFFF")
    thin_border = Border(
        left=Side(style='thin'),
        right=Side(style='thin'),
        top=Side(style='thin'),
        bottom=Side(style='thin')
    )

    def write_sheet(title: str, headers: list[str], widths: list[int], rows: list[list], error_col: Optional[int]):
        ws = wb.create_sheet(title=title)
        for col, header in enumerate(headers, 1):
            cell = ws.cell(row=1, column=col, value=header)
            cell.font = header_font_white
            cell.fill = header_fill
            cell.border = thin_border
            cell.alignment = Alignment(horizontal='center', vertical='center')
        for col, width in enumerate(widths, 1):
            ws.column_dimensions[get_column_letter(col)].width = width

        for row_num, values in enumerate(rows, 2):
            for col, value in enumerate(values, 1):
                if is_missing(value):
                    value = None
                cell = ws.cell(row=row_num, column=col, value=value)
                cell.border = thin_border
                if isinstance(value, float):
                    cell.number_format = '0.000000'
            if error_col is not None and values[error_col - 1]:
                ws.cell(row=row_num, column=error_col).font = Font(color="FF0000")
        ws.freeze_panes = "A2"

    aggregates = aggregate(records)
    write_sheet(
        "Aggregates",
        [*CSV_HEADER, "trials", "failures"],
        [10, 10, 14, 14, 14, 14, 14, 12, 10, 10],
        [
            [r.snr_db, r.problem, r.design_mode, r.sum_amse, r.aser, r.total_power,
             r.max_violation, r.iterations, r.trials, r.failures]
            for r in aggregates
        ],
        error_col=None,
    )
    write_sheet(
        "Trials",
        ["snr_db", "problem", "design_mode", "realization", "sum_amse", "aser",
         "total_power", "max_violation", "iterations", "converged", "error"],
        [10, 10, 14, 12, 14, 14, 14, 14, 12, 12, 60],
        [
            [r.snr_db, r.problem, r.design_mode, r.realization, r.sum_amse, r.aser,
             r.total_power, r.max_violation, r.iterations, r.converged, r.error_message]
            for r in records
        ],
        error_col=11,
    )

    wb.save(output_path)
    return output_path


def create_log_file(
    output_folder: Path,
    config_file: Optional[Path],
    output_files: list[Path],
    records: list[TrialRecord],
    start_time: datetime,
    end_time: datetime,
) -> Path:
    """
    Create a log file for the run.

    Args:
        output_folder: Output folder
        config_file: Experiment config file, None for the built-in defaults
        output_files: CSV, workbook and plot files written
        records: All trial records
        start_time: Run start time
        end_time: Run end time

    Returns:
        Path to the log file
    """
    log_folder = Path(output_folder) / "log"
    log_folder.mkdir(parents=True, exist_ok=True)

    timestamp = datetime.now().strftime("%Y-%m-%d_%H%M%S_%f")
    log_path = log_folder / f"run_log_{timestamp}.txt"
    counter = 1
    while log_path.exists():
        log_path = log_folder / f"run_log_{timestamp}_{counter}.txt"
        counter += 1

    failed = [r for r in records if not r.success]
    unconverged = sum(1 for r in records if r.success and not r.converged)
    snrs = list(dict.fromkeys(r.snr_db for r in records))

    with open(log_path, 'w', encoding="utf-8") as f:
        f.write("=" * 60 + "\n")
        f.write("MIMO Duality Bench - Run Log\n")
        f.write("=" * 60 + "\n\n")

        f.write(f"Run Timestamp: {start_time.strftime('%Y-%m-%d %H:%M:%S')}\n")
        f.write(f"Duration: {(end_time - start_time).total_seconds():.1f} seconds\n\n")

        f.write(f"Config File: {config_file.name if config_file else '(built-in defaults)'}\n")
        f.write(f"SNR Grid (dB): {', '.join(f'{s:g}' for s in snrs)}\n")
        f.write(f"Trials: {len(records)} ({len(failed)} failed, {unconverged} not converged)\n\n")

        f.write("Output Files:\n")
        for file_path in output_files:
            f.write(f"  - {Path(file_path).name}\n")
        f.write("\n")

        if failed:
            f.write("Errors:\n")
            for r in failed:
                f.write(f"  [{r.snr_db:g}dB|{r.problem}|{r.design_mode}|r{r.realization}] {r.error_message}\n")
        else:
            f.write("No errors encountered.\n")

        f.write("\n" + "=" * 60 + "\n")

    return log_path
