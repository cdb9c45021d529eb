"""
Plot Templates Module

Gnuplot script templates for the SNR sweeps, with variable interpolation.
"""

from dataclasses import dataclass, field
from typing import Optional


# One script per (metric, problem); the data file holds the SNR in column 1
# and one column per design mode.
DEFAULT_SCRIPT_TEMPLATE = """# {title}
set terminal {terminal}
set output '{output_file}'
set title '{title}'
set xlabel 'SNR (dB)'
set ylabel '{ylabel}'
set grid
set key {key_position}
{log_scale}
plot {series}
"""

SERIES_TEMPLATE = "'{data_file}' using 1:{column} with linespoints title '{label}'"

LOG_SCALE_LINE = "set logscale y"


@dataclass(frozen=True)
class MetricSpec:
    """How one aggregate metric is labelled and scaled."""
    name: str
    ylabel: str
    log_scale: bool = False


METRICS = {
    "sum_amse": MetricSpec("sum_amse", "Sum AMSE"),
    "aser": MetricSpec("aser", "ASER", log_scale=True),
    "total_power": MetricSpec("total_power", "Total transmit power"),
}


@dataclass
class PlotConfig:
    """Configuration for gnuplot script generation."""
    template: str = DEFAULT_SCRIPT_TEMPLATE
    terminal: str = "pngcairo size 800,600"
    image_suffix: str = ".png"
    key_position: str = "top right"
    mode_labels: dict[str, str] = field(default_factory=lambda: {
        "robust": "Robust design",
        "naive": "Naive design",
        "perfect": "Perfect CSI",
    })


class PlotTemplateManager:
    """Builds gnuplot scripts for metric-vs-SNR curves."""

    def __init__(self, config: Optional[PlotConfig] = None):
        self.config = config or PlotConfig()

    def label_for(self, mode: str) -> str:
        return self.config.mode_labels.get(mode, mode)

    def build_script(
        self,
        metric: str,
        problem: str,
        data_file: str,
        modes: list[str],
        template_override: Optional[str] = None,
    ) -> str:
        """
        Build a gnuplot script for one metric of one problem.

        Args:
            metric: Key of METRICS
            problem: Problem name, e.g. "P1"
            data_file: Data file name, relative to the script
            modes: Design modes in data-column order (column 2 onwards)
            template_override: Optional custom template to use

        Returns:
            Script text
        """
        if metric not in METRICS:
            raise KeyError(f"unknown metric '{metric}'")
        spec = METRICS[metric]
        series = ", \\\n     ".join(
            SERIES_TEMPLATE.format(data_file=data_file, column=i + 2, label=self.label_for(mode))
            for i, mode in enumerate(modes)
        )
        template = template_override or self.config.template
        return template.format(
            title=f"{problem}: {spec.ylabel} vs SNR",
            terminal=self.config.terminal,
            output_file=self.output_name(metric, problem),
            ylabel=spec.ylabel,
            key_position=self.config.key_position,
            log_scale=LOG_SCALE_LINE if spec.log_scale else "",
            series=series,
        )

    def output_name(self, metric: str, problem: str) -> str:
        return f"{metric}_{problem.lower()}{self.config.image_suffix}"
