"""
Tests for the Plot Templates Module.
"""
import pytest

from src.plot_templates import METRICS, PlotConfig, PlotTemplateManager


class TestPlotTemplateManager:
    """Tests for PlotTemplateManager."""

    def test_default_labels(self):
        manager = PlotTemplateManager()
        assert manager.label_for("robust") == "Robust design"
        assert manager.label_for("custom") == "custom"

    def test_script_series_per_mode(self):
        script = PlotTemplateManager().build_script("sum_amse", "p2", "sum_amse_p2.dat", ["robust", "perfect"])
        assert "set output 'sum_amse_p2.png'" in script
        assert "set title 'p2: Sum AMSE vs SNR'" in script
        assert "using 1:2 with linespoints title 'Robust design'" in script
        assert "using 1:3 with linespoints title 'Perfect CSI'" in script
        assert "set logscale y" not in script

    def test_aser_is_log_scale(self):
        script = PlotTemplateManager().build_script("aser", "p1", "aser_p1.dat", ["robust"])
        assert "set logscale y" in script

    def test_unknown_metric(self):
        with pytest.raises(KeyError):
            PlotTemplateManager().build_script("latency", "p1", "x.dat", ["robust"])

    def test_custom_config(self):
        manager = PlotTemplateManager(PlotConfig(terminal="svg", image_suffix=".svg"))
        script = manager.build_script("total_power", "P4", "d.dat", ["naive"])
        assert "set terminal svg" in script
        assert manager.output_name("total_power", "P4") == "total_power_p4.svg"

    def test_template_override(self):
        script = PlotTemplateManager().build_script(
            "sum_amse", "p1", "d.dat", ["robust"], template_override="{title}|{series}",
        )
        assert script.startswith("p1: Sum AMSE vs SNR|'d.dat' using 1:2")

    def test_metrics_match_aggregate_fields(self):
        assert set(METRICS) == {"sum_amse", "aser", "total_power"}
