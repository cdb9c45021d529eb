"""
Tests for the Command-Line Module.
"""
import csv
import json
from pathlib import Path

import pytest

from src.cli import EXIT_FAILED, EXIT_OK, EXIT_USAGE, build_parser, main
from src.problems import DesignMode, Problem
from src.verification import PropertyResult


# --- Helper Functions ---

def write_small_config(tmp_path: Path) -> Path:
    """Helper to write a config that runs in a few seconds."""
    path = tmp_path / "small.cfg"
    path.write_text(
        "SNR_GRID_DB=0,10\n"
        "REALIZATIONS=1\n"
        "PROBLEMS=p1\n"
        "DESIGN_MODES=robust,naive\n"
        "ASER_SYMBOLS=200\n"
        "MAX_OUTER_ITER=3\n"
        "SEED=5\n",
        encoding="utf-8",
    )
    return path


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv("MIMO_DUALITY_JOBS", raising=False)
    monkeypatch.delenv("MIMO_DUALITY_LOG_LEVEL", raising=False)


class TestBuildParser:
    """Tests for argument parsing."""

    def test_solve_arguments(self):
        args = build_parser().parse_args(["solve", "--problem", "P3", "--snr-db", "5", "--mode", "naive"])
        assert args.problem is Problem.P3
        assert args.mode is DesignMode.NAIVE
        assert args.algorithm == 2

    def test_command_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])

    def test_bad_problem_rejected(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["solve", "--problem", "p11", "--snr-db", "0"])


class TestRunCommand:
    """Tests for `run`."""

    def test_writes_outputs(self, tmp_path):
        out = tmp_path / "results" / "sweep.csv"
        code = main([
            "run", "--config", str(write_small_config(tmp_path)), "--out", str(out),
            "--plots", str(tmp_path / "plots"), "--workbook", str(tmp_path / "results" / "sweep.xlsx"),
        ])
        assert code == EXIT_OK
        with open(out, encoding="utf-8", newline="") as f:
            rows = list(csv.reader(f))
        assert len(rows) == 1 + 2 * 2
        assert (tmp_path / "plots" / "sum_amse_p1.gp").is_file()
        assert (tmp_path / "results" / "sweep.xlsx").is_file()
        assert list((tmp_path / "results" / "log").glob("run_log_*.txt"))

    def test_same_seed_same_bytes(self, tmp_path):
        config = str(write_small_config(tmp_path))
        main(["run", "--config", config, "--out", str(tmp_path / "a.csv")])
        main(["run", "--config", config, "--out", str(tmp_path / "b.csv")])
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_bad_config_exits_with_usage_code(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("FLAVOUR=vanilla\n", encoding="utf-8")
        assert main(["run", "--config", str(path), "--out", str(tmp_path / "x.csv")]) == EXIT_USAGE
        assert not (tmp_path / "x.csv").exists()


class TestSolveCommand:
    """Tests for `solve`."""

    def test_json_dump(self, tmp_path):
        out = tmp_path / "p1.json"
        code = main([
            "solve", "--problem", "p1", "--snr-db", "10", "--config", str(write_small_config(tmp_path)),
            "--json", str(out),
        ])
        assert code == EXIT_OK
        dump = json.loads(out.read_text(encoding="utf-8"))
        assert dump["problem"] == "p1"
        assert dump["design_mode"] == "robust"
        assert dump["power"]["total"] <= 10.0 * (1 + 1e-6)
        assert dump["p_sum"] == 10.0
        assert dump["skipped_duality_steps"] == 0
        assert len(dump["transceiver"]["B"]) == 2
        # N x S_k entries, each [re, im]
        assert len(dump["transceiver"]["B"][0]) == 4
        assert len(dump["transceiver"]["B"][0][0][0]) == 2
        assert dump["amse_trace"][-1] <= dump["amse_trace"][0]

    def test_stdout_dump(self, tmp_path, capsys):
        code = main([
            "solve", "--problem", "p3", "--snr-db", "5", "--config", str(write_small_config(tmp_path)),
            "--algorithm", "1",
        ])
        assert code == EXIT_OK
        assert json.loads(capsys.readouterr().out)["algorithm"] == 1

    def test_per_antenna_dump_records_calibrated_p_sum(self, tmp_path):
        out = tmp_path / "p2.json"
        code = main([
            "solve", "--problem", "p2", "--snr-db", "10", "--config", str(write_small_config(tmp_path)),
            "--json", str(out),
        ])
        assert code == EXIT_OK
        dump = json.loads(out.read_text(encoding="utf-8"))
        assert 0.0 < dump["p_sum"] <= 10.0 * (1 + 1e-6)


class TestVerifyCommand:
    """Tests for `verify`."""

    def test_passes(self, capsys):
        assert main(["verify", "--instances", "2"]) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 7
        assert all(line.startswith("PASS") for line in lines)

    def test_failure_sets_exit_code(self, monkeypatch, capsys):
        monkeypatch.setattr(
            "src.cli.run_verification",
            lambda instances, seed: [PropertyResult("broken", False, 1.0, 1e-9, instances)],
        )
        assert main(["verify", "--instances", "1"]) == EXIT_FAILED
        assert capsys.readouterr().out.startswith("FAIL broken")
