"""Tests for the command-line entry point."""

import json

import pandas as pd
import pytest

from tests.conftest import CONFIGS_DIR, scenario_document
from vertinav.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main, parse_invocation
from vertinav.config import settings
from vertinav.errors import ConfigError


@pytest.fixture(autouse=True)
def no_env_config(monkeypatch):
    """Keep VERTINAV_CONFIG from leaking into the tests."""
    monkeypatch.setattr(settings, "config", None)


def write_config(path, document):
    path.write_text(json.dumps(document), encoding="utf-8")
    return str(path)


class TestParseInvocation:
    """Tests for argument parsing."""

    def test_simulate_flags(self):
        """Test simulate options reach the invocation."""
        inv = parse_invocation(["simulate", "--config", "c.json", "--seed", "4", "--runs", "3", "--fail-on-alert", "-vv"])
        assert inv.subcommand == "simulate"
        assert (inv.seed, inv.runs, inv.verbosity) == (4, 3, 2)
        assert inv.fail_on_alert

    def test_report_paths(self):
        """Test report takes several run directories."""
        assert parse_invocation(["report", "a", "b"]).paths == ["a", "b"]

    def test_unknown_subcommand(self):
        """Test unknown subcommands are usage errors."""
        with pytest.raises(ConfigError):
            parse_invocation(["fly"])

    @pytest.mark.parametrize("argv", [
        ["simulate", "--runs", "0"],
        ["simulate", "--seed", "-1"],
        ["simulate", "--seed", "abc"],
    ])
    def test_bad_values(self, argv):
        """Test invalid flag values are usage errors."""
        with pytest.raises(ConfigError):
            parse_invocation(argv)


class TestExitCodes:
    """Tests for error mapping."""

    def test_usage_error(self, capsys):
        """Test a bad command line exits 2."""
        assert main(["fly"]) == EXIT_USAGE
        assert "error:" in capsys.readouterr().err

    def test_missing_d_max(self, tmp_path, capsys):
        """Test a document without the D-value exits 2 with a diagnostic."""
        path = write_config(tmp_path / "c.json", {"schema_version": 1})
        assert main(["derive-requirements", "--config", path]) == EXIT_USAGE
        assert "d_max" in capsys.readouterr().err

    def test_missing_config(self, capsys):
        """Test running without a configuration exits 2."""
        assert main(["derive-requirements"]) == EXIT_USAGE
        assert "VERTINAV_CONFIG" in capsys.readouterr().err

    def test_infeasible_budget(self, tmp_path, capsys):
        """Test an FTE larger than the TSE budget exits 1."""
        path = write_config(tmp_path / "c.json", {
            "requirements": {"geometry": {"d_max": 15.24}, "risk": {"sigma_fte": 5.0}},
        })
        assert main(["derive-requirements", "--config", path]) == EXIT_FAILURE
        assert "infeasible budget" in capsys.readouterr().err

    def test_report_missing_directory(self, tmp_path, capsys):
        """Test reporting on a missing run directory exits 2."""
        assert main(["report", str(tmp_path / "nothing")]) == EXIT_USAGE
        assert "run directory not found" in capsys.readouterr().err


class TestDeriveRequirements:
    """Tests for the derive-requirements subcommand."""

    def test_table_and_csv(self, tmp_path, capsys):
        """Test the requirement table prints and is written as CSV."""
        code = main([
            "derive-requirements", "--config", str(CONFIGS_DIR / "reference_vertiport.json"), "--out", str(tmp_path),
        ])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "Precision Approach (SAIL V - Certified)" in out
        assert "FATO 1.5D: FATO 22.86 m" in out
        assert "HAL: 3.93-8.19" in out

        rows = pd.read_csv(tmp_path / "requirements.csv")
        assert rows.loc[0, "alert_limits"] == "HAL: 3.93-8.19; VAL: 2.98-7.09"
        sets = pd.read_csv(tmp_path / "requirement_sets.csv")
        assert len(sets) == 2


class TestFaultTree:
    """Tests for the fault-tree subcommand."""

    def test_shipped_trees(self, tmp_path, capsys):
        """Test shipped trees print with placeholder markers and export nodes."""
        assert main(["fault-tree", "--out", str(tmp_path)]) == EXIT_OK
        out = capsys.readouterr().out
        assert "Barometric geodetic altitude failure (sum)" in out
        assert "*" in out
        nodes = pd.read_csv(tmp_path / "fault_trees.csv")
        assert set(nodes["tree"]) >= {"Barometric geodetic altitude failure", "GNSS residual fault"}


@pytest.mark.integration
class TestSimulateReplayReport:
    """End-to-end runs through the command line."""

    @pytest.fixture(scope="class")
    def run_dir(self, tmp_path_factory):
        base = tmp_path_factory.mktemp("cli")
        config = write_config(base / "flight.json", scenario_document(seed=11))
        out = base / "run"
        assert main(["simulate", "--config", config, "--out", str(out), "--fail-on-alert"]) == EXIT_OK
        return out

    def test_simulate_outputs(self, run_dir):
        """Test a simulation writes logs, outputs and summaries."""
        for name in ("scenario.json", "run_summary.csv", "mc_report.csv", "fused.csv", "integrity.csv"):
            assert (run_dir / name).is_file()
        assert (run_dir / "logs" / "imu.csv").is_file()
        summary = pd.read_csv(run_dir / "run_summary.csv")
        assert summary.loc[0, "alert_epochs"] == 0

    def test_replay_matches_simulation(self, run_dir, capsys):
        """Test replaying the logs reproduces the fused trajectory."""
        assert main(["replay", str(run_dir / "logs")]) == EXIT_OK
        assert "Barometer calibration" in capsys.readouterr().out
        original = pd.read_csv(run_dir / "fused.csv", float_precision="round_trip")
        replayed = pd.read_csv(run_dir / "replay" / "fused.csv", float_precision="round_trip")
        pd.testing.assert_frame_equal(original, replayed)

    def test_report(self, run_dir, tmp_path, capsys):
        """Test the report compares a run against the requirement set."""
        assert main(["report", str(run_dir), "--out", str(tmp_path)]) == EXIT_OK
        table = pd.read_csv(tmp_path / "comparison.csv")
        assert table.loc[0, "source"] == run_dir.name
        assert table.loc[0, "hal"] == pytest.approx(3.929, abs=0.005)
        assert (tmp_path / "pe_pl_series.csv").is_file()
