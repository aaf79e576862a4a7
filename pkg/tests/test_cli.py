import json
import subprocess
import sys

import pytest

from freqwes.cli import DEFAULTS, SECTIONS, build_parser, main


def run_cli(*argv):
    return main([str(a) for a in argv])


class TestRun:
    def test_writes_trace(self, tmp_path, capsys):
        out = tmp_path / "r"
        assert run_cli("run", "--strategy", "wes", "--omega", 1.0, "--seed", 7, "--cet-budget", 1e4, "--out", out) == 0
        assert (out / "trace.csv").exists()
        meta = json.loads((out / "trace.json").read_text())
        assert meta["omega_true"] == 1.0 and meta["seed"] == 7
        assert meta["settings"]["strategy"] == "wes"
        assert "estimate=" in capsys.readouterr().out

    def test_noisy_sh(self, tmp_path):
        out = tmp_path / "r"
        assert run_cli("run", "--strategy", "sh", "--coherence-time", 500, "--cet-budget", 500, "--out", out) == 0
        assert json.loads((out / "trace.json").read_text())["coherence_time"] == 500.0

    def test_missing_strategy(self, tmp_path):
        assert run_cli("run", "--out", tmp_path / "r") == 2

    def test_bad_flag_value(self):
        with pytest.raises(SystemExit) as exc:
            run_cli("run", "--strategy", "wes", "--particles", "-3")
        assert exc.value.code == 2

    def test_out_conflict(self, tmp_path):
        out = tmp_path / "r"
        args = ("run", "--strategy", "pgh", "--cet-budget", 100, "--out", out)
        assert run_cli(*args) == 0
        assert run_cli(*args) == 3
        assert run_cli(*args, "--force") == 0

    def test_bit_identical_repeat(self, tmp_path):
        for name in ("a", "b"):
            run_cli("run", "--strategy", "awes", "--seed", 3, "--cet-budget", 300, "--out", tmp_path / name)
        assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()


class TestBench:
    def test_smoke(self, tmp_path, capsys):
        out = tmp_path / "b"
        code = run_cli("bench", "--runs", 2, "--bins", 5, "--cet-budget", 200, "--particles", 300,
                       "--workers", 1, "--out", out)
        assert code == 0
        printed = capsys.readouterr().out
        for kind in ("wes", "awes", "sh", "pgh", "rts"):
            assert kind in printed
            assert (out / "curves" / f"{kind}.csv").exists()
        for name in ("fits.json", "costs.json", "report.json"):
            assert (out / name).exists()

    def test_repeat_identical_and_conflict(self, tmp_path):
        args = ["bench", "--strategies", "wes,rts", "--runs", 2, "--bins", 5, "--cet-budget", 200,
                "--particles", 300, "--seed", 1, "--workers", 1]
        assert run_cli(*args, "--out", tmp_path / "a") == 0
        assert run_cli(*args, "--out", tmp_path / "b") == 0
        for rel in ("fits.json", "curves/wes.csv", "curves/rts.csv", "traces/wes/1.csv"):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
        assert run_cli(*args, "--out", tmp_path / "a") == 3

    def test_config_file_and_override(self, tmp_path):
        cfg = tmp_path / "bench.toml"
        cfg.write_text(
            '[likelihood]\ncoherence_time = 500\n'
            '[smc]\nparticles = 300\n'
            '[benchmark]\nstrategies = ["wes", "rts"]\nruns = 2\nbins = 7\n'
            '[run]\ncet_budget = 200\n'
        )
        out = tmp_path / "b"
        assert run_cli("bench", "--config", cfg, "--bins", 5, "--out", out, "--workers", 1) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["settings"]["bins"] == 5
        assert report["settings"]["coherence_time"] == 500
        assert report["config"]["model"]["coherence_time"] == 500.0
        assert report["config"]["K"] == 300
        assert sorted(json.loads((out / "fits.json").read_text())) == ["rts", "wes"]

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "bad.toml"
        cfg.write_text("[smc]\nparticle_count = 3\n")
        assert run_cli("bench", "--config", cfg, "--out", tmp_path / "b") == 2

    def test_invalid_bins(self, tmp_path):
        assert run_cli("bench", "--bins", 2, "--out", tmp_path / "b") == 2


class TestCalibrate:
    def test_selects_grid_value(self, tmp_path, capsys):
        code = run_cli("calibrate", "--kind", "sh", "--grid", "0.25,0.5,1,2", "--calibration-runs", 2,
                       "--calibration-budget", 200, "--particles", 300, "--out", tmp_path)
        assert code == 0
        record = json.loads((tmp_path / "calibration.json").read_text())
        assert record["multiplier"] in (0.25, 0.5, 1.0, 2.0)
        assert "multiplier" in capsys.readouterr().out

    def test_noisy_pgh(self, tmp_path):
        code = run_cli("calibrate", "--kind", "pgh", "--coherence-time", 500, "--calibration-runs", 2,
                       "--calibration-budget", 200, "--particles", 300, "--out", tmp_path)
        assert code == 0
        assert json.loads((tmp_path / "calibration.json").read_text())["coherence_time"] == 500.0

    def test_empty_grid(self, tmp_path):
        assert run_cli("calibrate", "--kind", "sh", "--grid", "", "--out", tmp_path) == 2

    def test_missing_kind(self, tmp_path):
        assert run_cli("calibrate", "--out", tmp_path) == 2


class TestCost:
    def test_table(self, capsys):
        assert run_cli("cost", "--K", 1000, "--N", 100, "--M", 50) == 0
        out = capsys.readouterr().out
        assert "400000" in out and "7100000" in out

    def test_unit(self, capsys):
        assert run_cli("cost", "--K", 1, "--N", 1, "--M", 1) == 0
        assert "non_optimized 1" in capsys.readouterr().out

    @pytest.mark.parametrize("argv", [("--N", 0), ("--K", 5, "--N", 0), ("--K", -1, "--N", 2)])
    def test_usage_errors(self, argv):
        assert run_cli("cost", *argv) == 2


class TestParser:
    def test_every_flag_has_a_config_key(self):
        keys = {k for section in SECTIONS.values() for k in section}
        assert keys == set(DEFAULTS)
        parser = build_parser()
        sub = parser._subparsers._group_actions[0].choices
        dests = {a.dest for p in sub.values() for a in p._actions} - {"help", "config", "verbose", "func"}
        assert dests <= keys

    def test_no_subcommand(self):
        with pytest.raises(SystemExit) as exc:
            run_cli()
        assert exc.value.code == 2

    def test_console_entry_point(self):
        out = subprocess.run([sys.executable, "-m", "freqwes.cli", "cost", "--K", "2", "--N", "3", "--M", "1"],
                             capture_output=True, text=True)
        assert out.returncode == 0 and "sh" in out.stdout
