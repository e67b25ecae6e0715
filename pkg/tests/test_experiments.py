"""Tests for experiments.py - runners, reports and per-job seeds."""

import json
from pathlib import Path

import pytest


def _experiment(text: str):
    from lab_config import parse_config
    return parse_config(text).experiments[0]


SUPERSUB = """
[[experiment]]
name = "signs"
kind = "supersub-audit"
samples = 32
mus = [0.5, 1.5]
amplitudes = [1.0]
"""

KAHLER = """
[[experiment]]
name = "disks"
kind = "kahler-product"
n = 2
samples = 200
"""

DISK = """
[[experiment]]
name = "disk"
kind = "disk-validate"
hs = [0.03125, 0.015625]
order_range = [1.5, 3.0]
solver = { h = 0.03125, mode = "constant_k" }
"""

COARSE_DISK = """
[[experiment]]
name = "coarse"
kind = "disk-validate"
hs = [0.0625, 0.03125]
order_range = [0.0, 10.0]
error_tol = 1.0
"""


class TestJobSeeds:
    """Test job_seed and JobResult."""

    def test_stable_and_name_dependent(self):
        from experiments import job_seed
        assert job_seed(7, "a") == job_seed(7, "a")
        assert job_seed(7, "a") != job_seed(7, "b")
        assert job_seed(7, "a") != job_seed(8, "a")
        assert 0 <= job_seed(7, "a") < 2 ** 32

    def test_failed_only_when_binding(self):
        from experiments import JobResult
        assert JobResult("a", "smooth-rate", True, "fail").failed
        assert not JobResult("a", "smooth-rate", False, "fail").failed
        assert not JobResult("a", "smooth-rate", True, "inconclusive").failed
        assert not JobResult("a", "smooth-rate", True, "pass").failed


class TestRunners:
    """End-to-end runs of the cheaper experiment kinds."""

    def test_supersub_audit(self, temp_dir):
        from experiments import run_experiment
        result = run_experiment(_experiment(SUPERSUB), Path(temp_dir), 7)
        assert result.verdict == "pass"
        names = sorted(p.name for p in result.files)
        assert names == ["report.json", "supersub.csv"]
        report = json.loads((Path(temp_dir) / "signs" / "report.json").read_text())
        assert report["verdict"] == "pass"
        assert len(report["checks"]) == 2
        csv_lines = (Path(temp_dir) / "signs" / "supersub.csv").read_text().splitlines()
        assert csv_lines[0].startswith("mu,A,count")
        assert len(csv_lines) == 3

    def test_reports_are_reproducible(self, temp_dir):
        from experiments import run_experiment
        exp = _experiment(SUPERSUB)
        a = run_experiment(exp, Path(temp_dir) / "a", 7)
        b = run_experiment(exp, Path(temp_dir) / "b", 7)
        for pa, pb in zip(a.files, b.files):
            assert pa.read_bytes() == pb.read_bytes()

    def test_kahler_disks(self, temp_dir):
        from experiments import run_experiment
        result = run_experiment(_experiment(KAHLER), Path(temp_dir), 1)
        checks = result.summary["checks"]
        assert checks["residual_ok"]
        assert checks["centre_ok"]
        assert checks["centre"] == pytest.approx(-0.270310, abs=1e-6)
        assert result.verdict == "pass"
        assert (Path(temp_dir) / "disks" / "bound_levels.csv").exists()

    def test_disk_validate(self, temp_dir):
        from experiments import run_experiment
        result = run_experiment(_experiment(DISK), Path(temp_dir), 0)
        rows = result.summary["rows"]
        assert len(rows) == 2
        assert rows[1]["max_error"] < rows[0]["max_error"]
        assert rows[1]["order"] >= 1.5
        blowup = result.summary["blowup_check"]
        assert blowup["h"] == 0.015625
        assert blowup["max_error"] < 5e-4
        cross = result.summary["cross_mode_check"]
        assert cross["passed"]
        assert cross["gap"] <= 2e-3
        assert cross["centre_error"] <= 5e-3
        assert cross["increments"][-1] < 1e-6
        assert result.verdict == "pass"
        names = sorted(p.name for p in result.files)
        assert names == ["convergence.csv", "convergence.svg", "report.json", "solution.bin"]

    def test_disk_validate_cross_mode_check_is_binding(self, temp_dir):
        from unittest.mock import patch
        from experiments import run_experiment
        with patch("experiments.CROSS_MODE_TOL", -1.0):
            result = run_experiment(_experiment(COARSE_DISK), Path(temp_dir), 0)
        assert not result.summary["cross_mode_check"]["passed"]
        assert result.verdict == "fail"
        assert result.failed

    def test_smooth_rate_on_the_disk_is_second_order(self, temp_dir):
        from experiments import run_experiment
        exp = _experiment("""
[[experiment]]
name = "smooth"
kind = "smooth-rate"
domain = { kind = "disk", r = 1.0 }
solver = { h = 0.015625 }
window = [0.2, 0.45]
expected_power = 2.0
slope_tol = 0.1
max_slope = 2.3
""")
        result = run_experiment(exp, Path(temp_dir), 0)
        assert 1.9 <= result.summary["slope"] <= 2.3
        assert result.verdict == "pass"

    def test_convergence_study_runs_constant_k_on_a_sector(self, temp_dir):
        from experiments import run_experiment
        exp = _experiment("""
[[experiment]]
name = "sector"
kind = "convergence-study"
domain = { kind = "sector", mu = 0.5 }
hs = [0.0625, 0.03125]
order_range = [0.0, 10.0]
solver = { h = 0.03125, mode = "constant_k" }
""")
        result = run_experiment(exp, Path(temp_dir), 0)
        cross = result.summary["cross_mode_check"]
        assert cross["h"] == 0.03125
        assert cross["gap"] <= 2e-3
        assert cross["increments"][-1] < 1e-6
        assert "centre_value" not in cross
        assert result.verdict == "pass"

    def test_smooth_rate_rejects_corners(self, temp_dir):
        from experiments import run_experiment
        from lab_utils import ConfigError
        exp = _experiment("""
[[experiment]]
name = "bad"
kind = "smooth-rate"
domain = { kind = "sector", mu = 0.5 }
solver = { h = 0.03125 }
""")
        with pytest.raises(ConfigError):
            run_experiment(exp, Path(temp_dir), 0)
