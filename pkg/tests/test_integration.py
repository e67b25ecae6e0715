"""Integration tests - full runs through the CLI, manifest and report."""

import json
from pathlib import Path

import pytest

from conftest import DISK_RATE_CONFIG, SUPERSUB_CONFIG


@pytest.mark.asyncio
class TestFullRun:
    """Config file -> jobs -> artifacts -> report."""

    async def test_smooth_rate_artifacts(self, config_file, temp_dir, capsys):
        from lab_core import main
        path = config_file(DISK_RATE_CONFIG.format(h=1 / 64))
        out = Path(temp_dir) / "run"
        code = await main(["run", str(path), "--out", str(out)])
        manifest = json.loads((out / "manifest.json").read_text())
        job = manifest["jobs"]["disk-rate"]
        assert job["status"] == "done"
        assert job["verdict"] in ("pass", "fail", "inconclusive")
        assert code == (1 if job["verdict"] == "fail" else 0)
        for name in ("profile.csv", "profile.svg", "solution.bin", "report.json"):
            assert f"disk-rate/{name}" in manifest["files"]
        report = json.loads((out / "disk-rate" / "report.json").read_text())
        assert report["expected_power"] == 2.0
        assert report["window"][0] == pytest.approx(12 / 64)
        assert report["samples"] >= 4

    async def test_tampered_file_is_reported(self, config_file, temp_dir, capsys):
        from lab_core import EXIT_OK, main
        path = config_file(SUPERSUB_CONFIG)
        out = Path(temp_dir) / "run"
        assert await main(["run", str(path), "--out", str(out)]) == EXIT_OK
        (out / "barriers" / "supersub.csv").write_text("edited\n")
        capsys.readouterr()
        assert await main(["report", str(out)]) == EXIT_OK
        assert "warning: barriers/supersub.csv" in capsys.readouterr().out

    async def test_parallel_jobs_match_serial(self, config_file, temp_dir, capsys):
        from lab_core import main
        text = SUPERSUB_CONFIG + SUPERSUB_CONFIG.split("jobs = 1\n")[1].replace('"barriers"', '"barriers-2"')
        path = config_file(text)
        serial = Path(temp_dir) / "serial"
        parallel = Path(temp_dir) / "parallel"
        assert await main(["run", str(path), "--out", str(serial), "--jobs", "1"]) == 0
        assert await main(["run", str(path), "--out", str(parallel), "--jobs", "2"]) == 0
        for name in ("barriers", "barriers-2"):
            a = (serial / name / "report.json").read_bytes()
            b = (parallel / name / "report.json").read_bytes()
            assert a == b
        # seeds differ per job name
        ra = json.loads((serial / "barriers" / "report.json").read_text())
        rb = json.loads((serial / "barriers-2" / "report.json").read_text())
        assert ra["checks"] != rb["checks"]
