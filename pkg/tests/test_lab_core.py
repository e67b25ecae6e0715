"""Tests for lab_core.py - argument handling, exit codes and report tables."""

import json
from pathlib import Path

import pytest

from conftest import SUPERSUB_CONFIG


@pytest.mark.asyncio
class TestMain:
    """Test main() dispatch and exit codes."""

    async def test_schema(self, capsys):
        from lab_core import EXIT_OK, main
        assert await main(["schema"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "[[experiment]]" in out
        assert "supersub-audit" in out

    async def test_no_command_is_usage_error(self, capsys):
        from lab_core import EXIT_CONFIG, main
        assert await main([]) == EXIT_CONFIG

    async def test_help_exits_ok(self, capsys):
        from lab_core import EXIT_OK, main
        assert await main(["--help"]) == EXIT_OK

    async def test_bad_config_writes_nothing(self, config_file, temp_dir, capsys):
        from lab_core import EXIT_CONFIG, main
        path = config_file("[[experiment]]\nname = 'x'\nkind = 'nope'\n")
        out = Path(temp_dir) / "run"
        assert await main(["run", str(path), "--out", str(out)]) == EXIT_CONFIG
        assert not out.exists()
        assert "Error:" in capsys.readouterr().err

    async def test_missing_config(self, temp_dir, capsys):
        from lab_core import EXIT_CONFIG, main
        assert await main(["run", str(Path(temp_dir) / "absent.toml")]) == EXIT_CONFIG

    async def test_bad_jobs_override(self, config_file, temp_dir, capsys):
        from lab_core import EXIT_CONFIG, main
        path = config_file(SUPERSUB_CONFIG)
        out = Path(temp_dir) / "run"
        assert await main(["run", str(path), "--jobs", "0", "--out", str(out)]) == EXIT_CONFIG
        assert not out.exists()

    async def test_report_without_manifest(self, temp_dir, capsys):
        from lab_core import EXIT_CONFIG, main
        assert await main(["report", temp_dir]) == EXIT_CONFIG

    async def test_run_and_report(self, config_file, temp_dir, capsys):
        from lab_core import EXIT_OK, main
        path = config_file(SUPERSUB_CONFIG)
        out = Path(temp_dir) / "run"
        assert await main(["run", str(path), "--out", str(out)]) == EXIT_OK
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["exit_code"] == EXIT_OK
        assert manifest["seed"] == 7
        assert manifest["jobs"]["barriers"]["verdict"] == "pass"
        assert manifest["arcsin_clamps"] == 0
        assert (out / "config.toml").read_text() == SUPERSUB_CONFIG
        assert "barriers/report.json" in manifest["files"]
        capsys.readouterr()

        assert await main(["report", str(out)]) == EXIT_OK
        text = capsys.readouterr().out
        assert "barriers" in text
        assert "supersub-audit" in text
        assert "warning" not in text


class TestReportTable:
    """Test report_rows and format_table."""

    def test_rows_from_manifest(self, temp_dir):
        from lab_core import format_table, report_rows
        from store import RunManifest
        m = RunManifest(Path(temp_dir))
        m.start("abc", 1, ["a", "b"])
        m.record_job("a", kind="corner-rate", binding=False, status="done", verdict="inconclusive",
                     slope=0.91234, C=3.0, seconds=1.5)
        rows = report_rows(m)
        assert rows[0] == ["a", "corner-rate", "inconclusive", "advisory", "0.9123", "3", "1.5"]
        assert rows[1][:3] == ["b", "-", "pending"]
        lines = format_table(rows).splitlines()
        assert lines[0].split() == ["job", "kind", "verdict", "binding", "slope", "C", "seconds"]
        assert set(lines[1].replace(" ", "")) == {"-"}
        assert len(lines) == 4
