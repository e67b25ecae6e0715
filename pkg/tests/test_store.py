"""Tests for store.py - atomic writes, settings and the run manifest."""

import json
import os
from pathlib import Path
from unittest.mock import patch

import pytest


class TestAtomicWrites:
    """Test atomic file helpers."""

    def test_write_text_creates_parents(self, temp_dir):
        from store import write_text_atomic
        path = Path(temp_dir) / "a" / "b" / "out.txt"
        write_text_atomic(path, "x,y\n1,2\n")
        assert path.read_text() == "x,y\n1,2\n"

    def test_no_temp_files_left(self, temp_dir):
        from store import write_bytes_atomic
        path = Path(temp_dir) / "blob.bin"
        write_bytes_atomic(path, b"\x00\x01")
        assert os.listdir(temp_dir) == ["blob.bin"]

    def test_failed_write_leaves_original(self, temp_dir):
        from store import _write_atomic, write_text_atomic
        path = Path(temp_dir) / "keep.txt"
        write_text_atomic(path, "original")

        def boom(f):
            f.write(b"partial")
            raise RuntimeError("disk full")

        with pytest.raises(RuntimeError):
            _write_atomic(path, boom)
        assert path.read_text() == "original"
        assert os.listdir(temp_dir) == ["keep.txt"]

    def test_json_is_sorted(self, temp_dir):
        from store import write_json_atomic
        path = Path(temp_dir) / "r.json"
        write_json_atomic(path, {"b": 1, "a": 2})
        text = path.read_text()
        assert text.index('"a"') < text.index('"b"')
        assert json.loads(text) == {"a": 2, "b": 1}

    def test_json_overwrite_leaves_no_temp_files(self, temp_dir):
        from store import write_json_atomic
        path = Path(temp_dir) / "nested" / "r.json"
        write_json_atomic(path, {"v": 1})
        write_json_atomic(path, {"v": 2})
        assert json.loads(path.read_text()) == {"v": 2}
        assert os.listdir(path.parent) == ["r.json"]

    def test_sha256_file_matches_text(self, temp_dir):
        from store import sha256_file, sha256_text, write_text_atomic
        path = Path(temp_dir) / "t.txt"
        write_text_atomic(path, "liouville")
        assert sha256_file(path) == sha256_text("liouville")


class TestSettings:
    """Test environment-backed settings."""

    def test_defaults(self):
        from store import get_settings
        with patch.dict(os.environ, {}, clear=True):
            s = get_settings()
        assert s.max_grid_mb == 2048.0
        assert s.chart_factor == 0.2

    def test_env_override_and_singleton(self):
        from store import get_settings, reset_singletons
        with patch.dict(os.environ, {"LIOUVILLE_LAB_MAX_GRID_MB": "64"}):
            reset_singletons()
            assert get_settings().max_grid_mb == 64.0
            assert get_settings() is get_settings()

    @pytest.mark.parametrize("raw", ["lots", "-1", "0"])
    def test_bad_env_value(self, raw):
        from lab_utils import ConfigError
        from store import get_settings, reset_singletons
        with patch.dict(os.environ, {"LIOUVILLE_LAB_CHART_FACTOR": raw}):
            reset_singletons()
            with pytest.raises(ConfigError):
                get_settings()


class TestRunManifest:
    """Test RunManifest."""

    def test_start_and_record(self, temp_dir):
        from store import MANIFEST_NAME, TOOL_VERSION, RunManifest
        m = RunManifest(Path(temp_dir))
        assert not m.exists
        m.start("abc", 7, ["one", "two"])
        m.record_job("one", status="done", verdict="pass")
        data = json.loads((Path(temp_dir) / MANIFEST_NAME).read_text())
        assert data["tool_version"] == TOOL_VERSION
        assert data["seed"] == 7
        assert data["jobs"]["one"] == {"status": "done", "verdict": "pass"}
        assert data["jobs"]["two"] == {"status": "pending"}

    def test_reload_from_disk(self, temp_dir):
        from store import RunManifest
        RunManifest(Path(temp_dir)).start("abc", 1, ["job"])
        again = RunManifest(Path(temp_dir))
        assert again.exists
        assert again.jobs == {"job": {"status": "pending"}}

    def test_files_are_relative_and_verified(self, temp_dir):
        from store import RunManifest, write_text_atomic
        run = Path(temp_dir)
        m = RunManifest(run)
        m.start("abc", 1, [])
        out = run / "job" / "report.json"
        write_text_atomic(out, "{}")
        m.add_file(out)
        assert "job/report.json" in m.files
        assert m.verify_files() == []

        out.write_text('{"tampered": true}')
        assert m.verify_files() == ["job/report.json"]
        out.unlink()
        assert m.verify_files() == ["job/report.json"]

    def test_note_and_finish(self, temp_dir):
        from store import RunManifest
        m = RunManifest(Path(temp_dir))
        m.start("abc", 1, [])
        m.note("arcsin_clamps", 3)
        m.mark_finished(0, started=0.0)
        data = m.as_dict()
        assert data["arcsin_clamps"] == 3
        assert data["exit_code"] == 0
        assert data["seconds"] > 0

    def test_corrupt_manifest_keeps_cache(self, temp_dir):
        from store import MANIFEST_NAME, RunManifest
        path = Path(temp_dir) / MANIFEST_NAME
        path.write_text("{not json")
        m = RunManifest(Path(temp_dir))
        assert m.as_dict() == {}
