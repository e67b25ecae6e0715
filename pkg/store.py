"""Settings, atomic file output and run manifests for the Liouville lab."""

import contextlib
import hashlib
import json
import os
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from lab_utils import ConfigError, log

TOOL_VERSION = "0.1.0"
MANIFEST_NAME = "manifest.json"

MAX_GRID_MB_ENV = "LIOUVILLE_LAB_MAX_GRID_MB"
CHART_FACTOR_ENV = "LIOUVILLE_LAB_CHART_FACTOR"


def _load_json_object(path: Path) -> dict | None:
    """Parsed JSON object at path; {} when absent, None when unreadable."""
    try:
        text = path.read_text()
    except FileNotFoundError:
        return {}
    except OSError as e:
        log(f"Cannot read {path}: {e}")
        return None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        log(f"Ignoring malformed JSON in {path}: {e}")
        return None
    if not isinstance(data, dict):
        log(f"Ignoring {path}: top level is {type(data).__name__}, not an object")
        return None
    return data


def _write_atomic(path: Path, write):
    """Run write(file) on a sibling temp file, then rename it over path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            write(f)
        os.replace(tmp_name, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp_name)
        raise


def write_json_atomic(path: Path, data: Any):
    """Write data as indented, key-sorted JSON atomically."""
    text = json.dumps(data, indent=2, sort_keys=True) + "\n"
    _write_atomic(path, lambda f: f.write(text.encode("utf-8")))


def write_text_atomic(path: Path, text: str):
    """Write a text file atomically."""
    _write_atomic(path, lambda f: f.write(text.encode("utf-8")))


def write_bytes_atomic(path: Path, data: bytes):
    """Write a binary file atomically."""
    _write_atomic(path, lambda f: f.write(data))


def sha256_file(path: Path) -> str:
    """Hex sha256 of a file's content."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ============ Settings (process environment) ============

@dataclass(frozen=True)
class Settings:
    """Process-wide knobs read once from the environment."""
    max_grid_mb: float = 2048.0
    chart_factor: float = 0.2

    @classmethod
    def from_env(cls) -> "Settings":
        return cls(
            max_grid_mb=_env_float(MAX_GRID_MB_ENV, cls.max_grid_mb),
            chart_factor=_env_float(CHART_FACTOR_ENV, cls.chart_factor),
        )


def _env_float(name: str, default: float) -> float:
    raw = os.environ.get(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"{name} must be a number, got {raw!r}")
    if value <= 0:
        raise ConfigError(f"{name} must be positive, got {value}")
    return value


# ============ JsonDocument (disk-backed dict) ============

class JsonDocument:
    """A JSON object on disk, mirrored in memory.

    Reads go through `_data`, which picks up edits made by another process
    (a `report` while a run is still writing). Writes go through `_flush`.
    """

    def __init__(self, path: Path):
        self._path = Path(path)
        self._cache: dict = {}
        self._seen_mtime = 0.0
        self._refresh(force=True)

    def _disk_mtime(self) -> float:
        try:
            return self._path.stat().st_mtime
        except FileNotFoundError:
            return 0.0

    def _refresh(self, force: bool = False):
        mtime = self._disk_mtime()
        if not force and mtime <= self._seen_mtime:
            return
        loaded = _load_json_object(self._path)
        # unreadable content keeps whatever is already cached
        if loaded is not None:
            self._cache = loaded
            self._seen_mtime = mtime

    @property
    def _data(self) -> dict:
        self._refresh()
        return self._cache

    def _flush(self):
        write_json_atomic(self._path, self._cache)
        self._seen_mtime = self._disk_mtime()


# ============ RunManifest (one per output directory) ============

class RunManifest(JsonDocument):
    """Reproducibility record of a run: config hash, jobs, verdicts, files.

    Flushed after every change so a crashed run leaves a partial manifest.
    Timings live under jobs[*].seconds and are the only non-deterministic
    entries.
    """

    def __init__(self, run_dir: Path):
        self.run_dir = Path(run_dir)
        super().__init__(self.run_dir / MANIFEST_NAME)

    @property
    def exists(self) -> bool:
        return self._path.exists()

    def start(self, config_sha256: str, seed: int, job_names: list[str]):
        """Reset the manifest for a fresh run."""
        self._cache = {
            "tool_version": TOOL_VERSION,
            "config_sha256": config_sha256,
            "seed": seed,
            "jobs": {name: {"status": "pending"} for name in job_names},
            "files": {},
        }
        self._flush()

    @property
    def jobs(self) -> dict:
        return self._data.setdefault("jobs", {})

    @property
    def files(self) -> dict:
        return self._data.setdefault("files", {})

    def record_job(self, name: str, **fields):
        """Merge fields into a job entry and flush."""
        self.jobs.setdefault(name, {}).update(fields)
        self._flush()

    def add_file(self, path: Path):
        """Register an output file with its content hash."""
        path = Path(path)
        rel = str(path.relative_to(self.run_dir)) if path.is_relative_to(self.run_dir) else str(path)
        self.files[rel] = {"sha256": sha256_file(path), "bytes": path.stat().st_size}
        self._flush()

    def verify_files(self) -> list[str]:
        """Names of inventoried files whose content no longer matches."""
        bad = []
        for rel, entry in self.files.items():
            path = self.run_dir / rel
            if not path.exists() or sha256_file(path) != entry.get("sha256"):
                bad.append(rel)
        return bad

    def note(self, key: str, value):
        """Set a top-level run entry (for example the clamp count)."""
        self._data[key] = value
        self._flush()

    def mark_finished(self, exit_code: int, started: float):
        self._data["exit_code"] = exit_code
        self._data["seconds"] = round(time.time() - started, 3)
        self._flush()

    def as_dict(self) -> dict:
        return dict(self._data)


# ============ Singleton instances ============

_settings = None


def get_settings() -> Settings:
    """Get singleton Settings instance."""
    global _settings
    if _settings is None:
        _settings = Settings.from_env()
    return _settings


def reset_singletons():
    """Reset singletons (for testing or after the environment changes)."""
    global _settings
    _settings = None
