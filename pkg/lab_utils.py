"""Shared utilities for the Liouville corner lab."""

import datetime
import threading


class LabError(Exception):
    """Base class for all lab errors."""
    pass


class DomainError(LabError):
    """Function evaluated outside its domain (ball, cone, branch cut, vertex)."""
    pass


class GeometryError(LabError):
    """Invalid geometric query (point outside domain or corner chart)."""
    pass


class ConstructionError(GeometryError):
    """Invalid domain parameters or an inconsistent DomainSpec."""
    pass


class DiscretizationError(LabError):
    """Grid cannot be built (spacing too coarse, domain too thin, memory cap)."""
    pass


class ConvergenceError(LabError):
    """Newton iteration or k-sequence failed to converge."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class LinearSolveError(ConvergenceError):
    """Sparse factorization failed or returned non-finite values."""
    pass


class ProfileError(LabError):
    """Not enough usable samples for a profile or rate fit."""
    pass


class KahlerError(LabError):
    """Factor solution fails its residual check."""
    pass


class ConfigError(LabError):
    """Experiment config could not be parsed or validated."""
    pass


_log_lock = threading.Lock()


def log(msg: str):
    """Print with timestamp (milliseconds). Thread-safe."""
    ts = datetime.datetime.now().strftime("%H:%M:%S.%f")[:-3]
    with _log_lock:
        print(f"[{ts}] {msg}", flush=True)


class ClampCounter:
    """Thread-safe tally of arguments clamped into a function's domain.

    arcsin(d/|x|) needs d <= |x|; roundoff can push the ratio past 1.
    Experiments read the tally so that reports can flag clamping.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    def add(self, n: int):
        if n <= 0:
            return
        with self._lock:
            self._count += int(n)

    @property
    def count(self) -> int:
        with self._lock:
            return self._count

    def reset(self) -> int:
        """Zero the tally, returning the previous value."""
        with self._lock:
            previous, self._count = self._count, 0
        return previous


arcsin_clamps = ClampCounter()


def format_float(x: float | None, digits: int = 6) -> str:
    """Format a float for tables; None and NaN render as '-'."""
    if x is None or x != x:
        return "-"
    return f"{x:.{digits}g}"
