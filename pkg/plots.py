"""SVG log-log plots of error profiles and convergence tables.

Figures are built with the object API (no pyplot state), so jobs on worker
threads can render concurrently. The SVG is byte-stable for fixed input:
the hash salt is fixed and the Date metadata is dropped. The plotted points
are embedded as CSV in the SVG's Description metadata.
"""

import io
from pathlib import Path

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from asymptotics import ErrorProfile, RateFit
from store import write_bytes_atomic

matplotlib.rcParams["svg.hashsalt"] = "liouville-corner-lab"
matplotlib.rcParams["svg.fonttype"] = "none"

FIGSIZE = (5.0, 4.0)


def _points_text(x: np.ndarray, y: np.ndarray, xlabel: str, ylabel: str) -> str:
    rows = [f"{xlabel},{ylabel}"]
    rows += [f"{float(a)!r},{float(b)!r}" for a, b in zip(x, y)]
    return "\n".join(rows)


def loglog_svg(x, y, title: str, xlabel: str, ylabel: str, fit: RateFit | None = None,
               expected_power: float | None = None) -> bytes:
    """Scatter of (x, y) on log axes with the fitted line and slope label."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    fig = Figure(figsize=FIGSIZE)
    ax = fig.add_subplot()
    ax.loglog(x[keep], y[keep], "o", markersize=4, label="samples")
    if fit is not None:
        lo, hi = fit.window
        xs = np.geomspace(lo, hi, 32)
        ax.loglog(xs, fit.C * xs ** fit.slope, "-", linewidth=1.2,
                  label=f"fit: slope {fit.slope:.3f}, C {fit.C:.3g}")
    if expected_power is not None and keep.any():
        x0, y0 = x[keep][-1], y[keep][-1]
        xs = np.geomspace(x[keep].min(), x0, 16)
        ax.loglog(xs, y0 * (xs / x0) ** expected_power, "--", linewidth=0.8,
                  label=f"reference slope {expected_power:g}")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, which="both", linewidth=0.3)
    ax.legend(fontsize="small")
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Title": title,
                                             "Description": _points_text(x, y, xlabel, ylabel)})
    return buf.getvalue()


def profile_svg(profile: ErrorProfile, title: str, fit: RateFit | None = None,
                expected_power: float | None = None) -> bytes:
    return loglog_svg(profile.x, profile.abs, title, profile.axis, "|error|", fit, expected_power)


def write_svg(path: Path, data: bytes):
    write_bytes_atomic(path, data)
