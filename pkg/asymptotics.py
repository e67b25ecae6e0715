"""Executable boundary estimates: brackets, error profiles, rate fits.

A profile samples |u - model| along a ray at geometrically spaced distances;
fit_rate regresses log e on log d (or log r for corner localization) and
check_estimate turns the fitted slope into a verdict.
"""

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.stats import qmc

from closedform import ConeBarrier, liouville_residual, subsolution_margin, supersolution_margin
from geometry import (CornerSpec, DomainSpec, Point2, as_points, corner_frame,
                      distance_field, interior_distances)
from lab_utils import GeometryError, ProfileError, log
from solver import GridSolution, evaluate_many
from store import write_json_atomic, write_text_atomic

MIN_SAMPLES = 4
BALL_DIRECTIONS = 720
BISECTION_STEPS = 48
RADIUS_HALVINGS = 10


# ============ Sampling rays ============

@dataclass(frozen=True)
class Sampler:
    """Points origin + t_j * direction with t_j = t0 * 2^(-j / per_octave).

    axis selects the profile abscissa: "d" (distance to the boundary) or "r"
    (distance to the origin, for corner localization).
    """
    origin: Point2
    direction: float
    t0: float
    levels: int
    per_octave: int = 2
    axis: str = "d"

    def __post_init__(self):
        if self.axis not in ("d", "r"):
            raise ProfileError(f"sampler axis must be 'd' or 'r', got {self.axis!r}")
        if not (self.t0 > 0 and self.levels >= 1 and self.per_octave >= 1):
            raise ProfileError("sampler needs t0 > 0, levels >= 1 and per_octave >= 1")

    @property
    def ts(self) -> np.ndarray:
        return self.t0 * 2.0 ** (-np.arange(self.levels) / self.per_octave)

    def points(self) -> np.ndarray:
        e = np.array([math.cos(self.direction), math.sin(self.direction)])
        return self.origin.as_array() + self.ts[:, None] * e

    @classmethod
    def normal_ray(cls, domain: DomainSpec, segment: int, t: float, t0: float, levels: int,
                   per_octave: int = 2) -> "Sampler":
        """Ray along the inward normal from the boundary point segment(t)."""
        seg = domain.segments[segment]
        tangent = seg.deriv(t)
        foot = Point2.from_array(seg.point(t))
        return cls(foot, math.atan2(float(tangent[0]), float(-tangent[1])), t0, levels, per_octave, "d")

    @classmethod
    def corner_ray(cls, domain: DomainSpec, corner: CornerSpec, theta: float, t0: float, levels: int,
                   per_octave: int = 2, axis: str = "d") -> "Sampler":
        """Ray from a corner vertex at frame angle theta (from sigma1)."""
        frame = corner_frame(domain, corner)
        return cls(corner.vertex, frame.angle + theta, t0, levels, per_octave, axis)


# ============ Profiles and fits ============

@dataclass
class ErrorProfile:
    """Samples sorted by x ascending; signed = u - model."""
    x: np.ndarray
    signed: np.ndarray
    points: np.ndarray
    axis: str = "d"
    meta: dict = field(default_factory=dict)

    @property
    def abs(self) -> np.ndarray:
        return np.abs(self.signed)

    def __len__(self) -> int:
        return len(self.x)

    def to_rows(self) -> list[dict]:
        return [{"x": float(x), "signed_error": float(s), "abs_error": float(abs(s)),
                 "px": float(p[0]), "py": float(p[1])}
                for x, s, p in zip(self.x, self.signed, self.points)]


def _values_at(u, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate a GridSolution (trust region only) or a callable; returns
    values and a usable mask."""
    if isinstance(u, GridSolution):
        vals = evaluate_many(u, pts)
    else:
        vals = np.asarray(u(pts), dtype=float).reshape(-1)
    return vals, np.isfinite(vals)


def make_profile(x: np.ndarray, signed: np.ndarray, points: np.ndarray, axis: str = "d",
                 meta: dict | None = None) -> ErrorProfile:
    """Sorted profile from raw samples; x must be positive.

    Raises:
        ProfileError: Fewer than 4 samples.
    """
    x = np.asarray(x, dtype=float)
    keep = np.isfinite(x) & np.isfinite(signed) & (x > 0)
    if keep.sum() < MIN_SAMPLES:
        raise ProfileError(f"only {int(keep.sum())} usable samples (need {MIN_SAMPLES})")
    order = np.argsort(x[keep], kind="stable")
    return ErrorProfile(x[keep][order], np.asarray(signed)[keep][order],
                        np.asarray(points)[keep][order], axis, meta or {})


def error_profile(sol: GridSolution | Callable, model: Callable, sampler: Sampler,
                  domain: DomainSpec | None = None, meta: dict | None = None) -> ErrorProfile:
    """Signed errors u - model at the sampler's points.

    Points outside the solution's trust region are dropped. On the "d" axis
    the abscissa is the distance to the boundary of sol's domain (or of
    domain, required when sol is a plain callable).
    """
    pts = sampler.points()
    vals, ok = _values_at(sol, pts)
    pts = pts[ok]
    if len(pts) < MIN_SAMPLES:
        raise ProfileError(f"only {len(pts)} sampler points in the trust region (need {MIN_SAMPLES})")
    m = np.asarray(model(pts), dtype=float).reshape(-1)
    if sampler.axis == "d":
        if isinstance(sol, GridSolution):
            domain = sol.grid.domain
        if domain is None:
            raise ProfileError("a 'd' axis profile of a plain function needs its domain")
        x = distance_field(domain, pts, with_corners=False).d
    else:
        x = np.linalg.norm(pts - sampler.origin.as_array(), axis=1)
    return make_profile(x, vals[ok] - m, pts, sampler.axis, meta)


@dataclass
class RateFit:
    slope: float
    intercept: float
    rms: float
    window: tuple[float, float]
    count: int
    dropped: int = 0

    @property
    def C(self) -> float:
        return math.exp(self.intercept) if self.intercept < 700 else math.inf

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "C": self.C, "rms": self.rms,
                "window": list(self.window), "count": self.count, "dropped": self.dropped}


def fit_rate(profile: ErrorProfile, window: tuple[float, float] | None = None) -> RateFit:
    """Least-squares line through (log x, log |e|) on the window.

    Zero errors are dropped (counted in RateFit.dropped).

    Raises:
        ProfileError: Fewer than 4 positive samples in the window.
    """
    x, e = profile.x, profile.abs
    sel = np.ones(len(x), dtype=bool)
    if window is not None:
        sel = (x >= window[0]) & (x <= window[1])
    zero = sel & (e == 0)
    if zero.any():
        log(f"fit_rate: dropping {int(zero.sum())} zero-error samples")
    sel &= e > 0
    n = int(sel.sum())
    if n < MIN_SAMPLES:
        raise ProfileError(f"only {n} positive samples in window {window} (need {MIN_SAMPLES})")
    lx, le = np.log(x[sel]), np.log(e[sel])
    slope, intercept = np.polyfit(lx, le, 1)
    rms = float(np.sqrt(np.mean((le - (slope * lx + intercept)) ** 2)))
    return RateFit(float(slope), float(intercept), rms, (float(x[sel].min()), float(x[sel].max())), n, int(zero.sum()))


@dataclass
class EstimateReport:
    verdict: str
    passed: bool
    slope: float
    C: float
    expected_power: float
    slope_tol: float
    rms: float
    pre_asymptotic: bool
    advisory: bool
    lower_window_slope: float | None
    samples: list[dict]

    def to_dict(self) -> dict:
        return asdict(self)


def check_estimate(profile: ErrorProfile, expected_power: float, slope_tol: float,
                   window: tuple[float, float] | None = None, advisory: bool = False) -> EstimateReport:
    """Pass iff the fitted slope >= expected_power - slope_tol with finite C.

    The fit is repeated on the lower half of the window. pre_asymptotic is
    set whenever that slope falls below the full slope by more than the fit
    residual, whatever the verdict. A flattening tail only lowers the fitted
    slope, so it turns a failure into "inconclusive" but leaves a pass alone.
    """
    fit = fit_rate(profile, window)
    passed = fit.slope >= expected_power - slope_tol and math.isfinite(fit.C)
    lower_slope = None
    pre_asymptotic = False
    lo, hi = fit.window
    mid = math.sqrt(lo * hi)
    try:
        lower = fit_rate(profile, (lo, mid))
        lower_slope = lower.slope
        pre_asymptotic = lower.slope < fit.slope - fit.rms
    except ProfileError:
        pass
    if passed:
        verdict = "pass"
    elif pre_asymptotic:
        verdict = "inconclusive"
    else:
        verdict = "fail"
    return EstimateReport(verdict, passed, fit.slope, fit.C, expected_power, slope_tol, fit.rms,
                          pre_asymptotic, advisory, lower_slope, profile.to_rows())


# ============ Brackets ============

@dataclass
class Bracket:
    """lower <= u(p) <= upper from exterior/interior tangent balls.

    lower_kind: "exterior_ball", "exterior_cone" (flagged fallback) or
    "none" (no certificate found; lower is -inf).
    """
    lower: float
    upper: float
    d: float
    upper_radius: float
    lower_radius: float
    lower_kind: str

    @property
    def flagged(self) -> bool:
        return self.lower_kind != "exterior_ball"


def _ball_clear(domain: DomainSpec, centres: np.ndarray, radii: np.ndarray, exterior: bool) -> np.ndarray:
    """Distance certificate: the ball is inside (or outside) the domain."""
    inside = domain.contains(centres)
    ok = inside if not exterior else ~inside
    dist = np.full(len(centres), -np.inf)
    if ok.any():
        dist[ok] = distance_field(domain, centres[ok], with_corners=False).d
    return ok & (dist >= radii * (1 - 1e-10))


def _directions_clear(domain: DomainSpec, centre: np.ndarray, radius: float) -> bool:
    """Sampled certificate: 720 points just inside the ball's circle lie
    outside the domain."""
    ang = np.linspace(0, 2 * math.pi, BALL_DIRECTIONS, endpoint=False)
    ring = centre + radius * (1 - 1e-9) * np.column_stack([np.cos(ang), np.sin(ang)])
    return not np.any(domain.contains(ring))


def _exterior_candidates(domain: DomainSpec, seg_ids: np.ndarray, d: np.ndarray) -> np.ndarray:
    radii = np.empty(len(d))
    for j in np.unique(seg_ids):
        sel = seg_ids == j
        reg = domain.segments[j].regularity
        if reg.has_curvature:
            radii[sel] = domain.diameter if reg.M == 0 else min(domain.diameter, 1.0 / reg.M)
        else:
            graph_M = reg.M / (1 + reg.alpha)
            radii[sel] = d[sel] ** (1 - reg.alpha) / (2 * graph_M)
    return radii


def bracket_points(domain: DomainSpec, pts, sampled_certificate: bool = False) -> list[Bracket]:
    """Vectorized bracket_point.

    Balls are certified by the exact distance check (centre on the right
    side and clearance >= radius); sampled_certificate adds the 720-direction
    check per exterior ball.
    """
    pts = as_points(pts).reshape(-1, 2)
    if not np.all(domain.contains(pts)):
        raise GeometryError("bracket points must lie inside the domain")
    f = distance_field(domain, pts, with_corners=False)
    d = f.d
    n_vec = (pts - f.foot) / d[:, None]
    n = len(pts)

    # upper: largest interior tangent ball at the foot, by bisection on r
    lo = d.copy()
    hi = np.full(n, domain.diameter / 2)
    hi = np.maximum(hi, lo)
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        ok = _ball_clear(domain, f.foot + mid[:, None] * n_vec, mid, exterior=False)
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    r_up = lo
    upper = -np.log(d) - np.log1p(-d / (2 * r_up))

    # lower: exterior tangent ball, halving the candidate radius on failure
    rho = _exterior_candidates(domain, f.segment, d)
    lower = np.full(n, -np.inf)
    lower_r = np.zeros(n)
    kind = np.array(["none"] * n, dtype=object)
    pending = np.ones(n, dtype=bool)
    for _ in range(RADIUS_HALVINGS + 1):
        idx = np.flatnonzero(pending)
        if idx.size == 0:
            break
        centres = f.foot[idx] - rho[idx, None] * n_vec[idx]
        ok = _ball_clear(domain, centres, rho[idx], exterior=True)
        if sampled_certificate:
            ok = np.array([o and _directions_clear(domain, c, r) for o, c, r in zip(ok, centres, rho[idx])])
        good = idx[ok]
        lower[good] = -np.log(d[good]) - np.log1p(d[good] / (2 * rho[good]))
        lower_r[good] = rho[good]
        kind[good] = "exterior_ball"
        pending[good] = False
        rho[pending] *= 0.5

    # fallback: ball of radius d pushed out along -n (exterior cone)
    idx = np.flatnonzero(pending)
    if idx.size:
        far = 20.0 * d[idx]
        ok_far = _ball_clear(domain, f.foot[idx] - far[:, None] * n_vec[idx], d[idx], exterior=True)
        idx = idx[ok_far]
        s_lo, s_hi = d[idx].copy(), 20.0 * d[idx]
        for _ in range(BISECTION_STEPS):
            mid = 0.5 * (s_lo + s_hi)
            ok = _ball_clear(domain, f.foot[idx] - mid[:, None] * n_vec[idx], d[idx], exterior=True)
            s_hi = np.where(ok, mid, s_hi)
            s_lo = np.where(ok, s_lo, mid)
        s = s_hi
        dd = d[idx]
        lower[idx] = np.log(2 * dd / ((dd + s) ** 2 - dd ** 2))
        lower_r[idx] = dd
        kind[idx] = "exterior_cone"
        flagged = int(idx.size)
        if flagged:
            log(f"bracket: {flagged} points use the exterior-cone fallback")

    return [Bracket(float(lower[i]), float(upper[i]), float(d[i]), float(r_up[i]), float(lower_r[i]), str(kind[i]))
            for i in range(n)]


def bracket_point(domain: DomainSpec, p) -> Bracket:
    """Certified bracket of the blow-up solution at one interior point,
    with the 720-direction exterior-ball check."""
    return bracket_points(domain, as_points(p).reshape(1, 2), sampled_certificate=True)[0]


def bracket_width_profile(domain: DomainSpec, sampler: Sampler) -> ErrorProfile:
    """upper - lower along a ray (stored in ErrorProfile.signed)."""
    pts = sampler.points()
    br = bracket_points(domain, pts)
    width = np.array([b.upper - b.lower for b in br])
    d = np.array([b.d for b in br])
    return make_profile(d, width, pts, "d", {"kind": "bracket_width"})


@dataclass
class BracketAudit:
    checked: int
    violations: int
    flagged: int
    unbracketed: int
    slack: float
    worst_excess: float

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return dict(asdict(self), passed=self.passed)


def bracket_audit(sol: GridSolution, pts, slack: float | None = None) -> BracketAudit:
    """Count violations of lower - slack <= u_h <= upper + slack (default
    slack 10 h^2) at trust-region points."""
    pts = as_points(pts).reshape(-1, 2)
    slack = 10 * sol.h ** 2 if slack is None else slack
    vals, ok = _values_at(sol, pts)
    pts, vals = pts[ok], vals[ok]
    br = bracket_points(sol.grid.domain, pts)
    violations = 0
    worst = 0.0
    for b, u in zip(br, vals):
        excess = max(u - (b.upper + slack), (b.lower - slack) - u, 0.0)
        if excess > 0:
            violations += 1
            worst = max(worst, excess)
    flagged = sum(b.lower_kind == "exterior_cone" for b in br)
    unbracketed = sum(b.lower_kind == "none" for b in br)
    return BracketAudit(len(br), violations, flagged, unbracketed, slack, worst)


# ============ Localization ============

def _check_coincide(d1: DomainSpec, d2: DomainSpec, centre: np.ndarray, radius: float):
    r = radius * np.sqrt(np.linspace(0.02, 1.0, 16))
    a = np.linspace(0, 2 * math.pi, 32, endpoint=False)
    R, A = np.meshgrid(r, a)
    pts = centre + np.column_stack([(R * np.cos(A)).ravel(), (R * np.sin(A)).ravel()])
    in1, in2 = d1.contains(pts), d2.contains(pts)
    if np.any(in1 != in2):
        raise GeometryError("domains differ inside the sampling ball")
    if in1.any():
        dist1 = interior_distances(d1, pts[in1])
        dist2 = interior_distances(d2, pts[in1])
        near = np.minimum(dist1, dist2) < radius - np.linalg.norm(pts[in1] - centre, axis=1)
        if np.any(np.abs(dist1 - dist2)[near] > 1e-12 * max(1.0, radius)):
            raise GeometryError("domains differ inside the sampling ball")


@dataclass
class LocalizationResult:
    profile: ErrorProfile
    fit: RateFit | None
    max_gap: float


def localization_gap(sol1: GridSolution, sol2: GridSolution, corner: CornerSpec,
                     sampler: Sampler) -> LocalizationResult:
    """Profile of |u1 - u2| against r = |z - vertex| along the sampler ray.

    Raises:
        GeometryError: The two domains differ inside the sampling ball.
    """
    radius = float(np.max(sampler.ts)) * 1.05
    _check_coincide(sol1.grid.domain, sol2.grid.domain, corner.vertex.as_array(), radius)
    pts = sampler.points()
    v1, ok1 = _values_at(sol1, pts)
    v2, ok2 = _values_at(sol2, pts)
    ok = ok1 & ok2
    r = np.linalg.norm(pts - corner.vertex.as_array(), axis=1)
    profile = make_profile(r[ok], (v1 - v2)[ok], pts[ok], "r", {"kind": "localization", "mu": corner.mu})
    try:
        fit = fit_rate(profile)
    except ProfileError:
        fit = None
    return LocalizationResult(profile, fit, float(np.max(profile.abs)))


# ============ Barrier sign checks ============

@dataclass
class SuperSubReport:
    mu: float
    A: float
    count: int
    super_violations: int
    sub_violations: int
    max_super_residual: float
    min_sub_residual: float
    max_margin_deviation: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.super_violations == 0 and self.sub_violations == 0

    def to_dict(self) -> dict:
        return dict(asdict(self), passed=self.passed)


def super_sub_check(mu: float, A: float, count: int, seed: int = 0, r_range: tuple[float, float] = (0.01, 10.0),
                    tol: float = 1e-6) -> SuperSubReport:
    """Sign of the relative Liouville residual of the cone barriers at Sobol
    points (log r uniform in r_range, theta in (0, mu pi)).

    Supersolution: residual / e^{2u} <= tol. Subsolution: >= -tol. Steps
    are d/100 with d the distance to the cone's boundary.
    """
    m = max(1, math.ceil(math.log2(max(count, 2))))
    raw = qmc.Sobol(d=2, scramble=True, seed=seed).random_base2(m)[:count]
    lr0, lr1 = math.log(r_range[0]), math.log(r_range[1])
    r = np.exp(lr0 + raw[:, 0] * (lr1 - lr0))
    theta = mu * math.pi * (0.005 + 0.99 * raw[:, 1])
    pts = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    edge = np.minimum(theta, mu * math.pi - theta)
    d = np.where(edge < math.pi / 2, r * np.sin(np.minimum(edge, math.pi / 2)), r)
    h = d / 100

    sup = ConeBarrier(mu, A, "super")
    sub = ConeBarrier(mu, A, "sub")
    res_sup = liouville_residual(sup, pts, h, relative=True)
    res_sub = liouville_residual(sub, pts, h, relative=True)
    e_sup = np.exp(2 * sup(pts))
    e_sub = np.exp(2 * sub(pts))
    dev_sup = np.abs(-res_sup - supersolution_margin(mu, A, r, theta) / e_sup)
    dev_sub = np.abs(res_sub - subsolution_margin(mu, A, r, theta) / e_sub)
    report = SuperSubReport(
        mu, A, count,
        int(np.sum(res_sup > tol)), int(np.sum(res_sub < -tol)),
        float(np.max(res_sup)), float(np.min(res_sub)),
        float(max(np.max(dev_sup), np.max(dev_sub))), tol,
    )
    log(f"super_sub_check mu={mu:g} A={A:g}: {report.super_violations}+{report.sub_violations} violations")
    return report


# ============ Writers ============

def profile_csv(profile: ErrorProfile) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([profile.axis, "signed_error", "abs_error", "px", "py"])
    for row in profile.to_rows():
        writer.writerow([repr(row["x"]), repr(row["signed_error"]), repr(row["abs_error"]),
                         repr(row["px"]), repr(row["py"])])
    return buf.getvalue()


def write_profile_csv(path: Path, profile: ErrorProfile):
    write_text_atomic(path, profile_csv(profile))


def write_report_json(path: Path, report: dict):
    write_json_atomic(path, report)
