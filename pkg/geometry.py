"""Planar domains bounded by one counterclockwise loop of parametric curves.

Segments are parametrized on t in [0, 1] with analytic first and second
derivatives. Corners are tagged where one segment (sigma1) leaves a vertex
and the previous segment in the loop (sigma2) arrives at it; the domain
lies to the left of the traversal, so the opening angle is measured
counterclockwise from the tangent ray of sigma1 to that of sigma2.

Everything here is immutable after construction. Lazily computed samples
(cached_property) are deterministic, so concurrent readers at worst compute
them twice.
"""

import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, fields
from enum import Enum
from functools import cached_property
from typing import Callable

import numpy as np
from matplotlib.path import Path as MplPath
from scipy.optimize import minimize_scalar
from scipy.spatial import ConvexHull, cKDTree
from scipy.spatial.distance import pdist

from lab_utils import ConstructionError, GeometryError
from store import get_settings

SEGMENT_SAMPLES = 4097
POLYLINE_POINTS = 10_000
INTERSECTION_POINTS = 1500
NEWTON_MAX_ITERS = 60
NEWTON_STEP_TOL = 1e-14
ANGLE_TOL = 1e-9
CLOSURE_TOL = 1e-12


# ============ Points ============

@dataclass(frozen=True)
class Point2:
    """A point of the plane."""
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GeometryError(f"Point2 components must be finite, got ({self.x}, {self.y})")

    def __add__(self, other: "Point2") -> "Point2":
        return Point2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: "Point2") -> "Point2":
        return Point2(self.x - other.x, self.y - other.y)

    def __mul__(self, s: float) -> "Point2":
        return Point2(self.x * s, self.y * s)

    __rmul__ = __mul__

    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @classmethod
    def from_array(cls, a) -> "Point2":
        return cls(float(a[0]), float(a[1]))


def as_points(p) -> np.ndarray:
    """Coerce a Point2, a pair, or an (..., 2) array to a float array."""
    if isinstance(p, Point2):
        return p.as_array()
    arr = np.asarray(p, dtype=float)
    if arr.shape[-1:] != (2,):
        raise GeometryError(f"expected points with trailing dimension 2, got shape {arr.shape}")
    return arr


def _stack(x, y) -> np.ndarray:
    return np.stack(np.broadcast_arrays(x, y), axis=-1)


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _rotate(v: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return _stack(c * v[..., 0] - s * v[..., 1], s * v[..., 0] + c * v[..., 1])


# ============ Curve segments ============

@dataclass(frozen=True)
class Regularity:
    """Regularity tag of a segment.

    kind is "C1a" (graph bound |phi'(x)| <= M x^alpha), "C2" or "C2a"
    (|phi''| <= M). Straight segments are C2a with M = 0.
    """
    kind: str
    alpha: float
    M: float

    def __post_init__(self):
        if self.kind not in ("C1a", "C2", "C2a"):
            raise ConstructionError(f"unknown regularity kind: {self.kind}")
        if not 0 < self.alpha <= 1:
            raise ConstructionError(f"regularity exponent must lie in (0, 1], got {self.alpha}")
        if self.M < 0:
            raise ConstructionError(f"regularity bound must be >= 0, got {self.M}")

    @property
    def has_curvature(self) -> bool:
        return self.kind != "C1a"


class CurveSegment(ABC):
    """Parametric boundary piece t in [0, 1] -> R^2, vectorized over t."""

    TYPE = ""

    @abstractmethod
    def point(self, t) -> np.ndarray:
        ...

    @abstractmethod
    def deriv(self, t) -> np.ndarray:
        ...

    @abstractmethod
    def deriv2(self, t) -> np.ndarray:
        ...

    @property
    @abstractmethod
    def regularity(self) -> Regularity:
        ...

    @abstractmethod
    def scaled(self, s: float) -> "CurveSegment":
        """Image under the homothety x -> s x."""

    def to_dict(self) -> dict:
        out = {"type": self.TYPE}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = [v.x, v.y] if isinstance(v, Point2) else v
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "CurveSegment":
        kwargs = {}
        for f in fields(cls):
            if f.name not in data:
                continue
            v = data[f.name]
            kwargs[f.name] = Point2(*v) if isinstance(v, (list, tuple)) else v
        return cls(**kwargs)

    @property
    def start(self) -> np.ndarray:
        return self.point(0.0)

    @property
    def end(self) -> np.ndarray:
        return self.point(1.0)

    @property
    def closed(self) -> bool:
        """True when the segment alone forms a loop (disk, ellipse, blob)."""
        gap = np.linalg.norm(self.start - self.end)
        return bool(gap <= CLOSURE_TOL * max(1.0, self.length))

    @cached_property
    def samples(self) -> tuple[np.ndarray, np.ndarray]:
        ts = np.linspace(0.0, 1.0, SEGMENT_SAMPLES)
        return ts, self.point(ts)

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.samples[1])

    @cached_property
    def length(self) -> float:
        pts = self.samples[1]
        return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


@dataclass(frozen=True)
class LineSegment(CurveSegment):
    TYPE = "line"
    a: Point2
    b: Point2

    def __post_init__(self):
        if (self.b - self.a).norm() == 0:
            raise ConstructionError("line segment has zero length")

    def point(self, t):
        t = np.asarray(t, dtype=float)
        a, b = self.a.as_array(), self.b.as_array()
        return a + t[..., None] * (b - a)

    def deriv(self, t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(self.b.as_array() - self.a.as_array(), t.shape + (2,)).copy()

    def deriv2(self, t):
        t = np.asarray(t, dtype=float)
        return np.zeros(t.shape + (2,))

    @property
    def regularity(self) -> Regularity:
        return Regularity("C2a", 1.0, 0.0)

    def scaled(self, s):
        return LineSegment(self.a * s, self.b * s)


@dataclass(frozen=True)
class ArcSegment(CurveSegment):
    """Circular arc; end > start runs counterclockwise (convex side inside)."""
    TYPE = "arc"
    center: Point2
    radius: float
    start_angle: float
    end_angle: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ConstructionError(f"arc radius must be positive, got {self.radius}")
        if self.start_angle == self.end_angle:
            raise ConstructionError("arc has zero sweep")

    def _phi(self, t):
        t = np.asarray(t, dtype=float)
        return self.start_angle + t * (self.end_angle - self.start_angle)

    def point(self, t):
        phi = self._phi(t)
        return self.center.as_array() + self.radius * _stack(np.cos(phi), np.sin(phi))

    def deriv(self, t):
        phi = self._phi(t)
        k = self.radius * (self.end_angle - self.start_angle)
        return k * _stack(-np.sin(phi), np.cos(phi))

    def deriv2(self, t):
        phi = self._phi(t)
        k = self.radius * (self.end_angle - self.start_angle) ** 2
        return -k * _stack(np.cos(phi), np.sin(phi))

    @property
    def regularity(self) -> Regularity:
        return Regularity("C2a", 1.0, 1.0 / self.radius)

    def scaled(self, s):
        return ArcSegment(self.center * s, self.radius * s, self.start_angle, self.end_angle)


@dataclass(frozen=True)
class EllipseArc(CurveSegment):
    TYPE = "ellipse_arc"
    center: Point2
    a: float
    b: float
    start_angle: float = 0.0
    end_angle: float = 2 * math.pi

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ConstructionError(f"ellipse semi-axes must be positive, got ({self.a}, {self.b})")

    def _phi(self, t):
        t = np.asarray(t, dtype=float)
        return self.start_angle + t * (self.end_angle - self.start_angle)

    def point(self, t):
        phi = self._phi(t)
        return self.center.as_array() + _stack(self.a * np.cos(phi), self.b * np.sin(phi))

    def deriv(self, t):
        phi = self._phi(t)
        k = self.end_angle - self.start_angle
        return k * _stack(-self.a * np.sin(phi), self.b * np.cos(phi))

    def deriv2(self, t):
        phi = self._phi(t)
        k = (self.end_angle - self.start_angle) ** 2
        return -k * _stack(self.a * np.cos(phi), self.b * np.sin(phi))

    @property
    def regularity(self) -> Regularity:
        return Regularity("C2a", 1.0, max(self.a, self.b) / min(self.a, self.b) ** 2)

    def scaled(self, s):
        return EllipseArc(self.center * s, self.a * s, self.b * s, self.start_angle, self.end_angle)


@dataclass(frozen=True)
class PolarBlob(CurveSegment):
    """Closed star-shaped loop r(phi) = radius * (1 + eps cos(k phi))."""
    TYPE = "polar_blob"
    center: Point2
    radius: float
    eps: float
    k: int

    def __post_init__(self):
        if not self.radius > 0:
            raise ConstructionError(f"blob radius must be positive, got {self.radius}")
        if not 0 <= self.eps < 1.0 / (1 + self.k ** 2):
            # keeps the loop convex, hence simple
            raise ConstructionError(f"blob eps must lie in [0, 1/(1+k^2)), got {self.eps}")

    def _parts(self, t):
        phi = 2 * math.pi * np.asarray(t, dtype=float)
        R, e, k = self.radius, self.eps, self.k
        r = R * (1 + e * np.cos(k * phi))
        r1 = -R * e * k * np.sin(k * phi)
        r2 = -R * e * k * k * np.cos(k * phi)
        er = _stack(np.cos(phi), np.sin(phi))
        ephi = _stack(-np.sin(phi), np.cos(phi))
        return r[..., None], r1[..., None], r2[..., None], er, ephi

    def point(self, t):
        r, _, _, er, _ = self._parts(t)
        return self.center.as_array() + r * er

    def deriv(self, t):
        r, r1, _, er, ephi = self._parts(t)
        return 2 * math.pi * (r1 * er + r * ephi)

    def deriv2(self, t):
        r, r1, r2, er, ephi = self._parts(t)
        return (2 * math.pi) ** 2 * ((r2 - r) * er + 2 * r1 * ephi)

    @cached_property
    def _max_curvature(self) -> float:
        ts = self.samples[0]
        return float(np.max(np.abs(curvature_values(self, ts))))

    @property
    def regularity(self) -> Regularity:
        return Regularity("C2a", 1.0, self._max_curvature)

    def scaled(self, s):
        return PolarBlob(self.center * s, self.radius * s, self.eps, self.k)


@dataclass(frozen=True)
class GraphArm(CurveSegment):
    """Graph arm y = side * amplitude * s^power, s in [0, length], in the
    frame with origin at the corner vertex and x-axis at the given angle.

    reverse=True traverses the arm toward the vertex. power in (1, 2) gives
    a C^{1,alpha} arm with alpha = power - 1; power >= 2 gives a C^2 arm.
    """
    TYPE = "graph_arm"
    origin: Point2
    angle: float
    amplitude: float
    power: float
    length: float
    side: float = 1.0
    reverse: bool = False

    def __post_init__(self):
        if not self.power > 1:
            raise ConstructionError(f"arm power must exceed 1, got {self.power}")
        if not self.length > 0:
            raise ConstructionError(f"arm length must be positive, got {self.length}")
        if self.amplitude < 0:
            raise ConstructionError(f"arm amplitude must be >= 0, got {self.amplitude}")
        if self.side not in (1.0, -1.0):
            raise ConstructionError(f"arm side must be +1 or -1, got {self.side}")

    def _s(self, t):
        t = np.asarray(t, dtype=float)
        return self.length * (1.0 - t) if self.reverse else self.length * t

    @property
    def _ds(self) -> float:
        return -self.length if self.reverse else self.length

    def phi(self, s):
        return self.side * self.amplitude * np.power(s, self.power)

    def phi_prime(self, s):
        return self.side * self.amplitude * self.power * np.power(s, self.power - 1)

    def phi_second(self, s):
        if self.power < 2:
            s = np.maximum(s, 1e-12 * self.length)
        return self.side * self.amplitude * self.power * (self.power - 1) * np.power(s, self.power - 2)

    def point(self, t):
        s = self._s(t)
        return self.origin.as_array() + _rotate(_stack(s, self.phi(s)), self.angle)

    def deriv(self, t):
        s = self._s(t)
        return self._ds * _rotate(_stack(np.ones_like(s), self.phi_prime(s)), self.angle)

    def deriv2(self, t):
        s = self._s(t)
        return self._ds ** 2 * _rotate(_stack(np.zeros_like(s), self.phi_second(s)), self.angle)

    def to_local(self, pts) -> np.ndarray:
        """Coordinates of pts in the arm's graph frame."""
        return _rotate(as_points(pts) - self.origin.as_array(), -self.angle)

    @property
    def regularity(self) -> Regularity:
        a, p, L = self.amplitude, self.power, self.length
        if a == 0:
            return Regularity("C2a", 1.0, 0.0)
        if p < 2:
            return Regularity("C1a", p - 1, a * p)
        return Regularity("C2a", 1.0, a * p * (p - 1) * L ** (p - 2))

    def scaled(self, s):
        amp = self.amplitude * s ** (1 - self.power)
        return GraphArm(self.origin * s, self.angle, amp, self.power, self.length * s, self.side, self.reverse)


@dataclass(frozen=True)
class ParametricSegment(CurveSegment):
    """User-supplied curve; callables must provide exact derivatives."""
    TYPE = "parametric"
    fn: Callable
    dfn: Callable
    d2fn: Callable
    tag: Regularity

    def point(self, t):
        return np.asarray(self.fn(np.asarray(t, dtype=float)), dtype=float)

    def deriv(self, t):
        return np.asarray(self.dfn(np.asarray(t, dtype=float)), dtype=float)

    def deriv2(self, t):
        return np.asarray(self.d2fn(np.asarray(t, dtype=float)), dtype=float)

    @property
    def regularity(self) -> Regularity:
        return self.tag

    def scaled(self, s):
        tag = Regularity(self.tag.kind, self.tag.alpha, self.tag.M / s if self.tag.kind != "C1a" else self.tag.M * s ** (-self.tag.alpha))
        return ParametricSegment(lambda t: s * self.fn(t), lambda t: s * self.dfn(t), lambda t: s * self.d2fn(t), tag)

    def to_dict(self) -> dict:
        raise ConstructionError("parametric segments with user callables cannot be serialized")


SEGMENT_TYPES = {cls.TYPE: cls for cls in (LineSegment, ArcSegment, EllipseArc, PolarBlob, GraphArm)}


def segment_from_dict(data: dict) -> CurveSegment:
    kind = data.get("type")
    if kind not in SEGMENT_TYPES:
        raise ConstructionError(f"unknown segment type: {kind!r}")
    try:
        return SEGMENT_TYPES[kind].from_dict(data)
    except TypeError as e:
        raise ConstructionError(f"bad {kind} segment descriptor: {e}")


def curvature_values(curve: CurveSegment, t) -> np.ndarray:
    """Signed curvature cross(c', c'')/|c'|^3 without the regularity check."""
    c1, c2 = curve.deriv(t), curve.deriv2(t)
    return _cross(c1, c2) / np.linalg.norm(c1, axis=-1) ** 3


def curvature_at(curve: CurveSegment, t) -> float | np.ndarray:
    """Signed curvature, positive where the boundary bends toward the interior
    (the domain lies to the left of a counterclockwise traversal).

    Raises:
        GeometryError: For C^{1,alpha} segments, whose curvature is undefined.
    """
    if not curve.regularity.has_curvature:
        raise GeometryError(f"curvature undefined on a C^{{1,alpha}} segment ({curve.TYPE})")
    k = curvature_values(curve, t)
    return float(k) if np.ndim(k) == 0 else k


# ============ Projection ============

@dataclass(frozen=True)
class DistanceResult:
    """Distance of one point to a curve or to a domain boundary.

    d1/d2 are the distances to sigma1/sigma2 of the nearest tagged corner
    (None when the domain has no corners).
    """
    d: float
    foot: Point2
    segment: int
    t: float
    d1: float | None = None
    d2: float | None = None
    corner: int | None = None


@dataclass(frozen=True)
class DistanceField:
    """Vectorized DistanceResult over an (n, 2) array of points."""
    d: np.ndarray
    foot: np.ndarray
    segment: np.ndarray
    t: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    corner: np.ndarray

    def result(self, i: int) -> DistanceResult:
        has_corner = self.corner[i] >= 0
        return DistanceResult(
            d=float(self.d[i]), foot=Point2.from_array(self.foot[i]),
            segment=int(self.segment[i]), t=float(self.t[i]),
            d1=float(self.d1[i]) if has_corner else None,
            d2=float(self.d2[i]) if has_corner else None,
            corner=int(self.corner[i]) if has_corner else None,
        )


def _newton_feet(curve: CurveSegment, pts: np.ndarray, t: np.ndarray,
                 lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Projected Newton on g(t) = (c(t) - p) . c'(t) inside [lo, hi]."""
    t = t.copy()
    active = np.ones(len(t), dtype=bool)
    for _ in range(NEWTON_MAX_ITERS):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        ta = t[idx]
        c, c1, c2 = curve.point(ta), curve.deriv(ta), curve.deriv2(ta)
        diff = c - pts[idx]
        g = np.sum(diff * c1, axis=-1)
        speed2 = np.sum(c1 * c1, axis=-1)
        gp = speed2 + np.sum(diff * c2, axis=-1)
        # Gauss-Newton where the curvature term makes g' small or negative
        gp = np.where(gp > 0.1 * speed2, gp, np.maximum(speed2, 1e-300))
        tn = np.clip(ta - g / gp, lo[idx], hi[idx])
        t[idx] = tn
        active[idx[np.abs(tn - ta) < NEWTON_STEP_TOL]] = False

    for i in np.flatnonzero(active):
        p = pts[i]
        res = minimize_scalar(lambda s: float(np.sum((curve.point(s) - p) ** 2)),
                              bounds=(lo[i], hi[i]), method="bounded", options={"xatol": 1e-15})
        t[i] = res.x
    return t


def _project_many(curve: CurveSegment, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Global nearest point on curve for each row of pts: (d, foot, t)."""
    ts, samp = curve.samples
    n = len(ts)
    _, idx = curve.tree.query(pts)
    idx = np.asarray(idx)
    lo = ts[np.maximum(idx - 1, 0)]
    hi = ts[np.minimum(idx + 1, n - 1)]
    t = _newton_feet(curve, pts, ts[idx], lo, hi)

    candidates = [t, lo, hi]
    if curve.closed:
        # the foot may sit just across the seam at t = 0 == 1
        wrap = (idx <= 1) | (idx >= n - 2)
        if wrap.any():
            t_alt = t.copy()
            w = np.flatnonzero(wrap)
            seed = np.where(idx[w] <= 1, ts[-1], ts[0])
            lo_alt = np.where(idx[w] <= 1, ts[-2], ts[0])
            hi_alt = np.where(idx[w] <= 1, ts[-1], ts[1])
            t_alt[w] = _newton_feet(curve, pts[w], seed, lo_alt, hi_alt)
            candidates.append(t_alt)

    best_t = t
    best_d = np.linalg.norm(pts - curve.point(t), axis=-1)
    for cand in candidates[1:]:
        dc = np.linalg.norm(pts - curve.point(cand), axis=-1)
        better = dc < best_d
        best_t = np.where(better, cand, best_t)
        best_d = np.where(better, dc, best_d)
    return best_d, curve.point(best_t), best_t


def project_to_curve(curve: CurveSegment, p) -> DistanceResult:
    """Nearest point of curve to p (global over t in [0, 1])."""
    pts = as_points(p).reshape(1, 2)
    if not np.all(np.isfinite(pts)):
        raise GeometryError("query point must be finite")
    d, foot, t = _project_many(curve, pts)
    return DistanceResult(d=float(d[0]), foot=Point2.from_array(foot[0]), segment=0, t=float(t[0]))


# ============ Domains ============

@dataclass(frozen=True)
class CornerSpec:
    """Tagged corner: sigma1 = segments[0] leaves the vertex, sigma2 =
    segments[1] arrives at it; opening angle mu*pi."""
    vertex: Point2
    mu: float
    segments: tuple[int, int]

    def __post_init__(self):
        if not 0 < self.mu < 2:
            raise ConstructionError(f"corner mu must lie in (0, 2), got {self.mu}")

    def to_dict(self) -> dict:
        return {"vertex": [self.vertex.x, self.vertex.y], "mu": self.mu, "segments": list(self.segments)}

    @classmethod
    def from_dict(cls, data: dict) -> "CornerSpec":
        return cls(Point2(*data["vertex"]), float(data["mu"]), tuple(int(i) for i in data["segments"]))


@dataclass(frozen=True, eq=False)
class DomainSpec:
    """Bounded simply connected domain: one closed CCW loop of segments."""
    segments: tuple[CurveSegment, ...]
    corners: tuple[CornerSpec, ...] = ()
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.segments:
            raise ConstructionError("domain needs at least one segment")
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "corners", tuple(self.corners))
        self._validate()

    def _validate(self):
        n = len(self.segments)
        diam = self.diameter
        for i, seg in enumerate(self.segments):
            gap = float(np.linalg.norm(seg.end - self.segments[(i + 1) % n].start))
            if gap >= CLOSURE_TOL * diam:
                raise ConstructionError(f"loop not closed after segment {i} (gap {gap:.3g})")
        if self.signed_area <= 0:
            raise ConstructionError("boundary loop must be counterclockwise")
        for k, corner in enumerate(self.corners):
            self._validate_corner(k, corner, diam)
        if _polyline_self_intersects(self._polyline(INTERSECTION_POINTS)):
            raise ConstructionError("boundary loop self-intersects")

    def _validate_corner(self, k: int, corner: CornerSpec, diam: float):
        n = len(self.segments)
        i1, i2 = corner.segments
        if not (0 <= i1 < n and 0 <= i2 < n) or (i2 + 1) % n != i1:
            raise ConstructionError(f"corner {k}: sigma2 must immediately precede sigma1 in the loop")
        v = corner.vertex.as_array()
        s1, s2 = self.segments[i1], self.segments[i2]
        if np.linalg.norm(s1.start - v) >= CLOSURE_TOL * diam or np.linalg.norm(s2.end - v) >= CLOSURE_TOL * diam:
            raise ConstructionError(f"corner {k}: vertex is not the shared endpoint of its segments")
        angle = _opening_angle(s1.deriv(0.0), -s2.deriv(1.0))
        if abs(angle - corner.mu * math.pi) > ANGLE_TOL:
            raise ConstructionError(
                f"corner {k}: tangent rays open at {angle / math.pi:.12f}*pi, tagged mu = {corner.mu}")

    # ----- sampled geometry -----

    def _polyline(self, total: int) -> np.ndarray:
        lengths = np.array([s.length for s in self.segments])
        counts = np.maximum(16, np.round(total * lengths / lengths.sum())).astype(int)
        parts = [seg.point(np.linspace(0.0, 1.0, m, endpoint=False)) for seg, m in zip(self.segments, counts)]
        return np.concatenate(parts)

    @cached_property
    def polyline(self) -> np.ndarray:
        return self._polyline(POLYLINE_POINTS)

    @cached_property
    def path(self) -> MplPath:
        return MplPath(np.vstack([self.polyline, self.polyline[:1]]), closed=True)

    @cached_property
    def _polyline_tree(self) -> cKDTree:
        return cKDTree(self.polyline)

    @cached_property
    def _max_chord(self) -> float:
        q = self.polyline
        return float(np.max(np.linalg.norm(np.roll(q, -1, axis=0) - q, axis=1)))

    @cached_property
    def diameter(self) -> float:
        pts = np.concatenate([s.samples[1] for s in self.segments])
        hull = pts[ConvexHull(pts).vertices]
        return float(pdist(hull).max())

    @cached_property
    def bbox(self) -> tuple[float, float, float, float]:
        pts = np.concatenate([s.samples[1] for s in self.segments])
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    @cached_property
    def signed_area(self) -> float:
        q = self.polyline
        return float(0.5 * np.sum(_cross(q, np.roll(q, -1, axis=0))))

    @cached_property
    def centroid(self) -> Point2:
        q = self.polyline
        q2 = np.roll(q, -1, axis=0)
        w = _cross(q, q2)
        c = np.sum((q + q2) * w[:, None], axis=0) / (6 * self.signed_area)
        return Point2.from_array(c)

    @property
    def segment_lengths(self) -> list[float]:
        return [s.length for s in self.segments]

    # ----- queries -----

    def contains(self, p) -> bool | np.ndarray:
        """Strict interior test; points on the boundary are outside."""
        pts = as_points(p)
        single = pts.ndim == 1
        pts = pts.reshape(-1, 2)
        inside = self.path.contains_points(pts)
        near_poly, _ = self._polyline_tree.query(pts)
        near = np.flatnonzero(near_poly < 2 * self._max_chord)
        if near.size:
            f = distance_field(self, pts[near], with_corners=False)
            on_boundary = f.d <= 1e-14 * self.diameter
            seg_ids = f.segment
            exact = ~on_boundary & (f.t > 0) & (f.t < 1)
            for j in np.flatnonzero(exact):
                tangent = self.segments[seg_ids[j]].deriv(f.t[j])
                normal = np.array([-tangent[1], tangent[0]])
                inside[near[j]] = float(np.dot(pts[near[j]] - f.foot[j], normal)) > 0
            inside[near[on_boundary]] = False
        return bool(inside[0]) if single else inside

    def scaled(self, s: float) -> "DomainSpec":
        if not s > 0:
            raise ConstructionError(f"scale factor must be positive, got {s}")
        corners = tuple(CornerSpec(c.vertex * s, c.mu, c.segments) for c in self.corners)
        params = dict(self.params, scale=self.params.get("scale", 1.0) * s)
        return DomainSpec(tuple(seg.scaled(s) for seg in self.segments), corners, self.kind, params)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "params": self.params,
            "segments": [s.to_dict() for s in self.segments],
            "corners": [c.to_dict() for c in self.corners],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DomainSpec":
        try:
            segments = tuple(segment_from_dict(s) for s in data["segments"])
            corners = tuple(CornerSpec.from_dict(c) for c in data.get("corners", []))
        except (KeyError, TypeError, ValueError) as e:
            raise ConstructionError(f"bad domain document: {e}")
        return cls(segments, corners, data.get("kind", "custom"), dict(data.get("params", {})))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DomainSpec":
        return cls.from_dict(json.loads(text))


def _opening_angle(t1: np.ndarray, t2: np.ndarray) -> float:
    """Counterclockwise angle in [0, 2pi) from direction t1 to t2."""
    return math.atan2(float(_cross(t1, t2)), float(np.dot(t1, t2))) % (2 * math.pi)


def _polyline_self_intersects(q: np.ndarray, block: int = 256) -> bool:
    """Proper crossings between non-adjacent edges of the closed polyline q."""
    n = len(q)
    a, b = q, np.roll(q, -1, axis=0)
    jj = np.arange(n)[None, :]
    for start in range(0, n, block):
        i = np.arange(start, min(start + block, n))
        A, B = a[i][:, None], b[i][:, None]
        C, D = a[None], b[None]
        o1, o2 = _cross(B - A, C - A), _cross(B - A, D - A)
        o3, o4 = _cross(D - C, A - C), _cross(D - C, B - C)
        hit = (o1 * o2 < 0) & (o3 * o4 < 0)
        gap = np.abs(i[:, None] - jj)
        hit &= (gap > 1) & (gap < n - 1)
        if hit.any():
            return True
    return False


def distance_field(domain: DomainSpec, pts, with_corners: bool = True) -> DistanceField:
    """Distances of many points to the boundary, with corner distances d1/d2.

    Ties between segments resolve to the lowest segment id.
    """
    pts = as_points(pts).reshape(-1, 2)
    m = len(pts)
    ds, feet, tts = [], [], []
    for seg in domain.segments:
        d, foot, t = _project_many(seg, pts)
        ds.append(d)
        feet.append(foot)
        tts.append(t)
    ds = np.array(ds)
    seg_id = np.argmin(ds, axis=0)
    cols = np.arange(m)
    foot = np.array(feet)[seg_id, cols]
    t = np.array(tts)[seg_id, cols]
    d1 = np.full(m, np.nan)
    d2 = np.full(m, np.nan)
    corner = np.full(m, -1)
    if with_corners and domain.corners:
        verts = np.array([c.vertex.as_array() for c in domain.corners])
        corner = np.argmin(np.linalg.norm(pts[:, None, :] - verts[None], axis=-1), axis=1)
        sig1 = np.array([c.segments[0] for c in domain.corners])[corner]
        sig2 = np.array([c.segments[1] for c in domain.corners])[corner]
        d1 = ds[sig1, cols]
        d2 = ds[sig2, cols]
    return DistanceField(ds[seg_id, cols], foot, seg_id, t, d1, d2, corner)


def distance_to_boundary(domain: DomainSpec, p) -> DistanceResult:
    """Distance from an interior point to the boundary.

    Raises:
        GeometryError: If p is outside the domain or on its boundary.
    """
    pts = as_points(p).reshape(1, 2)
    if not np.all(np.isfinite(pts)) or not domain.contains(pts)[0]:
        raise GeometryError(f"query point {pts[0].tolist()} is not inside the domain")
    return distance_field(domain, pts).result(0)


def interior_distances(domain: DomainSpec, pts) -> np.ndarray:
    """d for many points, NaN outside the domain."""
    pts = as_points(pts).reshape(-1, 2)
    out = np.full(len(pts), np.nan)
    inside = domain.contains(pts)
    if inside.any():
        out[inside] = distance_field(domain, pts[inside], with_corners=False).d
    return out


# ============ Corner frames ============

@dataclass(frozen=True)
class RigidMotion:
    """z -> R(-angle)(z - origin): vertex to 0, sigma1 tangent to +x."""
    origin: Point2
    angle: float

    def apply(self, p) -> np.ndarray:
        return _rotate(as_points(p) - self.origin.as_array(), -self.angle)

    def inverse(self, q) -> np.ndarray:
        return _rotate(as_points(q), self.angle) + self.origin.as_array()

    def polar(self, p) -> tuple[np.ndarray, np.ndarray]:
        """(r, theta) in the frame; theta in [0, 2pi) counterclockwise from sigma1."""
        z = self.apply(p)
        r = np.hypot(z[..., 0], z[..., 1])
        theta = np.mod(np.arctan2(z[..., 1], z[..., 0]), 2 * math.pi)
        return r, theta

    @classmethod
    def identity(cls) -> "RigidMotion":
        return cls(Point2(0.0, 0.0), 0.0)


def corner_frame(domain: DomainSpec, corner: CornerSpec) -> RigidMotion:
    if corner not in domain.corners:
        raise GeometryError("corner is not tagged in this domain")
    tangent = domain.segments[corner.segments[0]].deriv(0.0)
    return RigidMotion(corner.vertex, math.atan2(float(tangent[1]), float(tangent[0])))


def chart_radius(domain: DomainSpec, corner: CornerSpec) -> float:
    """Corner chart radius: chart factor times the shorter incident segment."""
    i1, i2 = corner.segments
    return get_settings().chart_factor * min(domain.segments[i1].length, domain.segments[i2].length)


# ============ Region classification ============

class RegionClass(Enum):
    OMEGA1 = "Omega1"
    GAMMA1 = "Gamma1"
    OMEGA2 = "Omega2"
    GAMMA2 = "Gamma2"
    OMEGA3 = "Omega3"


def region_c0_bound(mu: float, strict_mu_bound: bool = True) -> float:
    return 0.5 * (mu if strict_mu_bound else 1.0) * math.atan(0.25)


@dataclass(frozen=True)
class RegionConfig:
    """Constants splitting a corner chart into Omega1/Omega2/Omega3.

    strict_mu_bound selects c0 < (1/2) mu arctan(1/4); when False the
    weaker c0 < (1/2) arctan(1/4) is enforced instead.
    """
    c0: float
    c1: float
    strict_mu_bound: bool = True

    def __post_init__(self):
        if not (self.c0 > 0 and self.c1 > 0):
            raise ConstructionError(f"region constants must be positive, got c0={self.c0}, c1={self.c1}")

    @classmethod
    def default(cls, domain: DomainSpec, corner: CornerSpec) -> "RegionConfig":
        return cls(0.4 * region_c0_bound(corner.mu), 10.0 / domain.diameter)

    def check(self, mu: float):
        bound = region_c0_bound(mu, self.strict_mu_bound)
        if self.c0 >= bound:
            raise ConstructionError(f"c0 = {self.c0} must be below {bound:.6g} for mu = {mu}")


def classify_points(domain: DomainSpec, corner: CornerSpec, pts, cfg: RegionConfig) -> list[RegionClass]:
    """Vectorized classify_region; every point falls in exactly one class."""
    cfg.check(corner.mu)
    pts = as_points(pts).reshape(-1, 2)
    if not np.all(domain.contains(pts)):
        raise GeometryError("classification points must lie inside the domain")
    r, _ = corner_frame(domain, corner).polar(pts)
    limit = chart_radius(domain, corner)
    if np.any(r > limit):
        raise GeometryError(f"point beyond the corner chart radius {limit:.6g}")
    d1 = _project_many(domain.segments[corner.segments[0]], pts)[0]
    d2 = _project_many(domain.segments[corner.segments[1]], pts)[0]
    dmin = np.minimum(d1, d2)
    tol = 1e-12 * np.maximum(1.0, r)
    g1 = cfg.c0 * r
    g2 = cfg.c1 * r ** 2
    out = []
    for dm, a, b, eps in zip(dmin, g1, g2, tol):
        if dm > a + eps:
            out.append(RegionClass.OMEGA1)
        elif abs(dm - a) <= eps:
            out.append(RegionClass.GAMMA1)
        elif dm > b + eps:
            out.append(RegionClass.OMEGA2)
        elif abs(dm - b) <= eps:
            out.append(RegionClass.GAMMA2)
        else:
            out.append(RegionClass.OMEGA3)
    return out


def classify_region(domain: DomainSpec, corner: CornerSpec, p, cfg: RegionConfig) -> RegionClass:
    """Omega1: d > c0|z|; Omega2: c1|z|^2 < d < c0|z|; Omega3: d < c1|z|^2,
    with d = min(d1, d2). Equalities within 1e-12 give Gamma1/Gamma2."""
    return classify_points(domain, corner, as_points(p).reshape(1, 2), cfg)[0]


# ============ Domain builders ============

def _point_param(value, name: str) -> Point2:
    if isinstance(value, Point2):
        return value
    try:
        x, y = value
        return Point2(float(x), float(y))
    except (TypeError, ValueError):
        raise ConstructionError(f"{name} must be a pair of numbers, got {value!r}")


def _positive(value, name: str) -> float:
    value = float(value)
    if not value > 0:
        raise ConstructionError(f"{name} must be positive, got {value}")
    return value


def _mu_param(mu) -> float:
    mu = float(mu)
    if not 0 < mu < 2:
        raise ConstructionError(f"mu must lie in (0, 2), got {mu}")
    return mu


def _corner_domain(mu: float, R: float, amplitude: float, power: float,
                   vertex: Point2, rotation: float, kind: str, params: dict) -> DomainSpec:
    """Pac-man domain: two graph arms from the vertex closed by an arc
    centred at the vertex. Both arms bulge toward the interior."""
    beta = math.atan2(amplitude * R ** power, R)
    if mu * math.pi - 2 * beta <= 0:
        raise ConstructionError(f"arms of amplitude {amplitude} overlap at mu = {mu}")
    rho = math.hypot(R, amplitude * R ** power)
    sigma1 = GraphArm(vertex, rotation, amplitude, power, R, side=1.0)
    arc = ArcSegment(vertex, rho, rotation + beta, rotation + mu * math.pi - beta)
    sigma2 = GraphArm(vertex, rotation + mu * math.pi, amplitude, power, R, side=-1.0, reverse=True)
    corner = CornerSpec(vertex, mu, (0, 2))
    return DomainSpec((sigma1, arc, sigma2), (corner,), kind, params)


def _corner_common(params: dict) -> tuple[Point2, float]:
    vertex = _point_param(params.pop("vertex", (0.0, 0.0)), "vertex")
    rotation = float(params.pop("rotation", 0.0))
    return vertex, rotation


def _build_disk(p: dict) -> DomainSpec:
    r = _positive(p.pop("r", 1.0), "r")
    x0 = _point_param(p.pop("x0", (0.0, 0.0)), "x0")
    return (ArcSegment(x0, r, 0.0, 2 * math.pi),), ()


def _build_ellipse(p: dict):
    a = _positive(p.pop("a", 2.0), "a")
    b = _positive(p.pop("b", 1.0), "b")
    x0 = _point_param(p.pop("x0", (0.0, 0.0)), "x0")
    return (EllipseArc(x0, a, b),), ()


def _build_smooth_blob(p: dict):
    r = _positive(p.pop("r", 1.0), "r")
    eps = float(p.pop("eps", 0.05))
    k = int(p.pop("k", 3))
    x0 = _point_param(p.pop("x0", (0.0, 0.0)), "x0")
    return (PolarBlob(x0, r, eps, k),), ()


def _build_rectangle(p: dict):
    w = _positive(p.pop("width", 1.0), "width")
    h = _positive(p.pop("height", 1.0), "height")
    x0 = _point_param(p.pop("x0", (0.0, 0.0)), "x0")
    v = [x0, x0 + Point2(w, 0.0), x0 + Point2(w, h), x0 + Point2(0.0, h)]
    segments = tuple(LineSegment(v[i], v[(i + 1) % 4]) for i in range(4))
    corners = tuple(CornerSpec(v[i], 0.5, (i, (i - 1) % 4)) for i in range(4))
    return segments, corners


def build_domain(kind: str, **params) -> DomainSpec | tuple[DomainSpec, DomainSpec]:
    """Construct a named domain family.

    Kinds: disk(r, x0), ellipse(a, b, x0), smooth_blob(r, eps, k, x0),
    rectangle(width, height, x0), sector(mu, R), curved_corner(mu,
    amplitude, R), c1alpha_corner(alpha, M, R, mu), localized_pair(mu, R,
    amplitude). Corner kinds also take vertex and rotation. localized_pair
    returns (inner, outer): pac-men of radii R and 2R whose arms coincide,
    so the two domains agree inside B_R(vertex).

    Raises:
        ConstructionError: Unknown kind, unknown or invalid parameters.
    """
    original = dict(params)
    p = dict(params)
    simple = {"disk": _build_disk, "ellipse": _build_ellipse,
              "smooth_blob": _build_smooth_blob, "rectangle": _build_rectangle}
    if kind in simple:
        segments, corners = simple[kind](p)
        _reject_unknown(kind, p)
        return DomainSpec(segments, corners, kind, original)

    if kind == "sector":
        vertex, rotation = _corner_common(p)
        mu = _mu_param(p.pop("mu", 0.5))
        R = _positive(p.pop("R", 1.0), "R")
        _reject_unknown(kind, p)
        return _corner_domain(mu, R, 0.0, 2.0, vertex, rotation, kind, original)

    if kind == "curved_corner":
        vertex, rotation = _corner_common(p)
        mu = _mu_param(p.pop("mu", 0.5))
        amplitude = float(p.pop("amplitude", 0.1))
        R = _positive(p.pop("R", 1.0), "R")
        _reject_unknown(kind, p)
        return _corner_domain(mu, R, amplitude, 2.0, vertex, rotation, kind, original)

    if kind == "c1alpha_corner":
        vertex, rotation = _corner_common(p)
        alpha = float(p.pop("alpha", 0.5))
        if not 0 < alpha < 1:
            raise ConstructionError(f"alpha must lie in (0, 1), got {alpha}")
        M = _positive(p.pop("M", 0.5), "M")
        R = _positive(p.pop("R", 1.0), "R")
        mu = _mu_param(p.pop("mu", 1.0))
        _reject_unknown(kind, p)
        return _corner_domain(mu, R, M, 1.0 + alpha, vertex, rotation, kind, original)

    if kind == "localized_pair":
        vertex, rotation = _corner_common(p)
        mu = _mu_param(p.pop("mu", 0.5))
        R = _positive(p.pop("R", 1.0), "R")
        amplitude = float(p.pop("amplitude", 0.0))
        _reject_unknown(kind, p)
        inner = _corner_domain(mu, R, amplitude, 2.0, vertex, rotation, kind, dict(original, role="inner"))
        outer = _corner_domain(mu, 2 * R, amplitude, 2.0, vertex, rotation, kind, dict(original, role="outer"))
        return inner, outer

    raise ConstructionError(f"unknown domain kind: {kind!r}")


def _reject_unknown(kind: str, leftover: dict):
    if leftover:
        raise ConstructionError(f"unknown parameters for {kind}: {sorted(leftover)}")


DOMAIN_KINDS = ("disk", "ellipse", "smooth_blob", "rectangle", "sector",
                "curved_corner", "c1alpha_corner", "localized_pair")


def coincidence_radius(inner: DomainSpec, outer: DomainSpec) -> float:
    """Radius about the shared vertex inside which a localized pair agrees."""
    if inner.kind != "localized_pair" or outer.kind != "localized_pair":
        raise GeometryError("coincidence radius is defined for localized pairs only")
    return float(inner.params.get("R", 1.0)) * inner.params.get("scale", 1.0)


# ============ Sampling and graph bounds ============

def sample_points(domain: DomainSpec, rng: np.random.Generator, count: int,
                  d_min: float = 0.0, d_max: float = math.inf, max_rounds: int = 200) -> np.ndarray:
    """Uniform rejection samples of the domain with d in [d_min, d_max]."""
    x0, y0, x1, y1 = domain.bbox
    found = []
    total = 0
    for _ in range(max_rounds):
        cand = np.column_stack([rng.uniform(x0, x1, 4 * count), rng.uniform(y0, y1, 4 * count)])
        d = interior_distances(domain, cand)
        keep = cand[np.isfinite(d) & (d >= d_min) & (d <= d_max)]
        found.append(keep)
        total += len(keep)
        if total >= count:
            return np.concatenate(found)[:count]
    raise GeometryError(f"could not draw {count} points with d in [{d_min}, {d_max}]")


def fit_graph_bound(curve: CurveSegment, alpha: float, at_end: int = 0, samples: int = 2049) -> float:
    """Smallest M with |y| <= M x^{1+alpha} for the curve written as a graph
    over the tangent line at its endpoint t = at_end."""
    ts = np.linspace(0.0, 1.0, samples)
    base = curve.point(float(at_end))
    tangent = curve.deriv(float(at_end))
    if np.linalg.norm(tangent) <= 1e-12 * curve.length:
        # zero speed at the endpoint: use the limiting direction
        tangent = curve.deriv(abs(float(at_end) - 1e-9))
    tangent = tangent * (1.0 if at_end == 0 else -1.0)
    tangent = tangent / np.linalg.norm(tangent)
    normal = np.array([-tangent[1], tangent[0]])
    rel = curve.point(ts) - base
    x = rel @ tangent
    y = rel @ normal
    ok = x > 1e-9 * curve.length
    if not ok.any():
        raise GeometryError("curve does not leave its endpoint along the tangent direction")
    return float(np.max(np.abs(y[ok]) / x[ok] ** (1 + alpha)))


def graph_foot_violations(arm: GraphArm, pts, rtol: float = 1e-9) -> dict:
    """Check the foot property of a graph arm on interior points z = (x, y)
    (arm frame) with |y| <= x/4: the foot abscissa x' satisfies x' <= 2|z|
    and |x - x'| <= d |phi'(x')|. Returns counts of checked points and
    violations of each inequality."""
    local = arm.to_local(pts).reshape(-1, 2)
    x, y = local[:, 0], local[:, 1]
    use = (x > 0) & (np.abs(y) <= x / 4)
    glob = as_points(pts).reshape(-1, 2)[use]
    d, foot, _ = _project_many(arm, glob)
    foot_local = arm.to_local(foot)
    xp = foot_local[:, 0]
    xu = x[use]
    z = np.hypot(xu, y[use])
    slope = np.abs(arm.phi_prime(np.maximum(xp, 0.0)))
    bad_radius = xp > 2 * z * (1 + rtol)
    bad_shift = np.abs(xu - xp) > d * slope * (1 + rtol) + 1e-14
    return {"checked": int(use.sum()), "radius_violations": int(bad_radius.sum()),
            "shift_violations": int(bad_shift.sum())}


def project_points(curve: CurveSegment, pts) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized project_to_curve: (d, foot, t) for each row of pts."""
    return _project_many(curve, as_points(pts).reshape(-1, 2))
