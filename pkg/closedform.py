"""Exact solutions and model expansions of Liouville's equation Delta u = e^{2u}.

Models are callables on point arrays of shape (..., 2). A strict model
raises DomainError when any point is outside its domain; a lenient one
returns NaN there.
"""

import math
from abc import ABC, abstractmethod
from typing import Callable

import numpy as np

from geometry import (CornerSpec, DomainSpec, RigidMotion, as_points, corner_frame,
                      curvature_values, distance_field, interior_distances, project_points)
from lab_utils import DomainError, arcsin_clamps

SQRT2 = math.sqrt(2.0)
EQUIDISTANT_RTOL = 1e-12


class ModelExpansion(ABC):
    """Evaluatable reference or asymptotic solution."""

    name = "model"

    def __init__(self, strict: bool = True):
        self.strict = strict

    @abstractmethod
    def _evaluate(self, pts: np.ndarray) -> np.ndarray:
        """Values on an (n, 2) array, NaN outside the model's domain."""

    def __call__(self, p):
        pts = as_points(p)
        flat = pts.reshape(-1, 2)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            vals = np.asarray(self._evaluate(flat), dtype=float)
        bad = ~np.isfinite(vals)
        if self.strict and bad.any():
            where = flat[np.flatnonzero(bad)[0]].tolist()
            raise DomainError(f"{self.name} evaluated outside its domain at {where}")
        vals = vals.reshape(pts.shape[:-1])
        return float(vals) if vals.ndim == 0 else vals

    def value(self, p) -> float:
        return float(self(as_points(p).reshape(2)))

    def describe(self) -> dict:
        return {"variant": self.name}


class FunctionModel(ModelExpansion):
    """Wrap a vectorized callable as a model."""

    def __init__(self, fn: Callable, name: str = "function", strict: bool = True):
        super().__init__(strict)
        self.fn = fn
        self.name = name

    def _evaluate(self, pts):
        return self.fn(pts)


# ============ Balls, half-plane, cone ============

class BallSolution(ModelExpansion):
    """u_{r,x0}(x) = log(2r / (r^2 - |x - x0|^2)) on B_r(x0)."""

    name = "ball"

    def __init__(self, r: float, x0=(0.0, 0.0), strict: bool = True):
        super().__init__(strict)
        if not r > 0:
            raise DomainError(f"ball radius must be positive, got {r}")
        self.r = float(r)
        self.x0 = as_points(x0).astype(float)

    def _evaluate(self, pts):
        rho = np.linalg.norm(pts - self.x0, axis=-1)
        gap = (self.r - rho) * (self.r + rho)
        return np.where(rho < self.r, np.log(2 * self.r / gap), np.nan)

    def describe(self):
        return {"variant": self.name, "r": self.r, "x0": self.x0.tolist()}


class ExteriorBallSolution(ModelExpansion):
    """v_{r,x0}(x) = log(2r / (|x - x0|^2 - r^2)) outside the closed ball."""

    name = "exterior_ball"

    def __init__(self, r: float, x0=(0.0, 0.0), strict: bool = True):
        super().__init__(strict)
        if not r > 0:
            raise DomainError(f"ball radius must be positive, got {r}")
        self.r = float(r)
        self.x0 = as_points(x0).astype(float)

    def _evaluate(self, pts):
        rho = np.linalg.norm(pts - self.x0, axis=-1)
        gap = (rho - self.r) * (rho + self.r)
        return np.where(rho > self.r, np.log(2 * self.r / gap), np.nan)

    def describe(self):
        return {"variant": self.name, "r": self.r, "x0": self.x0.tolist()}


class HalfPlaneSolution(ModelExpansion):
    """-log y in the given frame."""

    name = "half_plane"

    def __init__(self, frame: RigidMotion | None = None, strict: bool = True):
        super().__init__(strict)
        self.frame = frame or RigidMotion.identity()

    def _evaluate(self, pts):
        y = self.frame.apply(pts)[..., 1]
        return np.where(y > 0, -np.log(y), np.nan)


def _check_mu(mu: float) -> float:
    mu = float(mu)
    if not 0 < mu < 2:
        raise DomainError(f"mu must lie in (0, 2), got {mu}")
    return mu


class ConeSolution(ModelExpansion):
    """v_mu = -log(mu r sin(theta/mu)) on the cone 0 < theta < mu*pi."""

    name = "cone"

    def __init__(self, mu: float, frame: RigidMotion | None = None, strict: bool = True):
        super().__init__(strict)
        self.mu = _check_mu(mu)
        self.frame = frame or RigidMotion.identity()

    def _polar(self, pts):
        r, theta = self.frame.polar(pts)
        inside = (r > 0) & (theta > 0) & (theta < self.mu * math.pi)
        return r, theta, inside

    def _evaluate(self, pts):
        r, theta, inside = self._polar(pts)
        v = -np.log(self.mu * r * np.sin(theta / self.mu))
        return np.where(inside, v, np.nan)

    def describe(self):
        return {"variant": self.name, "mu": self.mu}


class ConeBarrier(ConeSolution):
    """Cone barriers v_mu + log(1 + A r^{sqrt2/mu}) (super) and
    v_mu - log(1 + A r^{1/mu}) (sub)."""

    def __init__(self, mu: float, A: float, kind: str, frame: RigidMotion | None = None, strict: bool = True):
        super().__init__(mu, frame, strict)
        if A < 0:
            raise DomainError(f"barrier constant must be >= 0, got {A}")
        if kind not in ("super", "sub"):
            raise ValueError(f"barrier kind must be 'super' or 'sub', got {kind!r}")
        self.A = float(A)
        self.kind = kind
        self.name = f"cone_{kind}solution"

    @property
    def exponent(self) -> float:
        return SQRT2 / self.mu if self.kind == "super" else 1.0 / self.mu

    def _evaluate(self, pts):
        r, _, _ = self._polar(pts)
        shift = np.log1p(self.A * r ** self.exponent)
        base = super()._evaluate(pts)
        return base + shift if self.kind == "super" else base - shift

    def describe(self):
        return {"variant": self.name, "mu": self.mu, "A": self.A}


def ball_solution(r: float, x0=(0.0, 0.0)) -> BallSolution:
    return BallSolution(r, x0)


def exterior_ball_solution(r: float, x0=(0.0, 0.0)) -> ExteriorBallSolution:
    return ExteriorBallSolution(r, x0)


def half_plane_solution(frame: RigidMotion | None = None) -> HalfPlaneSolution:
    return HalfPlaneSolution(frame)


def cone_solution(mu: float, frame: RigidMotion | None = None) -> ConeSolution:
    return ConeSolution(mu, frame)


def cone_supersolution(mu: float, A: float, frame: RigidMotion | None = None) -> ConeBarrier:
    return ConeBarrier(mu, A, "super", frame)


def cone_subsolution(mu: float, A: float, frame: RigidMotion | None = None) -> ConeBarrier:
    return ConeBarrier(mu, A, "sub", frame)


def supersolution_margin(mu: float, A: float, r, theta):
    """Closed form of e^{2u} - Delta u for the cone supersolution (>= 0)."""
    rp = A * np.asarray(r, dtype=float) ** (SQRT2 / mu)
    X = rp / (1 + rp)
    s2 = np.sin(np.asarray(theta) / mu) ** 2
    e2v = 1.0 / (mu * mu * np.asarray(r) ** 2 * s2)
    return e2v * ((1 - X) ** -2 - 1 - 2 * X * (1 - X) * s2)


def subsolution_margin(mu: float, A: float, r, theta):
    """Closed form of Delta u - e^{2u} for the cone subsolution (>= 0)."""
    rp = A * np.asarray(r, dtype=float) ** (1.0 / mu)
    Y = rp / (1 + rp)
    s2 = np.sin(np.asarray(theta) / mu) ** 2
    e2v = 1.0 / (mu * mu * np.asarray(r) ** 2 * s2)
    return e2v * (2 * Y - Y * Y - Y * (1 - Y) * s2)


# ============ Corner model ============

def corner_values(mu: float, r, d1, d2, theta) -> np.ndarray:
    """f_mu from polar radius, arm distances and frame angle.

    mu <= 1 uses d = min(d1, d2). For mu in (1, 2) the equidistant set
    (|d1 - d2| <= 1e-12 |z|, both feet at the vertex) uses theta itself.
    arcsin arguments above 1 are clamped and tallied in arcsin_clamps.
    """
    r = np.asarray(r, dtype=float)
    d = np.minimum(d1, d2)
    ratio = d / r
    over = ratio > 1
    arcsin_clamps.add(int(np.count_nonzero(over)))
    angle = np.arcsin(np.clip(ratio, 0.0, 1.0))
    if mu > 1:
        equal = np.abs(np.asarray(d1) - np.asarray(d2)) <= EQUIDISTANT_RTOL * r
        angle = np.where(equal, theta, angle)
    s = np.sin(angle / mu)
    return np.where((r > 0) & (s > 0), -np.log(mu * r * s), np.nan)


def cone_decomposition(mu: float, d, r) -> tuple[np.ndarray, np.ndarray]:
    """Split f_mu = -log d + correction, with correction
    -log(mu sin(phi/mu) / sin(phi)) and phi = arcsin(d/r)."""
    d = np.asarray(d, dtype=float)
    phi = np.arcsin(np.clip(d / np.asarray(r, dtype=float), 0.0, 1.0))
    return -np.log(d), -np.log(mu * np.sin(phi / mu) / np.sin(phi))


class CornerModel(ModelExpansion):
    """f_mu for one tagged corner of a domain."""

    name = "corner"

    def __init__(self, domain: DomainSpec, corner: CornerSpec, strict: bool = True):
        super().__init__(strict)
        self.domain = domain
        self.corner = corner
        self.mu = corner.mu
        self.frame = corner_frame(domain, corner)
        self.sigma1 = domain.segments[corner.segments[0]]
        self.sigma2 = domain.segments[corner.segments[1]]

    def _evaluate(self, pts):
        r, theta = self.frame.polar(pts)
        d1 = project_points(self.sigma1, pts)[0]
        d2 = project_points(self.sigma2, pts)[0]
        return corner_values(self.mu, r, d1, d2, theta)

    def __call__(self, p):
        pts = as_points(p)
        r, _ = self.frame.polar(pts)
        if np.any(r == 0):
            raise DomainError("corner model is undefined at the vertex")
        return super().__call__(p)

    def describe(self):
        return {"variant": self.name, "mu": self.mu, "vertex": [self.corner.vertex.x, self.corner.vertex.y]}


def corner_model(domain: DomainSpec, corner: CornerSpec) -> CornerModel:
    return CornerModel(domain, corner)


# ============ Smooth-boundary models ============

class SmoothModel(ModelExpansion):
    """-log d + (1/2) kappa(foot) d with kappa at the nearest boundary point."""

    name = "smooth"

    def __init__(self, domain: DomainSpec, strict: bool = True):
        super().__init__(strict)
        self.domain = domain

    def _evaluate(self, pts):
        f = distance_field(self.domain, pts, with_corners=False)
        kappa = np.empty(len(pts))
        for j in np.unique(f.segment):
            sel = f.segment == j
            seg = self.domain.segments[j]
            if not seg.regularity.has_curvature:
                raise DomainError(f"nearest boundary segment {j} is C^{{1,alpha}}; curvature undefined")
            kappa[sel] = curvature_values(seg, f.t[sel])
        d = f.d
        return np.where(d > 0, -np.log(d) + 0.5 * kappa * d, np.nan)


def smooth_model(domain: DomainSpec) -> SmoothModel:
    return SmoothModel(domain)


class SegmentModel(ModelExpansion):
    """-log d_j + (1/2) kappa_j d_j for a single boundary segment j
    (kappa_j = 0 on C^{1,alpha} segments)."""

    name = "segment"

    def __init__(self, domain: DomainSpec, index: int, strict: bool = True):
        super().__init__(strict)
        self.segment = domain.segments[index]
        self.index = index

    def _evaluate(self, pts):
        d, _, t = project_points(self.segment, pts)
        if self.segment.regularity.has_curvature:
            kappa = curvature_values(self.segment, t)
        else:
            kappa = 0.0
        return np.where(d > 0, -np.log(d) + 0.5 * kappa * d, np.nan)


class BlendedModel(ModelExpansion):
    """Soft maximum (1/2) log sum_j e^{2 M_j} of part models.

    Each part changes by O(d^2) near its own boundary piece; for two
    perpendicular half-plane parts the blend is the quarter-plane solution.
    """

    name = "blended"

    def __init__(self, parts: list[ModelExpansion], strict: bool = True):
        super().__init__(strict)
        if not parts:
            raise ValueError("blended model needs at least one part")
        self.parts = parts
        for part in parts:
            part.strict = False

    def _evaluate(self, pts):
        vals = np.array([part(pts) for part in self.parts]).reshape(len(self.parts), -1)
        top = np.max(vals, axis=0)
        return top + 0.5 * np.log(np.sum(np.exp(2 * (vals - top)), axis=0))

    def describe(self):
        return {"variant": self.name, "parts": [p.describe() for p in self.parts]}


def boundary_model(domain: DomainSpec) -> ModelExpansion:
    """Global model for matched solves: corner models for tagged corners,
    segment models for segments not incident to any corner."""
    parts: list[ModelExpansion] = [CornerModel(domain, c, strict=False) for c in domain.corners]
    incident = {i for c in domain.corners for i in c.segments}
    parts += [SegmentModel(domain, j, strict=False) for j in range(len(domain.segments)) if j not in incident]
    if len(parts) == 1:
        parts[0].strict = True
        return parts[0]
    return BlendedModel(parts)


class RescaledModel(ModelExpansion):
    """x -> base(x/eps) + log(1/eps): solutions on Omega to solutions on eps*Omega."""

    name = "rescaled"

    def __init__(self, base: Callable, eps: float, strict: bool = True):
        super().__init__(strict)
        if not eps > 0:
            raise DomainError(f"scale must be positive, got {eps}")
        self.base = base
        self.eps = float(eps)

    def _evaluate(self, pts):
        if isinstance(self.base, ModelExpansion):
            vals = self.base._evaluate(pts / self.eps)
        else:
            vals = self.base(pts / self.eps)
        return np.asarray(vals) - math.log(self.eps)


# ============ Bracket formulas ============

def tangent_ball_bracket(d, r) -> tuple[np.ndarray, np.ndarray]:
    """Exterior/interior tangent balls of radius r at distance d:
    -log d - log(1 + d/2r) <= u <= -log d - log(1 - d/2r)."""
    d = np.asarray(d, dtype=float)
    return -np.log(d) - np.log1p(d / (2 * r)), -np.log(d) - np.log1p(-d / (2 * r))


def exterior_cone_lower(d, theta):
    """Lower bound from an exterior cone of half-opening theta."""
    s = np.sin(theta)
    return -np.log(np.asarray(d, dtype=float)) - np.log((1 + 2 * s) / (2 * s * s))


def c1alpha_bracket(d, M: float, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Bracket for a boundary |phi(x)| <= M |x|^{1+alpha}, balls of radius
    d^{1-alpha}/(2M); valid while M d^alpha < 1/2."""
    d = np.asarray(d, dtype=float)
    shift = M * d ** (1 + alpha)
    k = M / d ** (1 - alpha)
    lower = -np.log(d + shift) - np.log1p(k * (d + shift))
    upper = -np.log(d - shift) - np.log1p(-k * (d - shift))
    return lower, upper


# ============ Residual oracles ============

def fd_laplacian(fn: Callable, pts, h) -> np.ndarray:
    """Fourth-order 9-point Laplacian; h is a scalar or one step per point.

    Raises:
        DomainError: If any stencil point is outside fn's domain.
    """
    pts = as_points(pts).reshape(-1, 2)
    h = np.broadcast_to(np.asarray(h, dtype=float), (len(pts),))
    offsets = np.array([[0, 0], [1, 0], [-1, 0], [2, 0], [-2, 0], [0, 1], [0, -1], [0, 2], [0, -2]], dtype=float)
    stencil = pts[None, :, :] + offsets[:, None, :] * h[None, :, None]
    vals = np.asarray(fn(stencil.reshape(-1, 2)), dtype=float).reshape(9, len(pts))
    if not np.all(np.isfinite(vals)):
        raise DomainError("finite-difference stencil leaves the function's domain")
    c, xp, xm, xpp, xmm, yp, ym, ypp, ymm = vals
    lap = (-(xpp + xmm + ypp + ymm) + 16 * (xp + xm + yp + ym) - 60 * c) / (12 * h * h)
    return lap


def liouville_residual(fn: Callable, p, h, relative: bool = False):
    """Delta fn - e^{2 fn} by fourth-order differences; relative=True divides
    by e^{2 fn}."""
    pts = as_points(p)
    single = pts.ndim == 1
    flat = pts.reshape(-1, 2)
    lap = fd_laplacian(fn, flat, h)
    e2u = np.exp(2 * np.asarray(fn(flat), dtype=float).reshape(-1))
    res = lap - e2u
    if relative:
        res = res / e2u
    return float(res[0]) if single else res


def s_residual(v: Callable, domain: DomainSpec, p, h):
    """S(v) = d Delta v - Delta d - (e^{2v} - 1)/d."""
    pts = as_points(p)
    single = pts.ndim == 1
    flat = pts.reshape(-1, 2)
    d = interior_distances(domain, flat)
    if not np.all(np.isfinite(d)):
        raise DomainError("s_residual point is outside the domain")
    lap_v = fd_laplacian(v, flat, h)
    lap_d = fd_laplacian(lambda q: interior_distances(domain, q), flat, h)
    vv = np.asarray(v(flat), dtype=float).reshape(-1)
    res = d * lap_v - lap_d - (np.exp(2 * vv) - 1) / d
    return float(res[0]) if single else res
