"""Holomorphic maps and conformal transport of Liouville solutions.

If f maps O1 conformally onto O2 and u2 solves Delta u = e^{2u} on O2, then
u1(z) = u2(f(z)) + log|f'(z)| solves it on O1.
"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from closedform import ModelExpansion
from geometry import (CornerSpec, CurveSegment, DomainSpec, Point2, Regularity, RigidMotion,
                      as_points, curvature_values, fit_graph_bound)
from lab_utils import DomainError

CUT_TOL = 1e-14


def to_complex(p) -> np.ndarray | complex:
    """Points (..., 2) or complex input to complex values."""
    if isinstance(p, Point2):
        return complex(p.x, p.y)
    arr = np.asarray(p)
    if np.iscomplexobj(arr) or arr.ndim == 0:
        return arr.astype(complex)
    arr = as_points(arr)
    return arr[..., 0] + 1j * arr[..., 1]


def to_points(w) -> np.ndarray:
    w = np.asarray(w, dtype=complex)
    return np.stack([w.real, w.imag], axis=-1)


class HolomorphicMap(ABC):
    """Holomorphic map with first and second derivatives.

    centre/radius give the declared disk of injectivity; evaluation outside
    it (or on a cut or pole) is a domain error.
    """

    name = "map"

    def __init__(self, centre: complex = 0j, radius: float = math.inf):
        self.centre = complex(centre)
        self.radius = float(radius)

    @abstractmethod
    def _f(self, z: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def _df(self, z: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def _d2f(self, z: np.ndarray) -> np.ndarray:
        ...

    def _family_valid(self, z: np.ndarray) -> np.ndarray:
        return np.ones(np.shape(z), dtype=bool)

    def valid(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        return self._family_valid(z) & (np.abs(z - self.centre) < self.radius)

    def _checked(self, z):
        z = np.asarray(to_complex(z), dtype=complex)
        if not np.all(self.valid(z)):
            raise DomainError(f"{self.name} map evaluated outside its domain of use")
        return z

    def __call__(self, z):
        return self._f(self._checked(z))

    def derivative(self, z):
        return self._df(self._checked(z))

    def second_derivative(self, z):
        return self._d2f(self._checked(z))

    def describe(self) -> dict:
        return {"map": self.name}


class PowerMap(HolomorphicMap):
    """zeta -> zeta^p with zeta = frame.apply(z); the argument of zeta is
    taken in [cut - 2pi, cut), so the branch cut is the ray at angle cut."""

    name = "power"

    def __init__(self, p: float, frame: RigidMotion | None = None, cut: float = math.pi, **disk):
        super().__init__(**disk)
        if not p > 0:
            raise DomainError(f"power must be positive, got {p}")
        self.p = float(p)
        self.frame = frame or RigidMotion.identity()
        self.cut = float(cut)
        self._rot = np.exp(-1j * self.frame.angle)
        self._origin = complex(self.frame.origin.x, self.frame.origin.y)

    def _zeta(self, z):
        return (z - self._origin) * self._rot

    def _arg(self, zeta):
        return self.cut - np.mod(self.cut - np.angle(zeta), 2 * math.pi)

    def _power(self, zeta, q):
        return np.abs(zeta) ** q * np.exp(1j * q * self._arg(zeta))

    def _family_valid(self, z):
        zeta = self._zeta(z)
        off_cut = np.mod(self.cut - np.angle(zeta), 2 * math.pi) > CUT_TOL
        if self.p >= 1:
            return off_cut
        return off_cut & (zeta != 0)

    def _f(self, z):
        return self._power(self._zeta(z), self.p)

    def _df(self, z):
        return self.p * self._power(self._zeta(z), self.p - 1) * self._rot

    def _d2f(self, z):
        return self.p * (self.p - 1) * self._power(self._zeta(z), self.p - 2) * self._rot ** 2

    def describe(self):
        return {"map": self.name, "p": self.p, "cut": self.cut}


def cone_power_map(mu: float, frame: RigidMotion | None = None) -> PowerMap:
    """z -> z^{1/mu} sending the cone V_mu onto the upper half-plane, with
    the cut opposite the cone's bisector."""
    return PowerMap(1.0 / mu, frame, cut=mu * math.pi / 2 + math.pi)


class InversionMap(HolomorphicMap):
    """z -> 1/(z - P)."""

    name = "inversion"

    def __init__(self, P, **disk):
        super().__init__(**disk)
        self.P = complex(to_complex(P))

    def _family_valid(self, z):
        return z != self.P

    def _f(self, z):
        return 1.0 / (z - self.P)

    def _df(self, z):
        return -1.0 / (z - self.P) ** 2

    def _d2f(self, z):
        return 2.0 / (z - self.P) ** 3

    def describe(self):
        return {"map": self.name, "P": [self.P.real, self.P.imag]}


class AffineMap(HolomorphicMap):
    """z -> a z + b."""

    name = "affine"

    def __init__(self, a: complex, b: complex = 0j, **disk):
        super().__init__(**disk)
        if a == 0:
            raise DomainError("affine map needs a != 0")
        self.a = complex(a)
        self.b = complex(b)

    def _f(self, z):
        return self.a * z + self.b

    def _df(self, z):
        return np.full(np.shape(z), self.a, dtype=complex)

    def _d2f(self, z):
        return np.zeros(np.shape(z), dtype=complex)


class ComposedMap(HolomorphicMap):
    """outer o inner."""

    name = "composed"

    def __init__(self, outer: HolomorphicMap, inner: HolomorphicMap, **disk):
        super().__init__(**disk)
        self.outer = outer
        self.inner = inner

    def _family_valid(self, z):
        ok = self.inner.valid(z)
        with np.errstate(all="ignore"):
            w = np.where(ok, self.inner._f(np.where(ok, z, self.inner.centre)), self.outer.centre)
            return ok & self.outer.valid(w)

    def _f(self, z):
        return self.outer._f(self.inner._f(z))

    def _df(self, z):
        return self.outer._df(self.inner._f(z)) * self.inner._df(z)

    def _d2f(self, z):
        g = self.inner._f(z)
        dg = self.inner._df(z)
        return self.outer._d2f(g) * dg ** 2 + self.outer._df(g) * self.inner._d2f(z)

    def describe(self):
        return {"map": self.name, "outer": self.outer.describe(), "inner": self.inner.describe()}


def map_eval(m: HolomorphicMap, z):
    return m(z)


def map_derivative(m: HolomorphicMap, z):
    return m.derivative(z)


def default_inversion_point(domain: DomainSpec, corner: CornerSpec) -> complex:
    """Auxiliary pole: 2 diameters from the centroid, away from the corner."""
    c = domain.centroid.as_array()
    away = c - corner.vertex.as_array()
    norm = np.linalg.norm(away)
    if norm == 0:
        raise DomainError("centroid coincides with the corner vertex")
    P = c + 2 * domain.diameter * away / norm
    return complex(P[0], P[1])


# ============ Transport ============

class PulledBackModel(ModelExpansion):
    """z -> u2(f(z)) + log|f'(z)|."""

    name = "pullback"

    def __init__(self, u2: Callable, f: HolomorphicMap, strict: bool = True):
        super().__init__(strict)
        self.u2 = u2
        self.f = f

    def _evaluate(self, pts):
        z = pts[..., 0] + 1j * pts[..., 1]
        ok = self.f.valid(z)
        zs = np.where(ok, z, self.f.centre)
        w = to_points(self.f._f(zs))
        if isinstance(self.u2, ModelExpansion):
            vals = self.u2._evaluate(w)
        else:
            vals = np.asarray(self.u2(w), dtype=float)
        vals = vals + np.log(np.abs(self.f._df(zs)))
        return np.where(ok, vals, np.nan)

    def describe(self):
        inner = self.u2.describe() if isinstance(self.u2, ModelExpansion) else {"variant": "function"}
        return {"variant": self.name, "map": self.f.describe(), "solution": inner}


def pullback_solution(u2: Callable, f: HolomorphicMap) -> PulledBackModel:
    return PulledBackModel(u2, f)


@dataclass(frozen=True, eq=False)
class PushedCurve(CurveSegment):
    """Image m(curve) with derivatives by the chain rule.

    Under a power map z^p whose vertex is an endpoint of the curve the image
    is tagged C^{1,alpha} with alpha = 1/p (p > 1); the parametrization may
    have zero speed at that vertex.
    """
    TYPE = "pushed"
    base: CurveSegment
    m: HolomorphicMap

    def _c(self, t):
        return to_complex(self.base.point(t))

    def point(self, t):
        return to_points(self.m._f(self._c(t)))

    def deriv(self, t):
        return to_points(self.m._df(self._c(t)) * to_complex(self.base.deriv(t)))

    def deriv2(self, t):
        c = self._c(t)
        c1 = to_complex(self.base.deriv(t))
        c2 = to_complex(self.base.deriv2(t))
        return to_points(self.m._d2f(c) * c1 ** 2 + self.m._df(c) * c2)

    @cached_property
    def vertex_end(self) -> int | None:
        """Endpoint of the base curve at the power map's vertex, if any."""
        if not isinstance(self.m, PowerMap):
            return None
        for end in (0, 1):
            if abs(self.m._zeta(complex(to_complex(self.base.point(float(end)))))) < 1e-12 * max(1.0, self.base.length):
                return end
        return None

    @cached_property
    def graph_M(self) -> float:
        """Fitted M with |y| <= M x^{1+alpha} about the vertex end."""
        return fit_graph_bound(self, self.regularity.alpha, at_end=self.vertex_end or 0)

    @cached_property
    def regularity(self) -> Regularity:
        if self.vertex_end is not None and self.m.p > 1:
            alpha = 1.0 / self.m.p
            M = fit_graph_bound(self, alpha, at_end=self.vertex_end)
            return Regularity("C1a", alpha, (1 + alpha) * M)
        ts = self.samples[0][1:-1]
        return Regularity("C2", 1.0, float(np.max(np.abs(curvature_values(self, ts)))))

    def scaled(self, s):
        return PushedCurve(self.base, ComposedMap(AffineMap(s), self.m))

    def to_dict(self):
        return {"type": self.TYPE, "base": self.base.to_dict(), "map": self.m.describe()}


def push_curve(curve: CurveSegment, m: HolomorphicMap) -> PushedCurve:
    """Image curve under m.

    Raises:
        DomainError: If the curve meets the map's cut, pole or disk boundary
            (checked on dense samples; a power map's vertex is allowed at an
            endpoint).
    """
    _, pts = curve.samples
    z = to_complex(pts)
    ok = m.valid(z)
    if isinstance(m, PowerMap):
        zeta = m._zeta(z)
        ok |= np.abs(zeta) == 0
        # the angle to the cut jumps by ~2pi where the curve crosses it
        to_cut = np.mod(m.cut - np.angle(zeta[zeta != 0]), 2 * math.pi)
        if np.any(np.abs(np.diff(to_cut)) > math.pi):
            ok[:] = False
    if not np.all(ok):
        raise DomainError(f"curve meets the cut or pole of the {m.name} map")
    return PushedCurve(curve, m)
