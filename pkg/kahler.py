"""Product Kähler-Einstein potentials from planar Liouville solutions.

On a product of n planar domains the potential u(z_1, ..., z_n) = sum u_i(z_i)
solves det u_{i j-bar} = e^{(n+1) u} when every factor solves
Delta u_i = 4 e^{(n+1) u_i}. A factor comes from a Liouville solution v
(Delta v = e^{2v}) on the scaled domain lambda * Omega_i through
u_i(z) = (2/(n+1)) v(lambda z), with lambda = sqrt(2(n+1)).
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from asymptotics import ErrorProfile, Sampler, error_profile
from closedform import ModelExpansion, corner_model, fd_laplacian
from geometry import CornerSpec, DomainSpec, as_points, interior_distances, sample_points
from lab_utils import DomainError, KahlerError, log
from solver import GridSolution, evaluate_many

FACTOR_RTOL = 1e-6
RESIDUAL_SAMPLES = 64
GROWTH_LIMIT = 0.1


def factor_scale(n: int) -> float:
    """lambda with (2/(n+1)) lambda^2 = 4."""
    return math.sqrt(2 * (n + 1))


def literature_scale(n: int) -> float:
    """sqrt((n+1)/8); does not produce factors of Delta u = 4 e^{(n+1)u}."""
    return math.sqrt((n + 1) / 8)


def _c1(n: int) -> float:
    return 2.0 / (n + 1)


def _check_n(n: int) -> int:
    if not (isinstance(n, (int, np.integer)) and n >= 1):
        raise KahlerError(f"complex dimension must be an integer >= 1, got {n!r}")
    return int(n)


# ============ Factors ============

class FactorSolution(ModelExpansion):
    """u_i on a planar factor domain.

    base is a Liouville solution on scale * domain (on_factor False) or on the
    factor domain itself (on_factor True, shifted by -log scale).
    """

    name = "factor"

    def __init__(self, base: Callable, n: int, domain: DomainSpec, scale: float | None = None,
                 on_factor: bool = False, index: int = 0, strict: bool = True):
        super().__init__(strict)
        self.n = _check_n(n)
        self.base = base
        self.domain = domain
        self.scale = factor_scale(self.n) if scale is None else float(scale)
        self.on_factor = on_factor
        self.index = index
        self.provenance = "grid" if isinstance(base, GridSolution) else "closed_form"

    def _base_values(self, w):
        if isinstance(self.base, GridSolution):
            return evaluate_many(self.base, w)
        if isinstance(self.base, ModelExpansion):
            return self.base._evaluate(w)
        return np.asarray(self.base(w), dtype=float)

    def _evaluate(self, pts):
        inside = self.domain.contains(pts)
        if self.on_factor:
            vals = self._base_values(pts) - math.log(self.scale)
        else:
            vals = self._base_values(pts * self.scale)
        return np.where(inside, _c1(self.n) * np.asarray(vals, dtype=float).reshape(-1), np.nan)

    def factor_residual(self, pts, h, relative: bool = True) -> np.ndarray:
        """Delta u_i - 4 e^{(n+1) u_i} by fourth-order differences."""
        flat = as_points(pts).reshape(-1, 2)
        lap = fd_laplacian(self, flat, h)
        rhs = 4 * np.exp((self.n + 1) * self(flat))
        res = lap - rhs
        return res / rhs if relative else res

    def describe(self):
        return {"variant": self.name, "n": self.n, "index": self.index, "scale": self.scale,
                "provenance": self.provenance, "on_factor": self.on_factor}


def _residual_points(domain: DomainSpec, count: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    inr = float(np.max(interior_distances(domain, sample_points(domain, rng, 256))))
    pts = sample_points(domain, rng, count, d_min=0.2 * inr)
    return pts, interior_distances(domain, pts) / 100


def factor_from_liouville(v: Callable, n: int, domain: DomainSpec, scale: float | None = None,
                          on_factor: bool = False, index: int = 0, check: bool = True,
                          seed: int = 0) -> FactorSolution:
    """u_i(z) = (2/(n+1)) v(scale * z), checked against Delta u_i = 4 e^{(n+1)u_i}.

    Grid solutions carry their discrete Newton residual instead of the
    finite-difference check.

    Raises:
        KahlerError: If the relative factor residual exceeds 1e-6 at the
            sampled points.
    """
    factor = FactorSolution(v, n, domain, scale, on_factor, index)
    if check and factor.provenance == "closed_form":
        pts, h = _residual_points(domain, RESIDUAL_SAMPLES, seed)
        worst = float(np.max(np.abs(factor.factor_residual(pts, h))))
        if not worst <= FACTOR_RTOL:
            raise KahlerError(f"factor {index}: relative residual {worst:.3e} exceeds {FACTOR_RTOL:g} "
                              f"(scale {factor.scale:g})")
    return factor


def liouville_from_factor(factor: FactorSolution) -> Callable:
    """Inverse transform: w -> ((n+1)/2) u_i(w / scale), a solution of
    Delta v = e^{2v} on scale * domain."""
    c = _c1(factor.n)

    def v(w):
        return factor(as_points(w) / factor.scale) / c
    return v


# ============ Products ============

@dataclass
class ProductDomainSpec:
    n: int
    factors: list[FactorSolution] = field(default_factory=list)

    def __post_init__(self):
        _check_n(self.n)
        if len(self.factors) != self.n:
            raise KahlerError(f"expected {self.n} planar factors, got {len(self.factors)}")
        for i, f in enumerate(self.factors):
            if f.n != self.n:
                raise KahlerError(f"factor {i} was built for n={f.n}, product has n={self.n}")

    @property
    def domains(self) -> list[DomainSpec]:
        return [f.domain for f in self.factors]

    def split(self, z) -> np.ndarray:
        """Product points as an (m, n, 2) array."""
        arr = np.asarray(z, dtype=float)
        if arr.shape[-2:] != (self.n, 2):
            raise DomainError(f"product points need shape (..., {self.n}, 2), got {arr.shape}")
        return arr.reshape(-1, self.n, 2)

    def distances(self, z) -> np.ndarray:
        zs = self.split(z)
        return np.column_stack([interior_distances(f.domain, zs[:, i]) for i, f in enumerate(self.factors)])

    def to_dict(self) -> dict:
        return {"n": self.n, "factors": [dict(f.describe(), domain=f.domain.to_dict()) for f in self.factors]}


class ProductSolution:
    """u(z_1, ..., z_n) = sum u_i(z_i)."""

    def __init__(self, spec: ProductDomainSpec):
        self.spec = spec

    def terms(self, z) -> np.ndarray:
        """(m, n) array of factor values.

        Raises:
            DomainError: Any slot outside its factor domain.
        """
        zs = self.spec.split(z)
        return np.column_stack([f(zs[:, i]) for i, f in enumerate(self.spec.factors)])

    def __call__(self, z):
        vals = self.terms(z).sum(axis=1)
        return float(vals[0]) if np.asarray(z).ndim == 2 else vals


def compose_product(spec: ProductDomainSpec) -> ProductSolution:
    return ProductSolution(spec)


def rescale_product_solution(u: Callable, eps: float, n: int) -> Callable:
    """z -> u(z/eps) + (2n/(n+1)) log(1/eps), the potential on eps * Omega."""
    if not eps > 0:
        raise KahlerError(f"scale must be positive, got {eps}")
    shift = 2 * n / (n + 1) * math.log(1 / eps)
    return lambda z: u(np.asarray(z, dtype=float) / eps) + shift


def product_lower_bound(n: int, r: float) -> float:
    """Infimum of the potential on the product of n discs of radius r,
    attained at the common centre."""
    n = _check_n(n)
    return 2 * n / (n + 1) * (math.log(2.0 / r) - math.log(factor_scale(n)))


def monge_ampere_residual(spec: ProductDomainSpec, z, h, relative: bool = False):
    """prod(Delta u_i / 4) - e^{(n+1) u}; the complex Hessian of a sum of
    planar terms is diagonal with entries Delta u_i / 4.

    Raises:
        DomainError: If a stencil leaves a factor domain.
    """
    zs = spec.split(z)
    h = np.broadcast_to(np.asarray(h, dtype=float), (len(zs),))
    det = np.ones(len(zs))
    total = np.zeros(len(zs))
    for i, f in enumerate(spec.factors):
        det *= fd_laplacian(f, zs[:, i], h) / 4
        total += f(zs[:, i])
    rhs = np.exp((spec.n + 1) * total)
    res = det - rhs
    if relative:
        res = res / rhs
    return float(res[0]) if np.asarray(z).ndim == 2 else res


@dataclass
class ProductBoundReport:
    n: int
    levels: list[dict]
    sup: float
    max_growth: float
    stable: bool
    c1: float
    pseudoconvex_term: str = "absent"

    def to_dict(self) -> dict:
        return asdict(self)


def product_bound_check(spec: ProductDomainSpec, samples: int = 1000, d_min: float = 0.01,
                        seed: int = 0) -> ProductBoundReport:
    """sup |u + c1 sum log d_i| over a dyadically refining sample sequence.

    Level j draws samples with every d_i >= d_j (half of each slot in the
    band [d_j, 2 d_j]); the sup is stable when it grows by less than 10%
    (floor 1) per level.
    """
    rng = np.random.default_rng(seed)
    c1 = _c1(spec.n)
    u = compose_product(spec)
    d0 = min(0.125 * float(np.max(interior_distances(f.domain, sample_points(f.domain, rng, 256))))
             for f in spec.factors)
    levels = []
    running = 0.0
    max_growth = 0.0
    j = 0
    while True:
        dj = d0 * 2.0 ** -j
        if dj < d_min * (1 - 1e-12):
            break
        slots = []
        for f in spec.factors:
            band = sample_points(f.domain, rng, samples // 2, d_min=dj, d_max=2 * dj)
            bulk = sample_points(f.domain, rng, samples - len(band), d_min=dj)
            slot = np.concatenate([band, bulk])
            slots.append(slot[rng.permutation(len(slot))])
        z = np.stack(slots, axis=1)
        stat = np.abs(u(z) + c1 * np.log(spec.distances(z)).sum(axis=1))
        level_sup = float(np.max(stat))
        new = max(running, level_sup)
        if levels:
            max_growth = max(max_growth, (new - running) / max(running, 1.0))
        running = new
        levels.append({"d_min": dj, "sup": level_sup, "running_sup": running})
        j += 1
    report = ProductBoundReport(spec.n, levels, running, max_growth, max_growth < GROWTH_LIMIT, c1)
    log(f"product_bound_check n={spec.n}: sup={running:.6g} growth={max_growth:.3g} over {len(levels)} levels")
    return report


def corner_factor_profile(factor: FactorSolution, corner: CornerSpec, sampler: Sampler) -> ErrorProfile:
    """Profile of u_i - (2/(n+1)) (f_mu - log lambda) along a corner ray."""
    f_mu = corner_model(factor.domain, corner)
    c = _c1(factor.n)
    lenient = FactorSolution(factor.base, factor.n, factor.domain, factor.scale, factor.on_factor,
                             factor.index, strict=False)

    def model(pts):
        return c * (f_mu(pts) - math.log(factor.scale))
    return error_profile(lenient, model, sampler, domain=factor.domain,
                         meta={"kind": "corner_factor", "mu": corner.mu, "n": factor.n})
