"""Shortley-Weller finite differences and damped Newton for Delta u = e^{2u}.

Blow-up data cannot be imposed on a grid. Two boundary modes exist:
ConstantK solves the Dirichlet problems u = k on the boundary for an
increasing k-sequence (the iterates increase toward the blow-up solution);
Matched solves for the remainder w = u - M of a model M that already blows
up, with w = 0 at the boundary cut points.

Both modes split u into a model part and a grid remainder. ConstantK uses
the model capped at k, M_k = -log(e^{-M} + e^{-k}), which equals k on the
boundary, so each u_k is a Dirichlet solve whose boundary layer of width
e^{-k} lives in M_k.

The model's Laplacian is taken with a fine fourth-order stencil. Distance
based models kink where the nearest boundary point jumps (medial axis,
corner bisectors); there, and deep inside a corner-free domain, the grid
operator applied to M is used instead.

Results are only trusted on {d >= 10h}.
"""

import csv
import io
import math
import struct
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.sparse.linalg import splu

from closedform import ModelExpansion, RescaledModel, boundary_model, fd_laplacian
from geometry import DomainSpec, as_points, distance_field
from lab_utils import ConfigError, ConvergenceError, DiscretizationError, DomainError, GeometryError, LinearSolveError, log
from store import get_settings, write_bytes_atomic, write_text_atomic

ARMS = ("E", "W", "N", "S")
ARM_STEPS = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]])
BINARY_MAGIC = b"LVGS"
BINARY_VERSION = 1
BINARY_HEADER = struct.Struct("<4sIdddII")
LINEAR_RTOL = 1e-12
MONOTONE_TOL = 1e-8
# each u_k is converged well below MONOTONE_TOL
KSEQ_NEWTON_TOL = 1e-12
# fourth-order stencil for the model Laplacian stays within d/32 of the node
MODEL_STEP_FRACTION = 1 / 64
# grid operator on the model from this fraction of the medial distance inward
RESOLVED_FRACTION = 0.6
MIN_REACH_FRACTION = 0.25
DEFAULT_K = tuple(float(k) for k in range(2, 25, 2))


# ============ Configuration ============

@dataclass(frozen=True)
class ConstantK:
    """Dirichlet data u = k for an increasing k-sequence.

    Stops once the largest increment on the trust region drops below k_tol.
    model is the blow-up model whose capped version carries the boundary
    layer; None means boundary_model(domain).
    """
    k: tuple[float, ...] = DEFAULT_K
    k_tol: float = 1e-6
    model: ModelExpansion | None = field(default=None, compare=False)

    def __post_init__(self):
        ks = tuple(float(k) for k in self.k)
        object.__setattr__(self, "k", ks)
        if len(ks) < 2:
            raise ConfigError("k-sequence needs at least two values")
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise ConfigError(f"k-sequence must be strictly increasing, got {ks}")
        if not self.k_tol > 0:
            raise ConfigError(f"k_tol must be positive, got {self.k_tol}")

    def describe(self) -> dict:
        return {"mode": "constant_k", "k": list(self.k), "k_tol": self.k_tol}


@dataclass(frozen=True)
class Matched:
    """Remainder solve around a blow-up model."""
    model: ModelExpansion

    def describe(self) -> dict:
        return {"mode": "matched", "model": self.model.describe()}


@dataclass(frozen=True)
class SolverConfig:
    h: float
    mode: ConstantK | Matched = field(default_factory=ConstantK)
    tol: float = 1e-10
    max_newton: int = 50
    max_halvings: int = 30
    trust_factor: float = 10.0

    def __post_init__(self):
        if not self.h > 0:
            raise ConfigError(f"grid spacing must be positive, got {self.h}")
        if not self.tol > 0:
            raise ConfigError(f"Newton tolerance must be positive, got {self.tol}")
        if self.max_newton < 1 or self.max_halvings < 0:
            raise ConfigError("max_newton must be >= 1 and max_halvings >= 0")


# ============ Grid ============

@dataclass(eq=False)
class Grid:
    """Lattice {(i h, j h)} over the domain's bounding box.

    Interior nodes are numbered row-major. For each interior node and arm
    (E, W, N, S): theta in (0, 1] is the arm length over h; neighbor is the
    interior node index at the arm's end, or -1 when the arm ends at a
    boundary cut point. foot holds each node's nearest boundary point.
    """
    domain: DomainSpec
    h: float
    i0: int
    j0: int
    nx: int
    ny: int
    index: np.ndarray
    nodes: np.ndarray
    d: np.ndarray
    theta: np.ndarray
    neighbor: np.ndarray
    foot: np.ndarray | None = None

    @property
    def x0(self) -> float:
        return self.i0 * self.h

    @property
    def y0(self) -> float:
        return self.j0 * self.h

    @property
    def size(self) -> int:
        return len(self.nodes)

    def cut_points(self) -> tuple[np.ndarray, np.ndarray]:
        """(node, arm) pairs of boundary arms and the boundary point coordinates."""
        node, arm = np.nonzero(self.neighbor < 0)
        pts = self.nodes[node] + ARM_STEPS[arm] * (self.theta[node, arm] * self.h)[:, None]
        return np.column_stack([node, arm]), pts

    def trust_mask(self, factor: float = 10.0) -> np.ndarray:
        return self.d >= factor * self.h

    def foot_jumps(self) -> np.ndarray:
        """(node, neighbour) pairs across an interior arm whose feet jump by
        more than 2h + d/2, d the smaller of the two distances.

        Along smooth boundary pieces adjacent feet move by about
        h / (1 - kappa d), so jumps only mark the medial axis, a focal point
        or the bisector of a corner.
        """
        pairs = [np.empty((0, 2), dtype=int)]
        for a in range(4):
            inner = np.flatnonzero(self.neighbor[:, a] >= 0)
            nb = self.neighbor[inner, a]
            jump = np.linalg.norm(self.foot[inner] - self.foot[nb], axis=1)
            hit = jump > 2 * self.h + 0.5 * np.minimum(self.d[inner], self.d[nb])
            pairs.append(np.column_stack([inner[hit], nb[hit]]))
        return np.concatenate(pairs)

    def medial_distance(self) -> float:
        """Smallest d over foot_jumps; inf when there are none."""
        pairs = self.foot_jumps()
        return float(self.d[pairs].min()) if len(pairs) else math.inf

    def resolved_mask(self) -> np.ndarray:
        """Nodes where the grid operator is applied to a boundary model.

        Every node on a foot jump, and on a domain without tagged corners
        every node with d >= RESOLVED_FRACTION times the medial distance,
        unless the medial axis comes closer to the boundary than
        MIN_REACH_FRACTION of the inradius (an untagged corner). Only nodes
        whose four arms end at interior nodes qualify.
        """
        mask = np.zeros(self.size, dtype=bool)
        if self.foot is None:
            return mask
        pairs = self.foot_jumps()
        mask[pairs.ravel()] = True
        if len(pairs) and not self.domain.corners:
            reach = float(self.d[pairs].min())
            if reach >= MIN_REACH_FRACTION * float(self.d.max()):
                mask |= self.d >= RESOLVED_FRACTION * reach
        return mask & np.all(self.neighbor >= 0, axis=1)

    def laplacian(self) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
        """Shortley-Weller operator: (A, diag, coef) with L_h u = A u + sum
        over boundary arms of coef * g."""
        th = self.theta
        tE, tW, tN, tS = th[:, 0], th[:, 1], th[:, 2], th[:, 3]
        coef = np.column_stack([
            2.0 / (tE * (tE + tW)), 2.0 / (tW * (tE + tW)),
            2.0 / (tN * (tN + tS)), 2.0 / (tS * (tN + tS)),
        ]) / self.h ** 2
        diag = -2.0 * (1.0 / (tE * tW) + 1.0 / (tN * tS)) / self.h ** 2
        n = self.size
        rows = [np.arange(n)]
        cols = [np.arange(n)]
        vals = [diag]
        for a in range(4):
            inner = self.neighbor[:, a] >= 0
            rows.append(np.flatnonzero(inner))
            cols.append(self.neighbor[inner, a])
            vals.append(coef[inner, a])
        A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
        return A, diag, coef


def _line_crossings(domain: DomainSpec, axis: int, levels: np.ndarray) -> list[np.ndarray]:
    """Sorted crossing positions of the boundary with the lines
    {coordinate[axis] == level}, one array per level."""
    out: list[list[float]] = [[] for _ in levels]
    other = 1 - axis
    for seg in domain.segments:
        ts, pts = seg.samples
        vals = pts[None, :, axis] - levels[:, None]
        pos = vals > 0
        rows, ks = np.nonzero(pos[:, :-1] != pos[:, 1:])
        for r, k in zip(rows, ks):
            level = levels[r]
            f = lambda s, seg=seg, level=level: float(seg.point(s)[axis]) - level
            a, b = ts[k], ts[k + 1]
            fa, fb = f(a), f(b)
            if fa == 0:
                t = a
            elif fb == 0:
                t = b
            elif fa * fb > 0:
                # vectorized and scalar evaluation disagree in the last bit
                t = a if abs(fa) < abs(fb) else b
            else:
                t = brentq(f, a, b, xtol=1e-15)
            out[r].append(float(seg.point(t)[other]))
    return [np.unique(np.array(v)) for v in out]


def _estimate_bytes(nx: int, ny: int) -> int:
    # lattice masks and distances plus per-node stencil data and the LU fill
    return nx * ny * 48 + nx * ny * 400


def discretize(domain: DomainSpec, h: float, max_h_fraction: float = 0.05) -> Grid:
    """Build the Shortley-Weller grid.

    Args:
        domain: Domain to cover.
        h: Lattice spacing; nodes sit at integer multiples of h.
        max_h_fraction: Largest admissible h as a fraction of the diameter.
            Solves use the default; coarse lattices for inspection may relax it.

    Raises:
        DiscretizationError: h too large, grid over the memory cap, or
            domain thinner than 2h.
    """
    diam = domain.diameter
    if not 0 < h < max_h_fraction * diam:
        raise DiscretizationError(f"h = {h} must be below {max_h_fraction:g} * diameter = {max_h_fraction * diam:.6g}")
    xmin, ymin, xmax, ymax = domain.bbox
    i0, i1 = math.ceil(xmin / h), math.floor(xmax / h)
    j0, j1 = math.ceil(ymin / h), math.floor(ymax / h)
    nx, ny = i1 - i0 + 1, j1 - j0 + 1
    cap = get_settings().max_grid_mb * 2 ** 20
    if _estimate_bytes(nx, ny) > cap:
        raise DiscretizationError(f"{nx}x{ny} grid exceeds the {get_settings().max_grid_mb:g} MB allocation cap")

    xs = (i0 + np.arange(nx)) * h
    ys = (j0 + np.arange(ny)) * h
    X, Y = np.meshgrid(xs, ys)
    lattice = np.column_stack([X.ravel(), Y.ravel()])
    inside = domain.contains(lattice)
    d_all = np.full(len(lattice), np.nan)
    foot_all = np.full((len(lattice), 2), np.nan)
    if inside.any():
        field_in = distance_field(domain, lattice[inside], with_corners=False)
        d_all[inside] = field_in.d
        foot_all[inside] = field_in.foot
    interior = inside & (d_all >= 1e-12 * diam)
    if not interior.any() or np.nanmax(d_all[interior]) < 2 * h:
        raise DiscretizationError(f"domain is thinner than 2h = {2 * h:g}; use a smaller h")

    index = np.full(nx * ny, -1)
    index[interior] = np.arange(int(interior.sum()))
    index = index.reshape(ny, nx)
    jj, ii = np.nonzero(index >= 0)
    nodes = np.column_stack([xs[ii], ys[jj]])
    d = d_all.reshape(ny, nx)[jj, ii]
    foot = foot_all.reshape(ny, nx, 2)[jj, ii]

    n = len(nodes)
    neighbor = np.full((n, 4), -1)
    theta = np.ones((n, 4))
    for a, (di, dj) in enumerate(ARM_STEPS):
        ni, nj = ii + di, jj + dj
        ok = (ni >= 0) & (ni < nx) & (nj >= 0) & (nj < ny)
        nb = np.full(n, -1)
        nb[ok] = index[nj[ok], ni[ok]]
        neighbor[:, a] = nb

    row_cross = _line_crossings(domain, 1, ys)
    col_cross = _line_crossings(domain, 0, xs)
    missing = 0
    for p, a in zip(*np.nonzero(neighbor < 0)):
        horizontal = a < 2
        cs = row_cross[jj[p]] if horizontal else col_cross[ii[p]]
        base = nodes[p, 0] if horizontal else nodes[p, 1]
        sign = 1.0 if a in (0, 2) else -1.0
        offsets = sign * (cs - base)
        hits = offsets[(offsets > 0) & (offsets <= h * (1 + 1e-12))]
        if hits.size:
            theta[p, a] = min(1.0, float(hits.min()) / h)
        else:
            missing += 1
    if missing:
        log(f"Grid: {missing} boundary arms without a located crossing; using full arms")

    log(f"Grid h={h:g}: {nx}x{ny} lattice, {n} interior nodes, {int((neighbor < 0).sum())} boundary arms")
    return Grid(domain, h, i0, j0, nx, ny, index, nodes, d, theta, neighbor, foot)


# ============ Newton ============

@dataclass
class NewtonReport:
    iterations: int = 0
    residual: float = math.inf
    converged_by: str = ""
    linear_residual: float = 0.0
    history: list[tuple[int, float, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "residual": self.residual,
                "converged_by": self.converged_by, "linear_residual": self.linear_residual}


def _solve_linear(J: sp.csr_matrix, rhs: np.ndarray) -> tuple[np.ndarray, float]:
    """Sparse LU with up to three steps of iterative refinement."""
    try:
        lu = splu(J.tocsc())
    except RuntimeError as e:
        raise LinearSolveError(f"Jacobian factorization failed: {e}")
    x = lu.solve(rhs)
    scale = max(np.linalg.norm(rhs), np.finfo(float).tiny)
    rel = np.linalg.norm(rhs - J @ x) / scale
    for _ in range(3):
        if rel <= LINEAR_RTOL:
            break
        x = x + lu.solve(rhs - J @ x)
        rel = np.linalg.norm(rhs - J @ x) / scale
    if not np.all(np.isfinite(x)):
        raise LinearSolveError("linear solve produced non-finite values")
    return x, float(rel)


def _newton(A: sp.csr_matrix, diag: np.ndarray, b: np.ndarray, m: np.ndarray, s: np.ndarray,
            v0: np.ndarray, cfg: SolverConfig, label: str) -> tuple[np.ndarray, NewtonReport]:
    """Solve A v + b + s - e^{2(m + v)} = 0 by damped Newton.

    Convergence: scaled residual max |F_i| / (1 + |A_ii| + 2 e^{2u_i}) <= tol,
    or a Newton step below 1e-12 (1 + |v|) (stagnation at roundoff).
    """
    report = NewtonReport()

    def residual(v):
        e2u = np.exp(2 * (m + v))
        F = A @ v + b + s - e2u
        scaled = np.abs(F) / (1 + np.abs(diag) + 2 * e2u)
        return F, e2u, float(np.max(scaled)) if len(F) else 0.0

    v = v0.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        F, e2u, norm = residual(v)
        for it in range(1, cfg.max_newton + 1):
            if norm <= cfg.tol:
                report.converged_by = "tolerance"
                break
            J = A - sp.diags(2 * e2u)
            step, rel = _solve_linear(J.tocsr(), -F)
            report.linear_residual = max(report.linear_residual, rel)
            tiny = np.max(np.abs(step)) < 1e-12 * (1 + np.max(np.abs(v)))
            lam = 1.0
            for _ in range(cfg.max_halvings + 1):
                v_new = v + lam * step
                F_new, e2u_new, norm_new = residual(v_new)
                if np.isfinite(norm_new) and norm_new < norm:
                    break
                lam *= 0.5
            else:
                if tiny:
                    report.converged_by = "stagnation"
                    break
                raise ConvergenceError(
                    f"{label}: line search failed at iteration {it}",
                    {"iteration": it, "residual": norm, "max_abs_u": float(np.max(np.abs(m + v)))})
            v, F, e2u, norm = v_new, F_new, e2u_new, norm_new
            report.iterations = it
            report.history.append((it, norm, lam))
            log(f"Newton {label}: iter {it} residual {norm:.3e} damping {lam:g}")
            if tiny:
                report.converged_by = "stagnation"
                break
        else:
            if norm > cfg.tol:
                raise ConvergenceError(
                    f"{label}: no convergence in {cfg.max_newton} iterations (residual {norm:.3e})",
                    {"iterations": cfg.max_newton, "residual": norm, "history": report.history[-5:]})
            report.converged_by = "tolerance"
    report.residual = norm
    return v, report


# ============ Solutions ============

@dataclass(eq=False)
class GridSolution:
    """Nodal values u_h on a grid's interior nodes (row-major order)."""
    grid: Grid
    u: np.ndarray
    mode: dict
    report: NewtonReport | None = None
    trust_factor: float = 10.0

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def trust_mask(self) -> np.ndarray:
        return self.grid.trust_mask(self.trust_factor)

    @classmethod
    def from_field(cls, grid: Grid, fn: Callable) -> "GridSolution":
        """Sample a closed-form field onto the grid's interior nodes."""
        return cls(grid, np.asarray(fn(grid.nodes), dtype=float), {"mode": "field"})

    def as_array(self) -> np.ndarray:
        """(ny, nx) array of u, NaN off the interior."""
        out = np.full((self.grid.ny, self.grid.nx), np.nan)
        jj, ii = np.nonzero(self.grid.index >= 0)
        out[jj, ii] = self.u
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["x", "y", "d", "u_h"])
        for (x, y), d, u in zip(self.grid.nodes, self.grid.d, self.u):
            writer.writerow([repr(float(x)), repr(float(y)), repr(float(d)), repr(float(u))])
        return buf.getvalue()

    def write_csv(self, path: Path):
        write_text_atomic(path, self.to_csv())

    def to_binary(self) -> bytes:
        """Header <4sIdddII (magic, version, h, x0, y0, nx, ny), then nx*ny
        row-major records of two little-endian float64 (d, u); NaN off the
        interior."""
        g = self.grid
        header = BINARY_HEADER.pack(BINARY_MAGIC, BINARY_VERSION, g.h, g.x0, g.y0, g.nx, g.ny)
        d = np.full((g.ny, g.nx), np.nan)
        jj, ii = np.nonzero(g.index >= 0)
        d[jj, ii] = g.d
        records = np.stack([d, self.as_array()], axis=-1).astype("<f8")
        return header + records.tobytes()

    def write_binary(self, path: Path):
        write_bytes_atomic(path, self.to_binary())


@dataclass(frozen=True)
class GridDump:
    h: float
    x0: float
    y0: float
    nx: int
    ny: int
    d: np.ndarray
    u: np.ndarray


def read_binary(data: bytes) -> GridDump:
    """Parse GridSolution.to_binary output."""
    if len(data) < BINARY_HEADER.size:
        raise DiscretizationError("binary grid dump is truncated")
    magic, version, h, x0, y0, nx, ny = BINARY_HEADER.unpack_from(data)
    if magic != BINARY_MAGIC or version != BINARY_VERSION:
        raise DiscretizationError(f"not a grid dump (magic {magic!r}, version {version})")
    body = np.frombuffer(data, dtype="<f8", offset=BINARY_HEADER.size)
    if body.size != nx * ny * 2:
        raise DiscretizationError("binary grid dump has the wrong record count")
    rec = body.reshape(ny, nx, 2)
    return GridDump(h, x0, y0, nx, ny, rec[..., 0].copy(), rec[..., 1].copy())


def _boundary_vector(grid: Grid, coef: np.ndarray, g_values: np.ndarray) -> np.ndarray:
    pairs, _ = grid.cut_points()
    b = np.zeros(grid.size)
    np.add.at(b, pairs[:, 0], coef[pairs[:, 0], pairs[:, 1]] * g_values)
    return b


def solve_dirichlet(grid: Grid, g: Callable, cfg: SolverConfig, u0: np.ndarray | None = None,
                    label: str = "dirichlet") -> GridSolution:
    """Solve L_h u = e^{2u} with u = g at the boundary cut points."""
    A, diag, coef = grid.laplacian()
    _, pts = grid.cut_points()
    g_values = np.asarray(g(pts), dtype=float).reshape(-1)
    if not np.all(np.isfinite(g_values)):
        raise DomainError("boundary data is not finite at every cut point")
    b = _boundary_vector(grid, coef, g_values)
    zero = np.zeros(grid.size)
    if u0 is None:
        u0 = np.full(grid.size, float(np.mean(g_values)) if len(g_values) else 0.0)
    u, report = _newton(A, diag, b, zero, zero, u0, cfg, label)
    return GridSolution(grid, u, {"mode": "dirichlet"}, report, cfg.trust_factor)


def model_source(grid: Grid, A: sp.csr_matrix, values: np.ndarray, fn: Callable,
                 resolved: np.ndarray | None = None) -> np.ndarray:
    """Laplacian of a model at the nodes: A @ values on resolved nodes, the
    fine fourth-order stencil with step min(h/2, d/64) elsewhere. The fine
    stencil then stays on the node's own arms, clear of any foot jump."""
    resolved = grid.resolved_mask() if resolved is None else resolved
    source = np.empty(grid.size)
    source[resolved] = (A @ values)[resolved]
    rest = ~resolved
    steps = np.minimum(0.5 * grid.h, grid.d[rest] * MODEL_STEP_FRACTION)
    source[rest] = fd_laplacian(fn, grid.nodes[rest], steps)
    return source


def capped_model(model: Callable, k: float) -> Callable:
    """x -> -log(e^{-M(x)} + e^{-k}): equal to k where M blows up."""
    return lambda p: -np.logaddexp(-np.asarray(model(p), dtype=float), -k)


def _solve_matched(grid: Grid, mode: Matched, cfg: SolverConfig) -> GridSolution:
    A, diag, _ = grid.laplacian()
    model = mode.model
    M = np.asarray(model(grid.nodes), dtype=float)
    resolved = grid.resolved_mask()
    lap_M = model_source(grid, A, M, model, resolved)
    log(f"Matched: grid operator on {int(resolved.sum())} of {grid.size} nodes")
    zero = np.zeros(grid.size)
    w, report = _newton(A, diag, zero, M, lap_M, zero, cfg, "matched")
    return GridSolution(grid, M + w, mode.describe(), report, cfg.trust_factor)


def _solve_constant_k(grid: Grid, mode: ConstantK, cfg: SolverConfig) -> GridSolution:
    trust = grid.trust_mask(cfg.trust_factor)
    if not trust.any():
        raise DiscretizationError(f"trust region d >= {cfg.trust_factor}h is empty; use a smaller h")
    A, diag, _ = grid.laplacian()
    model = mode.model if mode.model is not None else boundary_model(grid.domain)
    M = np.asarray(model(grid.nodes), dtype=float)
    resolved = grid.resolved_mask()
    kcfg = replace(cfg, tol=min(cfg.tol, KSEQ_NEWTON_TOL))
    zero = np.zeros(grid.size)
    prev = None
    increments = []
    for k in mode.k:
        capped = capped_model(model, k)
        M_k = capped(grid.nodes)
        source = model_source(grid, A, M_k, capped, resolved)
        u0 = prev if prev is not None else np.full(grid.size, k)
        w, report = _newton(A, diag, zero, M_k, source, u0 - M_k, kcfg, f"k={k:g}")
        u = M_k + w
        if prev is not None:
            drop = float(np.max(prev - u))
            if drop > MONOTONE_TOL:
                raise ConvergenceError(f"k-sequence not monotone at k={k:g} (decrease {drop:.3e})",
                                       {"k": k, "decrease": drop})
            inc = float(np.max(u[trust] - prev[trust]))
            increments.append(inc)
            log(f"ConstantK: k={k:g} trust-region increment {inc:.3e}")
            if inc < mode.k_tol:
                record = dict(mode.describe(), k_final=k, increments=increments)
                return GridSolution(grid, u, record, report, cfg.trust_factor)
        prev = u
    raise ConvergenceError(f"k-sequence exhausted; last trust-region increment {increments[-1]:.3e} >= {mode.k_tol}",
                           {"increments": increments, "k": list(mode.k)})


def solve_blowup(domain: DomainSpec, cfg: SolverConfig, grid: Grid | None = None) -> GridSolution:
    """Approximate the blow-up solution with the configured boundary mode."""
    grid = grid or discretize(domain, cfg.h)
    started = time.time()
    if isinstance(cfg.mode, Matched):
        sol = _solve_matched(grid, cfg.mode, cfg)
    else:
        sol = _solve_constant_k(grid, cfg.mode, cfg)
    log(f"solve_blowup {sol.mode['mode']}: {grid.size} nodes in {time.time() - started:.2f}s")
    return sol


def evaluate(sol: GridSolution, p) -> float:
    """Bilinear interpolation from the four surrounding interior nodes.

    Raises:
        GeometryError: If p is outside the trust region or a cell node is not
            interior.
    """
    pt = as_points(p).reshape(2)
    g = sol.grid
    d = distance_field(g.domain, pt.reshape(1, 2), with_corners=False).d[0]
    if not g.domain.contains(pt) or d < sol.trust_factor * g.h:
        raise GeometryError(f"point {pt.tolist()} is outside the trust region d >= {sol.trust_factor}h")
    qx = (pt[0] - g.x0) / g.h
    qy = (pt[1] - g.y0) / g.h
    qx = round(qx) if abs(qx - round(qx)) < 1e-9 else qx
    qy = round(qy) if abs(qy - round(qy)) < 1e-9 else qy
    i, j = int(math.floor(qx)), int(math.floor(qy))
    fx, fy = qx - i, qy - j
    value = 0.0
    for dj in (0, 1):
        for di in (0, 1):
            weight = (fx if di else 1 - fx) * (fy if dj else 1 - fy)
            if weight == 0:
                continue
            jj, ii = j + dj, i + di
            idx = g.index[jj, ii] if 0 <= jj < g.ny and 0 <= ii < g.nx else -1
            if idx < 0:
                raise GeometryError(f"interpolation cell at {pt.tolist()} touches a non-interior node")
            value += weight * sol.u[idx]
    return float(value)


def evaluate_many(sol: GridSolution, pts) -> np.ndarray:
    """evaluate at each point; NaN where the point is outside the trust region."""
    flat = as_points(pts).reshape(-1, 2)
    vals = np.full(len(flat), np.nan)
    for i, p in enumerate(flat):
        try:
            vals[i] = evaluate(sol, p)
        except GeometryError:
            pass
    return vals


def rescale_solution(fn: Callable, eps: float) -> RescaledModel:
    """x -> fn(x/eps) + log(1/eps), a solution on eps * Omega."""
    return RescaledModel(fn, eps)


# ============ Convergence study ============

@dataclass
class ConvergenceRow:
    h: float
    max_error: float
    order: float | None
    nodes: int


def _model_is_finite_on_boundary(domain: DomainSpec, model: Callable) -> bool:
    pts = domain.polyline[:: max(1, len(domain.polyline) // 256)]
    if isinstance(model, ModelExpansion):
        with np.errstate(all="ignore"):
            vals = model._evaluate(pts)
    else:
        try:
            vals = np.asarray(model(pts), dtype=float)
        except DomainError:
            return False
    return bool(np.all(np.isfinite(vals)))


def convergence_study(domain: DomainSpec, exact: ModelExpansion, hs: list[float],
                      cfg: SolverConfig | None = None, model: ModelExpansion | None = None,
                      d_min: float = 0.0) -> list[ConvergenceRow]:
    """Max error against an exact solution on {d >= max(d_min, 10h)} for
    each h, with empirical orders log(e1/e2)/log(h1/h2) between consecutive
    rows.

    An exact solution finite on the boundary supplies Dirichlet data. A
    blow-up one is approximated in Matched mode around model (default the
    exact solution itself).
    """
    finite = _model_is_finite_on_boundary(domain, exact)
    solve_model = model if model is not None else exact
    rows: list[ConvergenceRow] = []
    for h in hs:
        base = cfg or SolverConfig(h=h)
        run_cfg = SolverConfig(h=h, mode=Matched(solve_model), tol=base.tol, max_newton=base.max_newton,
                               max_halvings=base.max_halvings, trust_factor=base.trust_factor)
        grid = discretize(domain, h)
        if finite:
            sol = solve_dirichlet(grid, exact, run_cfg)
        else:
            sol = solve_blowup(domain, run_cfg, grid)
        region = sol.trust_mask & (grid.d >= d_min)
        if not region.any():
            raise DiscretizationError(f"empty trust region at h = {h}")
        err = float(np.max(np.abs(sol.u[region] - exact(grid.nodes[region]))))
        order = None
        if rows and rows[-1].max_error > 0 and err > 0:
            order = math.log(rows[-1].max_error / err) / math.log(rows[-1].h / h)
        rows.append(ConvergenceRow(h, err, order, grid.size))
        log(f"convergence h={h:g}: max error {err:.3e}" + (f", order {order:.3f}" if order is not None else ""))
    return rows
