"""Experiment runners, one per config kind.

Each runner is synchronous (the job pool moves it to a worker thread),
writes its artifacts under <run dir>/<job name>/ and returns a JobResult.
JSON reports and CSV tables depend only on the config and seed; wall-clock
timings are kept out of them and recorded in the manifest instead.
"""

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from asymptotics import (Sampler, bracket_audit, check_estimate, error_profile, fit_rate, localization_gap,
                         profile_csv, super_sub_check, write_report_json)
from closedform import FunctionModel, ball_solution, boundary_model, corner_model
from geometry import (CornerSpec, DomainSpec, chart_radius, coincidence_radius, interior_distances,
                      sample_points)
from kahler import (ProductDomainSpec, compose_product, corner_factor_profile, factor_from_liouville,
                    factor_scale, monge_ampere_residual, product_bound_check, product_lower_bound)
from lab_config import RATE_DEFAULTS, ExperimentSpec
from lab_utils import ConfigError, ProfileError, log
from plots import loglog_svg, profile_svg, write_svg
from solver import (ConstantK, ConvergenceRow, GridSolution, Matched, SolverConfig, convergence_study,
                    discretize, evaluate, evaluate_many, solve_blowup)
from store import write_text_atomic

TRUST_MARGIN = 1.2
WINDOW_LO_FACTOR = 12.0
MA_RTOL = 1e-6
CENTRE_TOL = 1e-4
BLOWUP_CHECK_H = 1 / 64
BLOWUP_CHECK_D = 0.1
CROSS_MODE_TOL = 2e-3
CENTRE_VALUE_TOL = 5e-3


@dataclass
class JobResult:
    name: str
    kind: str
    binding: bool
    verdict: str
    summary: dict = field(default_factory=dict)
    files: list[Path] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return self.binding and self.verdict == "fail"


@dataclass
class JobContext:
    run_dir: Path
    seed: int

    def job_dir(self, exp: ExperimentSpec) -> Path:
        return self.run_dir / exp.name

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def job_seed(base_seed: int, name: str) -> int:
    """Per-job seed, stable across runs and independent of job order."""
    digest = hashlib.sha256(f"{base_seed}:{name}".encode()).hexdigest()
    return int(digest[:8], 16)


# ============ Shared helpers ============

def _solver_config(exp: ExperimentSpec, domain: DomainSpec, model=None) -> SolverConfig:
    s = exp.solver
    if s.mode == "constant_k":
        mode = ConstantK(s.k, s.k_tol)
    else:
        mode = Matched(model if model is not None else boundary_model(domain))
    return SolverConfig(h=s.h, mode=mode, tol=s.tol, max_newton=s.max_newton)


def _solve(exp: ExperimentSpec, domain: DomainSpec, model=None) -> GridSolution:
    cfg = _solver_config(exp, domain, model)
    return solve_blowup(domain, cfg)


def _ray_scale(mu: float, theta: float) -> float:
    """d / r along a corner ray at angle theta inside the tangent cone."""
    edge = min(theta, mu * math.pi - theta)
    return math.sin(edge) if edge < math.pi / 2 else 1.0


def _levels(t0: float, t_min: float, per_octave: int) -> int:
    if not t0 > t_min:
        raise ProfileError(f"sampling range [{t_min:.4g}, {t0:.4g}] is empty; refine the grid")
    return int(math.floor(per_octave * math.log2(t0 / t_min))) + 1


def _table_csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


class _Writer:
    """Collects the files a job writes."""

    def __init__(self, directory: Path):
        self.directory = directory
        self.files: list[Path] = []

    def text(self, name: str, text: str):
        path = self.directory / name
        write_text_atomic(path, text)
        self.files.append(path)

    def svg(self, name: str, data: bytes):
        path = self.directory / name
        write_svg(path, data)
        self.files.append(path)

    def json(self, name: str, report: dict):
        path = self.directory / name
        write_report_json(path, report)
        self.files.append(path)

    def solution(self, name: str, sol: GridSolution):
        path = self.directory / name
        sol.write_binary(path)
        self.files.append(path)


def _finish(exp: ExperimentSpec, out: _Writer, verdict: str, summary: dict) -> JobResult:
    report = {"name": exp.name, "kind": exp.kind, "binding": exp.binding, "verdict": verdict, **summary}
    out.json("report.json", report)
    log(f"{exp.name}: {verdict}")
    return JobResult(exp.name, exp.kind, exp.binding, verdict, summary, list(out.files))


def _rate_result(exp: ExperimentSpec, out: _Writer, profile, expected: float, tol: float,
                 window, title: str, extra: dict | None = None, max_slope: float | None = None) -> JobResult:
    report = check_estimate(profile, expected, tol, window, advisory=not exp.binding)
    verdict = report.verdict
    if max_slope is not None and report.slope > max_slope:
        verdict = "fail"
    out.text("profile.csv", profile_csv(profile))
    fit = fit_rate(profile, window)
    out.svg("profile.svg", profile_svg(profile, title, fit, expected))
    summary = {
        "slope": report.slope, "C": report.C, "rms": report.rms,
        "expected_power": expected, "slope_tol": tol, "max_slope": max_slope,
        "window": list(window) if window else None,
        "pre_asymptotic": report.pre_asymptotic, "lower_window_slope": report.lower_window_slope,
        "samples": len(profile),
    }
    summary.update(extra or {})
    return _finish(exp, out, verdict, summary)


def _rate_params(exp: ExperimentSpec, expected_default: float | None) -> tuple[float, float]:
    default_power, default_tol = RATE_DEFAULTS[exp.kind]
    expected = exp.expected_power
    if expected is None:
        expected = default_power if default_power is not None else expected_default
    tol = exp.slope_tol if exp.slope_tol is not None else default_tol
    return expected, tol


def _corner_sampling(exp: ExperimentSpec, domain: DomainSpec, corner: CornerSpec, h: float,
                     axis: str = "d", r_max: float | None = None) -> tuple[Sampler, tuple[float, float]]:
    """Ray from the corner (bisector unless theta is set) and its default
    window in the profile's axis."""
    theta = exp.theta if exp.theta is not None else corner.mu * math.pi / 2
    if not 0 < theta < corner.mu * math.pi:
        raise ConfigError(f"experiment {exp.name!r}: theta must lie in (0, {corner.mu:g} pi)")
    s = _ray_scale(corner.mu, theta)
    t0 = r_max if r_max is not None else chart_radius(domain, corner)
    t_min = WINDOW_LO_FACTOR * h / s
    sampler = Sampler.corner_ray(domain, corner, theta, t0, _levels(t0, t_min, exp.levels_per_octave),
                                 exp.levels_per_octave, axis)
    window = (WINDOW_LO_FACTOR * h, t0 * s) if axis == "d" else (t_min, t0)
    return sampler, exp.window or window


def _neg_log_distance(domain: DomainSpec) -> FunctionModel:
    return FunctionModel(lambda p: -np.log(interior_distances(domain, p)), "neg_log_d", strict=False)


# ============ Runners ============

def _cross_mode_check(exp: ExperimentSpec, domain: DomainSpec, h: float,
                      exact=None, centre=None) -> tuple[dict, GridSolution]:
    """ConstantK and Matched solves around boundary_model on one grid.

    Passes when the two limits agree within CROSS_MODE_TOL on the trust
    region and, given an exact solution, the ConstantK value at centre is
    within CENTRE_VALUE_TOL of it. Returns the summary and the Matched
    solution.
    """
    s = exp.solver
    model = boundary_model(domain)
    kmode = ConstantK(s.k, s.k_tol, model) if s and s.mode == "constant_k" else ConstantK(model=model)
    tol = s.tol if s else 1e-10
    max_newton = s.max_newton if s else 50
    grid = discretize(domain, h)
    by_k = solve_blowup(domain, SolverConfig(h=h, mode=kmode, tol=tol, max_newton=max_newton), grid)
    matched = solve_blowup(domain, SolverConfig(h=h, mode=Matched(model), tol=tol, max_newton=max_newton), grid)
    trust = matched.trust_mask
    gap = float(np.max(np.abs(by_k.u[trust] - matched.u[trust])))
    check = {"h": h, "k_final": by_k.mode["k_final"], "increments": by_k.mode["increments"],
             "gap": gap, "gap_tol": CROSS_MODE_TOL}
    passed = gap <= CROSS_MODE_TOL
    if exact is not None:
        value = evaluate(by_k, centre)
        check.update(centre_value=value, centre_error=abs(value - float(exact(centre))),
                     centre_tol=CENTRE_VALUE_TOL)
        passed = passed and check["centre_error"] <= CENTRE_VALUE_TOL
    check["passed"] = passed
    log(f"{exp.name}: constant-k (k={check['k_final']:g}) vs matched at h={h:g}: gap {gap:.3e}")
    return check, matched


def _cross_mode_h(exp: ExperimentSpec) -> float:
    return exp.solver.h if exp.solver else exp.hs[0]


def run_disk_validate(exp: ExperimentSpec, ctx: JobContext) -> JobResult:
    """Matched solves around boundary_model(disk) against the exact ball
    solution on {d >= max(0.1, 10h)} for each h, then the constant-k
    cross-check on the disk."""
    domain = exp.build_domain()
    r = float(domain.params.get("r", 1.0))
    x0 = domain.params.get("x0", (0.0, 0.0))
    exact = ball_solution(r, x0)
    solver = exp.solver
    base = SolverConfig(h=exp.hs[0], tol=solver.tol if solver else 1e-10,
                        max_newton=solver.max_newton if solver else 50)
    rows = convergence_study(domain, exact, list(exp.hs), base, model=boundary_model(domain), d_min=BLOWUP_CHECK_D)
    row = next((row for row in rows if row.h <= BLOWUP_CHECK_H + 1e-15), rows[-1])
    blowup = {"h": row.h, "max_error": row.max_error, "d_min": BLOWUP_CHECK_D}
    log(f"{exp.name}: blow-up error at h={row.h:g}: {row.max_error:.3e}")

    cross, sol = _cross_mode_check(exp, domain, _cross_mode_h(exp), exact, np.asarray(x0, dtype=float))
    out = _Writer(ctx.job_dir(exp))
    out.solution("solution.bin", sol)
    return _convergence_result(exp, out, rows, exact=True, blowup=blowup, cross=cross)


def _convergence_result(exp: ExperimentSpec, out: _Writer, rows: list[ConvergenceRow], exact: bool,
                        blowup: dict | None = None, cross: dict | None = None) -> JobResult:
    lo, hi = exp.order_range
    orders = [row.order for row in rows if row.order is not None]
    orders_ok = all(lo <= o <= hi for o in orders) if exact else all(o >= lo for o in orders)
    error_ok = blowup is None or blowup["max_error"] <= exp.error_tol
    cross_ok = cross is None or cross["passed"]
    verdict = "pass" if orders_ok and error_ok and cross_ok else "fail"
    out.text("convergence.csv", _table_csv(
        ["h", "max_error", "order", "nodes"],
        [[row.h, row.max_error, "-" if row.order is None else row.order, row.nodes] for row in rows]))
    out.svg("convergence.svg", loglog_svg([r.h for r in rows], [r.max_error for r in rows],
                                          exp.name, "h", "max error", expected_power=2.0))
    summary = {
        "rows": [{"h": r.h, "max_error": r.max_error, "order": r.order, "nodes": r.nodes} for r in rows],
        "slope": orders[-1] if orders else None, "C": None,
        "order_range": list(exp.order_range), "error_tol": exp.error_tol if blowup else None,
        "reference": "exact" if exact else "self",
        "blowup_check": blowup,
        "cross_mode_check": cross,
    }
    return _finish(exp, out, verdict, summary)


def run_convergence_study(exp: ExperimentSpec, ctx: JobContext) -> JobResult:
    """Exact-solution study on disks; otherwise self-convergence against a
    grid of half the finest spacing plus the constant-k cross-check."""
    domain = exp.build_domain()
    if domain.kind == "disk":
        return run_disk_validate(exp, ctx)
    out = _Writer(ctx.job_dir(exp))
    model = boundary_model(domain)
    solver = exp.solver
    tol = solver.tol if solver else 1e-10
    max_newton = solver.max_newton if solver else 50
    ref_h = exp.hs[-1] / 2
    ref = solve_blowup(domain, SolverConfig(h=ref_h, mode=Matched(model), tol=tol, max_newton=max_newton))
    rows: list[ConvergenceRow] = []
    for h in exp.hs:
        sol = solve_blowup(domain, SolverConfig(h=h, mode=Matched(model), tol=tol, max_newton=max_newton),
                           discretize(domain, h))
        trust = sol.trust_mask
        ref_vals = evaluate_many(ref, sol.grid.nodes[trust])
        ok = np.isfinite(ref_vals)
        if not ok.any():
            raise ProfileError(f"no trust-region nodes at h = {h} are covered by the reference grid")
        err = float(np.max(np.abs(sol.u[trust][ok] - ref_vals[ok])))
        order = None
        if rows and rows[-1].max_error > 0 and err > 0:
            order = math.log(rows[-1].max_error / err) / math.log(rows[-1].h / h)
        rows.append(ConvergenceRow(h, err, order, sol.grid.size))
        log(f"{exp.name}: h={h:g} self-error {err:.3e}")
    cross, _ = _cross_mode_check(exp, domain, _cross_mode_h(exp))
    return _convergence_result(exp, out, rows, exact=False, cross=cross)


def run_smooth_rate(exp: ExperimentSpec, ctx: JobContext) -> JobResult:
    """|u - (-log d + kappa d / 2)| along an inward normal; expects O(d^2)."""
    domain = exp.build_domain()
    if domain.corners:
        raise ConfigError(f"experiment {exp.name!r}: smooth-rate needs a domain without corners")
    sol = _solve(exp, domain)
    h = sol.h
    window = exp.window or (max(0.05, WINDOW_LO_FACTOR * h), 0.4)
    t_min = window[0]
    sampler = Sampler.normal_ray(domain, 0, 0.0, window[1], _levels(window[1], t_min, exp.levels_per_octave),
                                 exp.levels_per_octave)
    profile = error_profile(sol, boundary_model(domain), sampler, meta={"kind": "smooth"})
    expected, tol = _rate_params(exp, None)
    max_slope = exp.max_slope if exp.max_slope is not None else expected + tol
    out = _Writer(ctx.job_dir(exp))
    out.solution("solution.bin", sol)
    return _rate_result(exp, out, profile, expected, tol, window, f"{exp.name}: smooth boundary",
                        {"h": h}, max_slope)


def run_corner_rate(exp: ExperimentSpec, ctx: JobContext) -> JobResult:
    """|u - f_mu| along a corner ray; expects O(d)."""
    domain = exp.build_domain()
    if not domain.corners:
        raise ConfigError(f"experiment {exp.name!r}: corner-rate needs a domain with a corner")
    corner = domain.corners[0]
    sol = _solve(exp, domain)
    sampler, window = _corner_sampling(exp, domain, corner, sol.h)
    model = corner_model(domain, corner)
    model.strict = False
    profile = error_profile(sol, model, sampler, meta={"kind": "corner", "mu": corner.mu})
    expected, tol = _rate_params(exp, None)
    out = _Writer(ctx.job_dir(exp))
    out.solution("solution.bin", sol)
    return _rate_result(exp, out, profile, expected, tol, window, f"{exp.name}: corner mu={corner.mu:g}",
                        {"h": sol.h, "mu": corner.mu})


def run_c1alpha_rate(exp: ExperimentSpec, ctx: JobContext) -> JobResult:
    """|u + log d| at a C^{1,alpha} boundary point (mu = 1); the corner
    variant (mu != 1) profiles |u - f_mu| and is advisory by default."""
    domain = exp.build_domain()
    corner = domain.corners[0]
    alpha = float(domain.params.get("alpha", 0.5))
    sol = _solve(exp, domain)
    sampler, window = _corner_sampling(exp, domain, corner, sol.h)
    if corner.mu == 1.0:
        model = _neg_log_distance(domain)
    else:
        model = corner_model(domain, corner)
        model.strict = False
    profile = error_profile(sol, model, sampler, meta={"kind": "c1alpha", "alpha": alpha})
    expected, tol = _rate_params(exp, alpha)
    out = _Writer(ctx.job_dir(exp))
    out.solution("solution.bin", sol)
    return _rate_result(exp, out, profile, expected, tol, window, f"{exp.name}: C1,alpha alpha={alpha:g}",
                        {"h": sol.h, "alpha": alpha, "mu": corner.mu})


def run_localization(exp: ExperimentSpec, ctx: JobContext) -> JobResult:
    """|u_inner - u_outer| against r at the shared corner; expects r^{1/mu}."""
    inner, outer = exp.build_domain()
    corner = inner.corners[0]
    sol_in = _solve(exp, inner)
    sol_out = _solve(exp, outer)
    r_max = 0.5 * coincidence_radius(inner, outer)
    sampler, window = _corner_sampling(exp, inner, corner, sol_in.h, axis="r", r_max=r_max)
    result = localization_gap(sol_in, sol_out, corner, sampler)
    expected, tol = _rate_params(exp, 1.0 / corner.mu)
    out = _Writer(ctx.job_dir(exp))
    out.solution("inner.bin", sol_in)
    out.solution("outer.bin", sol_out)
    return _rate_result(exp, out, result.profile, expected, tol, window, f"{exp.name}: localization",
                        {"h": sol_in.h, "mu": corner.mu, "max_gap": result.max_gap})


def run_bracket_audit(exp: ExperimentSpec, ctx: JobContext) -> JobResult:
    """Tangent-ball brackets at random trust-region points."""
    domain = exp.build_domain()
    sol = _solve(exp, domain)
    count = exp.samples or 1000
    pts = sample_points(domain, ctx.rng(), count, d_min=TRUST_MARGIN * sol.trust_factor * sol.h)
    audit = bracket_audit(sol, pts)
    out = _Writer(ctx.job_dir(exp))
    out.solution("solution.bin", sol)
    return _finish(exp, out, "pass" if audit.passed else "fail",
                   {"h": sol.h, "audit": audit.to_dict(), "slope": None, "C": None})


def run_supersub_audit(exp: ExperimentSpec, ctx: JobContext) -> JobResult:
    """Barrier residual signs on Sobol cone points for every (mu, A)."""
    count = exp.samples or 10_000
    reports = [super_sub_check(mu, A, count, seed=ctx.seed) for mu in exp.mus for A in exp.amplitudes]
    out = _Writer(ctx.job_dir(exp))
    out.text("supersub.csv", _table_csv(
        ["mu", "A", "count", "super_violations", "sub_violations", "max_super_residual",
         "min_sub_residual", "max_margin_deviation"],
        [[r.mu, r.A, r.count, r.super_violations, r.sub_violations, r.max_super_residual,
          r.min_sub_residual, r.max_margin_deviation] for r in reports]))
    verdict = "pass" if all(r.passed for r in reports) else "fail"
    return _finish(exp, out, verdict, {"checks": [r.to_dict() for r in reports], "slope": None, "C": None})


def run_kahler_product(exp: ExperimentSpec, ctx: JobContext) -> JobResult:
    """Product of n copies of a planar factor: closed-form disks get the
    residual, centre and boundedness checks; corner factors get the
    corner-factor profile."""
    domain = exp.build_domain()
    n = exp.n
    out = _Writer(ctx.job_dir(exp))
    if domain.kind == "disk":
        return _kahler_disks(exp, ctx, domain, n, out)
    if not domain.corners:
        raise ConfigError(f"experiment {exp.name!r}: kahler-product needs a disk or a corner factor")
    corner = domain.corners[0]
    sol = _solve(exp, domain)
    factor = factor_from_liouville(sol, n, domain, on_factor=True)
    sampler, window = _corner_sampling(exp, domain, corner, sol.h)
    profile = corner_factor_profile(factor, corner, sampler)
    expected = exp.expected_power if exp.expected_power is not None else 1.0
    tol = exp.slope_tol if exp.slope_tol is not None else 0.2
    out.solution("factor.bin", sol)
    return _rate_result(exp, out, profile, expected, tol, window, f"{exp.name}: corner factor n={n}",
                        {"h": sol.h, "n": n, "mu": corner.mu, "scale": factor.scale})


def _kahler_disks(exp: ExperimentSpec, ctx: JobContext, domain: DomainSpec, n: int, out: _Writer) -> JobResult:
    r = float(domain.params.get("r", 1.0))
    x0 = np.asarray(domain.params.get("x0", (0.0, 0.0)), dtype=float)
    lam = factor_scale(n)
    factors = [factor_from_liouville(ball_solution(lam * r, tuple(lam * x0)), n, domain, index=i, seed=ctx.seed)
               for i in range(n)]
    spec = ProductDomainSpec(n, factors)
    u = compose_product(spec)
    rng = ctx.rng()
    count = exp.samples or 1000
    z = np.stack([sample_points(domain, rng, count, d_min=0.2 * r) for _ in range(n)], axis=1)
    h = spec.distances(z).min(axis=1) / 100
    residual = np.abs(monge_ampere_residual(spec, z, h, relative=True))
    centre = u(np.tile(x0, (n, 1)))
    centre_expected = product_lower_bound(n, r)
    bound = product_bound_check(spec, count, d_min=0.01 * r, seed=ctx.seed)

    out.text("bound_levels.csv", _table_csv(["d_min", "sup", "running_sup"],
                                            [[lv["d_min"], lv["sup"], lv["running_sup"]] for lv in bound.levels]))
    checks = {
        "max_relative_residual": float(residual.max()),
        "residual_ok": bool(residual.max() < MA_RTOL),
        "centre": centre,
        "centre_expected": centre_expected,
        "centre_ok": abs(centre - centre_expected) < CENTRE_TOL,
        "bound": bound.to_dict(),
    }
    passed = checks["residual_ok"] and checks["centre_ok"] and bound.stable
    return _finish(exp, out, "pass" if passed else "fail",
                   {"n": n, "scale": lam, "product": spec.to_dict(), "checks": checks, "slope": None, "C": None})


RUNNERS = {
    "disk-validate": run_disk_validate,
    "smooth-rate": run_smooth_rate,
    "c1alpha-rate": run_c1alpha_rate,
    "corner-rate": run_corner_rate,
    "localization": run_localization,
    "bracket-audit": run_bracket_audit,
    "supersub-audit": run_supersub_audit,
    "kahler-product": run_kahler_product,
    "convergence-study": run_convergence_study,
}


def run_experiment(exp: ExperimentSpec, run_dir: Path, base_seed: int) -> JobResult:
    ctx = JobContext(Path(run_dir), job_seed(base_seed, exp.name))
    log(f"{exp.name}: starting {exp.kind}")
    return RUNNERS[exp.kind](exp, ctx)
