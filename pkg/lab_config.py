"""Experiment configuration: TOML files describing a batch of jobs.

    seed = 7
    out = "runs/corner"
    jobs = 2

    [[experiment]]
    name = "corner-half"
    kind = "corner-rate"
    domain = { kind = "curved_corner", mu = 0.5, amplitude = 0.1 }
    solver = { h = 0.00390625, mode = "matched" }
"""

import math

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from geometry import DOMAIN_KINDS, build_domain
from lab_utils import ConfigError, ConstructionError
from store import sha256_text

EXPERIMENT_KINDS = (
    "disk-validate", "smooth-rate", "c1alpha-rate", "corner-rate", "localization",
    "bracket-audit", "supersub-audit", "kahler-product", "convergence-study",
)
SOLVER_MODES = ("matched", "constant_k")

# kind -> default domain table; None means the kind takes no domain
DEFAULT_DOMAINS: dict[str, dict | None] = {
    "disk-validate": {"kind": "disk"},
    "smooth-rate": {"kind": "disk"},
    "c1alpha-rate": {"kind": "c1alpha_corner", "alpha": 0.5, "M": 0.5},
    "corner-rate": {"kind": "curved_corner", "mu": 0.5, "amplitude": 0.1},
    "localization": {"kind": "localized_pair", "mu": 0.5},
    "bracket-audit": {"kind": "disk"},
    "supersub-audit": None,
    "kahler-product": {"kind": "disk"},
    "convergence-study": {"kind": "disk"},
}

# kinds whose runner never solves on a grid
NO_SOLVER = ("supersub-audit",)
DEFAULT_K = [float(k) for k in range(2, 25, 2)]
DEFAULT_K_TOL = 1e-6
KAHLER_FACTOR_KINDS = ("disk", "sector", "curved_corner")

# (key, type, default, help); default None means "per kind" or "unset"
EXPERIMENT_KEYS: list[tuple[str, str, Any, str]] = [
    ("name", "str", None, "unique job name, also the output subdirectory"),
    ("kind", "str", None, "one of " + ", ".join(EXPERIMENT_KINDS)),
    ("binding", "bool", None, "failing verdict fails the run (advisory otherwise)"),
    ("domain", "table", None, "build_domain kind and parameters"),
    ("solver", "table", None, "h, mode, k, k_tol, tol, max_newton"),
    ("window", "[float, float]", None, "rate-fit window in d (or r for localization)"),
    ("expected_power", "float", None, "slope the estimate asserts"),
    ("slope_tol", "float", None, "allowed shortfall of the fitted slope"),
    ("max_slope", "float", None, "upper slope limit (smooth-rate)"),
    ("samples", "int", None, "sample count (audits, product checks)"),
    ("levels_per_octave", "int", 4, "profile samples per halving of d"),
    ("theta", "float", None, "corner ray angle from sigma1 (default bisector)"),
    ("n", "int", 2, "complex dimension for kahler-product"),
    ("hs", "[float]", None, "grid spacings for disk-validate / convergence-study"),
    ("error_tol", "float", 5e-4, "max trust-region error at the finest h (disk-validate)"),
    ("order_range", "[float, float]", [1.5, 2.5], "accepted empirical orders"),
    ("mus", "[float]", [0.3, 0.9, 1.5], "cone openings for supersub-audit"),
    ("amplitudes", "[float]", [0.5, 2.0], "barrier constants A for supersub-audit"),
]
SOLVER_KEYS: list[tuple[str, str, Any, str]] = [
    ("h", "float", None, "grid spacing (required)"),
    ("mode", "str", "matched", "matched | constant_k"),
    ("k", "[float]", DEFAULT_K, "constant_k boundary values"),
    ("k_tol", "float", DEFAULT_K_TOL, "constant_k stop increment on the trust region"),
    ("tol", "float", 1e-10, "Newton residual tolerance"),
    ("max_newton", "int", 50, "Newton iteration cap"),
]
TOP_KEYS: list[tuple[str, str, Any, str]] = [
    ("seed", "int", 0, "base random seed"),
    ("out", "str", "runs/latest", "output directory (--out overrides)"),
    ("jobs", "int", 1, "concurrent jobs (--jobs overrides)"),
]

# kind -> (expected_power, slope_tol); corner kinds read mu/alpha from the domain
RATE_DEFAULTS = {
    "smooth-rate": (2.0, 0.2),
    "corner-rate": (1.0, 0.2),
    "c1alpha-rate": (None, 0.2),
    "localization": (None, 0.4),
}


@dataclass(frozen=True)
class SolverSettings:
    h: float
    mode: str = "matched"
    k: tuple[float, ...] = tuple(DEFAULT_K)
    k_tol: float = DEFAULT_K_TOL
    tol: float = 1e-10
    max_newton: int = 50

    def to_dict(self) -> dict:
        return {"h": self.h, "mode": self.mode, "k": list(self.k), "k_tol": self.k_tol,
                "tol": self.tol, "max_newton": self.max_newton}


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    kind: str
    binding: bool
    domain: dict | None
    solver: SolverSettings | None
    window: tuple[float, float] | None = None
    expected_power: float | None = None
    slope_tol: float | None = None
    max_slope: float | None = None
    samples: int | None = None
    levels_per_octave: int = 4
    theta: float | None = None
    n: int = 2
    hs: tuple[float, ...] | None = None
    error_tol: float = 5e-4
    order_range: tuple[float, float] = (1.5, 2.5)
    mus: tuple[float, ...] = (0.3, 0.9, 1.5)
    amplitudes: tuple[float, ...] = (0.5, 2.0)

    def build_domain(self):
        params = dict(self.domain)
        return build_domain(params.pop("kind"), **params)


@dataclass(frozen=True)
class LabConfig:
    seed: int
    out: str
    jobs: int
    experiments: tuple[ExperimentSpec, ...]
    sha256: str = ""
    source: str = field(default="", repr=False)

    def experiment(self, name: str) -> ExperimentSpec:
        for exp in self.experiments:
            if exp.name == name:
                return exp
        raise KeyError(name)


# ============ Field checks ============

def _where(name: str | None, key: str) -> str:
    return f"experiment {name!r}: {key}" if name else key


def _number(value, where: str, positive: bool = False, integer: bool = False) -> float | int:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where} must be a number, got {value!r}")
    if integer and not isinstance(value, int):
        raise ConfigError(f"{where} must be an integer, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(f"{where} must be finite")
    if positive and not value > 0:
        raise ConfigError(f"{where} must be positive, got {value!r}")
    return value


def _numbers(value, where: str, length: int | None = None, positive: bool = False) -> tuple[float, ...]:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{where} must be a non-empty list")
    if length is not None and len(value) != length:
        raise ConfigError(f"{where} must have {length} entries")
    return tuple(float(_number(v, where, positive)) for v in value)


def _reject_unknown(table: dict, allowed, where: str):
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {', '.join(unknown)}")


def _parse_solver(raw, name: str) -> SolverSettings:
    if not isinstance(raw, dict):
        raise ConfigError(f"experiment {name!r}: solver must be a table")
    _reject_unknown(raw, [k for k, *_ in SOLVER_KEYS], _where(name, "solver"))
    if "h" not in raw:
        raise ConfigError(f"experiment {name!r}: solver.h is required")
    mode = raw.get("mode", "matched")
    if mode not in SOLVER_MODES:
        raise ConfigError(f"experiment {name!r}: solver.mode must be one of {SOLVER_MODES}, got {mode!r}")
    k = _numbers(raw.get("k", DEFAULT_K), _where(name, "solver.k"))
    if len(k) < 2 or any(b <= a for a, b in zip(k, k[1:])):
        raise ConfigError(f"experiment {name!r}: solver.k must be strictly increasing with >= 2 values")
    return SolverSettings(
        h=float(_number(raw["h"], _where(name, "solver.h"), positive=True)),
        mode=mode,
        k=k,
        k_tol=float(_number(raw.get("k_tol", DEFAULT_K_TOL), _where(name, "solver.k_tol"), positive=True)),
        tol=float(_number(raw.get("tol", 1e-10), _where(name, "solver.tol"), positive=True)),
        max_newton=int(_number(raw.get("max_newton", 50), _where(name, "solver.max_newton"), positive=True,
                               integer=True)),
    )


def _parse_domain(raw, kind: str, name: str) -> dict | None:
    default = DEFAULT_DOMAINS[kind]
    if default is None:
        if raw is not None:
            raise ConfigError(f"experiment {name!r}: kind {kind} takes no domain table")
        return None
    table = dict(default if raw is None else raw)
    if not isinstance(table.get("kind"), str) or table["kind"] not in DOMAIN_KINDS:
        raise ConfigError(f"experiment {name!r}: domain.kind must be one of {DOMAIN_KINDS}")
    if kind == "localization" and table["kind"] != "localized_pair":
        raise ConfigError(f"experiment {name!r}: localization needs a localized_pair domain")
    if kind != "localization" and table["kind"] == "localized_pair":
        raise ConfigError(f"experiment {name!r}: localized_pair is only valid for localization")
    params = {k: v for k, v in table.items() if k != "kind"}
    try:
        build_domain(table["kind"], **params)
    except ConstructionError as e:
        raise ConfigError(f"experiment {name!r}: invalid domain: {e}") from e
    return table


def _default_binding(kind: str, domain: dict | None) -> bool:
    # the C^{1,alpha} corner variant (mu != 1) is an advisory experiment
    if kind == "c1alpha-rate" and domain is not None and float(domain.get("mu", 1.0)) != 1.0:
        return False
    return True


def _parse_experiment(raw, index: int) -> ExperimentSpec:
    if not isinstance(raw, dict):
        raise ConfigError(f"experiment #{index} must be a table")
    name = raw.get("name")
    if not isinstance(name, str) or not name or "/" in name or name.startswith("."):
        raise ConfigError(f"experiment #{index}: name must be a non-empty plain string")
    _reject_unknown(raw, [k for k, *_ in EXPERIMENT_KEYS], f"experiment {name!r}")
    kind = raw.get("kind")
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"experiment {name!r}: kind must be one of {EXPERIMENT_KINDS}, got {kind!r}")
    domain = _parse_domain(raw.get("domain"), kind, name)

    solver = None
    if kind in NO_SOLVER:
        if "solver" in raw:
            raise ConfigError(f"experiment {name!r}: kind {kind} takes no solver table")
    elif "solver" in raw:
        solver = _parse_solver(raw["solver"], name)
    elif kind not in ("kahler-product", "disk-validate", "convergence-study"):
        raise ConfigError(f"experiment {name!r}: a solver table is required for {kind}")
    if kind == "kahler-product" and domain["kind"] not in KAHLER_FACTOR_KINDS:
        raise ConfigError(f"experiment {name!r}: kahler-product factors must be one of {KAHLER_FACTOR_KINDS}")
    if kind == "kahler-product" and domain["kind"] != "disk" and solver is None:
        raise ConfigError(f"experiment {name!r}: kahler-product on a {domain['kind']} factor needs a solver table")

    binding = raw.get("binding", _default_binding(kind, domain))
    if not isinstance(binding, bool):
        raise ConfigError(f"experiment {name!r}: binding must be true or false")

    fields: dict[str, Any] = {}
    if "window" in raw:
        lo, hi = _numbers(raw["window"], _where(name, "window"), length=2, positive=True)
        if not lo < hi:
            raise ConfigError(f"experiment {name!r}: window must satisfy lo < hi")
        fields["window"] = (lo, hi)
    for key in ("expected_power", "max_slope"):
        if key in raw:
            fields[key] = float(_number(raw[key], _where(name, key)))
    for key in ("slope_tol", "error_tol", "theta"):
        if key in raw:
            fields[key] = float(_number(raw[key], _where(name, key), positive=True))
    for key in ("samples", "levels_per_octave", "n"):
        if key in raw:
            fields[key] = int(_number(raw[key], _where(name, key), positive=True, integer=True))
    for key in ("hs", "mus", "amplitudes"):
        if key in raw:
            fields[key] = _numbers(raw[key], _where(name, key), positive=True)
    if "order_range" in raw:
        fields["order_range"] = _numbers(raw["order_range"], _where(name, "order_range"), length=2)
    if "mus" in fields and any(not 0 < m < 2 for m in fields["mus"]):
        raise ConfigError(f"experiment {name!r}: mus must lie in (0, 2)")
    if kind in ("disk-validate", "convergence-study"):
        hs = fields.get("hs") or (1 / 32, 1 / 64, 1 / 128)
        if len(hs) < 2:
            raise ConfigError(f"experiment {name!r}: hs needs at least two spacings")
        if any(b >= a for a, b in zip(hs, hs[1:])):
            raise ConfigError(f"experiment {name!r}: hs must be strictly decreasing")
        fields["hs"] = tuple(hs)
    return ExperimentSpec(name=name, kind=kind, binding=binding, domain=domain, solver=solver, **fields)


def parse_config(text: str) -> LabConfig:
    """Parse and validate a TOML config.

    Raises:
        ConfigError: Malformed TOML or any invalid field.
    """
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"invalid TOML: {e}") from e
    _reject_unknown(raw, [k for k, *_ in TOP_KEYS] + ["experiment"], "config")
    experiments = raw.get("experiment")
    if not isinstance(experiments, list) or not experiments:
        raise ConfigError("config needs at least one [[experiment]] table")
    parsed = tuple(_parse_experiment(e, i) for i, e in enumerate(experiments))
    names = [e.name for e in parsed]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ConfigError(f"duplicate experiment names: {', '.join(dupes)}")
    out = raw.get("out", "runs/latest")
    if not isinstance(out, str) or not out:
        raise ConfigError("out must be a non-empty string")
    return LabConfig(
        seed=int(_number(raw.get("seed", 0), "seed", integer=True)),
        out=out,
        jobs=int(_number(raw.get("jobs", 1), "jobs", positive=True, integer=True)),
        experiments=parsed,
        sha256=sha256_text(text),
        source=text,
    )


def load_config(path: Path) -> LabConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    return parse_config(text)


def _schema_rows(title: str, keys) -> list[str]:
    lines = [title]
    for key, typ, default, help_text in keys:
        shown = "-" if default is None else repr(default)
        lines.append(f"  {key:<18} {typ:<15} {shown:<22} {help_text}")
    return lines


def schema_text() -> str:
    """Human-readable list of accepted keys, types and defaults."""
    lines = _schema_rows("top level", TOP_KEYS)
    lines += _schema_rows("[[experiment]]", EXPERIMENT_KEYS)
    lines += _schema_rows("[experiment.solver]", SOLVER_KEYS)
    lines.append("domain kinds: " + ", ".join(DOMAIN_KINDS))
    lines.append("defaults per kind:")
    for kind in EXPERIMENT_KINDS:
        dom = DEFAULT_DOMAINS[kind]
        lines.append(f"  {kind:<18} domain={dom if dom is not None else '-'}")
    return "\n".join(lines) + "\n"
