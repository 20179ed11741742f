"""Run configuration: TOML file, validation and hashing.

Every field is checked before any computation starts; a bad value raises
:class:`ConfigError` naming the dotted field path.  See
``configs/reference.toml`` for a complete example.
"""

from __future__ import annotations

import hashlib
import importlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field, replace

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, DomainError
from .model import CobbDouglas, CustomProduction, ModelParams, PiecewiseConstant


@dataclass(frozen=True)
class ProductionConfig:
    kind: str = "cobb_douglas"
    alpha: float = 0.5
    module: str = ""
    revenue: str = ""
    marginal: str = ""


@dataclass(frozen=True)
class GridConfig:
    T: float = 10.0
    n_steps: int = 200
    n_ypoints: int = 400


@dataclass(frozen=True)
class MonteCarloConfig:
    n_paths: int = 20000
    n_policy_paths: int = 20000
    n_profit_paths: int = 100000
    seed: int = 12345
    antithetic: bool = False


@dataclass(frozen=True)
class OracleConfig:
    substeps: int = 4
    extrapolate: bool = True
    gh_order: int = 21
    decades: float = 3.0


@dataclass(frozen=True)
class ToleranceConfig:
    tol_mono: float = 3.0          # monotonicity slack in root stderrs
    mono_fraction: float = 0.02    # allowed share of monotonicity violations
    bound_stderr: float = 3.0      # upper-bound slack in root stderrs
    match_tol: float = 1e-9        # oracle stopping tolerance, relative to 1/f_C
    foc_band: float = 2.0
    cross_rel: float = 0.05
    cross_abs: float = 0.02
    horizon_rel: float = 0.05
    profit_band: float = 3.0


@dataclass(frozen=True)
class PolicyConfig:
    n_probes: int = 10
    foc_y0: float = 1.0
    noinvest_y0: float = 0.01
    profit_y0: tuple = (0.1, 0.3056, 1.0)


@dataclass(frozen=True)
class RunConfig:
    model: dict
    production: ProductionConfig = ProductionConfig()
    grid: GridConfig = GridConfig()
    monte_carlo: MonteCarloConfig = MonteCarloConfig()
    oracle: OracleConfig = OracleConfig()
    tolerances: ToleranceConfig = ToleranceConfig()
    policy: PolicyConfig = PolicyConfig()
    output_dir: str = "out"
    params: ModelParams = field(default=None, compare=False, repr=False)

    def production_function(self):
        return build_production(self.production)

    def with_seed(self, seed: int) -> "RunConfig":
        _check_seed(seed, "monte_carlo.seed")
        return replace(self, monte_carlo=replace(self.monte_carlo, seed=int(seed)))

    def canonical(self) -> dict:
        """Effective configuration as plain data, excluding output location."""
        d = {
            "model": self.model,
            "production": asdict(self.production),
            "grid": asdict(self.grid),
            "monte_carlo": asdict(self.monte_carlo),
            "oracle": asdict(self.oracle),
            "tolerances": asdict(self.tolerances),
            "policy": {**asdict(self.policy), "profit_y0": list(self.policy.profit_y0)},
        }
        d["monte_carlo"].pop("seed")
        return d

    def sha256(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def header(self) -> str:
        return f"config_sha256={self.sha256()} seed={self.monte_carlo.seed}"


def _check_seed(seed, name):
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError(name, "must be an unsigned 64-bit integer")


def _section(raw: dict, name: str, cls):
    data = raw.get(name, {})
    if not isinstance(data, dict):
        raise ConfigError(name, "must be a table")
    known = set(cls.__dataclass_fields__)
    for key in data:
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown field")
    try:
        return cls(**data)
    except TypeError as exc:  # pragma: no cover - guarded by the key check
        raise ConfigError(name, str(exc)) from None


def _positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(name, f"must be an integer >= {minimum}")


def _positive(value, name, allow_zero=False):
    ok = isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
    if not ok or value < 0 or (value == 0 and not allow_zero):
        raise ConfigError(name, "must be a positive number" if not allow_zero else "must be >= 0")


def _coefficient(value, name):
    try:
        return PiecewiseConstant.coerce(value)
    except (DomainError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(name, f"invalid coefficient ({exc})") from None


def build_production(pc: ProductionConfig):
    if pc.kind == "cobb_douglas":
        return CobbDouglas(pc.alpha)
    mod = importlib.import_module(pc.module)
    return CustomProduction(getattr(mod, pc.revenue), getattr(mod, pc.marginal), name=pc.module)


def from_dict(raw: dict) -> RunConfig:
    """Validate a parsed configuration mapping."""
    if "model" not in raw or not isinstance(raw["model"], dict):
        raise ConfigError("model", "missing [model] table")
    model = dict(raw["model"])
    for key in model:
        if key not in ("mu_C", "sigma_C", "f_C", "mu_F", "y0"):
            raise ConfigError(f"model.{key}", "unknown field")
    coeffs = {}
    for key, default in (("mu_C", None), ("sigma_C", None), ("mu_F", None), ("f_C", 1.0)):
        if key not in model and default is None:
            raise ConfigError(f"model.{key}", "missing")
        value = model.get(key, default)
        coeffs[key] = _coefficient(value, f"model.{key}")
        model[key] = coeffs[key].to_data()
    if coeffs["mu_C"].min() < 0:
        raise ConfigError("model.mu_C", "must be nonnegative")
    if coeffs["sigma_C"].min() < 0:
        raise ConfigError("model.sigma_C", "must be nonnegative")
    if coeffs["mu_F"].min() < 0:
        raise ConfigError("model.mu_F", "must be nonnegative")
    if coeffs["f_C"].min() <= 0:
        raise ConfigError("model.f_C", "must be bounded below by a positive constant")
    model.setdefault("y0", 1.0)
    _positive(model["y0"], "model.y0")

    prod = _section(raw, "production", ProductionConfig)
    if prod.kind == "cobb_douglas":
        a = prod.alpha
        if isinstance(a, bool) or not isinstance(a, (int, float)) or not 0 < a < 1:
            raise ConfigError("production.alpha", f"must lie in (0, 1), got {a!r}")
    elif prod.kind == "custom":
        for key in ("module", "revenue", "marginal"):
            if not getattr(prod, key):
                raise ConfigError(f"production.{key}", "required for a custom production function")
        try:
            build_production(prod)
        except (ImportError, AttributeError, DomainError) as exc:
            raise ConfigError("production", f"cannot load custom production ({exc})") from None
    else:
        raise ConfigError("production.kind", "must be 'cobb_douglas' or 'custom'")

    grid = _section(raw, "grid", GridConfig)
    _positive(grid.T, "grid.T")
    _positive_int(grid.n_steps, "grid.n_steps")
    _positive_int(grid.n_ypoints, "grid.n_ypoints", 3)

    mc = _section(raw, "monte_carlo", MonteCarloConfig)
    for key in ("n_paths", "n_policy_paths", "n_profit_paths"):
        _positive_int(getattr(mc, key), f"monte_carlo.{key}", 2)
    _check_seed(mc.seed, "monte_carlo.seed")
    if not isinstance(mc.antithetic, bool):
        raise ConfigError("monte_carlo.antithetic", "must be true or false")

    orc = _section(raw, "oracle", OracleConfig)
    _positive_int(orc.substeps, "oracle.substeps")
    _positive_int(orc.gh_order, "oracle.gh_order", 2)
    _positive(orc.decades, "oracle.decades")
    if not isinstance(orc.extrapolate, bool):
        raise ConfigError("oracle.extrapolate", "must be true or false")

    tol = _section(raw, "tolerances", ToleranceConfig)
    for key in ToleranceConfig.__dataclass_fields__:
        _positive(getattr(tol, key), f"tolerances.{key}", allow_zero=True)

    pol = _section(raw, "policy", PolicyConfig)
    _positive_int(pol.n_probes, "policy.n_probes")
    _positive(pol.foc_y0, "policy.foc_y0")
    _positive(pol.noinvest_y0, "policy.noinvest_y0")
    pol = replace(pol, profit_y0=tuple(pol.profit_y0))
    for j, y in enumerate(pol.profit_y0):
        _positive(y, f"policy.profit_y0[{j}]")

    out = raw.get("output", {}).get("dir", "out")
    params = ModelParams(mu_C=coeffs["mu_C"], sigma_C=coeffs["sigma_C"], f_C=coeffs["f_C"],
                         mu_F=coeffs["mu_F"], horizon_T=float(grid.T), y0=float(model["y0"]))
    return RunConfig(model=model, production=prod, grid=grid, monte_carlo=mc, oracle=orc,
                     tolerances=tol, policy=pol, output_dir=str(out), params=params)


def load_config(path) -> RunConfig:
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("<file>", f"not valid TOML ({exc})") from None
    return from_dict(raw)
