"""Checks shared by ``irrinvest validate`` and the acceptance tests.

Each check returns a :class:`CheckResult`; a check that does not apply to the
configured problem (for instance a closed form under time-dependent
coefficients) is reported as skipped and does not count as a failure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .boundary import (BoundaryCurve, closed_form_boundary_infinite, general_R_root,
                       solve_boundary_backward, upper_bound_curve)
from .errors import DomainError
from .model import CobbDouglas, ModelParams, beta_roots
from .paths import Measure, TimeGrid, simulate_c0
from .policy import (LumpAtZero, NoInvest, ScaledBoundary, TrackBoundary, dominance,
                     evaluate_profit, supergradient, verify_foc)
from .stopping_oracle import (cross_validate, extract_boundary, log_ygrid, scale_reference,
                              solve_value_function)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    skipped: bool = False

    def line(self) -> str:
        tag = "SKIP" if self.skipped else ("PASS" if self.passed else "FAIL")
        return f"{tag}  {self.name}: {self.detail}"


def skipped(name, why) -> CheckResult:
    return CheckResult(name, True, why, skipped=True)


def derived_seed(seed: int, offset: int) -> int:
    return (int(seed) + offset) % 2**64


# --- closed forms ------------------------------------------------------------------

def random_closed_form_draws(n: int, rng: np.random.Generator, require_integrable=False):
    """Draws of ``(mu_C, sigma, mu_F, alpha)`` over the acceptance ranges."""
    out = []
    while len(out) < n:
        mu_F = rng.uniform(0.05, 2.0)
        s2 = rng.uniform(0.05, 2.0)
        mu_C = rng.uniform(0.0, 0.5)
        alpha = rng.uniform(0.1, 0.9)
        if require_integrable:
            bm = beta_roots(mu_C, math.sqrt(s2), mu_F).beta_minus
            if not -bm > alpha:
                continue
        out.append((mu_C, math.sqrt(s2), mu_F, alpha))
    return out


def check_closed_form_identity(n: int = 100, seed: int = 0, rtol: float = 1e-12) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for mu_C, sigma, mu_F, alpha in random_closed_form_draws(n, rng):
        cf = closed_form_boundary_infinite(ModelParams.constant(mu_C, sigma, mu_F), alpha)
        worst = max(worst, abs(cf.a - cf.a_from_roots) / cf.a)
    return CheckResult("closed-form identity", worst <= rtol,
                       f"max rel diff {worst:.3g} over {n} draws (tol {rtol:g})")


def check_general_R(n: int = 20, seed: int = 1, rtol: float = 1e-6) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for mu_C, sigma, mu_F, alpha in random_closed_form_draws(n, rng, require_integrable=True):
        a = closed_form_boundary_infinite(ModelParams.constant(mu_C, sigma, mu_F), alpha).a
        g = general_R_root(beta_roots(mu_C, sigma, mu_F), mu_F, CobbDouglas(alpha))
        worst = max(worst, abs(g - a) / a)
    return CheckResult("general-R reduction", worst <= rtol,
                       f"max rel diff {worst:.3g} over {n} draws (tol {rtol:g})")


# --- boundary ---------------------------------------------------------------------

def solve_reference_boundary(params, pf, grid, n_paths, seed, antithetic=False, threads=1):
    ens = simulate_c0(params, grid, n_paths, seed, Measure.TILTED,
                      antithetic=antithetic, threads=threads)
    return solve_boundary_backward(params, pf, grid, ens)


def check_long_horizon(curve: BoundaryCurve, params: ModelParams, pf, rtol=0.05) -> CheckResult:
    name = "long-horizon convergence"
    if not (isinstance(pf, CobbDouglas) and params.is_constant and params.sigma_C(0.0) > 0
            and params.mu_F(0.0) > 0):
        return skipped(name, "needs constant coefficients, sigma > 0, mu_F > 0, Cobb-Douglas")
    a = closed_form_boundary_infinite(params, pf.alpha).a
    rel = abs(curve.values[0] - a) / a
    return CheckResult(name, rel <= rtol,
                       f"y_hat(0)={curve.values[0]:.6g}, a={a:.6g}, rel diff {rel:.4g} (tol {rtol:g})")


def check_upper_bound(curve: BoundaryCurve, params, pf, n_stderr=3.0) -> CheckResult:
    name = "upper bound"
    if not isinstance(pf, CobbDouglas):
        return skipped(name, "bound is for Cobb-Douglas revenue")
    ystar = upper_bound_curve(params, pf, curve.grid.knots)
    viol = np.nonzero(curve.values > ystar + n_stderr * curve.stderr)[0]
    return CheckResult(name, viol.size == 0,
                       f"{viol.size} knots above y* + {n_stderr:g} stderr")


def check_shape(curve: BoundaryCurve, params, pf, n_stderr=3.0, max_fraction=0.02) -> CheckResult:
    name = "shape"
    terminal = curve.values[-1] == 0.0
    positive = bool(np.all(curve.values[:-1] > 0))
    if params.is_constant and isinstance(pf, CobbDouglas):
        viol = curve.monotonicity_violations(n_stderr)
        frac = viol.size / curve.grid.n_steps
        mono = frac <= max_fraction
        mono_txt = f"{viol.size} monotonicity violations ({frac:.2%}, allowed {max_fraction:.0%})"
    else:
        mono, mono_txt = True, "monotonicity not required for time-dependent coefficients"
    return CheckResult(name, terminal and positive and mono,
                       f"terminal zero {terminal}, interior positive {positive}, {mono_txt}")


def check_residuals(curve: BoundaryCurve, abs_tol=1e-9, n_stderr=2.0) -> CheckResult:
    bad = np.abs(curve.residual[:-1]) > np.maximum(abs_tol, n_stderr * curve.residual_stderr[:-1])
    return CheckResult("residual at root", not bad.any(),
                       f"{int(bad.sum())} knots with residual beyond tolerance")


# --- oracle -------------------------------------------------------------------------

def oracle_boundary(params, pf, grid: TimeGrid, n_ypoints: int, substeps=4, extrapolate=True,
                    gh_order=21, decades=3.0, match_tol=1e-9):
    yg = log_ygrid(scale_reference(params, pf), n_ypoints, decades)
    surface = solve_value_function(params, pf, grid, yg, substeps=substeps,
                                   extrapolate=extrapolate, gh_order=gh_order,
                                   match_tol=match_tol)
    return surface, extract_boundary(surface)


def check_cross_validation(curve, oracle_curve, rel_tol=0.05, abs_tol=0.02) -> CheckResult:
    report = cross_validate(curve, oracle_curve, rel_tol, abs_tol)
    return CheckResult("cross-validation", report.passed, report.summary())


def check_oracle_bound(surface) -> CheckResult:
    excess = float(np.max(surface.values - surface.payoff[:, None]))
    ok = excess <= 0.0 and float(surface.values.min()) >= 0.0
    return CheckResult("oracle v <= 1/f_C", ok, f"max(v - 1/f_C) = {excess:.3g}")


def check_oracle_refinement(params, pf, grid: TimeGrid, n_ypoints: int, coarse=None,
                            **kw) -> CheckResult:
    """Doubling both grids moves the boundary by less than one coarse cell."""
    if coarse is None:
        coarse = oracle_boundary(params, pf, grid, n_ypoints, **kw)
    surface_c, curve_c = coarse
    _, curve_f = oracle_boundary(params, pf, grid.refine(2), 2 * n_ypoints - 1, **kw)
    fine_on_coarse = curve_f.values[::2]
    cell = surface_c.log_cell
    inner = slice(0, -1)
    moved = np.abs(np.log(fine_on_coarse[inner]) - np.log(curve_c.values[inner]))
    worst = float(moved.max())
    return CheckResult("oracle grid refinement", worst < cell,
                       f"max log shift {worst:.4g} vs coarse log cell {cell:.4g}")


# --- policy -------------------------------------------------------------------------

def noinvest_profit_analytic(params: ModelParams, alpha: float, y0: float) -> float:
    mu_C, sigma, mu_F = params.mu_C(0.0), params.sigma_C(0.0), params.mu_F(0.0)
    lam = mu_F + alpha * mu_C + 0.5 * alpha * (1 - alpha) * sigma * sigma
    return (y0**alpha / alpha) * (-math.expm1(-lam * params.horizon_T)) / lam


def check_profit(params, pf, grid, n_paths, seed, y0s, band=3.0, threads=1) -> CheckResult:
    name = "no-investment profit"
    if not (isinstance(pf, CobbDouglas) and params.is_constant):
        return skipped(name, "analytic value needs constant coefficients and Cobb-Douglas")
    ens = simulate_c0(params, grid, n_paths, seed, Measure.ORIGINAL, threads=threads)
    parts, ok = [], True
    for y0 in y0s:
        est = evaluate_profit(NoInvest(), params, pf, ens, y0)
        exact = noinvest_profit_analytic(params, pf.alpha, y0)
        z = (est.mean - exact) / est.stderr
        ok &= abs(z) <= band
        parts.append(f"y0={y0:g}: {est.mean:.6g} vs {exact:.6g} ({z:+.2f} se)")
    return CheckResult(name, ok, "; ".join(parts))


@dataclass
class FocSuite:
    track: object
    noinvest: object
    dominance: list
    checks: list = field(default_factory=list)


def foc_suite(curve, params, pf, ensemble, foc_y0=1.0, noinvest_y0=0.01, n_probes=10,
              band=2.0) -> FocSuite:
    from .policy import default_probe_indices

    probes = default_probe_indices(ensemble.grid.n_steps, n_probes)
    rep = verify_foc(TrackBoundary(curve), params, pf, ensemble, foc_y0, probes, band)
    sg0 = supergradient(NoInvest(), 0, params, pf, ensemble, noinvest_y0)
    alts = {
        "no_invest": NoInvest(),
        "scaled_x0.5": ScaledBoundary(curve, 0.5),
        "scaled_x2": ScaledBoundary(curve, 2.0),
        "lump_at_zero": LumpAtZero(2.0 * curve.values[0]),
    }
    dom = dominance(TrackBoundary(curve), alts, params, pf, ensemble, foc_y0, band)
    checks = [
        CheckResult("FOC deterministic probes", rep.deterministic_pass,
                    ", ".join(f"{p.estimate:+.3g}" for p in rep.probes)),
        CheckResult("FOC hitting probes", rep.hitting is not None and rep.hitting.verdict,
                    "no hits" if rep.hitting is None else
                    f"{rep.hitting.estimate:+.4g} +/- {rep.hitting.stderr:.3g} (n={rep.hitting.n})"),
        CheckResult("FOC flat-off", rep.flat_off.verdict,
                    f"{rep.flat_off.estimate:+.4g} +/- {rep.flat_off.stderr:.3g}"),
        CheckResult("no-investment fails FOC at t=0", sg0.mean > band * sg0.stderr,
                    f"supergradient {sg0.mean:+.4g} +/- {sg0.stderr:.3g} at y0={noinvest_y0:g}"),
        CheckResult("dominance", all(d.passed for d in dom),
                    "; ".join(f"{d.alternative}: {d.diff_mean:+.4g} +/- {d.stderr:.3g}" for d in dom)),
    ]
    return FocSuite(rep, sg0, dom, checks)


def run_all(cfg, threads: int = 1, log=print) -> list:
    """Every check for a validated :class:`RunConfig`; returns the results."""
    params, pf = cfg.params, cfg.production_function()
    tol, mc = cfg.tolerances, cfg.monte_carlo
    grid = TimeGrid.uniform(cfg.grid.T, cfg.grid.n_steps)
    results = []

    def add(res):
        results.append(res)
        log(res.line())

    if isinstance(pf, CobbDouglas):
        add(check_closed_form_identity())
        add(check_general_R())
    curve = solve_reference_boundary(params, pf, grid, mc.n_paths, mc.seed, mc.antithetic, threads)
    add(check_long_horizon(curve, params, pf, tol.horizon_rel))
    add(check_upper_bound(curve, params, pf, tol.bound_stderr))
    add(check_shape(curve, params, pf, tol.tol_mono, tol.mono_fraction))
    add(check_residuals(curve))
    orc = cfg.oracle
    okw = dict(substeps=orc.substeps, extrapolate=orc.extrapolate, gh_order=orc.gh_order,
               decades=orc.decades, match_tol=tol.match_tol)
    try:
        coarse = oracle_boundary(params, pf, grid, cfg.grid.n_ypoints, **okw)
    except DomainError as exc:
        add(CheckResult("stopping oracle", False, str(exc)))
    else:
        add(check_cross_validation(curve, coarse[1], tol.cross_rel, tol.cross_abs))
        add(check_oracle_bound(coarse[0]))
        add(check_oracle_refinement(params, pf, grid, cfg.grid.n_ypoints, coarse, **okw))
    add(check_profit(params, pf, grid, mc.n_profit_paths, derived_seed(mc.seed, 2),
                     cfg.policy.profit_y0, tol.profit_band, threads))
    ens = simulate_c0(params, grid, mc.n_policy_paths, derived_seed(mc.seed, 1), Measure.ORIGINAL,
                      antithetic=mc.antithetic, threads=threads)
    suite = foc_suite(curve, params, pf, ens, cfg.policy.foc_y0, cfg.policy.noinvest_y0,
                      cfg.policy.n_probes, tol.foc_band)
    for res in suite.checks:
        add(res)
    return results
