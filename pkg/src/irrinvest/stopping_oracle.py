"""Dynamic-programming oracle for the shadow-value stopping problem.

``v(t, y)`` is the value of stopping a discounted running cost ``R_c(Y)``
against the terminal-free stopping payoff ``1/f_C``, with ``Y`` following the
tilted-measure dynamics of ``C0``.  The backward recursion on a log-spaced
capacity grid is

    v_i(y) = min(1/f_C(t_i), R_c(y) dt + exp(-mu_bar dt) E[v_{i+1}(y G)])

with ``G`` the one-step lognormal factor, the expectation done by
Gauss-Hermite quadrature and ``v_{i+1}`` interpolated monotonically in
``log y``.  The stopping boundary is the largest ``y`` where stopping is
optimal.

A plain Bermudan recursion converges to the continuously monitored problem
only like ``sqrt(dt)``.  The solver therefore subdivides each output step and,
by default, runs two subdivision levels (``s`` and ``4 s``) and extrapolates
the extracted boundary in ``sqrt(dt)``: ``b = 2 b_fine - b_coarse``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .boundary import BoundaryCurve, Method, upper_bound_curve
from .errors import CoverageError, DomainError, ExtractionError
from .model import CobbDouglas, ModelParams, ProductionFunction
from .paths import Measure, TimeGrid, step_moments


@dataclass
class ValueSurface:
    """Value slices on ``tgrid x ygrid``.

    ``gap`` holds ``continuation - 1/f_C`` at each knot; ``coarse_gap`` the
    same quantity from the coarser subdivision level when extrapolation is on.
    """

    tgrid: TimeGrid
    ygrid: np.ndarray
    values: np.ndarray
    stop_flag: np.ndarray
    gap: np.ndarray
    payoff: np.ndarray
    coarse_gap: np.ndarray | None = None
    match_tol: float = 1e-9
    substeps: int = 4
    flags: list = field(default_factory=list)

    @property
    def log_cell(self) -> float:
        """Log-spacing of the capacity grid."""
        ly = np.log(self.ygrid)
        return float(ly[1] - ly[0])

    def write_csv(self, path, comment: str | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "y", "v", "stop"])
            for i, t in enumerate(self.tgrid.knots):
                for y, v, s in zip(self.ygrid, self.values[i], self.stop_flag[i]):
                    w.writerow([repr(float(t)), repr(float(y)), repr(float(v)), int(s)])


def scale_reference(params: ModelParams, pf: ProductionFunction) -> float:
    """Rough boundary scale at ``t = 0`` used to size the capacity grid."""
    if isinstance(pf, CobbDouglas):
        return upper_bound_curve(params, pf, 0.0)
    horizon = params.mu_bar.discounted_length(0.0, params.horizon_T)
    target = 1.0 / (params.f_C(0.0) * horizon)
    # deterministic proxy: R_c(y) * discounted horizon = 1/f_C
    lo, hi = 1e-12, 1e12
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if float(pf.marginal(mid)) > target:
            lo = mid
        else:
            hi = mid
    return math.sqrt(lo * hi)


def log_ygrid(a_ref: float, n_points: int, decades: float = 3.0) -> np.ndarray:
    """``n_points`` log-spaced levels over ``[a_ref 10**-decades, a_ref 10**decades]``."""
    if n_points < 3:
        raise DomainError("need at least three capacity levels")
    ly = np.linspace(math.log(a_ref) - decades * math.log(10), math.log(a_ref) + decades * math.log(10),
                     n_points)
    return np.exp(ly)


def _gauss_hermite(order: int):
    z, w = np.polynomial.hermite_e.hermegauss(order)
    return z, w / w.sum()


def _run(params, pf, tgrid, ly, substeps, order):
    """One backward pass; returns (values, gap, payoff) at the output knots."""
    fine = tgrid.refine(substeps)
    mean, var = step_moments(params, fine, Measure.TILTED)
    disc = np.exp(-params.mu_bar.integral(fine.knots[:-1], fine.knots[1:]))
    dts = fine.dt
    z, wq = _gauss_hermite(order)
    yv = np.exp(ly)
    rc = pf.marginal(yv)
    N, M = tgrid.n_steps, ly.size
    values = np.zeros((N + 1, M))
    gap = np.zeros((N + 1, M))
    payoff = np.zeros(N + 1)
    payoff[N] = 1.0 / params.f_C(tgrid.T)
    gap[N] = -payoff[N]  # nothing left to stop against at the horizon
    v = np.zeros(M)
    for k in range(fine.n_steps - 1, -1, -1):
        x1 = np.clip(ly[:, None] + mean[k] + math.sqrt(var[k]) * z[None, :], ly[0], ly[-1])
        nxt = PchipInterpolator(ly, v)(x1) @ wq
        stop = 1.0 / params.f_C(fine.knots[k])
        cont = rc * dts[k] + disc[k] * nxt
        v = np.minimum(stop, cont)
        if k % substeps == 0:
            i = k // substeps
            values[i], gap[i], payoff[i] = v, cont - stop, stop
    return values, gap, payoff


def solve_value_function(params: ModelParams, pf: ProductionFunction, tgrid: TimeGrid,
                         ygrid, *, substeps: int = 4, extrapolate: bool = True,
                         gh_order: int = 21, match_tol: float = 1e-9,
                         check_span: bool = True) -> ValueSurface:
    """Backward recursion for ``v`` on ``tgrid x ygrid``.

    ``ygrid`` must be log-uniform.  With ``extrapolate`` the surface carries a
    second, ``4 x substeps`` pass whose values are reported and whose gap is
    combined with the coarse one at extraction time.
    """
    ygrid = np.asarray(ygrid, dtype=float)
    if ygrid.ndim != 1 or ygrid.size < 3 or np.any(ygrid <= 0):
        raise DomainError("ygrid must hold at least three positive levels")
    ly = np.log(ygrid)
    if not np.allclose(np.diff(ly), ly[1] - ly[0], rtol=1e-9, atol=0.0):
        raise DomainError("ygrid must be log-uniform")
    if tgrid.T > params.horizon_T * (1 + 1e-12):
        raise DomainError("time grid extends beyond the horizon")
    if check_span:
        a_ref = scale_reference(params, pf)
        if ygrid[0] > 1e-3 * a_ref * (1 + 1e-9) or ygrid[-1] < 1e3 * a_ref * (1 - 1e-9):
            raise CoverageError(
                f"ygrid [{ygrid[0]:.3g}, {ygrid[-1]:.3g}] does not span [1e-3, 1e3] x {a_ref:.3g}")
    if substeps < 1:
        raise DomainError("substeps must be >= 1")

    if extrapolate:
        _, coarse_gap, _ = _run(params, pf, tgrid, ly, substeps, gh_order)
        values, gap, payoff = _run(params, pf, tgrid, ly, 4 * substeps, gh_order)
    else:
        coarse_gap = None
        values, gap, payoff = _run(params, pf, tgrid, ly, substeps, gh_order)
    tol = match_tol * payoff[:, None]
    stop_flag = values >= payoff[:, None] - tol
    stop_flag[-1] = False
    surface = ValueSurface(tgrid, ygrid, values, stop_flag, gap, payoff, coarse_gap,
                           match_tol, substeps)
    if np.any(stop_flag[:-1, -1]):
        raise CoverageError("stopping region reaches the top of the capacity grid")
    return surface


def _extract(gap: np.ndarray, ly: np.ndarray, tol: np.ndarray):
    """Boundary per knot from a gap array; returns (values, empty-slice mask)."""
    n = gap.shape[0]
    out = np.zeros(n)
    empty = np.zeros(n, dtype=bool)
    M = ly.size
    for i in range(n - 1):
        g = gap[i] + tol[i]
        idx = np.nonzero(g >= 0)[0]
        if idx.size == 0:
            empty[i] = True
            continue
        j = idx[-1]
        if j + 1 >= M:
            out[i] = math.exp(ly[j])
            continue
        frac = g[j] / (g[j] - g[j + 1])
        out[i] = math.exp(ly[j] + (ly[j + 1] - ly[j]) * frac)
    return out, empty


def extract_boundary(surface: ValueSurface, strict: bool = False) -> BoundaryCurve:
    """Largest capacity where stopping is optimal, refined linearly in ``log y``.

    Knots with an empty stopping slice get value 0 and a flag, or raise
    :class:`ExtractionError` when ``strict``.
    """
    ly = np.log(surface.ygrid)
    tol = surface.match_tol * surface.payoff
    b, empty = _extract(surface.gap, ly, tol)
    if surface.coarse_gap is not None:
        bc, empty_c = _extract(surface.coarse_gap, ly, tol)
        empty |= empty_c
        b = np.where(empty, 0.0, np.maximum(2.0 * b - bc, 0.0))
    b[-1] = 0.0
    curve = BoundaryCurve(surface.tgrid, b, Method.STOPPING_ORACLE)
    if np.any(empty):
        bad = np.nonzero(empty)[0].tolist()
        if strict:
            raise ExtractionError(f"empty stopping slice at knots {bad}")
        curve.flags.append(f"empty stopping slice at knots {bad}")
    return curve


@dataclass
class CrossValidationReport:
    rel_diff: np.ndarray
    abs_diff: np.ndarray
    early_mask: np.ndarray
    max_rel_early: float
    max_abs_late: float
    rel_tol: float
    abs_tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_early <= self.rel_tol and self.max_abs_late <= self.abs_tol

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict}: max rel diff (t <= 0.9T) {self.max_rel_early:.4g} (tol {self.rel_tol:g}); "
                f"max abs diff (t > 0.9T) {self.max_abs_late:.4g} (tol {self.abs_tol:g})")


def cross_validate(repr_curve: BoundaryCurve, oracle: BoundaryCurve, rel_tol: float = 0.05,
                   abs_tol: float = 0.02, early_fraction: float = 0.9) -> CrossValidationReport:
    """Compare two boundaries knot by knot.

    Relative differences are judged on ``t <= early_fraction * T`` and
    absolute differences on the remaining terminal stretch, where both curves
    approach zero.
    """
    if repr_curve.grid != oracle.grid:
        raise DomainError("boundaries live on different time grids")
    a, b = repr_curve.values, oracle.values
    abs_diff = np.abs(a - b)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(b > 0, abs_diff / b, np.where(abs_diff == 0, 0.0, np.inf))
    t = repr_curve.grid.knots
    early = t <= early_fraction * repr_curve.grid.T * (1 + 1e-12)
    max_rel = float(rel[early].max()) if early.any() else 0.0
    max_abs = float(abs_diff[~early].max()) if (~early).any() else 0.0
    return CrossValidationReport(rel, abs_diff, early, max_rel, max_abs, rel_tol, abs_tol)
