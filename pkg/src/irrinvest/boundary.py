"""Free boundary (base capacity) solvers.

The finite-horizon boundary solves, knot by knot from the terminal time
backwards,

    E~[ int_0^{T-t} exp(-int mu_bar) R_c( sup_{u<=v} y(t+u) C0(t+v)/C0(t+u) ) dv ] = 1/f_C(t)

with the expectation taken over a tilted-measure ensemble.  The boundary is
piecewise constant and right-continuous between knots, so the continuous
supremum over ``u`` reduces to the per-step minima of ``C0`` carried by the
ensemble.  The ``v``-integral uses the trapezoid rule on the grid.

Also here: the analytic upper bound and the infinite-horizon closed forms.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import (DomainError, NonIntegrableMarginalError, NumericalError,
                     SolverError)
from .model import (BetaRoots, CobbDouglas, ModelParams, PiecewiseConstant,
                    ProductionFunction, beta_roots)
from .paths import Measure, PathEnsemble, TimeGrid


class Method(str, enum.Enum):
    REPRESENTATION = "representation"
    STOPPING_ORACLE = "stopping_oracle"
    CLOSED_FORM_CONSTANT = "closed_form_constant"
    UPPER_BOUND = "upper_bound"


@dataclass
class BoundaryCurve:
    """Boundary values on a grid plus per-knot diagnostics.

    ``stderr`` is the Monte Carlo standard error of each root in capacity
    units; ``residual`` is the integral-equation residual at the root.
    """

    grid: TimeGrid
    values: np.ndarray
    method: Method
    stderr: np.ndarray | None = None
    residual: np.ndarray | None = None
    residual_stderr: np.ndarray | None = None
    y_star: np.ndarray | None = None
    flags: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        n = len(self.grid)
        if self.values.shape != (n,):
            raise DomainError("boundary values must have one entry per knot")
        for name in ("stderr", "residual", "residual_stderr", "y_star"):
            arr = getattr(self, name)
            setattr(self, name, np.zeros(n) if arr is None else np.asarray(arr, dtype=float))

    @property
    def t(self) -> np.ndarray:
        return self.grid.knots

    def at(self, t):
        """Right-continuous piecewise-constant interpolation."""
        idx = np.searchsorted(self.grid.knots, t, side="right") - 1
        idx = np.clip(idx, 0, len(self.grid) - 1)
        return self.values[idx]

    def scaled(self, factor: float) -> "BoundaryCurve":
        return BoundaryCurve(self.grid, self.values * factor, self.method,
                             self.stderr * factor)

    def monotonicity_violations(self, n_stderr: float = 3.0) -> np.ndarray:
        """Indices ``i`` with ``values[i+1] > values[i] + n_stderr * stderr``."""
        tol = n_stderr * np.maximum(self.stderr[:-1], self.stderr[1:])
        return np.nonzero(np.diff(self.values) > tol)[0]

    def write_csv(self, path, comment: str | None = None) -> None:
        """Write ``t,y_hat,stderr,y_star,residual`` rows, one per knot."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "y_hat", "stderr", "y_star", "residual"])
            for row in zip(self.grid.knots, self.values, self.stderr, self.y_star, self.residual):
                w.writerow([_fmt(x) for x in row])


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class RootFindConfig:
    """Bisection controls for the backward solver."""

    rtol: float = 1e-12
    max_iter: int = 200
    bracket_inflation: float = 1.5
    lo_factor: float = 1e-10
    stationary: bool | None = None  # None: use the shortcut whenever it applies


# --- upper bound and closed forms -------------------------------------------

def _alpha_of(pf) -> float:
    alpha = pf.alpha if isinstance(pf, CobbDouglas) else float(pf)
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha={alpha} must lie in (0, 1)")
    return alpha


def bound_rate(params: ModelParams, alpha: float) -> PiecewiseConstant:
    """``mu_F + alpha mu_C + alpha (1 - alpha) sigma**2 / 2``."""
    return params.mu_F + params.mu_C * alpha + params.sigma_C.squared() * (0.5 * alpha * (1 - alpha))


def upper_bound_curve(params: ModelParams, pf, t):
    """Analytic upper bound on the boundary at time(s) ``t``.

    Valid for a Cobb-Douglas revenue (``pf`` may also be the exponent) and
    deterministic coefficients; exact for piecewise-constant coefficients.
    """
    alpha = _alpha_of(pf)
    lam = bound_rate(params, alpha)
    if lam.min() <= 0:
        raise DomainError("bound rate must be positive")
    T = params.horizon_T
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(ts < 0) or np.any(ts > T):
        raise DomainError("t outside [0, T]")
    out = np.array([
        (params.f_C(s) * lam.discounted_length(s, T)) ** (1.0 / (1.0 - alpha)) for s in ts
    ])
    return float(out[0]) if np.ndim(t) == 0 else out


def upper_bound_boundary(params: ModelParams, pf, grid: TimeGrid) -> BoundaryCurve:
    y = upper_bound_curve(params, pf, grid.knots)
    return BoundaryCurve(grid, y, Method.UPPER_BOUND, y_star=y)


def _require_constant(params: ModelParams):
    if not params.is_constant:
        raise DomainError("closed forms need constant coefficients")
    return params.mu_C(0.0), params.sigma_C(0.0), params.mu_F(0.0), params.f_C(0.0)


@dataclass(frozen=True)
class ClosedForm:
    a: float
    a_from_roots: float
    roots: BetaRoots
    alpha: float


def closed_form_boundary_infinite(params: ModelParams, alpha) -> ClosedForm:
    """Infinite-horizon Cobb-Douglas boundary, computed in two algebraic forms.

    With a constant ``f_C`` other than 1 both forms are scaled by
    ``f_C**(1/(1-alpha))``.
    """
    alpha = _alpha_of(alpha)
    mu_C, sigma, mu_F, f_C = _require_constant(params)
    roots = beta_roots(mu_C, sigma, mu_F)
    bp, bm = roots.beta_plus, roots.beta_minus
    if not alpha + bm < 0:
        raise NonIntegrableMarginalError(
            f"-beta_minus={-bm:.6g} must exceed alpha={alpha:.6g}")
    s2 = sigma * sigma
    p = 1.0 / (1.0 - alpha)
    scale = f_C**p
    a = scale * (2.0 / (2.0 * mu_F - s2 * bm - alpha * s2 * (1.0 + bp))) ** p
    a_pow = mu_F * (1.0 + bp) * (alpha + bm) / (bp * bm)  # equals a**(alpha-1)
    a_alt = scale * a_pow ** (-p)
    if not math.isclose(a, a_alt, rel_tol=1e-12):
        raise NumericalError(f"closed forms disagree: {a!r} vs {a_alt!r}")
    return ClosedForm(a=a, a_from_roots=a_alt, roots=roots, alpha=alpha)


def _growth_exponent(pf: ProductionFunction, a: float) -> float:
    # d/dx log(e^x R_c(a e^x)) probed at large x
    x1, x2 = 20.0, 40.0
    l1 = math.log(float(pf.marginal(a * math.exp(x1))))
    l2 = math.log(float(pf.marginal(a * math.exp(x2))))
    return 1.0 + (l2 - l1) / (x2 - x1)


def marginal_transform(a: float, rate: float, pf: ProductionFunction,
                       rtol: float = 1e-9) -> float:
    """``int_0^inf e^x R_c(a e^x) rate e^{-rate x} dx`` by adaptive quadrature.

    The upper limit is doubled until the added tail changes the estimate by
    less than ``rtol`` relative.
    """
    def integrand(x):
        return math.exp(x - rate * x) * rate * float(pf.marginal(a * math.exp(x)))

    upper = 8.0 / rate
    total, _ = integrate.quad(integrand, 0.0, upper, epsabs=0.0, epsrel=1e-12, limit=400)
    for _ in range(60):
        piece, _ = integrate.quad(integrand, upper, 2 * upper, epsabs=0.0, epsrel=1e-12, limit=400)
        total += piece
        upper *= 2
        if abs(piece) <= rtol * abs(total):
            break
    else:
        raise NumericalError("marginal transform did not converge")
    if not math.isfinite(total):
        raise NumericalError("marginal transform is not finite")
    return total


def general_R_root(roots: BetaRoots, mu_F: float, pf: ProductionFunction,
                   f_C: float = 1.0, rtol: float = 1e-13) -> float:
    """Infinite-horizon boundary for a general marginal ``R_c``.

    Solves ``Q(a) = E[e^X R_c(a e^X)] - mu_F (1 + beta_+) / (beta_+ f_C) = 0``
    where ``X ~ Exp(-beta_-)``; ``Q`` decreases in ``a`` so bisection applies.
    """
    rate = -roots.beta_minus
    target = mu_F * (1.0 + roots.beta_plus) / (roots.beta_plus * f_C)
    if _growth_exponent(pf, 1.0) >= rate:
        raise NonIntegrableMarginalError(
            f"e^x R_c(a e^x) grows faster than the exponential rate {rate:.6g}")

    def Q(a):
        return marginal_transform(a, rate, pf) - target

    lo, hi = 1.0, 1.0
    for _ in range(200):
        if Q(lo) > 0:
            break
        lo *= 0.25
    else:
        raise SolverError("could not bracket the general-R root from below")
    for _ in range(200):
        if Q(hi) < 0:
            break
        hi *= 4.0
    else:
        raise SolverError("could not bracket the general-R root from above")
    for _ in range(400):
        mid = math.sqrt(lo * hi)
        if Q(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi / lo - 1.0 <= rtol:
            break
    return math.sqrt(lo * hi)


def general_R_boundary_infinite(params: ModelParams, pf: ProductionFunction) -> float:
    mu_C, sigma, mu_F, f_C = _require_constant(params)
    return general_R_root(beta_roots(mu_C, sigma, mu_F), mu_F, pf, f_C)


# --- finite-horizon backward solver ------------------------------------------

def uses_stationary_form(params: ModelParams, grid: TimeGrid) -> bool:
    return params.is_constant and grid.is_uniform


class KnotProblem:
    """Residual of the integral equation at one knot, as a function of ``y``.

    Everything that does not depend on the candidate ``y`` (path ratios, the
    running supremum over already-solved knots, trapezoid weights) is
    computed once.  For each path/time element the candidate enters only
    through ``max(y / m0, B)``, where ``m0`` is the path minimum over the
    first step; ``theta = B * m0`` is the candidate level above which the
    element switches to the ``y``-dependent branch.
    """

    def __init__(self, i: int, boundary: np.ndarray, ensemble: PathEnsemble,
                 params: ModelParams, pf: ProductionFunction, stationary: bool):
        grid = ensemble.grid
        N = grid.n_steps
        if not 0 <= i < N:
            raise DomainError(f"knot {i} has no interval to integrate over")
        K = N - i
        self.i, self.pf = i, pf
        vals, mins = ensemble.values, ensemble.minima
        if stationary:
            C = vals[:, 1:K + 1]
            Cm = mins[:, :K]
        else:
            base = vals[:, i:i + 1]
            C = vals[:, i + 1:] / base
            Cm = mins[:, i:] / base
        t_i = grid.knots[i]
        v = grid.knots[i:] - t_i
        dt = grid.dt[i:]
        w = np.empty(K + 1)
        w[0] = 0.5 * dt[0]
        w[1:K] = 0.5 * (dt[:-1] + dt[1:])
        w[K] = 0.5 * dt[-1]
        w *= np.exp(-params.mu_bar.integral(t_i, t_i + v))
        self.w0 = w[0]
        self.target = 1.0 / params.f_C(t_i)
        self.P = C.shape[0]

        yy = np.asarray(boundary, dtype=float)[i:]
        B = yy[1:] / C
        if K > 1:
            prev = np.maximum.accumulate(yy[1:K] / Cm[:, 1:K], axis=1)
            np.maximum(B[:, 1:], prev, out=B[:, 1:])
        m0 = Cm[:, :1]
        self.ratio = C / m0                      # multiplies y on the y-branch
        self.fixed_cap = C * B                   # capacity on the fixed branch
        self.theta = B * m0
        self.wk = np.broadcast_to(w[1:], C.shape)
        self._sorted = None

    # generic evaluation, per path
    def per_path(self, y: float) -> np.ndarray:
        cap = np.maximum(self.ratio * y, self.fixed_cap)
        return self.w0 * self.pf.marginal(y) + (self.wk * self.pf.marginal(cap)).sum(axis=1)

    def residual_with_stderr(self, y: float):
        vals = self.per_path(y)
        if not np.all(np.isfinite(vals)):
            raise NumericalError(f"non-finite integrand at knot {self.i}")
        se = vals.std(ddof=1) / math.sqrt(self.P) if self.P > 1 else 0.0
        return vals.mean() - self.target, se

    def _prepare(self):
        order = np.argsort(self.theta, axis=None)
        theta = self.theta.ravel()[order]
        wk = self.wk.ravel()[order]
        g = self.pf.power_exponent
        with np.errstate(divide="ignore", invalid="ignore"):
            fixed = np.where(theta > 0, wk * self.pf.marginal(self.fixed_cap.ravel()[order]), 0.0)
        suffix = np.concatenate((np.cumsum(fixed[::-1])[::-1], [0.0]))
        ratio = self.ratio.ravel()[order]
        if g is not None:
            prefix = np.concatenate(([0.0], np.cumsum(wk * self.pf.marginal(ratio))))
            self._sorted = (theta, suffix, prefix, None, None)
        else:
            self._sorted = (theta, suffix, None, ratio, wk)

    def residual(self, y: float) -> float:
        """Mean residual; ``O(log n)`` per call for power-law marginals."""
        if self._sorted is None:
            self._prepare()
        theta, suffix, prefix, ratio, wk = self._sorted
        j = np.searchsorted(theta, y, side="right")
        if prefix is not None:
            moving = prefix[j] * y**self.pf.power_exponent
        else:
            moving = (wk[:j] * self.pf.marginal(ratio[:j] * y)).sum()
        total = self.w0 * self.P * self.pf.marginal(y) + moving + suffix[j]
        return total / self.P - self.target


def boundary_residual(i: int, y_candidate: float, boundary, ensemble: PathEnsemble,
                      params: ModelParams, pf: ProductionFunction,
                      stationary: bool | None = None):
    """Residual and its standard error at knot ``i`` for one candidate.

    ``boundary`` must hold solved values at all knots after ``i``.
    """
    if not y_candidate > 0:
        raise DomainError("candidate capacity must be positive")
    if stationary is None:
        stationary = uses_stationary_form(params, ensemble.grid)
    return KnotProblem(i, boundary, ensemble, params, pf, stationary).residual_with_stderr(y_candidate)


def _initial_bracket(params, pf, t, cfg):
    if isinstance(pf, CobbDouglas):
        hi = cfg.bracket_inflation * upper_bound_curve(params, pf, t)
    else:
        # deterministic scale: R_c(c) * discounted horizon = 1/f_C
        horizon = params.mu_bar.discounted_length(t, params.horizon_T)
        target = 1.0 / (params.f_C(t) * horizon)
        hi = 1.0
        for _ in range(400):
            if float(pf.marginal(hi)) < target:
                break
            hi *= 2.0
        hi *= 64.0
    return cfg.lo_factor * hi, hi


def solve_boundary_backward(params: ModelParams, pf: ProductionFunction, grid: TimeGrid,
                            ensemble: PathEnsemble, rootfind: RootFindConfig | None = None,
                            progress=None) -> BoundaryCurve:
    """Backward induction over the knots of ``grid``.

    The same tilted ensemble is reused at every knot and bisection step, so
    each knot's residual is a fixed, strictly decreasing function of ``y``.
    """
    cfg = rootfind or RootFindConfig()
    if ensemble.measure is not Measure.TILTED:
        raise DomainError("the boundary equation needs a tilted-measure ensemble")
    if ensemble.grid != grid:
        raise DomainError("ensemble grid differs from the solver grid")
    stationary = cfg.stationary
    if stationary is None:
        stationary = uses_stationary_form(params, grid)
    elif stationary and not uses_stationary_form(params, grid):
        raise DomainError("stationary form needs constant coefficients on a uniform grid")

    N = grid.n_steps
    y = np.zeros(N + 1)
    se_y = np.zeros(N + 1)
    res = np.zeros(N + 1)
    se_res = np.zeros(N + 1)
    for i in range(N - 1, -1, -1):
        t = grid.knots[i]
        prob = KnotProblem(i, y, ensemble, params, pf, stationary)
        lo, hi = _initial_bracket(params, pf, t, cfg)
        r_lo, r_hi = prob.residual(lo), prob.residual(hi)
        if not (np.isfinite(r_lo) and np.isfinite(r_hi)):
            raise NumericalError(f"non-finite residual at knot {i}")
        if not (r_lo > 0 > r_hi):
            raise SolverError(
                f"residual does not change sign on [{lo:.3g}, {hi:.3g}] at knot {i} (t={t:g})",
                knot=i, bracket=(lo, hi))
        for _ in range(cfg.max_iter):
            mid = math.sqrt(lo * hi)
            if prob.residual(mid) > 0:
                lo = mid
            else:
                hi = mid
            if hi / lo - 1.0 <= cfg.rtol:
                break
        root = math.sqrt(lo * hi)
        y[i] = root
        res[i], se_res[i] = prob.residual_with_stderr(root)
        h = 1e-3
        slope = (prob.residual(root * (1 + h)) - prob.residual(root * (1 - h))) / (2 * h * root)
        se_y[i] = se_res[i] / abs(slope) if slope != 0 else math.inf
        if progress is not None:
            progress(i, root)
    y_star = None
    if isinstance(pf, CobbDouglas):
        y_star = upper_bound_curve(params, pf, grid.knots)
    curve = BoundaryCurve(grid, y, Method.REPRESENTATION, stderr=se_y, residual=res,
                          residual_stderr=se_res, y_star=y_star)
    if params.f_C_discontinuous:
        curve.flags.append("f_C is piecewise constant; solver assumes a continuous f_C")
    return curve
