"""Investment policies, profit and supergradient estimators, FOC checks.

Capacity evolves as ``C(t) = C0(t) (y + nu_bar(t))``.  A tracking policy
keeps ``C`` at or above a base capacity ``l`` by the minimal reflection

    y + nu_bar(t) = max(y, sup_{u <= t} l(u) / C0(u)).

``l`` is piecewise constant and right-continuous on the ensemble grid, and the
supremum is monitored continuously through the per-step minima stored in the
ensemble, exactly as in the boundary solver.  All per-knot arrays hold
right limits.  Investment that happens inside a step (when ``C0`` reaches a
new low) is costed in closed form and, for the first-order checks, attributed
to the right end of the step so that probe times stay adapted to the grid.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .boundary import BoundaryCurve
from .errors import DomainError
from .model import ModelParams, ProductionFunction
from .paths import Measure, PathEnsemble


# --- policies ----------------------------------------------------------------

class InvestmentPolicy:
    """Base class; subclasses describe the base capacity they track."""

    name = "policy"

    def levels(self, grid) -> np.ndarray:
        """Base capacity at every knot (zeros for non-tracking policies)."""
        return np.zeros(len(grid))

    def initial_lump(self) -> float:
        return 0.0

    @property
    def tracks(self) -> bool:
        return True

    def boundary_residual_stderr(self, grid) -> np.ndarray:
        return np.zeros(len(grid))


def _check_grid(curve: BoundaryCurve, grid):
    if curve.grid != grid:
        raise DomainError("policy boundary is defined on a different grid")


@dataclass(frozen=True)
class TrackBoundary(InvestmentPolicy):
    curve: BoundaryCurve
    name: str = "track_boundary"

    def levels(self, grid):
        _check_grid(self.curve, grid)
        return self.curve.values.copy()

    def boundary_residual_stderr(self, grid):
        _check_grid(self.curve, grid)
        return self.curve.residual_stderr.copy()


@dataclass(frozen=True)
class TrackConstant(InvestmentPolicy):
    a: float
    name: str = "track_constant"

    def __post_init__(self):
        if not self.a >= 0:
            raise DomainError("tracked level must be nonnegative")

    def levels(self, grid):
        return np.full(len(grid), float(self.a))


@dataclass(frozen=True)
class NoInvest(InvestmentPolicy):
    name: str = "no_invest"

    @property
    def tracks(self):
        return False


@dataclass(frozen=True)
class ScaledBoundary(InvestmentPolicy):
    curve: BoundaryCurve
    factor: float
    name: str = "scaled_boundary"

    def __post_init__(self):
        if not self.factor > 0:
            raise DomainError("scale factor must be positive")

    def levels(self, grid):
        _check_grid(self.curve, grid)
        return self.curve.values * self.factor


@dataclass(frozen=True)
class LumpAtZero(InvestmentPolicy):
    """Invest ``amount`` (investment units) at time 0, nothing afterwards."""

    amount: float
    name: str = "lump_at_zero"

    def __post_init__(self):
        if not self.amount >= 0:
            raise DomainError("lump amount must be nonnegative")

    def initial_lump(self):
        return float(self.amount)

    @property
    def tracks(self):
        return False


# --- statistics ----------------------------------------------------------------

@dataclass(frozen=True)
class MonteCarloEstimate:
    mean: float
    stderr: float
    n: int

    @classmethod
    def from_samples(cls, samples) -> "MonteCarloEstimate":
        x = np.asarray(samples, dtype=float)
        n = x.size
        if n == 0:
            return cls(math.nan, math.nan, 0)
        se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
        return cls(float(x.mean()), se, n)


# --- tracking --------------------------------------------------------------------

@dataclass
class ControlledPath:
    """Per-path controlled capacity on the ensemble grid (right limits).

    ``dnu`` is investment attributed to each knot: the jump at the knot plus
    any investment inside the preceding step.  ``cost`` is the discounted
    investment outlay per path.
    """

    capacity: np.ndarray
    nu_bar: np.ndarray
    nu: np.ndarray
    dnu: np.ndarray
    cost: np.ndarray
    level: np.ndarray
    y0: float


def _discount(params: ModelParams, t) -> np.ndarray:
    return np.exp(-params.mu_F.integral(0.0, t))


def _check_ensemble(ensemble: PathEnsemble, params: ModelParams):
    if ensemble.measure is not Measure.ORIGINAL:
        raise DomainError("policy evaluation needs an original-measure ensemble")
    if ensemble.grid.T > params.horizon_T * (1 + 1e-12):
        raise DomainError("ensemble grid extends beyond the horizon")


def _step_candidates(level: np.ndarray, ensemble: PathEnsemble):
    """Per step ``m -> m+1``: sup of ``l/C0`` inside the step and at its right knot."""
    inner = level[None, :-1] / ensemble.minima
    knot = level[None, 1:] / ensemble.values[:, 1:]
    knot[:, -1] = 0.0  # no investment at the horizon
    return inner, knot


def track(policy: InvestmentPolicy, ensemble: PathEnsemble, params: ModelParams,
          y0: float | None = None) -> ControlledPath:
    """Controlled capacity, ``nu_bar``, cumulative investment and its cost."""
    _check_ensemble(ensemble, params)
    y = params.y0 if y0 is None else float(y0)
    if not y > 0:
        raise DomainError("initial capacity must be positive")
    grid = ensemble.grid
    knots = grid.knots
    f = params.f_C(knots)
    f = np.full(len(grid), f) if np.ndim(f) == 0 else np.asarray(f)
    C0 = ensemble.values
    P, N = C0.shape[0], grid.n_steps

    if policy.tracks:
        level = np.asarray(policy.levels(grid), dtype=float)
        inner, knot = _step_candidates(level, ensemble)
        start = max(y, level[0])
        z = np.maximum(inner, knot)
        S = np.empty((P, N + 1))
        S[:, 0] = start
        np.maximum(np.maximum.accumulate(z, axis=1), start, out=S[:, 1:])
        S_left = np.maximum(S[:, :-1], inner)          # just before each right knot
        intra = np.log(S_left / S[:, :-1]) * (level[:-1] / f[:-1])[None, :]
        jump = C0[:, 1:] * (S[:, 1:] - S_left) / f[None, 1:]
        jump0 = (start - y) / f[0]
    else:
        level = np.zeros(N + 1)
        start = y + policy.initial_lump() * f[0]
        S = np.full((P, N + 1), start)
        intra = np.zeros((P, N))
        jump = np.zeros((P, N))
        jump0 = policy.initial_lump()

    disc = _discount(params, knots)
    disc_mid = _discount(params, 0.5 * (knots[:-1] + knots[1:]))
    cost = jump0 * disc[0] + intra @ disc_mid + jump @ disc[1:]
    dnu = np.empty((P, N + 1))
    dnu[:, 0] = jump0
    dnu[:, 1:] = intra + jump
    return ControlledPath(capacity=C0 * S, nu_bar=S - y, nu=np.cumsum(dnu, axis=1),
                          dnu=dnu, cost=cost, level=level, y0=y)


def reflect_direct(level: np.ndarray, ensemble: PathEnsemble, y0: float) -> np.ndarray:
    """Reflected capacity from the running-supremum formula, step by step.

    Independent of :func:`track`; used to check the two constructions agree.
    """
    C0, Cmin = ensemble.values, ensemble.minima
    N = ensemble.grid.n_steps
    out = np.empty_like(C0)
    sup = np.maximum(y0, level[0] / C0[:, 0])
    out[:, 0] = C0[:, 0] * sup
    for m in range(N):
        sup = np.maximum(sup, level[m] / Cmin[:, m])
        if m + 1 < N:
            sup = np.maximum(sup, level[m + 1] / C0[:, m + 1])
        out[:, m + 1] = C0[:, m + 1] * sup
    return out


# --- profit and supergradient ----------------------------------------------------------

def _trapezoid_weights(dt: np.ndarray) -> np.ndarray:
    w = np.zeros(dt.size + 1)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def profit_samples(policy, params, pf, ensemble, y0=None, path: ControlledPath | None = None):
    """Per-path discounted revenue minus discounted investment cost."""
    path = path or track(policy, ensemble, params, y0)
    w = _trapezoid_weights(ensemble.grid.dt) * _discount(params, ensemble.grid.knots)
    return pf.revenue(path.capacity) @ w - path.cost


def evaluate_profit(policy: InvestmentPolicy, params: ModelParams, pf: ProductionFunction,
                    ensemble: PathEnsemble, y0: float | None = None) -> MonteCarloEstimate:
    """Monte Carlo estimate of the expected net profit of ``policy``."""
    return MonteCarloEstimate.from_samples(profit_samples(policy, params, pf, ensemble, y0))


def _tail_integral(i: int, capacity: np.ndarray, ensemble, params, pf) -> np.ndarray:
    """``int_{t_i}^T e^{-int_0 mu_F} C0(s)/C0(t_i) R_c(C(s)) ds`` per row, trapezoid rule."""
    grid = ensemble.grid
    knots = grid.knots[i:]
    w = _trapezoid_weights(grid.dt[i:]) * _discount(params, knots)
    C0 = ensemble.values[:, i:]
    ratio = C0 / C0[:, :1]
    return (ratio * pf.marginal(capacity)) @ w


def supergradient_samples(i: int, path: ControlledPath, ensemble, params, pf) -> np.ndarray:
    N = ensemble.grid.n_steps
    if not 0 <= i < N:
        raise DomainError(f"probe index {i} must lie in [0, {N})")
    t = ensemble.grid.knots[i]
    tail = _tail_integral(i, path.capacity[:, i:], ensemble, params, pf)
    return params.f_C(t) * tail - _discount(params, t)


def supergradient(policy: InvestmentPolicy, i: int, params: ModelParams, pf: ProductionFunction,
                  ensemble: PathEnsemble, y0: float | None = None) -> MonteCarloEstimate:
    """Supergradient of the profit functional at the deterministic knot ``i``."""
    path = track(policy, ensemble, params, y0)
    return MonteCarloEstimate.from_samples(supergradient_samples(i, path, ensemble, params, pf))


def reset_supergradient(k: int, rows: np.ndarray, path: ControlledPath, ensemble, params, pf,
                        policy: InvestmentPolicy) -> np.ndarray:
    """Supergradient at knot ``k`` with capacity reset to the tracked level.

    For a tracking policy the capacity at an investment time sits on the base
    capacity; on the grid the investment may have happened inside the step
    before ``t_k``, so the state is reset to ``l(t_k)`` and tracked onward.
    Non-tracking policies keep their actual capacity.
    """
    if not policy.tracks or path.level[k] <= 0:
        return supergradient_samples(k, path, ensemble, params, pf)[rows]
    level = path.level
    C0 = ensemble.values[rows, k:]
    inner = level[None, k:-1] / ensemble.minima[rows, k:]
    knot = level[None, k + 1:] / C0[:, 1:]
    knot[:, -1] = 0.0
    start = level[k] / C0[:, 0]
    S = np.empty(C0.shape)
    S[:, 0] = start
    np.maximum(np.maximum.accumulate(np.maximum(inner, knot), axis=1), start[:, None], out=S[:, 1:])
    grid = ensemble.grid
    w = _trapezoid_weights(grid.dt[k:]) * _discount(params, grid.knots[k:])
    tail = ((C0 / C0[:, :1]) * pf.marginal(C0 * S)) @ w
    t = grid.knots[k]
    return params.f_C(t) * tail - _discount(params, t)


# --- first-order conditions --------------------------------------------------------

@dataclass
class ProbeResult:
    probe: str
    estimate: float
    stderr: float
    verdict: bool
    n: int = 0


@dataclass
class FocReport:
    probes: list = field(default_factory=list)
    hitting: ProbeResult | None = None
    flat_off: ProbeResult | None = None
    band: float = 2.0

    @property
    def deterministic_pass(self) -> bool:
        return all(p.verdict for p in self.probes)

    @property
    def passed(self) -> bool:
        parts = [self.deterministic_pass]
        parts += [p.verdict for p in (self.hitting, self.flat_off) if p is not None]
        return all(parts)

    def rows(self):
        out = list(self.probes)
        out += [p for p in (self.hitting, self.flat_off) if p is not None]
        return out

    def text(self) -> str:
        lines = [f"first-order conditions ({self.band:g} stderr bands)"]
        for p in self.rows():
            lines.append(f"  {p.probe:<16} {p.estimate:+.6e} +/- {p.stderr:.3e}  "
                         f"{'PASS' if p.verdict else 'FAIL'}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)

    def write_csv(self, path, comment: str | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["probe", "estimate", "stderr", "verdict"])
            for p in self.rows():
                w.writerow([p.probe, repr(p.estimate), repr(p.stderr), "PASS" if p.verdict else "FAIL"])


def default_probe_indices(n_steps: int, count: int = 10) -> list:
    return sorted({int(i) for i in np.linspace(0, n_steps, count, endpoint=False)})


def verify_foc(policy: InvestmentPolicy, params: ModelParams, pf: ProductionFunction,
               ensemble: PathEnsemble, y0: float | None = None, probes=None,
               band: float = 2.0) -> FocReport:
    """Monte Carlo check of the first-order optimality conditions.

    * deterministic probes: supergradient ``<= 0`` within ``band`` stderr;
    * hitting probes: supergradient at each path's first investment knot is
      zero within ``band`` stderr;
    * flat-off: ``E[sum_k phi(t_k) dnu_k]`` is zero within ``band`` stderr.

    Stderrs combine path noise with the boundary's own root-finding noise,
    propagated through its residual standard error.
    """
    grid = ensemble.grid
    N = grid.n_steps
    path = track(policy, ensemble, params, y0)
    probes = default_probe_indices(N) if probes is None else list(probes)
    f = np.array([params.f_C(t) for t in grid.knots])
    # boundary residual noise expressed in supergradient units
    bnoise = f * _discount(params, grid.knots) * policy.boundary_residual_stderr(grid)
    report = FocReport(band=band)

    for i in probes:
        est = MonteCarloEstimate.from_samples(supergradient_samples(i, path, ensemble, params, pf))
        se = math.hypot(est.stderr, bnoise[i])
        report.probes.append(ProbeResult(f"t[{i}]={grid.knots[i]:.6g}", est.mean, se,
                                         est.mean <= band * se, est.n))

    invested = path.dnu[:, :N] > 0
    phi_sum = np.zeros(ensemble.n_paths)
    first = np.full(ensemble.n_paths, -1)
    hit_vals = np.zeros(ensemble.n_paths)
    noise_flat = 0.0
    for k in range(N):
        rows = np.nonzero(invested[:, k])[0]
        if rows.size == 0:
            continue
        phi = reset_supergradient(k, rows, path, ensemble, params, pf, policy)
        phi_sum[rows] += phi * path.dnu[rows, k]
        new = rows[first[rows] < 0]
        hit_vals[new] = phi[first[rows] < 0]
        first[new] = k
        noise_flat += bnoise[k] * path.dnu[rows, k].sum() / ensemble.n_paths

    hit_rows = first >= 0
    if hit_rows.any():
        est = MonteCarloEstimate.from_samples(hit_vals[hit_rows])
        counts = np.bincount(first[hit_rows], minlength=N + 1)
        noise = float(counts @ bnoise) / counts.sum()
        se = math.hypot(est.stderr, noise)
        report.hitting = ProbeResult("hitting", est.mean, se, abs(est.mean) <= band * se, est.n)
    est = MonteCarloEstimate.from_samples(phi_sum)
    se = math.hypot(est.stderr, noise_flat)
    report.flat_off = ProbeResult("flat_off", est.mean, se, abs(est.mean) <= band * se, est.n)
    return report


@dataclass
class DominanceResult:
    alternative: str
    diff_mean: float
    stderr: float
    passed: bool


def dominance(reference: InvestmentPolicy, alternatives: dict, params, pf, ensemble,
              y0=None, band: float = 2.0) -> list:
    """Paired comparison ``J(reference) - J(alt)`` on common random numbers."""
    base = profit_samples(reference, params, pf, ensemble, y0)
    out = []
    for name, alt in alternatives.items():
        est = MonteCarloEstimate.from_samples(base - profit_samples(alt, params, pf, ensemble, y0))
        out.append(DominanceResult(name, est.mean, est.stderr, est.mean >= -band * est.stderr))
    return out


def write_policy_csv(path, rows, comment: str | None = None) -> None:
    """Rows of ``(policy, MonteCarloEstimate, seed)``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "J_mean", "J_stderr", "n_paths", "seed"])
        for name, est, seed in rows:
            w.writerow([name, repr(est.mean), repr(est.stderr), est.n, seed])
