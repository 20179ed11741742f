"""Seeded ensembles of the uncontrolled capacity process ``C0``.

``C0(t) = exp(-int mu_C) * M_0(t)`` is sampled exactly on the grid: with
deterministic piecewise-constant coefficients every log-increment is Gaussian.
Alongside the knot values each path also carries the exact minimum of ``C0``
over every grid step, drawn from the Brownian-bridge law given the two
endpoints.  The solvers use those minima to monitor running suprema in
continuous time rather than only at the knots.

Randomness comes from one Philox stream per path keyed by ``(seed, path)``,
so an ensemble does not depend on how paths are split across threads.
"""

from __future__ import annotations

import csv
import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .model import ModelParams


class Measure(str, enum.Enum):
    ORIGINAL = "original"
    TILTED = "tilted"


class TimeGrid:
    """Strictly increasing knots ``0 = t_0 < ... < t_N = T``."""

    def __init__(self, knots):
        knots = np.asarray(knots, dtype=float)
        if knots.ndim != 1 or knots.size < 2:
            raise DomainError("a time grid needs at least two knots")
        if knots[0] != 0.0:
            raise DomainError("time grid must start at 0")
        if np.any(np.diff(knots) <= 0):
            raise DomainError("time grid must be strictly increasing")
        knots.setflags(write=False)
        self.knots = knots

    @classmethod
    def uniform(cls, horizon_T: float, n_steps: int) -> "TimeGrid":
        if n_steps < 1:
            raise DomainError("n_steps must be at least 1")
        knots = np.linspace(0.0, horizon_T, n_steps + 1)
        knots[-1] = horizon_T
        return cls(knots)

    @property
    def T(self) -> float:
        return float(self.knots[-1])

    @property
    def n_steps(self) -> int:
        return self.knots.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.knots)

    @property
    def is_uniform(self) -> bool:
        dt = self.dt
        return bool(np.allclose(dt, dt[0], rtol=1e-12, atol=0.0))

    def refine(self, factor: int) -> "TimeGrid":
        """Split every step into ``factor`` equal substeps."""
        if factor < 1:
            raise DomainError("refinement factor must be >= 1")
        frac = np.arange(factor) / factor
        fine = (self.knots[:-1, None] + frac[None, :] * self.dt[:, None]).ravel()
        return TimeGrid(np.append(fine, self.T))

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.knots, other.knots)

    def __hash__(self):
        return hash(self.knots.tobytes())

    def __len__(self):
        return self.knots.size

    def __repr__(self):
        return f"TimeGrid(N={self.n_steps}, T={self.T:g})"


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Immutable ``n_paths x (N+1)`` sample of ``C0`` plus per-step minima."""

    grid: TimeGrid
    measure: Measure
    seed: int
    values: np.ndarray
    minima: np.ndarray
    antithetic: bool = False

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]


def step_moments(params: ModelParams, grid: TimeGrid, measure: Measure):
    """Mean and variance of ``log C0`` increments over each grid step."""
    a, b = grid.knots[:-1], grid.knots[1:]
    var = params.sigma_C.squared().integral(a, b)
    decay = params.mu_C.integral(a, b)
    if Measure(measure) is Measure.ORIGINAL:
        mean = -decay - 0.5 * var
    else:
        # W = W~ + int sigma ds under the tilted measure
        mean = -decay + 0.5 * var
    return np.asarray(mean, dtype=float), np.asarray(var, dtype=float)


def _path_draws(seed: int, path: int, n: int):
    gen = np.random.Generator(np.random.Philox(key=np.array([seed, path], dtype=np.uint64)))
    z = gen.standard_normal(n)
    u = gen.random(n)
    return z, u


def _fill(rows, seed, antithetic, mean, sd, var, logv, logm):
    n = mean.size
    for p in rows:
        if antithetic:
            z, u = _path_draws(seed, p // 2, n)
            if p % 2:
                z = -z
        else:
            z, u = _path_draws(seed, p, n)
        x = np.empty(n + 1)
        x[0] = 0.0
        np.cumsum(mean + sd * z, out=x[1:])
        x0, x1 = x[:-1], x[1:]
        # exact minimum of a Brownian bridge between x0 and x1
        gap = x1 - x0
        logm[p] = 0.5 * (x0 + x1 - np.sqrt(gap * gap - 2.0 * var * np.log1p(-u)))
        logv[p] = x


def simulate_c0(params: ModelParams, grid: TimeGrid, n_paths: int, seed: int,
                measure: Measure | str = Measure.ORIGINAL, *,
                antithetic: bool = False, threads: int = 1) -> PathEnsemble:
    """Simulate ``C0`` on ``grid`` under the original or the tilted measure."""
    if n_paths < 1:
        raise DomainError("n_paths must be at least 1")
    if grid.T > params.horizon_T * (1 + 1e-12):
        raise DomainError("grid extends beyond the model horizon")
    if not 0 <= int(seed) < 2**64:
        raise DomainError("seed must be an unsigned 64-bit integer")
    measure = Measure(measure)
    mean, var = step_moments(params, grid, measure)
    sd = np.sqrt(var)
    logv = np.empty((n_paths, grid.n_steps + 1))
    logm = np.empty((n_paths, grid.n_steps))
    seed = int(seed)
    if threads == 0:
        import os
        threads = os.cpu_count() or 1
    if threads <= 1 or n_paths < 256:
        _fill(range(n_paths), seed, antithetic, mean, sd, var, logv, logm)
    else:
        chunks = np.array_split(np.arange(n_paths), threads * 4)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda rows: _fill(rows, seed, antithetic, mean, sd, var, logv, logm),
                          chunks))
    values = np.exp(logv)
    minima = np.exp(logm)
    values.setflags(write=False)
    minima.setflags(write=False)
    return PathEnsemble(grid=grid, measure=measure, seed=seed, values=values,
                        minima=minima, antithetic=antithetic)


def ratio_view(ensemble: PathEnsemble, i: int, j: int, p: int) -> float:
    """``C0(t_j) / C0(t_i)`` on path ``p``; requires ``i <= j``."""
    n = ensemble.values.shape[1]
    if not (0 <= i <= j < n) or not 0 <= p < ensemble.n_paths:
        raise DomainError(f"indices (i={i}, j={j}, p={p}) out of range")
    if i == j:
        return 1.0
    return float(ensemble.values[p, j] / ensemble.values[p, i])


def write_ensemble_csv(ensemble: PathEnsemble, path) -> None:
    """Debug dump with columns ``path,t,c0``; not a stable format."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "t", "c0"])
        for p in range(ensemble.n_paths):
            for t, c in zip(ensemble.grid.knots, ensemble.values[p]):
                w.writerow([p, repr(float(t)), repr(float(c))])
