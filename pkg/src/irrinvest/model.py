"""Problem parameters, production functions and derived constants.

Coefficients are deterministic, piecewise-constant functions of time,
evaluated right-continuously.  Time integrals of a coefficient are exact
(sum of rate times duration), so discount factors carry no quadrature error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DegenerateVolatilityError, DomainError


class PiecewiseConstant:
    """Right-continuous step function on ``[0, inf)``.

    ``values[j]`` holds on ``[breakpoints[j-1], breakpoints[j])`` with the
    conventions ``breakpoints[-1] = 0`` and ``breakpoints[len] = inf``.
    """

    def __init__(self, values, breakpoints=()):
        values = np.atleast_1d(np.asarray(values, dtype=float))
        breakpoints = np.atleast_1d(np.asarray(breakpoints, dtype=float))
        if values.size != breakpoints.size + 1:
            raise DomainError("need exactly one more value than breakpoints")
        if breakpoints.size and (
            breakpoints[0] <= 0 or np.any(np.diff(breakpoints) <= 0)
        ):
            raise DomainError("breakpoints must be positive and strictly increasing")
        if not np.all(np.isfinite(values)):
            raise DomainError("coefficient values must be finite")
        self.values = values
        self.breakpoints = breakpoints

    @classmethod
    def coerce(cls, value) -> "PiecewiseConstant":
        """Build from a number, a ``PiecewiseConstant`` or a mapping."""
        if isinstance(value, PiecewiseConstant):
            return value
        if isinstance(value, dict):
            return cls(value["values"], value.get("breakpoints", ()))
        return cls([float(value)])

    @property
    def is_constant(self) -> bool:
        return bool(np.all(self.values == self.values[0]))

    def __call__(self, t):
        idx = np.searchsorted(self.breakpoints, t, side="right")
        out = self.values[idx]
        return float(out) if np.ndim(out) == 0 else out

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())

    def _cumulative(self, t):
        # integral from 0 to t, vectorised over t
        t = np.asarray(t, dtype=float)
        edges = np.concatenate(([0.0], self.breakpoints))
        seg = np.diff(edges) * self.values[:-1]
        base = np.concatenate(([0.0], np.cumsum(seg)))
        idx = np.searchsorted(self.breakpoints, t, side="right")
        return base[idx] + (t - edges[idx]) * self.values[idx]

    def integral(self, a, b):
        """Exact integral over ``[a, b]``; broadcasts over array inputs."""
        out = self._cumulative(b) - self._cumulative(a)
        return float(out) if np.ndim(out) == 0 else out

    def discounted_length(self, a: float, b: float) -> float:
        """Exact ``int_a^b exp(-int_a^s rate) ds`` with this function as the rate.

        ``b`` may be infinite provided the final rate is positive.
        """
        if b <= a:
            return 0.0
        cuts = self.breakpoints[(self.breakpoints > a) & (self.breakpoints < b)]
        edges = np.concatenate(([a], cuts, [b]))
        total, acc = 0.0, 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            rate = self(lo)
            length = hi - lo
            if rate == 0.0:
                if math.isinf(length):
                    return math.inf
                piece = length
            elif math.isinf(length):
                piece = 1.0 / rate
            else:
                piece = -math.expm1(-rate * length) / rate
            total += math.exp(-acc) * piece
            acc += rate * length
        return total

    def squared(self) -> "PiecewiseConstant":
        return PiecewiseConstant(self.values**2, self.breakpoints)

    def __add__(self, other) -> "PiecewiseConstant":
        other = PiecewiseConstant.coerce(other)
        bps = np.union1d(self.breakpoints, other.breakpoints)
        probe = np.concatenate(([0.0], bps))
        return PiecewiseConstant(self(probe) + other(probe), bps)

    def __mul__(self, k: float) -> "PiecewiseConstant":
        return PiecewiseConstant(self.values * float(k), self.breakpoints)

    __rmul__ = __mul__

    def to_data(self):
        if self.breakpoints.size == 0:
            return float(self.values[0])
        return {"values": self.values.tolist(), "breakpoints": self.breakpoints.tolist()}

    def __repr__(self):
        return f"PiecewiseConstant({self.to_data()!r})"


@dataclass(frozen=True)
class CoefficientSnapshot:
    mu_C: float
    sigma_C: float
    f_C: float
    mu_F: float


@dataclass(frozen=True)
class ModelParams:
    """Capacity dynamics, discounting, horizon and initial capacity.

    Each coefficient accepts a number or a :class:`PiecewiseConstant`.
    ``horizon_T`` may be ``math.inf`` for the stationary closed forms.
    """

    mu_C: PiecewiseConstant
    sigma_C: PiecewiseConstant
    f_C: PiecewiseConstant
    mu_F: PiecewiseConstant
    horizon_T: float
    y0: float = 1.0

    def __post_init__(self):
        for name in ("mu_C", "sigma_C", "f_C", "mu_F"):
            object.__setattr__(self, name, PiecewiseConstant.coerce(getattr(self, name)))
        if self.mu_C.min() < 0:
            raise DomainError("mu_C must be nonnegative")
        if self.sigma_C.min() < 0:
            raise DomainError("sigma_C must be nonnegative")
        if self.mu_F.min() < 0:
            raise DomainError("mu_F must be nonnegative")
        if self.f_C.min() <= 0:
            raise DomainError("f_C must be bounded below by a positive constant")
        if not self.horizon_T > 0:
            raise DomainError("horizon_T must be positive")
        if not (self.y0 > 0 and math.isfinite(self.y0)):
            raise DomainError("y0 must be positive")

    @classmethod
    def constant(cls, mu_C, sigma_C, mu_F, f_C=1.0, horizon_T=math.inf, y0=1.0):
        return cls(mu_C=mu_C, sigma_C=sigma_C, f_C=f_C, mu_F=mu_F,
                   horizon_T=horizon_T, y0=y0)

    @property
    def is_constant(self) -> bool:
        return all(getattr(self, n).is_constant for n in ("mu_C", "sigma_C", "f_C", "mu_F"))

    @property
    def f_C_discontinuous(self) -> bool:
        """True when f_C jumps; the solvers assume a continuous conversion factor."""
        return not self.f_C.is_constant

    @property
    def mu_bar(self) -> PiecewiseConstant:
        """Combined decay-plus-discount rate ``mu_C + mu_F``."""
        return self.mu_C + self.mu_F

    def with_horizon(self, horizon_T: float) -> "ModelParams":
        return ModelParams(self.mu_C, self.sigma_C, self.f_C, self.mu_F, horizon_T, self.y0)

    def with_y0(self, y0: float) -> "ModelParams":
        return ModelParams(self.mu_C, self.sigma_C, self.f_C, self.mu_F, self.horizon_T, y0)


def eval_coefficients(params: ModelParams, t: float) -> CoefficientSnapshot:
    """Coefficient values at time ``t`` (right limits at breakpoints)."""
    if not (0.0 <= t <= params.horizon_T) or math.isnan(t):
        raise DomainError(f"t={t} outside [0, {params.horizon_T}]")
    return CoefficientSnapshot(
        mu_C=params.mu_C(t), sigma_C=params.sigma_C(t),
        f_C=params.f_C(t), mu_F=params.mu_F(t),
    )


# --- production functions ---------------------------------------------------

class ProductionFunction:
    """Revenue rate ``R`` with marginal ``R_c``; both accept arrays."""

    #: exponent ``g`` with ``R_c(k c) = k**g R_c(c)``, or None if not a power law
    power_exponent: float | None = None

    def revenue(self, c):
        raise NotImplementedError

    def marginal(self, c):
        raise NotImplementedError


@dataclass(frozen=True)
class CobbDouglas(ProductionFunction):
    """``R(c) = c**alpha / alpha`` with ``0 < alpha < 1``."""

    alpha: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha={self.alpha} must lie in (0, 1)")

    @property
    def power_exponent(self) -> float:
        return self.alpha - 1.0

    def revenue(self, c):
        return np.power(c, self.alpha) / self.alpha

    def marginal(self, c):
        return np.power(c, self.alpha - 1.0)


@dataclass(frozen=True)
class CustomProduction(ProductionFunction):
    """User-supplied ``R`` and ``R_c``.

    Inada behaviour is probed at construction.  Sublinear growth of ``R``
    (``sup R(c) - eta c < inf``) is the caller's responsibility.
    """

    revenue_fn: Callable
    marginal_fn: Callable
    name: str = "custom"
    probe: bool = field(default=True, repr=False)

    def __post_init__(self):
        if self.probe:
            lo, mid, hi = (float(self.marginal_fn(c)) for c in (1e-8, 1.0, 1e8))
            if not (lo > mid > hi > 0):
                raise DomainError("R_c must be positive and decreasing on the probe points")
            if not hi < 1e-3 * mid:
                raise DomainError("R_c does not vanish at large capacity (Inada probe)")

    def revenue(self, c):
        return self.revenue_fn(c)

    def marginal(self, c):
        return self.marginal_fn(c)


def marginal_production(pf: ProductionFunction, c):
    """Marginal revenue ``R_c(c)`` for ``c > 0``."""
    arr = np.asarray(c, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError("capacity must be positive")
    out = pf.marginal(arr)
    return float(out) if np.ndim(out) == 0 else out


# --- closed-form constants --------------------------------------------------

@dataclass(frozen=True)
class BetaRoots:
    beta_plus: float
    beta_minus: float
    mu_tilde: float


def beta_roots(mu_C: float, sigma_C: float, mu_F: float) -> BetaRoots:
    """Roots of ``sigma**2 x**2 / 2 + mu_tilde x - mu_F = 0``.

    ``mu_tilde = mu_C + sigma**2 / 2``.  The positive root is recovered from
    the product of the roots to avoid cancellation when ``mu_F`` is small.
    """
    if not sigma_C > 0:
        raise DegenerateVolatilityError("closed forms require sigma_C > 0")
    if not mu_F > 0:
        raise DomainError("closed forms require mu_F > 0")
    s2 = sigma_C * sigma_C
    mu_tilde = mu_C + 0.5 * s2
    h = mu_tilde / s2
    beta_minus = -h - math.sqrt(h * h + 2.0 * mu_F / s2)
    beta_plus = (-2.0 * mu_F / s2) / beta_minus
    return BetaRoots(beta_plus=beta_plus, beta_minus=beta_minus, mu_tilde=mu_tilde)
