import math

import numpy as np
import pytest

from irrinvest.boundary import BoundaryCurve, Method, upper_bound_curve
from irrinvest.errors import CoverageError, DomainError, ExtractionError
from irrinvest.model import CobbDouglas, ModelParams
from irrinvest.paths import TimeGrid
from irrinvest.stopping_oracle import (cross_validate, extract_boundary, log_ygrid,
                                       scale_reference, solve_value_function)


@pytest.fixture(scope="module")
def short_surface():
    p = ModelParams.constant(0.0, math.sqrt(2.0), 1.0, horizon_T=2.0)
    pf = CobbDouglas(0.5)
    g = TimeGrid.uniform(2.0, 40)
    yg = log_ygrid(scale_reference(p, pf), 200)
    return p, pf, g, solve_value_function(p, pf, g, yg)


def test_surface_invariants(short_surface):
    p, pf, g, s = short_surface
    assert np.all(s.values[-1] == 0.0)
    assert np.all(s.values <= s.payoff[:, None] + 1e-12)
    assert np.all(s.values >= 0.0)
    assert np.all(np.diff(s.values, axis=1) <= 0.0)
    # stopping set is a down-set in y at every knot
    for row in s.stop_flag[:-1]:
        k = np.argmin(row) if not row.all() else row.size
        assert row[:k].all() and not row[k:].any()


def test_extracted_shape(short_surface):
    p, pf, g, s = short_surface
    c = extract_boundary(s)
    assert c.method is Method.STOPPING_ORACLE
    assert c.values[-1] == 0.0 and np.all(c.values[:-1] > 0)
    cell = s.log_cell
    ratio = np.log(c.values[1:-1]) - np.log(c.values[:-2])
    assert np.all(ratio <= cell)
    assert np.all(np.log(c.values[:-1]) <= np.log(upper_bound_curve(p, pf, g.knots[:-1])) + cell)


def _scalar_recursion(y, i, n, dt, mu_C, mu_bar, f, marginal):
    """Deterministic stopping recursion along y exp(-mu_C t)."""
    if i == n:
        return 0.0
    cont = marginal(y) * dt + math.exp(-mu_bar * dt) * _scalar_recursion(
        y * math.exp(-mu_C * dt), i + 1, n, dt, mu_C, mu_bar, f, marginal)
    return min(1.0 / f, cont)


def test_zero_volatility_matches_scalar_recursion():
    mu_C, mu_F, T, N = 0.1, 1.0, 1.0, 20
    p = ModelParams.constant(mu_C, 0.0, mu_F, horizon_T=T)
    pf = CobbDouglas(0.5)
    g = TimeGrid.uniform(T, N)
    dt = T / N
    h = mu_C * dt   # log spacing equal to one step of decay keeps shifted points on nodes
    ly = math.log(1e-4) + h * np.arange(3000)
    s = solve_value_function(p, pf, g, np.exp(ly), substeps=1, extrapolate=False, check_span=False)
    worst = 0.0
    for i in range(0, N, 4):
        # nodes whose decayed path stays on the grid for the remaining steps
        for j in range(N, 3000, 37):
            ref = _scalar_recursion(math.exp(ly[j]), i, N, dt, mu_C, mu_C + mu_F, 1.0, pf.marginal)
            worst = max(worst, abs(s.values[i, j] - ref))
    assert worst <= 1e-10


def test_grid_preconditions():
    p = ModelParams.constant(0.0, math.sqrt(2.0), 1.0, horizon_T=2.0)
    pf = CobbDouglas(0.5)
    g = TimeGrid.uniform(2.0, 10)
    a = scale_reference(p, pf)
    with pytest.raises(CoverageError):
        solve_value_function(p, pf, g, log_ygrid(a, 50, decades=1.0))
    with pytest.raises(DomainError):
        solve_value_function(p, pf, g, np.linspace(1e-4, 1e3, 50))
    with pytest.raises(CoverageError):
        # stopping region reaches the top edge
        solve_value_function(p, pf, g, np.exp(np.linspace(-20, math.log(0.01 * a), 50)),
                             check_span=False)


def test_empty_stopping_slice(short_surface):
    p, pf, g, s = short_surface
    ly = np.log(s.ygrid)
    shifted = solve_value_function(p, pf, g, np.exp(ly + 12.0), check_span=False, extrapolate=False)
    c = extract_boundary(shifted)
    assert c.flags and np.all(c.values == 0.0)
    with pytest.raises(ExtractionError):
        extract_boundary(shifted, strict=True)


def test_cross_validate_basics(short_surface):
    g = short_surface[2]
    c = extract_boundary(short_surface[3])
    rep = cross_validate(c, c)
    assert rep.passed and rep.max_rel_early == 0.0 and rep.max_abs_late == 0.0
    other = BoundaryCurve(TimeGrid.uniform(2.0, 20), np.zeros(21), Method.UPPER_BOUND)
    with pytest.raises(DomainError):
        cross_validate(c, other)
    bumped = BoundaryCurve(g, c.values * 1.1, Method.REPRESENTATION)
    rep = cross_validate(bumped, c)
    assert rep.max_rel_early == pytest.approx(0.1, rel=1e-9) and not rep.passed


def test_surface_csv(short_surface, tmp_path):
    s = short_surface[3]
    s.write_csv(tmp_path / "v.csv")
    with open(tmp_path / "v.csv") as fh:
        assert fh.readline().strip() == "t,y,v,stop"
        assert sum(1 for _ in fh) == s.values.size
