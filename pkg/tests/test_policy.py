import math

import numpy as np
import pytest

from irrinvest.boundary import BoundaryCurve, Method, solve_boundary_backward
from irrinvest.errors import DomainError
from irrinvest.model import CobbDouglas, ModelParams
from irrinvest.paths import TimeGrid, simulate_c0
from irrinvest.policy import (LumpAtZero, MonteCarloEstimate, NoInvest, ScaledBoundary,
                              TrackBoundary, TrackConstant, dominance, evaluate_profit,
                              reflect_direct, supergradient, track, verify_foc, write_policy_csv)


@pytest.fixture(scope="module")
def setup():
    p = ModelParams.constant(0.0, math.sqrt(2.0), 1.0, horizon_T=2.0)
    pf = CobbDouglas(0.5)
    g = TimeGrid.uniform(2.0, 40)
    curve = solve_boundary_backward(p, pf, g, simulate_c0(p, g, 4000, 1, "tilted"))
    ens = simulate_c0(p, g, 4000, 2, "original")
    return p, pf, g, curve, ens


def _flat(T=1.0, N=10, n=3):
    p = ModelParams.constant(0.0, 0.0, 0.1, horizon_T=T)
    return p, simulate_c0(p, TimeGrid.uniform(T, N), n, 0)


def test_track_constant_above_level():
    p, ens = _flat()
    path = track(TrackConstant(0.5), ens, p, y0=1.0)
    assert np.all(path.capacity == 1.0) and np.all(path.nu == 0.0)


def test_track_constant_below_level():
    p, ens = _flat()
    path = track(TrackConstant(0.8), ens, p, y0=0.5)
    assert np.allclose(path.capacity, 0.8, rtol=1e-14)
    assert np.allclose(path.nu_bar, 0.3, rtol=1e-14)
    assert np.allclose(path.nu[:, -1], 0.3) and np.all(path.dnu[:, 1:] == 0.0)
    assert np.allclose(path.cost, 0.3)


def test_capacity_identity_and_direct_reflection(setup):
    p, pf, g, curve, ens = setup
    for pol in (TrackBoundary(curve), ScaledBoundary(curve, 2.0), TrackConstant(0.2)):
        path = track(pol, ens, p, y0=0.05)
        assert np.allclose(path.capacity, ens.values * (0.05 + path.nu_bar), rtol=1e-12, atol=0)
        direct = reflect_direct(pol.levels(g), ens, 0.05)
        assert np.allclose(path.capacity, direct, rtol=1e-12, atol=0)
        assert np.all(np.diff(path.nu_bar, axis=1) >= 0) and np.all(np.diff(path.nu, axis=1) >= 0)
        assert np.all(path.capacity[:, :-1] >= pol.levels(g)[:-1] * (1 - 1e-12))


def test_tracking_is_minimal(setup):
    p, pf, g, curve, ens = setup
    path = track(TrackBoundary(curve), ens, p, y0=1.0)
    level = curve.values
    # inside a step nu_bar can only rise to level / (step minimum of C0)
    rises = np.diff(path.nu_bar, axis=1) > 0
    sup_inner = level[None, :-1] / ens.minima
    new = path.nu_bar[:, 1:] + 1.0
    hit_inner = np.isclose(new, sup_inner, rtol=1e-12)
    hit_knot = np.isclose(path.capacity[:, 1:], level[None, 1:], rtol=1e-12)
    assert np.all(hit_inner[rises] | hit_knot[rises])
    assert path.nu_bar[:, 0].max() == 0.0


def test_start_above_boundary_no_initial_jump(setup):
    p, pf, g, curve, ens = setup
    y0 = 2.0 * curve.values.max()
    path = track(TrackBoundary(curve), ens, p, y0=y0)
    assert np.all(path.dnu[:, 0] == 0.0)
    # paths that never bring y0 C0 below the boundary never invest
    safe = np.all(y0 * ens.minima >= curve.values[None, :-1], axis=1)
    assert safe.any() and np.all(path.nu[safe] == 0.0)


def test_no_invest_and_lump():
    p, ens = _flat()
    pf = CobbDouglas(0.5)
    path = track(NoInvest(), ens, p, y0=0.7)
    assert np.all(path.nu_bar == 0.0) and np.all(path.cost == 0.0)
    path = track(LumpAtZero(0.2), ens, p.with_y0(0.7))
    assert np.allclose(path.capacity, 0.9) and np.allclose(path.cost, 0.2)
    j = evaluate_profit(LumpAtZero(0.2), p, pf, ens, 0.7)
    exact = 2 * math.sqrt(0.9) * (1 - math.exp(-0.1)) / 0.1 - 0.2
    assert j.mean == pytest.approx(exact, rel=1e-3)


def test_tiny_horizon_profit_near_zero():
    p = ModelParams.constant(0.0, 0.5, 0.1, horizon_T=1e-6)
    ens = simulate_c0(p, TimeGrid.uniform(1e-6, 1), 100, 0)
    assert abs(evaluate_profit(NoInvest(), p, CobbDouglas(0.5), ens, 1.0).mean) < 1e-5


def test_noinvest_profit_oracle():
    p = ModelParams.constant(0.1, 0.5, 0.2, horizon_T=2.0)
    ens = simulate_c0(p, TimeGrid.uniform(2.0, 100), 20_000, 5)
    alpha, y0 = 0.4, 0.8
    lam = 0.2 + alpha * 0.1 + 0.5 * alpha * (1 - alpha) * 0.25
    exact = y0**alpha / alpha * (1 - math.exp(-lam * 2.0)) / lam
    est = evaluate_profit(NoInvest(), p, CobbDouglas(alpha), ens, y0)
    assert abs(est.mean - exact) <= 3 * est.stderr


def test_supergradient_domain(setup):
    p, pf, g, curve, ens = setup
    with pytest.raises(DomainError):
        supergradient(NoInvest(), g.n_steps, p, pf, ens)
    with pytest.raises(DomainError):
        track(NoInvest(), simulate_c0(p, g, 5, 1, "tilted"), p)


def test_noinvest_tiny_capacity_has_positive_supergradient(setup):
    p, pf, g, curve, ens = setup
    est = supergradient(NoInvest(), 0, p, pf, ens, y0=0.01)
    assert est.mean > 2 * est.stderr


def test_foc_optimal_vs_overinvesting(setup):
    p, pf, g, curve, ens = setup
    good = verify_foc(TrackBoundary(curve), p, pf, ens, y0=1.0)
    assert good.passed, good.text()
    bad = verify_foc(ScaledBoundary(curve, 2.0), p, pf, ens, y0=1.0)
    assert not bad.flat_off.verdict


def test_dominance_paired(setup):
    p, pf, g, curve, ens = setup
    res = dominance(TrackBoundary(curve), {"none": NoInvest(), "x2": ScaledBoundary(curve, 2.0)},
                    p, pf, ens, 1.0)
    assert all(r.passed for r in res)


def test_policy_grid_mismatch(setup):
    p, pf, g, curve, ens = setup
    other = BoundaryCurve(TimeGrid.uniform(2.0, 20), np.zeros(21), Method.UPPER_BOUND)
    with pytest.raises(DomainError):
        track(TrackBoundary(other), ens, p)
    with pytest.raises(DomainError):
        ScaledBoundary(curve, 0.0)
    with pytest.raises(DomainError):
        LumpAtZero(-1.0)


def test_estimate_and_csv(tmp_path):
    est = MonteCarloEstimate.from_samples([1.0, 2.0, 3.0, 4.0])
    assert est.mean == 2.5 and est.n == 4
    assert est.stderr == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    write_policy_csv(tmp_path / "p.csv", [("no_invest", est, 7)], "config_sha256=a seed=7")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[1] == "policy,J_mean,J_stderr,n_paths,seed" and lines[2].startswith("no_invest,2.5,")
