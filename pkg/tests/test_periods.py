import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from scherktower.errors import NoBracket
from scherktower.periods import (
    closed_form_k3,
    corner_constants,
    corner_limit_I1,
    corner_limit_I2,
    corner_report,
    curve_csv,
    default_y_grid,
    i2_integrand,
    integrate_I1,
    integrate_I2,
    residual,
    scan_points,
    solve_period_curve,
)
from scherktower.quadrature import midpoint_rule
from scherktower.weier import TowerParams, forms_kernel, principal_branch


def oracle_I1(p):
    """``-Re int (i/g + i g) dh`` along the upper bank from y to 1, by scipy."""
    m = 4 * p.k

    def f(u):
        d = complex((1 - p.y) * u ** m)
        b = principal_branch(p, p.y + d, lower=False, offset=d)
        _, g, dh = forms_kernel(p, d, *b.as_tuple())
        return -((1j / g + 1j * g) * dh * (1 - p.y) * m * u ** (m - 1)).real
    return quad(f, 0.0, 1.0, epsabs=1e-13, epsrel=1e-13, limit=200)[0]


def oracle_I2(p):
    """``Re int (i/g + i g) dh`` along the upper half circle, by scipy."""
    def f(t):
        z = np.exp(1j * t)
        b = principal_branch(p, z, lower=False)
        _, g, dh = forms_kernel(p, z - p.y, *b.as_tuple())
        return ((1j / g + 1j * g) * dh * 1j * z).real
    return quad(f, 1e-300, np.pi, epsabs=1e-13, epsrel=1e-13, limit=200)[0]


POINTS = [(3, 0.1, -0.9), (3, 0.3, -0.5), (4, 0.2, -0.3), (5, 0.6, -0.1), (8, 0.05, -0.7)]


@pytest.mark.parametrize("k,y,x", POINTS)
def test_integrals_match_raw_data_oracle(k, y, x):
    p = TowerParams(k, y, x)
    assert integrate_I1(p, 1e-12).value == pytest.approx(oracle_I1(p), abs=1e-10)
    assert integrate_I2(p, 1e-12).value == pytest.approx(oracle_I2(p), abs=1e-10)


def test_midpoint_oracle_I2():
    p = TowerParams(3, 0.1, -0.9)
    mid = midpoint_rule(lambda t: i2_integrand(t, 3, 0.1, -0.9), 0.0, np.pi, 200_000)
    assert integrate_I2(p).value == pytest.approx(mid, abs=1e-8)


def test_frozen_values():
    r = residual(TowerParams(3, 0.1, -0.9), 1e-12)
    assert r.I1.value == pytest.approx(-10.698865573504339, abs=1e-10)
    assert r.I2.value == pytest.approx(-1.8132539398544154, abs=1e-10)
    assert r.D == r.I1.value - r.I2.value
    d = r.as_dict()
    assert set(d) >= {"I1", "I2", "D", "D_error_estimate", "params"}


def test_closed_form_k3():
    a, b = closed_form_k3()
    qa, qb = corner_constants(3)
    assert a == pytest.approx(0.90377, abs=5e-5)
    assert b == pytest.approx(0.14343, abs=5e-5)
    assert a == pytest.approx(qa, abs=1e-10)
    assert b == pytest.approx(qb, abs=1e-10)


@pytest.mark.parametrize("k", range(3, 9))
def test_corner_I1_formula(k):
    a, b = corner_constants(k)
    expect = 4 * k * np.sqrt(2.0) * np.sin(np.pi / k) * (b - a)
    assert corner_limit_I1(k).value == pytest.approx(expect, abs=1e-9)


def test_corner_frozen():
    assert corner_limit_I1(3).value == pytest.approx(-11.174758313432545, abs=1e-9)
    assert corner_limit_I2(3).value == pytest.approx(-1.2031544711888582, abs=1e-9)
    assert corner_limit_I2(3, (0, 0)).value == pytest.approx(-4.190722442209279, abs=1e-9)


@pytest.mark.parametrize("k", range(3, 9))
@pytest.mark.parametrize("corner", [(0, -1), (0, 0)])
def test_corner_I2_bounds(k, corner):
    r = corner_limit_I2(k, corner)
    assert abs(r.value) <= 2 * np.pi + r.abs_error_estimate


def test_corner_limits_approached():
    # the corner limits are the limits of the integrals along the diagonal
    for eps in (1e-3, 1e-4):
        p = TowerParams(3, eps, -1 + eps)
        assert integrate_I2(p).value == pytest.approx(corner_limit_I2(3).value, abs=0.05)


@pytest.mark.parametrize("k", [3, 4, 5])
def test_divergent_corner(k):
    r = corner_limit_I1(k, (0, 0))
    assert r.divergent and r.value == np.inf


def test_corner_validation():
    with pytest.raises(ValueError):
        corner_limit_I1(3, (1, 1))
    with pytest.raises(ValueError):
        corner_limit_I2(2)
    rep = corner_report(3, (0, -1))
    assert rep["corner"] == [0, -1]
    assert rep["D"] == pytest.approx(rep["I1"]["value"] - rep["I2"]["value"])


def test_monotone_in_k():
    vals = [-corner_limit_I1(k).value for k in range(3, 9)]
    assert np.all(np.diff(vals) > 0)


def test_scan_points():
    xs = scan_points((-0.9, -0.1), 10)
    assert xs[0] == pytest.approx(-0.9) and xs[-1] == pytest.approx(-0.1)
    assert np.all(np.diff(xs) > 0)
    with pytest.raises(ValueError):
        scan_points((-1.0, -0.1))


def test_solver_roots():
    pts = solve_period_curve(3, [1e-4, 1e-3, 1e-2], tol=1e-8)
    assert [p.y for p in pts] == [1e-4, 1e-3, 1e-2]
    for pt in pts:
        assert abs(pt.residual) < 1e-8
        assert abs(residual(TowerParams(3, pt.y, pt.x), 1e-12).D) < 1e-8
    assert pts[0].x == pytest.approx(-0.2533566909822839, abs=1e-9)


def test_solver_window_and_diagnostics():
    diags = []
    pts = solve_period_curve(4, [1e-4, 0.3], x_window=(-0.9, -0.1), diagnostics=diags)
    assert all(-0.9 <= p.x <= -0.1 for p in pts)
    assert len(diags) + len(pts) == 2
    assert all(isinstance(d, NoBracket) for d in diags)
    with pytest.raises(ValueError):
        solve_period_curve(2, [0.1])
    with pytest.raises(ValueError):
        solve_period_curve(3, [1.5])


@settings(max_examples=10, deadline=None)
@given(st.sampled_from([3, 4, 5]), st.floats(1e-4, 0.01))
def test_root_is_sign_change(k, y):
    pts = solve_period_curve(k, [y])
    if pts:
        pt = pts[0]
        lo = residual(TowerParams(k, y, pt.x - pt.bracket_width - 1e-9)).D
        hi = residual(TowerParams(k, y, pt.x + pt.bracket_width + 1e-9)).D
        assert np.sign(lo) != np.sign(hi)


def test_curve_csv_round_trip():
    pts = solve_period_curve(3, [1e-4, 1e-3])
    text = curve_csv(3, pts)
    rows = list(csv.DictReader(io.StringIO(text)))
    assert list(rows[0]) == ["k", "y", "x", "residual", "bracket_width"]
    for row, pt in zip(rows, pts):
        assert float(row["x"]) == pt.x and float(row["y"]) == pt.y


def test_default_grid():
    g = default_y_grid()
    assert g[0] == pytest.approx(1e-4) and g[-1] == pytest.approx(0.5)


def test_roots_share_one_cross_ratio():
    # A and B are real Moebius maps fixing +-1, so D = 0 depends on (y, x)
    # only through c = (x - y) / (1 - x y)
    pts = solve_period_curve(3, [1e-4, 1e-2, 0.1], tol=1e-12)
    c = [(p.x - p.y) / (1 - p.x * p.y) for p in pts]
    assert len(c) == 3 and np.ptp(c) < 1e-10
    assert c[0] == pytest.approx(-0.25345026965016526, abs=1e-10)
