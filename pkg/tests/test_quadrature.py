import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from scherktower.errors import ToleranceNotMet
from scherktower.quadrature import (
    GAUSS,
    KRONROD,
    NODES,
    integrate,
    integrate_many,
    midpoint_rule,
)


def test_rule_weights():
    assert KRONROD.sum() == pytest.approx(2.0, abs=1e-15)
    assert GAUSS.sum() == pytest.approx(2.0, abs=1e-15)
    assert np.all(np.diff(NODES) > 0)
    # Kronrod is exact to degree 22, the embedded Gauss rule to degree 13
    for n in range(0, 23, 2):
        assert np.dot(KRONROD, NODES ** n) == pytest.approx(2.0 / (n + 1), abs=1e-14)
    for n in range(0, 14, 2):
        assert np.dot(GAUSS, NODES ** n) == pytest.approx(2.0 / (n + 1), abs=1e-14)


def test_polynomial_exact_in_one_panel():
    res = integrate(lambda t: 3 * t ** 2 - t + 1, -1.0, 2.0)
    assert res.value == pytest.approx(10.5, abs=1e-13)
    assert res.panels_used == 1


def test_endpoint_singularity_error_estimate_is_honest():
    # a raw algebraic singularity ends in panels too small to split further
    res = integrate(lambda t: 1.0 / np.sqrt(t), 0.0, 1.0, tol=1e-10)
    assert abs(res.value - 2.0) <= res.abs_error_estimate


def test_endpoint_singularity_substituted():
    # t = s**2 removes the singularity, as done for every period integrand
    res = integrate(lambda s: 2.0 * s / np.sqrt(s * s), 1e-300, 1.0, tol=1e-12)
    assert res.value == pytest.approx(2.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(-2.0, 2.0), st.floats(0.1, 3.0))
def test_matches_scipy(freq, a, width):
    f = lambda t: np.cos(freq * t) * np.exp(-0.3 * t * t)  # noqa: E731
    ours = integrate(f, a, a + width, tol=1e-12).value
    ref = quad(f, a, a + width, epsabs=1e-13, epsrel=1e-13)[0]
    assert ours == pytest.approx(ref, abs=1e-11)


def test_many_matches_single():
    a = np.array([0.0, 1.0, -2.0])
    b = np.array([1.0, 3.0, 0.5])
    vals, errs, pans = integrate_many(lambda t, o: np.exp(t) * (1 + o[:, None]), a, b)
    for i in range(3):
        ref = (1 + i) * (np.exp(b[i]) - np.exp(a[i]))
        assert vals[i] == pytest.approx(ref, rel=1e-13)
    assert np.all(pans >= 1) and np.all(errs >= 0)


def test_vector_valued_integrand():
    vals, _, _ = integrate_many(lambda t, o: np.stack([t, t * t], -1), [0.0], [1.0])
    np.testing.assert_allclose(vals[0], [0.5, 1.0 / 3.0], atol=1e-15)


def test_complex_integrand_real_part():
    res = integrate(lambda t: np.exp(1j * t), 0.0, np.pi / 2)
    assert res.value == pytest.approx(1.0, abs=1e-13)
    full = integrate(lambda t: np.exp(1j * t), 0.0, np.pi / 2, real=False).value
    assert full == pytest.approx(1.0 + 1.0j, abs=1e-13)


def test_panel_budget_exhausted():
    with pytest.raises(ToleranceNotMet):
        integrate(lambda t: np.sin(1.0 / t), 1e-6, 1.0, tol=1e-14, max_panels=10)
    vals, _, _ = integrate_many(lambda t, o: np.sin(1.0 / t), [1e-6], [1.0], tol=1e-14,
                                max_panels=10, raise_on_failure=False)
    assert np.isfinite(vals[0])


def test_relative_floor():
    f = lambda t, o: 1.0 / t  # noqa: E731
    strict = integrate_many(f, [1e-8], [1.0], tol=1e-10)[2][0]
    loose = integrate_many(f, [1e-8], [1.0], tol=1e-10, rtol=1e-8)[2][0]
    assert loose < strict
    vals = integrate_many(f, [1e-8], [1.0], tol=1e-10, rtol=1e-12)[0]
    assert vals[0] == pytest.approx(8 * np.log(10.0), rel=1e-11)


def test_midpoint_rule_oracle():
    val = midpoint_rule(np.sin, 0.0, np.pi, panels=100_000)
    assert val == pytest.approx(2.0, abs=1e-9)


def test_as_dict():
    d = integrate(np.cos, 0.0, 1.0).as_dict()
    assert set(d) == {"value", "abs_error_estimate", "panels_used", "divergent"}
    assert d["divergent"] is False
