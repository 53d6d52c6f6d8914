import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scherktower.errors import (
    BranchPointHit,
    EndPointHit,
    PoleHit,
    SingularityClearance,
    StepTooLarge,
)
from scherktower.weier import (
    BranchState,
    TowerParams,
    anchor_point,
    anchor_state,
    continue_branch,
    continue_point,
    domain_point,
    dg_dz,
    eval_dh_dz,
    eval_g,
    eval_phi,
    eval_w,
    g_power_rhs,
    involution_image,
    principal_branch,
    refine_path,
)

params = st.builds(
    TowerParams,
    st.integers(3, 8),
    st.floats(0.02, 0.9),
    st.floats(-0.95, -0.02),
)


def interior(p, r, t):
    """Point of the open disk kept away from the cuts and singular points."""
    z = r * np.exp(1j * t)
    if abs(z.imag) < 1e-3:
        z += 2e-3j if t < np.pi else -2e-3j
    return z


def path_to(p, z):
    """Polyline from the anchor to ``z`` that never crosses a cut."""
    z0 = p.anchor
    b = 0.5 * np.sqrt(1.0 - z0 * z0)
    if z.imag >= 0:
        pts = [z0, z0 + 1j * b, z.real + 1j * b, z]
    else:
        mid = 0.5 * (p.x + p.y)
        pts = [z0, z0 + 1j * b, mid + 1j * b, mid - 1j * min(b, 0.5), z.real - 1j * min(b, 0.5), z]
    return refine_path(np.array(pts), 0.01)


def test_params_validation():
    with pytest.raises(ValueError):
        TowerParams(2, 0.3, -0.5)
    with pytest.raises(ValueError):
        TowerParams(True, 0.3, -0.5)
    with pytest.raises(ValueError):
        TowerParams(3.5, 0.3, -0.5)
    with pytest.raises(ValueError):
        TowerParams(3, 1.0, -0.5)
    with pytest.raises(ValueError):
        TowerParams(3, 0.3, 0.0)
    p = TowerParams(4, 0.25, -0.5)
    assert p.p == pytest.approx(3 / 16)
    assert p.anchor == pytest.approx(0.625)


def test_anchor_values(generic):
    assert anchor_state(generic).as_tuple() == (0.0, 0.0, 0.0)
    pt = anchor_point(generic)
    # frozen regression values at the anchor
    assert eval_g(generic, pt) == pytest.approx(-0.4671335400536739 - 0.8090990252924741j,
                                                abs=1e-14)
    assert eval_dh_dz(generic, pt) == pytest.approx(-2.456253230123201, abs=1e-13)


def test_anchor_g_closed_form(generic):
    # on the upper bank of (y, 1) all arguments vanish: g = -e^{i pi/k} A^p B^(1/2)
    p = generic
    z = p.anchor
    a = (z - p.y) / (1 - p.y * z)
    b = (1 - p.x * z) / (z - p.x)
    expect = -np.exp(1j * np.pi / p.k) * a ** p.p * np.sqrt(b)
    assert eval_g(p, anchor_point(p)) == pytest.approx(expect, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(params, st.floats(0.01, np.pi - 0.01))
def test_gauss_unit_on_circle(p, t):
    for s in (t, -t):
        z = np.exp(1j * s)
        assert abs(eval_g(p, domain_point(p, z))) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(params, st.floats(0.05, 0.95), st.floats(0.0, 2 * np.pi))
def test_g_power_relation(p, r, t):
    z = interior(p, r, t)
    g = eval_g(p, domain_point(p, z))
    rhs = g_power_rhs(p, z)
    assert abs(g ** (4 * p.k) - rhs) <= 1e-11 * max(1.0, abs(rhs))


@settings(max_examples=40, deadline=None)
@given(params, st.floats(0.05, 0.95), st.floats(0.0, 2 * np.pi))
def test_null_identity(p, r, t):
    z = interior(p, r, t)
    f = eval_phi(p, domain_point(p, z))
    scale = abs(f.phi1) ** 2 + abs(f.phi2) ** 2 + abs(f.phi3) ** 2
    assert abs(f.phi1 ** 2 + f.phi2 ** 2 + f.phi3 ** 2) <= 1e-13 * scale


@settings(max_examples=30, deadline=None)
@given(params, st.floats(0.1, 0.9), st.floats(0.0, 2 * np.pi))
def test_principal_branch_matches_continuation(p, r, t):
    z = interior(p, r, t)
    path = path_to(p, z)
    cont = continue_branch(p, path, anchor_state(p))
    closed = principal_branch(p, z)
    for a, b in zip(cont.as_tuple(), closed.as_tuple()):
        assert a == pytest.approx(b, abs=1e-9)


def test_continue_point_agrees(generic):
    z = 0.1 - 0.4j
    pt = continue_point(generic, anchor_point(generic), path_to(generic, z)[1:])
    assert eval_g(generic, pt) == pytest.approx(eval_g(generic, domain_point(generic, z)),
                                                abs=1e-12)


def test_branch_across_cuts(generic):
    # the two banks of (y, 1) differ: sqrt(A) changes sign and g by e^{2 pi i p}
    p = generic
    up = domain_point(p, 0.6, lower=False)
    lo = domain_point(p, 0.6, lower=True)
    ratio = eval_g(p, lo) / eval_g(p, up)
    assert ratio == pytest.approx(np.exp(2j * np.pi * p.p), abs=1e-12)
    assert eval_w(p, lo) == pytest.approx(-eval_w(p, up), abs=1e-12)


def test_evaluators_refuse_singular_points(generic):
    p = generic
    with pytest.raises(BranchPointHit):
        eval_dh_dz(p, domain_point(p, p.y))
    with pytest.raises(BranchPointHit):
        eval_g(p, domain_point(p, p.x))
    with pytest.raises(EndPointHit):
        eval_g(p, domain_point(p, 1.0))
    with pytest.raises(PoleHit):
        eval_w(p, domain_point(p, -1.0 + 0j))
    assert eval_g(p, domain_point(p, p.y)) == 0


def test_continuation_errors(generic):
    p = generic
    y = p.y
    with pytest.raises(StepTooLarge):
        continue_branch(p, [p.anchor, y + 0.1j, y - 0.1], anchor_state(p))
    with pytest.raises(SingularityClearance):
        continue_branch(p, [p.anchor, p.anchor + 0.2j, p.x + 0.2j, p.x - 0.2j],
                        anchor_state(p))
    with pytest.raises(ValueError):
        continue_branch(p, [p.anchor, p.anchor + 0.1j], BranchState(1.0, 0.0, 0.0))


def test_continue_to_x_without_b(generic):
    p = generic
    path = refine_path(np.array([p.anchor, p.anchor + 0.3j, p.x + 0.3j, p.x]), 0.01)
    st_ = continue_branch(p, path, anchor_state(p), track_b=False)
    # A and F**2 are regular at x; their arguments match the closed form
    closed = principal_branch(p, p.x + 0j, lower=False)
    assert st_.arg_a == pytest.approx(closed.arg_a, abs=1e-9)
    assert st_.arg_q == pytest.approx(closed.arg_q, abs=1e-9)
    assert st_.arg_b == 0.0


def test_exact_offsets_near_y():
    # with exact offsets a path may start 1e-20 from y without tripping the clearance
    p = TowerParams(4, 1e-4, -0.0067)
    d = 1e-20 * np.exp(1j * np.linspace(0.0, 0.5, 6))
    st_ = continue_branch(p, p.y + d, principal_branch(p, p.y + d[0], offset=d[0]),
                          offsets=d)
    assert st_.arg_a == pytest.approx(0.5, abs=1e-9)


def test_dg_dz_finite_difference(generic):
    p = generic
    z = 0.2 + 0.3j
    h = 1e-6
    num = (eval_g(p, domain_point(p, z + h)) - eval_g(p, domain_point(p, z - h))) / (2 * h)
    assert dg_dz(p, domain_point(p, z)) == pytest.approx(num, rel=1e-7)


@pytest.mark.parametrize("row", [1, 2, 3, 4, 5, 6])
def test_involution_images(generic, row):
    p = generic
    z = {1: np.exp(0.7j), 4: np.exp(-0.7j)}.get(row, 0.4 + 0.3j)
    pt = domain_point(p, z)
    img = involution_image(p, pt, row)
    if row in (1, 4):
        assert img.z == pytest.approx(z)
    else:
        assert img.z == pytest.approx(np.conj(z))
    with pytest.raises(ValueError):
        involution_image(p, pt, 7)


def test_array_evaluation_matches_scalar(generic, rng):
    p = generic
    z = 0.8 * np.sqrt(rng.uniform(size=20)) * np.exp(2j * np.pi * rng.uniform(size=20))
    vec = eval_g(p, domain_point(p, z))
    scal = [eval_g(p, domain_point(p, v)) for v in z]
    np.testing.assert_allclose(vec, scal, atol=1e-15)


@pytest.mark.parametrize("p", [TowerParams(3, 0.3, -0.5), TowerParams(5, 0.1, -0.7)])
def test_slit_banks_differ_by_sign_of_g(p):
    # the two banks of (-1, x) are images under the vertical half-turn about X(x)
    z = np.linspace(-0.95, p.x - 0.05, 7) + 0j
    up, lo = domain_point(p, z, lower=False), domain_point(p, z, lower=True)
    np.testing.assert_allclose(eval_g(p, lo), -eval_g(p, up), rtol=1e-13)
    np.testing.assert_allclose(eval_dh_dz(p, lo), eval_dh_dz(p, up), rtol=1e-13)
