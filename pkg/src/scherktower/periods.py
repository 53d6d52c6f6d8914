"""Period integrals and the period-curve solver.

Two real integrals control the single horizontal period of the fundamental
piece:

``I1``
    ``Re int (i/g + i g) dh`` along the segment ``y < t < 1`` written in the
    variable ``s`` with ``t = y + s**(4k)``, which removes the algebraic
    endpoint singularity at ``t = y``.  The segment height form used here is
    ``dh = dt / (F (1 - y t)(t - y))``, i.e. the opposite orientation of
    :func:`scherktower.weier.eval_dh_dz` on that segment.
``I2``
    ``Re int (i/g + i g) dh`` along the upper half circle ``z = exp(i t)``,
    ``0 < t < pi``, with the continuous circle form of g and
    ``dh = -i dt / (F |z - y|**2)``.

The residual is ``D = I1 - I2``.  With ``I1`` in the ``s`` orientation above
and ``I2`` along the circle, ``D = 0`` is exactly the condition that the
image of ``z = -1`` on the upper bank lies in the vertical symmetry plane
``x2 = 0`` through the image of ``z = y``, i.e. that the horizontal period
closes.  The mesh integration checks this independently: the ``x2``
coordinate of that image equals ``-D / 2``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import NoBracket, ToleranceNotMet
from .quadrature import QuadratureResult, integrate
from .weier import TowerParams

log = logging.getLogger(__name__)

CORNERS = {(0, -1): "(0,-1)", (0, 0): "(0,0)"}


@dataclass(frozen=True)
class PeriodReport:
    """Both period integrals and their residual at one parameter point."""

    I1: QuadratureResult
    I2: QuadratureResult
    D: float
    params: TowerParams

    @property
    def error_estimate(self) -> float:
        return self.I1.abs_error_estimate + self.I2.abs_error_estimate

    def as_dict(self) -> dict:
        return {
            "params": self.params.as_dict(),
            "I1": self.I1.as_dict(),
            "I2": self.I2.as_dict(),
            "D": self.D,
            "D_error_estimate": self.error_estimate,
        }


@dataclass(frozen=True)
class PeriodCurvePoint:
    """Root of the residual on one horizontal line ``y = const``."""

    y: float
    x: float
    residual: float
    bracket_width: float


# ---------------------------------------------------------------------------
# integrands

def i1_integrand(s, k, y, x):
    """Integrand of ``I1`` in the variable ``s``, ``t = y + s**(4k)``."""
    s = np.asarray(s, dtype=float)
    s4k = s ** (4 * k)
    t = y + s4k
    u = 1.0 - y * t
    bv = (1.0 - x * t) / (t - x)
    e = np.exp(1j * np.pi / k)
    p = (k - 1) / (4.0 * k)
    bracket = (-(1.0 / e) * u ** p * bv ** -0.5
               - e * s ** (2 * (k - 1)) * u ** -p * bv ** 0.5)
    den = np.sqrt(np.sqrt(u * s4k) + 0.5 * (1.0 + t) * (1.0 - y)) * u ** 0.75
    return np.real(1j * bracket * (4 * k) / den)


def circle_gauss(t, k, y, x):
    """Gauss map on the upper half circle with continuous arguments."""
    t = np.asarray(t, dtype=float)
    p = (k - 1) / (4.0 * k)
    alpha = np.arctan2(np.sin(t), np.cos(t) - y)
    beta = np.arctan2(np.sin(t), np.cos(t) - x)
    return -np.exp(1j * (np.pi / k + (k + 1) * t / (4.0 * k)
                         + 2.0 * p * alpha - beta))


def circle_dh(t, y):
    """Height differential per unit ``t`` on the upper half circle."""
    t = np.asarray(t, dtype=float)
    r = np.hypot(np.cos(t) - y, np.sin(t))
    big_f = np.sqrt(1.0 + (1.0 - y) * np.cos(0.5 * t) / r)
    return -1j / (big_f * r * r)


def i2_integrand(t, k, y, x):
    """Integrand of ``I2`` on ``0 < t < pi``."""
    g = circle_gauss(t, k, y, x)
    return np.real((1j / g + 1j * g) * circle_dh(t, y))


def corner_i1_integrand(s, k, corner):
    """Limit integrand of ``I1`` at a corner of the parameter square."""
    s = np.asarray(s, dtype=float)
    e = np.exp(1j * np.pi / k)
    if corner == (0, -1):
        br = -(1.0 / e) - e * s ** (2 * (k - 1))
    else:
        br = -(1.0 / e) * s ** (2 * k) - e / (s * s)
    return np.real(1j * 4 * k * np.sqrt(2.0) * br / (1.0 + s ** (2 * k)))


def corner_i2_integrand(t, k, corner):
    """Limit integrand of ``I2`` at a corner of the parameter square."""
    t = np.asarray(t, dtype=float)
    if corner == (0, -1):
        phase = (4 * np.pi + t * (k - 1)) / (4.0 * k)
    else:
        phase = (4 * np.pi - t * (k + 1)) / (4.0 * k)
    return -2.0 * np.cos(phase) / np.sqrt(1.0 + np.cos(0.5 * t))


# ---------------------------------------------------------------------------
# integrals

def integrate_I1(p: TowerParams, tol: float = 1e-10,
                 max_panels: int = 20000) -> QuadratureResult:
    """``I1`` by adaptive quadrature over ``0 <= s <= (1 - y)**(1/(4k))``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    smax = (1.0 - p.y) ** (1.0 / (4 * p.k))
    return integrate(lambda s: i1_integrand(s, p.k, p.y, p.x), 0.0, smax, tol,
                     max_panels)


def integrate_I2(p: TowerParams, tol: float = 1e-10,
                 max_panels: int = 20000) -> QuadratureResult:
    """``I2`` by adaptive quadrature over ``0 <= t <= pi``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    return integrate(lambda t: i2_integrand(t, p.k, p.y, p.x), 0.0, np.pi, tol,
                     max_panels)


def _corner(corner):
    c = tuple(int(round(v)) for v in corner)
    if c not in CORNERS:
        raise ValueError(f"corner must be (0,-1) or (0,0), got {corner!r}")
    return c


def _growth_is_inverse(values, eps):
    """True when cutoff integrals grow like ``1/eps``."""
    v = np.asarray(values)
    if not np.all(np.isfinite(v)) or np.any(np.diff(v) <= 0):
        return False
    ratios = np.diff(v[-4:]) / np.diff(1.0 / np.asarray(eps[-4:]))
    # the coefficient of 1/eps settles to a positive constant
    return bool(np.all(ratios > 0)
                and np.ptp(ratios) <= 1e-3 * np.max(np.abs(ratios)))


def corner_limit_I1(k: int, corner=(0, -1), tol: float = 1e-10) -> QuadratureResult:
    """Limit of ``I1`` as ``(y, x)`` approaches a corner.

    At ``(0, -1)`` the value is ``4k sqrt(2) sin(pi/k) (B - A)`` with
    ``A = int_0^1 ds/(1 + s**(2k))`` and
    ``B = int_0^1 s**(2k - 2) ds/(1 + s**(2k))``.  At ``(0, 0)`` the integrand
    carries an ``s**-2`` term; cutoff integrals over ``[eps, 1]`` with
    ``eps = 1e-2 .. 1e-8`` are checked for ``1/eps`` growth and the result
    is flagged divergent with value ``+inf``.
    """
    if k < 3:
        raise ValueError("k must be >= 3")
    c = _corner(corner)
    if c == (0, -1):
        return integrate(lambda s: corner_i1_integrand(s, k, c), 0.0, 1.0, tol)
    eps = 10.0 ** -np.arange(2, 9)
    # the cutoff integrals scale like 1/eps; so does their tolerance
    res = [integrate(lambda s: corner_i1_integrand(s, k, c), e, 1.0, tol / e)
           for e in eps]
    values = [r.value for r in res]
    if _growth_is_inverse(values, eps):
        return QuadratureResult(np.inf, np.inf, sum(r.panels_used for r in res),
                                divergent=True)
    last = res[-1]
    return QuadratureResult(last.value, abs(values[-1] - values[-2]),
                            last.panels_used)


def corner_constants(k: int, tol: float = 1e-12) -> tuple:
    """``(A, B)`` of the ``(0, -1)`` corner by quadrature."""
    a = integrate(lambda s: 1.0 / (1.0 + s ** (2 * k)), 0.0, 1.0, tol)
    b = integrate(lambda s: s ** (2 * k - 2) / (1.0 + s ** (2 * k)), 0.0, 1.0, tol)
    return a.value, b.value


def corner_limit_I2(k: int, corner=(0, -1), tol: float = 1e-10) -> QuadratureResult:
    """Limit of ``I2`` as ``(y, x)`` approaches a corner.

    Raises
    ------
    ArithmeticError
        If the value violates ``|I2| <= 2 pi`` beyond its error estimate.
    """
    if k < 3:
        raise ValueError("k must be >= 3")
    c = _corner(corner)
    res = integrate(lambda t: corner_i2_integrand(t, k, c), 0.0, np.pi, tol)
    if abs(res.value) > 2 * np.pi + res.abs_error_estimate:
        raise ArithmeticError(f"|I2| = {abs(res.value):.6g} exceeds 2 pi")
    return res


def closed_form_k3() -> tuple:
    """``(A, B)`` for ``k = 3`` from explicit log/arctan antiderivatives."""
    r3 = np.sqrt(3.0)

    def common(s):
        return (-2.0 * np.arctan(r3 - 2.0 * s) + 4.0 * np.arctan(s)
                + 2.0 * np.arctan(2.0 * s + r3))

    def logs(s):
        return r3 * (np.log(s * s + r3 * s + 1.0) - np.log(s * s - r3 * s + 1.0))

    def first(s):
        return (logs(s) + common(s)) / 12.0

    def second(s):
        return (-logs(s) + common(s)) / 12.0

    return float(first(1.0) - first(0.0)), float(second(1.0) - second(0.0))


def combine(i1: float, i2: float) -> float:
    """Period residual ``D = I1 - I2`` from the two integral values."""
    return i1 - i2


def residual(p: TowerParams, tol: float = 1e-10) -> PeriodReport:
    """``D = I1 - I2`` with both quadratures."""
    i1 = integrate_I1(p, tol)
    i2 = integrate_I2(p, tol)
    return PeriodReport(i1, i2, combine(i1.value, i2.value), p)


def corner_report(k: int, corner, tol: float = 1e-10) -> dict:
    """Corner limits of both integrals as a plain dictionary."""
    c = _corner(corner)
    i1 = corner_limit_I1(k, c, tol)
    i2 = corner_limit_I2(k, c, tol)
    d = combine(i1.value, i2.value)
    return {"k": k, "corner": list(c), "I1": i1.as_dict(), "I2": i2.as_dict(),
            "D": d}


# ---------------------------------------------------------------------------
# solver

def scan_points(x_window, n: int = 48) -> np.ndarray:
    """Scan abscissae for ``x`` in the window, denser towards ``x = 0``."""
    lo, hi = sorted(x_window)
    if not -1.0 < lo < hi < 0.0:
        raise ValueError(f"x window must lie inside (-1, 0), got {x_window!r}")
    return -np.exp(np.linspace(np.log(-lo), np.log(-hi), n))


def _bisect(fun, a, b, fa, fb, tol, max_iter=200):
    """Bisection on a sign-change bracket until ``|f| < tol``."""
    c, fc = a, fa
    for _ in range(max_iter):
        c = 0.5 * (a + b)
        fc = fun(c)
        if abs(fc) < tol:
            break
        if np.sign(fc) == np.sign(fa):
            a, fa = c, fc
        else:
            b, fb = c, fc
        if b - a <= 4 * np.finfo(float).eps * max(abs(a), abs(b)):
            break
    return c, fc, b - a


def solve_period_curve(k: int, y_grid, x_window=(-0.99, -1e-4), tol: float = 1e-8,
                       quad_tol: float | None = None, n_scan: int = 48,
                       diagnostics: list | None = None) -> list:
    """Trace the zero set of ``D`` along horizontal lines ``y = const``.

    Parameters
    ----------
    k : int
    y_grid : sequence of float
        Values of ``y`` in ``(0, 1)``.
    x_window : (float, float)
        Scanned interval of ``x`` inside ``(-1, 0)``.
    tol : float
        Required ``|D|`` at every returned root.
    quad_tol : float, optional
        Quadrature tolerance; defaults to ``min(1e-10, tol/100)``.
    n_scan : int
        Number of scan abscissae per line.
    diagnostics : list, optional
        Receives a :class:`NoBracket` for every line without a sign change.

    Returns
    -------
    list of PeriodCurvePoint
        In increasing ``y``.  For every line the bracket closest to the
        previous root is refined (warm start).
    """
    if k < 3:
        raise ValueError("k must be >= 3")
    qtol = min(1e-10, tol / 100.0) if quad_tol is None else quad_tol
    xs = scan_points(x_window, n_scan)
    points = []
    prev = None
    for y in sorted(float(v) for v in y_grid):
        if not 0.0 < y < 1.0:
            raise ValueError(f"y values must lie in (0, 1), got {y!r}")

        def fun(x, y=y):
            return residual(TowerParams(k, y, x), qtol).D

        ds = np.array([fun(x) for x in xs])
        change = np.flatnonzero(np.sign(ds[:-1]) * np.sign(ds[1:]) < 0)
        exact = np.flatnonzero(ds == 0.0)
        if exact.size:
            x0 = float(xs[exact[0]])
            points.append(PeriodCurvePoint(y, x0, 0.0, 0.0))
            prev = x0
            continue
        if change.size == 0:
            msg = f"no sign change of D for k={k}, y={y:.6g} in x-window {x_window}"
            log.info(msg)
            if diagnostics is not None:
                diagnostics.append(NoBracket(msg, y))
            continue
        if prev is None:
            j = change[-1]
        else:
            mids = 0.5 * (xs[change] + xs[change + 1])
            j = change[np.argmin(np.abs(mids - prev))]
        a, b = xs[j], xs[j + 1]
        fa, fb = ds[j], ds[j + 1]
        root, fr, width = _bisect(fun, a, b, fa, fb, tol)
        if not abs(fr) < tol:
            raise ToleranceNotMet(
                f"|D| = {abs(fr):.3g} at y={y:.6g} after bracket collapse")
        points.append(PeriodCurvePoint(y, float(root), float(fr), float(width)))
        prev = root
    return points


def default_y_grid(n: int = 16) -> np.ndarray:
    """Default solver grid: geometric in ``y`` from ``1e-4`` to ``0.5``."""
    return np.geomspace(1e-4, 0.5, n)


def curve_csv(k: int, points) -> str:
    """Period curve as CSV text with 17 significant digits."""
    rows = ["k,y,x,residual,bracket_width"]
    for pt in points:
        rows.append(f"{k},{pt.y:.17g},{pt.x:.17g},{pt.residual:.17g},{pt.bracket_width:.17g}")
    return "\n".join(rows) + "\n"
