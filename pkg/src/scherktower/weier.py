"""Branch-consistent Weierstrass data of the saddle towers.

The fundamental piece is parametrized by the unit disk cut along the two
real segments ``[-1, x]`` and ``[y, 1]``.  On this cut disk the data are

    g  = -exp(i pi/k) A**p B**(1/2),  A = (z - y)/(1 - y z),
                                      B = (1 - x z)/(z - x),
    w  = -2i (1 - y z) sqrt(A) / ((1 + z)(1 + y)),
    F  = sqrt(1 - Y/w),               Y = i (1 - y)/(1 + y),
    dh = dz / (F f),                  f = (1 - y z)(y - z),

with ``p = (k - 1)/(4k)``.  Every multivalued factor is written through an
accumulated argument stored in a :class:`BranchState`; the branch is pinned
at the anchor ``z0 = (y + 1)/2`` on the upper bank of ``(y, 1)`` where all
three arguments vanish.

Points close to ``z = y`` lose all relative accuracy when stored as ``z``
alone, so a :class:`DomainPoint` may carry the offset ``z - y`` exactly and
every evaluator works from that offset.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import (
    BranchPointHit,
    EndPointHit,
    PoleHit,
    SingularityClearance,
    StepTooLarge,
)

#: radius below which an evaluator refuses to touch a singular point
SAFE_RADIUS = 1e-15

#: default clearance of continuation paths from singular points
DEFAULT_CLEARANCE = 1e-6

_TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class TowerParams:
    """Parameters ``(k, y, x)`` of a candidate tower.

    Parameters
    ----------
    k : int
        Number of end pairs, ``k >= 3``.
    y : float
        Zero of the Gauss map on the real axis, ``0 < y < 1``.
    x : float
        Pole of the Gauss map on the real axis, ``-1 < x < 0``.
    """

    k: int
    y: float
    x: float

    def __post_init__(self):
        if isinstance(self.k, bool) or int(self.k) != self.k or self.k < 3:
            raise ValueError(f"k must be an integer >= 3, got {self.k!r}")
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "x", float(self.x))
        if not 0.0 < self.y < 1.0:
            raise ValueError(f"y must lie in (0, 1), got {self.y!r}")
        if not -1.0 < self.x < 0.0:
            raise ValueError(f"x must lie in (-1, 0), got {self.x!r}")

    @property
    def p(self) -> float:
        """Exponent ``(k - 1)/(4k)`` of the A factor of g."""
        return (self.k - 1) / (4.0 * self.k)

    @property
    def anchor(self) -> float:
        """Anchor point ``(y + 1)/2`` on the segment ``(y, 1)``."""
        return 0.5 * (self.y + 1.0)

    def as_dict(self) -> dict:
        return {"k": self.k, "y": self.y, "x": self.x}


@dataclass(frozen=True)
class BranchState:
    """Accumulated arguments of the multivalued factors.

    Attributes
    ----------
    arg_a : float or ndarray
        Continuous argument of ``A = (z - y)/(1 - y z)``; fixes both
        ``A**p`` in g and ``sqrt(A)`` in w.
    arg_b : float or ndarray
        Continuous argument of ``B = (1 - x z)/(z - x)``.
    arg_q : float or ndarray
        Continuous argument of ``F**2 = 1 - Y/w``.
    """

    arg_a: np.ndarray | float
    arg_b: np.ndarray | float
    arg_q: np.ndarray | float

    def take(self, index) -> "BranchState":
        """Sub-select entries of an array-valued state."""
        return BranchState(
            np.asarray(self.arg_a)[index],
            np.asarray(self.arg_b)[index],
            np.asarray(self.arg_q)[index],
        )

    def as_tuple(self) -> tuple:
        return (self.arg_a, self.arg_b, self.arg_q)


@dataclass(frozen=True)
class DomainPoint:
    """A point of the cut disk together with its branch state.

    Attributes
    ----------
    z : complex or ndarray
        Parameter-plane coordinate.
    branch : BranchState
        Arguments of the multivalued factors at ``z``.
    offset : complex or ndarray, optional
        ``z - y`` computed without cancellation.  When omitted it is taken
        as ``z - y``.
    exterior : bool
        Marks points outside the closed unit disk (images under ``1/conj``).
    """

    z: np.ndarray | complex
    branch: BranchState
    offset: np.ndarray | complex | None = None
    exterior: bool = False

    def delta(self, p: TowerParams) -> np.ndarray:
        if self.offset is not None:
            return np.asarray(self.offset, dtype=complex)
        return np.asarray(self.z, dtype=complex) - p.y

    def take(self, index) -> "DomainPoint":
        off = None if self.offset is None else np.asarray(self.offset)[index]
        return DomainPoint(np.asarray(self.z)[index], self.branch.take(index),
                           off, self.exterior)


@dataclass(frozen=True)
class WeierstrassForms:
    """Weierstrass forms per unit ``dz`` at one or many points."""

    phi1: np.ndarray | complex
    phi2: np.ndarray | complex
    phi3: np.ndarray | complex
    g: np.ndarray | complex
    dh_dz: np.ndarray | complex

    @property
    def phi(self) -> np.ndarray:
        return np.stack(np.broadcast_arrays(self.phi1, self.phi2, self.phi3))


# ---------------------------------------------------------------------------
# low level kernels (no checks)

def _factors(p: TowerParams, d):
    """Return ``z, 1 - y z, A, B`` from the offset ``d = z - y``."""
    d = np.asarray(d, dtype=complex)
    z = p.y + d
    u = (1.0 - p.y * p.y) - p.y * d
    a = d / u
    with np.errstate(divide="ignore", invalid="ignore"):
        b = ((1.0 - p.x * p.y) - p.x * d) / ((p.y - p.x) + d)
    return z, u, a, b


def _sqrt_a(a, arg_a):
    return np.sqrt(np.abs(a)) * np.exp(0.5j * np.asarray(arg_a))


def _q_from(p: TowerParams, z, u, a, arg_a):
    """``F**2 = 1 + (1 - y)(1 + z) / (2 (1 - y z) sqrt(A))``."""
    return 1.0 + (1.0 - p.y) * (1.0 + z) / (2.0 * u * _sqrt_a(a, arg_a))


def _phase_power(modulus, arg, power):
    with np.errstate(divide="ignore"):
        logm = np.log(modulus)
    return np.exp(power * (logm + 1j * np.asarray(arg)))


def gauss_kernel(p: TowerParams, d, arg_a, arg_b):
    """Gauss map from the offset and arguments, without validation."""
    _, _, a, b = _factors(p, d)
    lead = -np.exp(1j * np.pi / p.k)
    ga = _phase_power(np.abs(a), arg_a, p.p)
    gb = np.sqrt(np.abs(b)) * np.exp(0.5j * np.asarray(arg_b))
    return lead * ga * gb


def dh_kernel(p: TowerParams, d, arg_a, arg_q):
    """Height differential per unit ``dz`` without validation."""
    z, u, a, _ = _factors(p, d)
    q = _q_from(p, z, u, a, arg_a)
    big_f = np.sqrt(np.abs(q)) * np.exp(0.5j * np.asarray(arg_q))
    # f = (1 - y z)(y - z) = -u d
    return -1.0 / (big_f * u * np.asarray(d, dtype=complex))


def forms_kernel(p: TowerParams, d, arg_a, arg_b, arg_q):
    """Return ``(phi, g, dh_dz)`` without validation.

    ``phi`` has shape ``(3,) + shape(d)``.
    """
    g = gauss_kernel(p, d, arg_a, arg_b)
    dh = dh_kernel(p, d, arg_a, arg_q)
    ginv = 1.0 / g
    phi = np.stack([0.5 * (ginv - g) * dh, 0.5j * (ginv + g) * dh, dh])
    return phi, g, dh


# ---------------------------------------------------------------------------
# branch states

def anchor_state(p: TowerParams) -> BranchState:
    """Branch state at the anchor: every accumulated argument vanishes."""
    return BranchState(0.0, 0.0, 0.0)


def anchor_point(p: TowerParams) -> DomainPoint:
    z0 = p.anchor
    return DomainPoint(complex(z0), anchor_state(p), complex(z0 - p.y))


def principal_branch(p: TowerParams, z, lower=None, offset=None) -> BranchState:
    """Branch state of the fundamental piece by closed-form arguments.

    On the cut disk the continued arguments are principal values, shifted
    by ``2 pi`` for ``arg A`` on the lower half.  Points exactly on a cut
    are assigned to the bank given by ``lower`` (upper bank by default for
    ``Im z >= 0``).  Agreement with path continuation from the anchor is
    checked in the test suite.

    Parameters
    ----------
    z : complex or array_like
        Points of the closed cut disk.
    lower : bool or array_like, optional
        True for points of the closed lower half.  Defaults to ``Im z < 0``.
    offset : complex or array_like, optional
        Exact ``z - y``.
    """
    z = np.asarray(z, dtype=complex)
    d = z - p.y if offset is None else np.asarray(offset, dtype=complex)
    if lower is None:
        lower = np.imag(z) < 0
    lower = np.broadcast_to(np.asarray(lower, dtype=bool), d.shape)
    zz, u, a, b = _factors(p, d)
    ta = np.arctan2(np.abs(a.imag), a.real)
    tb = np.arctan2(np.abs(b.imag), b.real)
    arg_a = np.where(lower, _TWO_PI - ta, ta)
    arg_b = np.where(lower, tb, -tb)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = _q_from(p, zz, u, a, arg_a)
    tq = np.arctan2(np.abs(q.imag), q.real)
    # on the lower half F**2 only reaches the negative axis from below
    arg_q = np.where(lower & (q.real < 0), -tq, np.angle(q))
    if arg_a.ndim == 0:
        return BranchState(float(arg_a), float(arg_b), float(arg_q))
    return BranchState(arg_a, arg_b, arg_q)


def domain_point(p: TowerParams, z, lower=None, offset=None) -> DomainPoint:
    """Point of the fundamental piece with its closed-form branch state."""
    z = np.asarray(z, dtype=complex)
    if offset is None:
        offset = z - p.y
    st = principal_branch(p, z, lower=lower, offset=offset)
    if z.ndim == 0:
        return DomainPoint(complex(z), st, complex(offset))
    return DomainPoint(z, st, np.asarray(offset, dtype=complex))


def _segment_distance(a, b, c):
    """Distance from each segment ``[a, b]`` to the point ``c``."""
    ab = b - a
    denom = np.abs(ab) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(denom > 0, ((c - a) * np.conj(ab)).real / denom, 0.0)
    t = np.clip(t, 0.0, 1.0)
    return np.abs(a + t * ab - c)


def singular_points(p: TowerParams) -> dict:
    return {"y": p.y, "1/y": 1.0 / p.y, "x": p.x, "-1": -1.0, "1": 1.0}


def _check_clearance(p: TowerParams, path, offsets, clearance, avoid=None,
                     exact_offsets=False):
    """Reject segments that pass a singular point closer than the local scale.

    A segment violates the clearance of ``c`` when its distance to ``c`` is
    below ``clearance`` times the distance of its nearer endpoint, or when
    a vertex sits on ``c``.  Distances to ``y`` use the offsets; when these
    are exact, only a vertex exactly at ``y`` counts as sitting on it.
    """
    for name, c in singular_points(p).items():
        if avoid is not None and name not in avoid:
            continue
        safe = SAFE_RADIUS
        if name == "y":
            a, b, cc = offsets[:-1], offsets[1:], 0.0
            if exact_offsets:
                safe = 0.0
        else:
            a, b, cc = path[:-1], path[1:], c
        dist = _segment_distance(a, b, cc)
        scale = np.minimum(np.abs(a - cc), np.abs(b - cc))
        bad = (dist < clearance * scale) | (scale <= safe)
        if np.any(bad):
            raise SingularityClearance(
                f"path passes within {float(np.min(dist)):.3g} of z = {name}")


def continue_branch(p: TowerParams, path, start: BranchState,
                    clearance: float = DEFAULT_CLEARANCE,
                    offsets=None, avoid=None, track_b: bool = True) -> BranchState:
    """Continue a branch state along a polyline.

    Parameters
    ----------
    p : TowerParams
    path : array_like of complex
        Polyline; ``path[0]`` is the point at which ``start`` is valid.
    start : BranchState
    clearance : float
        Relative clearance from ``y, 1/y, x, -1, 1``: no segment may pass a
        singular point closer than ``clearance`` times the distance of its
        nearer endpoint.
    offsets : array_like of complex, optional
        Exact ``path - y``, for paths that come very close to ``y``.
    avoid : iterable of str, optional
        Names of the singular points to keep clear of (default: all of
        ``"y", "1/y", "x", "-1", "1"``).  The data themselves are regular
        at ``-1``, where only the auxiliary function ``w`` has a pole.
    track_b : bool
        When False the argument of ``B`` is carried over unchanged and the
        path may end at ``x``, where ``A`` and ``F**2`` are still regular.

    Returns
    -------
    BranchState
        State at ``path[-1]``.

    Raises
    ------
    SingularityClearance
        A segment passes (almost) through a singular point.
    StepTooLarge
        Some step changes an argument by ``pi/2`` or more.
    """
    path = np.atleast_1d(np.asarray(path, dtype=complex)).ravel()
    exact = offsets is not None
    if offsets is None:
        offsets = path - p.y
    offsets = np.atleast_1d(np.asarray(offsets, dtype=complex)).ravel()
    if path.size < 2 or np.all(offsets == offsets[0]):
        return start
    if not track_b:
        names = avoid if avoid is not None else singular_points(p)
        avoid = tuple(n for n in names if n != "x")
    _check_clearance(p, path, offsets, clearance, avoid, exact)
    z, u, a, b = _factors(p, offsets)
    a0 = float(start.arg_a)
    if abs(np.angle(a[0] * np.exp(-1j * a0))) > 1e-6:
        raise ValueError("start state is inconsistent with the path start")
    da = np.angle(a[1:] / a[:-1])
    db = np.angle(b[1:] / b[:-1]) if track_b else np.zeros(da.size)
    arg_a = a0 + np.concatenate([[0.0], np.cumsum(da)])
    q = _q_from(p, z, u, a, arg_a)
    if np.min(np.abs(q)) <= SAFE_RADIUS:
        raise SingularityClearance("path meets a zero of F**2")
    dq = np.angle(q[1:] / q[:-1])
    worst = max(np.max(np.abs(da)), np.max(np.abs(db)), np.max(np.abs(dq)))
    if worst >= 0.5 * np.pi:
        raise StepTooLarge(f"argument step of {worst:.3f} rad; refine the path")
    return BranchState(float(arg_a[-1]),
                       float(start.arg_b) + float(np.sum(db)),
                       float(start.arg_q) + float(np.sum(dq)))


def refine_path(path, max_step: float) -> np.ndarray:
    """Insert points so that no segment is longer than ``max_step``."""
    path = np.asarray(path, dtype=complex).ravel()
    out = [path[:1]]
    for a, b in zip(path[:-1], path[1:]):
        n = max(1, int(np.ceil(abs(b - a) / max_step)))
        out.append(a + (b - a) * np.arange(1, n + 1) / n)
    return np.concatenate(out)


def continue_point(p: TowerParams, start: DomainPoint, path,
                   clearance: float = DEFAULT_CLEARANCE,
                   exterior: bool = False) -> DomainPoint:
    """Continue ``start`` along ``path`` (which must begin at ``start.z``)."""
    path = np.asarray(path, dtype=complex).ravel()
    if path[0] != start.z:
        path = np.concatenate([[complex(start.z)], path])
    st = continue_branch(p, path, start.branch, clearance)
    return DomainPoint(complex(path[-1]), st, complex(path[-1] - p.y), exterior)


# ---------------------------------------------------------------------------
# checked evaluators

def _check(p: TowerParams, pt: DomainPoint, *, at_y=False, at_x=False,
           at_end=False, at_minus_one=False):
    d = pt.delta(p)
    z = p.y + d
    if at_y and np.any(np.abs(d) < SAFE_RADIUS):
        raise BranchPointHit("evaluation at the branch point z = y")
    if at_x and np.any(np.abs(z - p.x) < SAFE_RADIUS):
        raise BranchPointHit("evaluation at the branch point z = x")
    if at_end and np.any(np.abs(z - 1.0) < SAFE_RADIUS):
        raise EndPointHit("evaluation at the end z = 1")
    if at_minus_one and np.any(np.abs(z + 1.0) < SAFE_RADIUS):
        raise PoleHit("evaluation at the pole z = -1 of w")
    return d, z


def _scalar(v):
    v = np.asarray(v)
    return complex(v) if v.ndim == 0 else v


def eval_g(p: TowerParams, pt: DomainPoint):
    """Gauss map ``g`` at ``pt`` (zero at ``z = y``)."""
    d, _ = _check(p, pt, at_x=True, at_end=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = gauss_kernel(p, d, pt.branch.arg_a, pt.branch.arg_b)
    g = np.where(np.abs(d) == 0.0, 0.0, g)
    return _scalar(g)


def eval_w(p: TowerParams, pt: DomainPoint):
    """``w = -2i (1 - y z) sqrt(A)/((1 + z)(1 + y))``."""
    d, z = _check(p, pt, at_minus_one=True)
    _, u, a, _ = _factors(p, d)
    w = -2j * u * _sqrt_a(a, pt.branch.arg_a) / ((1.0 + z) * (1.0 + p.y))
    return _scalar(w)


def eval_q(p: TowerParams, pt: DomainPoint):
    """``F**2 = 1 - Y/w`` at ``pt``."""
    d, _ = _check(p, pt, at_y=True, at_minus_one=True)
    z, u, a, _ = _factors(p, d)
    return _scalar(_q_from(p, z, u, a, pt.branch.arg_a))


def eval_F(p: TowerParams, pt: DomainPoint):
    """``F = sqrt(1 - Y/w)`` on the sheet recorded by ``pt.branch.arg_q``."""
    q = np.asarray(eval_q(p, pt))
    return _scalar(np.sqrt(np.abs(q)) * np.exp(0.5j * np.asarray(pt.branch.arg_q)))


def eval_dh_dz(p: TowerParams, pt: DomainPoint):
    """Height differential per unit ``dz``: ``1/(F (1 - y z)(y - z))``."""
    d, _ = _check(p, pt, at_y=True, at_end=True, at_minus_one=True)
    return _scalar(dh_kernel(p, d, pt.branch.arg_a, pt.branch.arg_q))


def eval_phi(p: TowerParams, pt: DomainPoint) -> WeierstrassForms:
    """Weierstrass forms ``(1/g - g, i/g + i g, 2) dh / 2`` per unit ``dz``."""
    d, _ = _check(p, pt, at_y=True, at_x=True, at_end=True, at_minus_one=True)
    phi, g, dh = forms_kernel(p, d, *pt.branch.as_tuple())
    return WeierstrassForms(_scalar(phi[0]), _scalar(phi[1]), _scalar(phi[2]),
                            _scalar(g), _scalar(dh))


def g_power_rhs(p: TowerParams, z):
    """Right side of the algebraic relation for ``g**(4k)`` with ``c = 1``."""
    z = np.asarray(z, dtype=complex)
    k = p.k
    return ((-1.0) ** (k - 1) * ((p.y - z) / (1.0 - p.y * z)) ** (k - 1)
            * ((1.0 - p.x * z) / (p.x - z)) ** (2 * k))


def dg_dz(p: TowerParams, pt: DomainPoint):
    """Derivative of the Gauss map from its logarithmic derivative."""
    d, z = _check(p, pt, at_y=True, at_x=True, at_end=True)
    g = np.asarray(eval_g(p, pt))
    y, x = p.y, p.x
    dlog = (p.p * (1.0 / d + y / (1.0 - y * z))
            - 0.5 * (x / (1.0 - x * z) + 1.0 / (z - x)))
    return _scalar(g * dlog)


# ---------------------------------------------------------------------------
# involutions

class InvolutionImage(NamedTuple):
    z: complex | np.ndarray
    transform: Callable
    label: str


INVOLUTIONS = {
    1: ("upper circle", "inversion", "1/conj(g)"),
    2: ("upper bank of (-1, x)", "conjugation", "conj(g)"),
    3: ("lower bank of (-1, x)", "conjugation", "conj(g)"),
    4: ("lower circle", "inversion", "1/conj(g)"),
    5: ("lower bank of (y, 1)", "conjugation", "-exp(i pi/k) conj(g)"),
    6: ("upper bank of (y, 1)", "conjugation", "exp(2 i pi/k) conj(g)"),
}


def involution_image(p: TowerParams, pt: DomainPoint, which: int) -> InvolutionImage:
    """Image point and Gauss-map law of one of the six involutions.

    Rows 1 and 4 invert in the unit circle, the others conjugate.  The
    returned ``transform`` maps ``g(z)`` to the predicted ``g(image)``.
    """
    if which not in INVOLUTIONS:
        raise ValueError(f"involution row must be 1..6, got {which!r}")
    z = np.asarray(pt.z, dtype=complex)
    _, kind, label = INVOLUTIONS[which]
    if kind == "inversion":
        image = 1.0 / np.conj(z)
    else:
        image = np.conj(z)
    k = p.k
    transforms = {
        1: lambda g: 1.0 / np.conj(g),
        2: np.conj,
        3: np.conj,
        4: lambda g: 1.0 / np.conj(g),
        5: lambda g: -np.exp(1j * np.pi / k) * np.conj(g),
        6: lambda g: np.exp(2j * np.pi / k) * np.conj(g),
    }
    return InvolutionImage(_scalar(image), transforms[which], label)
