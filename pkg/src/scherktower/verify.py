"""Executable audit of the Weierstrass data, the periods and the meshes.

Every check returns :class:`CheckResult` records with a measured residual
and a tolerance; a record passes exactly when its residual does not exceed
the tolerance.  Records that combine several measurements use a residual
normalized so that the tolerance is 1.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import __version__
from .meshgen import (
    FundamentalMesh,
    Isometry,
    generators,
    identity,
    self_intersections,
    translation,
)
from .periods import residual
from .quadrature import integrate
from .weier import (
    DomainPoint,
    TowerParams,
    continue_branch,
    domain_point,
    dg_dz,
    eval_dh_dz,
    eval_g,
    eval_phi,
    g_power_rhs,
    involution_image,
    principal_branch,
)

PASS, FAIL, SKIP = "pass", "fail", "skip"

#: |Re v| < IN_AXIS_REL * |v| counts as v in iR (and likewise for R)
IN_AXIS_REL = 1e-9
#: both components above COMPLEX_REL * |v| counts as genuinely complex
COMPLEX_REL = 1e-6
#: tolerance of the g-locus and involution laws
LAW_TOL = 1e-10
#: constant C of the C*h**2 mesh bounds
MESH_C = 10.0


@dataclass
class CheckResult:
    """Outcome of one audited claim."""

    name: str
    status: str
    residual: float
    tolerance: float
    detail: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"name": self.name, "status": self.status,
                "residual": _finite(self.residual), "tolerance": self.tolerance,
                "detail": self.detail}


def _finite(v):
    v = float(v)
    return v if np.isfinite(v) else str(v)


def _result(name, residual, tolerance, **detail) -> CheckResult:
    residual = float(residual)
    ok = bool(residual <= tolerance)
    return CheckResult(name, PASS if ok else FAIL, residual, float(tolerance), detail)


def _skip(name, reason) -> CheckResult:
    return CheckResult(name, SKIP, float("nan"), float("nan"), {"reason": reason})


@dataclass
class AuditReport:
    """Ordered collection of check results with provenance."""

    checks: list
    params: TowerParams | None
    provenance: dict

    def __post_init__(self):
        names = [c.name for c in self.checks]
        if len(set(names)) != len(names):
            raise ValueError("check names must be unique")

    @property
    def failed(self) -> list:
        return [c for c in self.checks if c.status == FAIL]

    @property
    def ok(self) -> bool:
        return not self.failed

    def as_dict(self) -> dict:
        return {"params": None if self.params is None else self.params.as_dict(),
                "provenance": self.provenance,
                "checks": [c.as_dict() for c in self.checks],
                "ok": self.ok}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True, default=_finite)

    def table(self) -> str:
        width = max([len(c.name) for c in self.checks] + [5])
        rows = [f"{'check':<{width}}  status  {'residual':>11}  {'tolerance':>9}"]
        for c in self.checks:
            res = f"{c.residual:11.3e}" if np.isfinite(c.residual) else f"{'-':>11}"
            tol = f"{c.tolerance:9.1e}" if np.isfinite(c.tolerance) else f"{'-':>9}"
            rows.append(f"{c.name:<{width}}  {c.status:<6}  {res}  {tol}")
        return "\n".join(rows)


def config_hash(config: dict | None) -> str:
    text = json.dumps(config or {}, sort_keys=True, default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# samples


def _fractions(n: int) -> np.ndarray:
    """Interior sample fractions ``(j + 1/2)/n`` kept away from both ends."""
    return 0.05 + 0.9 * (np.arange(n) + 0.5) / n


def stretch_samples(p: TowerParams, row: int, n: int = 20):
    """Points of stretch ``row`` with the side of the disk and the unit tangent.

    Returns
    -------
    z : ndarray
    lower : bool
    tangent : ndarray
        ``z'(t)`` for the orientation of the table: the circle arcs
        counter-clockwise, the segments along increasing ``t``.
    """
    if row not in range(1, 7):
        raise ValueError(f"stretch row must be 1..6, got {row!r}")
    f = _fractions(n)
    if row in (1, 4):
        theta = np.pi * f if row == 1 else np.pi + np.pi * f
        z = np.exp(1j * theta)
        return z, row == 4, 1j * z
    if row in (2, 3):
        z = (-1.0 + (p.x + 1.0) * f).astype(complex)
        return z, row == 3, np.ones_like(z)
    z = (p.y + (1.0 - p.y) * f).astype(complex)
    return z, row == 5, np.ones_like(z)


# ---------------------------------------------------------------------------
# Weierstrass identities


def check_gauss_circle(p: TowerParams, n: int = 100) -> CheckResult:
    """``|g| = 1`` on ``n`` points of the unit circle (``z = 1`` excluded)."""
    if n < 8:
        raise ValueError("n must be >= 8")
    theta = 2.0 * np.pi * (np.arange(n) + 0.5) / n
    z = np.exp(1j * theta)
    g = eval_g(p, domain_point(p, z, lower=theta > np.pi))
    return _result("gauss_circle", np.max(np.abs(np.abs(g) - 1.0)), 1e-11, samples=n)


def interior_samples(p: TowerParams, n: int, seed: int = 0) -> np.ndarray:
    """Random points of the open disk away from the slits and the data points."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        r = np.sqrt(rng.uniform(0.0, 0.95 ** 2))
        z = r * np.exp(1j * rng.uniform(0.0, 2.0 * np.pi))
        if abs(z.imag) < 1e-3 or min(abs(z - p.y), abs(z - p.x)) < 1e-3:
            continue
        out.append(z)
    return np.array(out)


def check_g_power(p: TowerParams, n: int = 100, seed: int = 0) -> CheckResult:
    """``g**(4k)`` against the algebraic relation with ``c = 1``."""
    z = interior_samples(p, n, seed)
    g = np.asarray(eval_g(p, domain_point(p, z)))
    rhs = g_power_rhs(p, z)
    rel = np.abs(g ** (4 * p.k) - rhs) / np.maximum(np.abs(rhs), 1e-300)
    return _result("g_power", np.max(rel), 1e-11, samples=n)


def check_null(p: TowerParams, n: int = 100, seed: int = 0) -> CheckResult:
    """Null-curve identity ``phi1**2 + phi2**2 + phi3**2 = 0``."""
    z = interior_samples(p, n, seed)
    phi = eval_phi(p, domain_point(p, z)).phi
    rel = np.abs(np.sum(phi ** 2, axis=0)) / np.sum(np.abs(phi) ** 2, axis=0)
    return _result("null_identity", np.max(rel), 1e-13, samples=n)


# ---------------------------------------------------------------------------
# direction and involution tables


def _g_locus(p: TowerParams, row: int, g) -> np.ndarray:
    k = p.k
    if row in (1, 4):
        return np.abs(np.abs(g) - 1.0)
    if row == 2:
        return np.maximum(np.abs(g.imag) / np.abs(g), np.maximum(g.real + 1.0, 0.0))
    if row == 3:
        return np.maximum(np.abs(g.imag) / np.abs(g), np.maximum(1.0 - g.real, 0.0))
    if row == 5:
        return np.abs((g / (-1j * np.exp(0.5j * np.pi / k))).imag) / np.abs(g)
    return np.abs((g / (-np.exp(1j * np.pi / k))).imag) / np.abs(g)


_DIRECTION = {1: "imaginary", 2: "complex", 3: "complex", 4: "imaginary",
              5: "imaginary", 6: "real"}


def _direction_residual(kind: str, v) -> float:
    """Residual normalized to the class threshold (pass iff <= 1)."""
    mod = np.abs(v)
    if kind == "imaginary":
        return float(np.max(np.abs(v.real) / mod) / IN_AXIS_REL)
    if kind == "real":
        return float(np.max(np.abs(v.imag) / mod) / IN_AXIS_REL)
    smallest = np.minimum(np.abs(v.real), np.abs(v.imag)) / mod
    return float(COMPLEX_REL / np.min(smallest))


def check_table1(p: TowerParams, n: int = 20) -> list:
    """Six rows: g-locus and ``dh(z')`` direction class on each stretch."""
    out = []
    for row in range(1, 7):
        z, lower, tangent = stretch_samples(p, row, n)
        pt = domain_point(p, z, lower=lower)
        g = np.asarray(eval_g(p, pt))
        dh = np.asarray(eval_dh_dz(p, pt)) * tangent
        g_res = float(np.max(_g_locus(p, row, g)))
        d_res = _direction_residual(_DIRECTION[row], dh)
        out.append(_result(f"table1_row{row}", max(g_res / LAW_TOL, d_res), 1.0,
                           g_locus=g_res, g_tolerance=LAW_TOL,
                           direction=_DIRECTION[row], direction_normalized=d_res,
                           samples=n))
    return out


def involution_pairs(p: TowerParams, row: int, n: int = 20, depth: float = 0.02):
    """Points beside stretch ``row`` inside the piece and their images.

    The image is reached by continuing the branch state straight across
    the stretch, so that it lies on the sheet where the involution of the
    surface maps the point.
    """
    z, lower, _ = stretch_samples(p, row, n)
    if row in (1, 4):
        start = (1.0 - depth) * z
        image = z / (1.0 - depth)
    else:
        side = -1.0 if lower else 1.0
        start = z + 1j * side * depth
        image = np.conj(start)
    pts = []
    for a, b in zip(start, image):
        st = principal_branch(p, a, lower=lower)
        path = np.linspace(a, b, 65)
        pts.append((a, b, st, continue_branch(p, path, st)))
    return pts


def check_involutions(p: TowerParams, n: int = 20) -> list:
    """Six rows of the involution table by continuation across each stretch."""
    if n < 4:
        raise ValueError("n must be >= 4")
    out = []
    for row in range(1, 7):
        worst = 0.0
        for a, b, sa, sb in involution_pairs(p, row, n):
            pa = DomainPoint(complex(a), sa)
            ga = eval_g(p, pa)
            gb = eval_g(p, DomainPoint(complex(b), sb))
            image = involution_image(p, pa, row)
            if abs(image.z - b) > 1e-14:
                raise AssertionError("involution image mismatch")
            worst = max(worst, abs(gb - image.transform(ga)) / (1.0 + abs(gb)))
        out.append(_result(f"involution_row{row}", worst, LAW_TOL,
                           law=image.label, samples=n))
    return out


# ---------------------------------------------------------------------------
# U-curve


def bank_height(p: TowerParams, lower: bool, reverse: bool = False,
                tol: float = 1e-12) -> float:
    """``Re int dh`` along one bank of the slit, from ``x`` to ``-1``."""
    a, b = (p.x, -1.0) if not reverse else (-1.0, p.x)

    def f(t):
        pt = domain_point(p, t.astype(complex), lower=lower)
        return np.real(np.asarray(eval_dh_dz(p, pt)))
    return integrate(f, a, b, tol).value


def check_ucurve(p: TowerParams, tol: float = 1e-10, n: int = 200) -> list:
    """Height closure, non-vanishing ``dg`` and non-symmetry of the U-curve."""
    h_up = bank_height(p, lower=False)
    h_lo = bank_height(p, lower=True)
    back = bank_height(p, lower=False, reverse=True)
    f = _fractions(n // 2)
    t = (-1.0 + (p.x + 1.0) * f).astype(complex)
    dg = np.concatenate([np.abs(dg_dz(p, domain_point(p, t, lower=low)))
                         for low in (False, True)])
    dh = np.concatenate([np.asarray(eval_dh_dz(p, domain_point(p, t, lower=low)))
                         for low in (False, True)])
    return [
        _result("ucurve_height_closure", abs(h_up - h_lo), tol,
                upper=h_up, lower=h_lo),
        _result("ucurve_orientation", abs(h_up + back), tol),
        _result("ucurve_dg_nonvanishing", 1e-8 / float(np.min(dg)), 1.0,
                min_abs_dg=float(np.min(dg)), threshold=1e-8, samples=2 * f.size),
        _result("ucurve_dh_complex", _direction_residual("complex", dh), 1.0,
                samples=2 * f.size),
    ]


# ---------------------------------------------------------------------------
# periods and bookkeeping


def check_period_residual(p: TowerParams, solver_tol: float = 1e-8,
                          quad_tol: float = 1e-12) -> CheckResult:
    """``|D|`` at the audited parameters against ten times the solver tolerance."""
    rep = residual(p, quad_tol)
    return _result("period_residual", abs(rep.D), 10.0 * solver_tol,
                    I1=rep.I1.value, I2=rep.I2.value, D=rep.D)


def check_degree_bookkeeping(p: TowerParams) -> list:
    """Degree of g from genus ``2k`` and ``k`` end pairs, ``3k - 1``."""
    k = p.k
    genus, ends = 2 * k, k
    deg = genus + ends - 1
    leading = 3 * k - 1
    return [
        _result("degree_bookkeeping", abs(deg - leading), 0.0,
                genus=genus, end_pairs=ends, degree=deg, leading_power=leading),
        _skip("zero_census", f"the count of {9 * k - 2} zeros on the branched "
                             "surface is documented only"),
    ]


# ---------------------------------------------------------------------------
# meshes


def _image_residual(vertices, tree, iso: Isometry, lo, hi, margin) -> float:
    img = iso(vertices)
    inside = (img[:, 2] > lo + margin) & (img[:, 2] < hi - margin)
    if not np.any(inside):
        return 0.0
    d, _ = tree.query(img[inside])
    # the converse direction: every vertex in range is hit by an image
    back = iso.inverse()(vertices)
    inside_b = (back[:, 2] > lo + margin) & (back[:, 2] < hi - margin)
    d2 = tree.query(back[inside_b])[0] if np.any(inside_b) else np.zeros(1)
    return float(max(np.max(d), np.max(d2)))


def check_mesh(mesh: FundamentalMesh, group: list | None = None,
               h: float | None = None, C: float = MESH_C,
               piece: FundamentalMesh | None = None, max_pairs: int = 300_000,
               seed: int = 0, weld_tol: float = 1e-6) -> list:
    """Symmetry, translation, embeddedness and Gauss-map checks of a tower mesh.

    Parameters
    ----------
    mesh : FundamentalMesh
        Replicated tower, normalized to period ``mesh.period``.
    group : list of Isometry, optional
        Elements used to build it (only their count is reported).
    h : float, optional
        Grid spacing; defaults to ``1/resolution`` from the metadata.
    piece : FundamentalMesh, optional
        The normalized fundamental piece; enables the piece-level checks.
    """
    if h is None:
        h = 1.0 / float(mesh.metadata.get("resolution", 64))
    bound = C * h * h
    period = mesh.period
    v = mesh.vertices
    tree = cKDTree(v)
    lo, hi = float(v[:, 2].min()), float(v[:, 2].max())
    margin = 1e-6 * period
    out = [_result("mesh_identity", _image_residual(v, tree, identity(), lo, hi, margin),
                   0.0)]
    for name, iso in generators(mesh.params.k, period / 4.0).items():
        out.append(_result(f"mesh_symmetry_{name}",
                           _image_residual(v, tree, iso, lo, hi, margin), bound))
    out.append(_result("mesh_translation",
                       _image_residual(v, tree, translation(period), lo, hi, margin),
                       bound))
    si = self_intersections(mesh, max_pairs=max_pairs, seed=seed)
    out.append(_result("mesh_self_intersection", si["intersecting"], 0,
                       tested=si["tested"], exhaustive=si["exhaustive"]))
    if group is not None:
        out[-1].detail["copies"] = len(group)
    if piece is not None:
        out.extend(check_piece(piece, h, C, weld_tol))
    return out


def gauss_deviation(mesh: FundamentalMesh) -> float:
    """Largest angle between the Gauss map and the face-normal average.

    Measured at vertices that are not on a boundary curve.
    """
    nv = mesh.vertex_normals()
    boundary = np.concatenate([np.asarray(t) for t in mesh.boundary_tags.values()])
    interior = np.ones(mesh.n_vertices, dtype=bool)
    interior[boundary.astype(int)] = False
    # edges used once are boundary edges too
    f = mesh.faces
    e = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
    edges, counts = np.unique(e, axis=0, return_counts=True)
    interior[edges[counts == 1].ravel()] = False
    cos = np.clip(np.einsum("ij,ij->i", nv[interior], mesh.gauss[interior]), -1.0, 1.0)
    return float(np.max(np.arccos(cos)))


def ucurve_seam(piece: FundamentalMesh, period: float | None = None) -> dict:
    """Distance from bank 2 of the slit to the nearest group image of bank 3.

    In a closed tower the curve over the slit is shared by two copies of
    the piece, one through each bank; this measures how far the best
    candidate copy misses.
    """
    from .meshgen import symmetry_group

    period = piece.period if period is None else period
    u = piece.boundary_tags["Ucurve"]
    keys = piece.node_keys
    upper = u[keys[u, 1] == np.min(keys[u, 1])]
    lower = u[keys[u, 1] != np.min(keys[u, 1])]
    a = piece.vertices[upper]
    best, name = np.inf, ""
    for g in symmetry_group(piece.params, 2, period):
        d = float(np.max(cKDTree(g(piece.vertices[lower])).query(a)[0]))
        if d < best:
            best, name = d, g.name
    return {"distance": best, "element": name}


def check_piece(piece: FundamentalMesh, h: float, C: float = MESH_C,
                weld_tol: float = 1e-6) -> list:
    """Checks on the normalized fundamental piece."""
    from .meshgen import weld_residuals

    tags = piece.boundary_tags
    x3 = piece.vertices[tags["stretch5"], 2]
    tol = float(piece.metadata.get("quadrature_tol", 1e-10))
    out = [_result("piece_stretch5_height", float(np.var(x3)), 10.0 * tol)]
    res = weld_residuals(piece, piece.period)
    out.append(_result("piece_symmetry_boundaries", max(res.values()), C * h * h,
                       **res))
    out.append(_result("piece_period", abs(piece.period - 4.0), 1e-8,
                       period=piece.period))
    si = self_intersections(piece)
    out.append(_result("piece_self_intersection", si["intersecting"], 0,
                       tested=si["tested"], exhaustive=si["exhaustive"]))
    out.append(_result("piece_gauss_consistency", gauss_deviation(piece), C * h))
    seam = ucurve_seam(piece)
    out.append(_result("ucurve_seam", seam["distance"], weld_tol, **seam))
    return out


# ---------------------------------------------------------------------------
# full audit


CHECKS = ("gauss_circle", "g_power", "null_identity", "table1", "involutions",
          "ucurve", "period_residual", "degree_bookkeeping", "mesh")


def run_audit(p: TowerParams, mesh: FundamentalMesh | None = None,
              piece: FundamentalMesh | None = None, group: list | None = None,
              only=None, config: dict | None = None, seed: int = 0,
              tolerances: dict | None = None) -> AuditReport:
    """Run the selected checks (all by default) and collect a report.

    ``only`` names entries of :data:`CHECKS`; the mesh checks run only when
    a mesh is supplied.
    """
    tol = {"quad": 1e-10, "solver": 1e-8, "weld": 1e-6}
    tol.update(tolerances or {})
    names = CHECKS if only is None else tuple(only)
    unknown = set(names) - set(CHECKS)
    if unknown:
        raise ValueError(f"unknown checks: {sorted(unknown)}")
    out = []
    for name in names:
        if name == "gauss_circle":
            out.append(check_gauss_circle(p, 100))
        elif name == "g_power":
            out.append(check_g_power(p, 100, seed))
        elif name == "null_identity":
            out.append(check_null(p, 100, seed))
        elif name == "table1":
            out.extend(check_table1(p))
        elif name == "involutions":
            out.extend(check_involutions(p))
        elif name == "ucurve":
            out.extend(check_ucurve(p, tol["quad"]))
        elif name == "period_residual":
            out.append(check_period_residual(p, tol["solver"]))
        elif name == "degree_bookkeeping":
            out.extend(check_degree_bookkeeping(p))
        elif name == "mesh":
            if mesh is None:
                out.append(_skip("mesh", "no mesh supplied"))
            else:
                out.extend(check_mesh(mesh, group, piece=piece, seed=seed,
                                      weld_tol=tol["weld"]))
    prov = {"tool": "scherktower", "version": __version__,
            "config_hash": config_hash(config)}
    return AuditReport(out, p, prov)
