"""Fundamental-piece meshes, the symmetry group and tower replication.

The cut disk is covered by a polar grid centred at the branch point
``z = y``::

    z = y + R(theta) * u(s)**(4k) * exp(i theta),   0 <= s <= 1,
    theta = theta(sigma),                            0 <= sigma <= 1.

The power ``4k`` undoes the branching of the data at ``y`` (the immersion
behaves like ``(z - y)**(1/(4k))`` there).  Both one-dimensional maps are
quadratic around the parameters of ``z = x``, where the immersion behaves
like ``sqrt(z - x)``.  ``R(theta)`` reaches the unit circle except below
``z = 1``: the end sits at ``z = 1`` on the lower sheet only (on the upper
sheet ``z = 1`` is a regular boundary point), and a smooth one-sided cap
keeps the grid at distance ``end_cutoff`` from it.  The ray ``theta = pi`` carries two node columns beyond
``x``: the two banks of the slit ``[-1, x]``.

Branch states are assigned by continuation along a spanning tree (ring
around ``y``, then outward along rays, with row steps onto the slit
banks).  Vertex positions are integrated along the same tree with batched
adaptive Gauss-Kronrod quadrature.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import GridDegenerate, StepTooLarge, WeldMismatch
from .quadrature import integrate_many
from .weier import (
    BranchState,
    TowerParams,
    anchor_state,
    continue_branch,
    forms_kernel,
    gauss_kernel,
    principal_branch,
)

TAGS = ("stretch1", "stretch4", "stretch5", "stretch6", "Ucurve", "end")

_BASE_LEVEL = 8
CAP_MIN_WIDTH = np.pi / 8
# the data are regular at z = -1, and at z = 1 on the upper sheet
_AVOID_UPPER = ("y", "1/y", "x")
_AVOID_LOWER = ("y", "1/y", "x", "1")


# ---------------------------------------------------------------------------
# one-dimensional maps


def _quad_map(s, s0, v0):
    """Monotone map [0, 1] -> [0, 1] with ``v(s0) = v0`` and ``v'(s0) = 0``."""
    s = np.asarray(s, dtype=float)
    left = v0 - v0 * ((s0 - s) / s0) ** 2
    right = v0 + (1.0 - v0) * ((s - s0) / (1.0 - s0)) ** 2
    return np.where(s <= s0, left, right)


def _quad_map_deriv(s, s0, v0):
    s = np.asarray(s, dtype=float)
    left = 2.0 * v0 * (s0 - s) / s0 ** 2
    right = 2.0 * (1.0 - v0) * (s - s0) / (1.0 - s0) ** 2
    return np.where(s <= s0, left, right)


@dataclass(frozen=True)
class PolarMap:
    """Parametrization of the cut disk used by :class:`DomainGrid`."""

    params: TowerParams
    end_cutoff: float
    s_x: float
    u_x: float

    @property
    def power(self) -> int:
        return 4 * self.params.k

    @property
    def cap_width(self) -> float:
        """Angular width of the cap (at least a few grid cells)."""
        return max(3.0 * self.end_cutoff / (1.0 - self.params.y), CAP_MIN_WIDTH)

    def u(self, s):
        return _quad_map(s, self.s_x, self.u_x)

    def du(self, s):
        return _quad_map_deriv(s, self.s_x, self.u_x)

    def theta(self, sigma):
        return 2.0 * np.pi * _quad_map(sigma, 0.5, 0.5)

    def dtheta(self, sigma):
        return 2.0 * np.pi * _quad_map_deriv(sigma, 0.5, 0.5)

    def _bump(self, theta):
        tt = 2.0 * np.pi - theta
        w = self.cap_width
        inside = tt < w
        b = np.where(inside, np.cos(0.5 * np.pi * tt / w) ** 2, 0.0)
        db = np.where(inside, np.sin(np.pi * tt / w) * 0.5 * np.pi / w, 0.0)
        return b, db

    def radius(self, theta):
        theta = np.asarray(theta, dtype=float)
        y = self.params.y
        sn = np.sin(theta)
        rc = -y * np.cos(theta) + np.sqrt(1.0 - (y * sn) ** 2)
        b, _ = self._bump(theta)
        return rc - self.end_cutoff * b

    def dradius(self, theta):
        theta = np.asarray(theta, dtype=float)
        y = self.params.y
        sn, cs = np.sin(theta), np.cos(theta)
        drc = y * sn - y * y * sn * cs / np.sqrt(1.0 - (y * sn) ** 2)
        _, db = self._bump(theta)
        return drc - self.end_cutoff * db

    def offset(self, s, theta):
        """``z - y`` at grid parameters, computed without cancellation."""
        return self.radius(theta) * self.u(s) ** self.power * np.exp(1j * theta)

    def on_cap(self, theta):
        return 2.0 * np.pi - np.asarray(theta) < self.cap_width


# ---------------------------------------------------------------------------
# grid


@dataclass
class DomainGrid:
    """Nodes of the cut disk with branch states and connectivity.

    Attributes
    ----------
    params : TowerParams
    resolution : int
        Number of radial cells; the angular direction has twice as many.
    end_cutoff : float
    slit_offset : float
        Parameter distance of the two slit banks (zero: the banks share
        their ``z`` values and differ only in branch state).
    pmap : PolarMap
    s, sigma : ndarray
        Radial and angular grid parameters.
    columns : ndarray
        Angular parameter of each node column (``sigma = 1/2`` twice).
    lower : ndarray of bool
        Per column, True for the closed lower half.
    index : ndarray of int
        ``index[i, j]`` is the node of radial level ``i`` in column ``j``
        (level 0 is the apex ``z = y``).
    z, offset : ndarray
        Node coordinates and exact offsets ``z - y``.
    branch : BranchState
        Continued branch state per node.
    parent : ndarray of int
        Spanning-tree parent of each node (-1 for the apex).
    edge_kind : ndarray of int
        0 for a radial tree edge, 1 for an angular tree edge.
    faces : ndarray of int
        Triangles, counter-clockwise in the parameter plane.
    special : dict
        Node indices of the apex (``y``) and of ``x``.
    """

    params: TowerParams
    resolution: int
    end_cutoff: float
    slit_offset: float
    pmap: PolarMap
    s: np.ndarray
    sigma: np.ndarray
    columns: np.ndarray
    lower: np.ndarray
    index: np.ndarray
    z: np.ndarray
    offset: np.ndarray
    level: np.ndarray
    column: np.ndarray
    branch: BranchState
    parent: np.ndarray
    edge_kind: np.ndarray
    faces: np.ndarray
    special: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return self.z.size

    @property
    def x_column(self) -> int:
        return int(np.flatnonzero(self.columns == 0.5)[0])

    @property
    def i_x(self) -> int:
        return int(np.flatnonzero(np.isclose(self.s, self.pmap.s_x))[0])

    def node_lower(self) -> np.ndarray:
        return self.lower[self.column]

    @property
    def spacing(self) -> float:
        """Grid spacing ``h`` of the uniform grid parameters."""
        return 1.0 / self.resolution


def _x_level(u_x: float, resolution: int) -> float:
    base = _BASE_LEVEL if resolution % _BASE_LEVEL == 0 else resolution
    i = int(round(u_x * base))
    return min(max(i, 1), base - 1) / base


def _continue_edge(p, path, start, clearance, lower, track_b=True):
    """Continue along a sampled edge, refining until every step is small."""
    n = 1
    avoid = _AVOID_LOWER if lower else _AVOID_UPPER
    while True:
        off = path(n)
        try:
            return continue_branch(p, p.y + off, start, clearance, offsets=off,
                                   avoid=avoid, track_b=track_b)
        except StepTooLarge:
            n *= 2
            if n > 4096:
                raise


def build_grid(p: TowerParams, resolution: int = 64, end_cutoff: float = 1e-2,
               clearance: float = 1e-6) -> DomainGrid:
    """Polar grid of the cut disk with continued branch states.

    Parameters
    ----------
    p : TowerParams
    resolution : int
        Radial cell count ``N >= 8``; the angular direction uses ``2N``.
        Multiples of 8 nest under refinement.
    end_cutoff : float
        Distance kept from the end ``z = 1``.
    clearance : float
        Relative clearance of continuation paths from singular points.

    Raises
    ------
    GridDegenerate
        Invalid resolution or a cutoff that swallows the anchor.
    """
    if int(resolution) != resolution or resolution < 8:
        raise GridDegenerate(f"resolution must be an integer >= 8, got {resolution!r}")
    resolution = int(resolution)
    if not 0.0 < end_cutoff:
        raise GridDegenerate("end_cutoff must be positive")
    if abs(p.anchor - 1.0) <= end_cutoff or end_cutoff >= 1.0 - p.y:
        raise GridDegenerate(
            f"end_cutoff={end_cutoff:g} swallows the anchor z0={p.anchor:g}")
    m = 4 * p.k
    u_x = ((p.y - p.x) / (1.0 + p.y)) ** (1.0 / m)
    s_x = _x_level(u_x, resolution)
    pmap = PolarMap(p, float(end_cutoff), s_x, u_x)
    n = resolution
    nt = 2 * n
    s = np.arange(n + 1) / n
    sigma = np.arange(nt + 1) / nt
    half = n  # column of sigma = 1/2 on the upper side
    columns = np.concatenate([sigma[:half + 1], sigma[half:]])
    lower = np.concatenate([np.zeros(half + 1, bool), np.ones(nt - half + 1, bool)])
    ncol = columns.size
    i_x = int(round(s_x * n))

    index = -np.ones((n + 1, ncol), dtype=int)
    index[0, :] = 0
    count = 1
    for j in range(ncol):
        for i in range(1, n + 1):
            if j == half + 1 and i <= i_x:
                index[i, j] = index[i, half]
                continue
            index[i, j] = count
            count += 1

    level = np.zeros(count, dtype=int)
    column = np.zeros(count, dtype=int)
    for j in range(ncol):
        for i in range(n + 1):
            node = index[i, j]
            if node > 0 and (column[node] == 0 and level[node] == 0):
                level[node] = i
                column[node] = j
    theta_col = pmap.theta(columns)
    offset = np.zeros(count, dtype=complex)
    for node in range(1, count):
        offset[node] = pmap.offset(s[level[node]], theta_col[column[node]])
    x_node = index[i_x, half]
    offset[x_node] = p.x - p.y
    # ray theta = pi and the outer circle are exactly real / unimodular
    on_axis = (column == half) | (column == half + 1)
    offset[on_axis] = offset[on_axis].real
    z = p.y + offset

    # branch states by continuation along the spanning tree
    arg = np.zeros((count, 3))
    parent = -np.ones(count, dtype=int)
    kind = np.zeros(count, dtype=int)
    done = np.zeros(count, dtype=bool)
    done[0] = True

    def col_path(j, i0, i1):
        th = theta_col[j]

        def build(k):
            ss = np.linspace(s[i0], s[i1], k + 1)
            off = pmap.offset(ss, th)
            if j in (half, half + 1):
                off = off.real
            return off
        return build

    def row_path(i, j0, j1):
        def build(k):
            sg = np.linspace(columns[j0], columns[j1], k + 1)
            return pmap.offset(np.full_like(sg, s[i]), pmap.theta(sg))
        return build

    def state(node):
        return BranchState(*arg[node])

    # bank of (y, 1) from the anchor down to the first ring
    off = np.geomspace(p.anchor - p.y, offset[index[1, 0]].real, 64)
    st = continue_branch(p, p.y + off, anchor_state(p), clearance, offsets=off)
    first = index[1, 0]
    arg[first] = st.as_tuple()
    parent[first] = 0
    done[first] = True
    # first ring, all the way round to the lower bank of (y, 1)
    for j in range(1, ncol):
        node = index[1, j]
        if done[node]:
            continue
        prev = index[1, j - 1]
        st = _continue_edge(p, row_path(1, j - 1, j), state(prev), clearance,
                            lower[j])
        arg[node] = st.as_tuple()
        parent[node], kind[node] = prev, 1
        done[node] = True
    # rays outward; slit-bank nodes beyond x come from the neighbouring ray
    for j in range(ncol):
        for i in range(2, n + 1):
            node = index[i, j]
            if done[node]:
                continue
            if j in (half, half + 1) and i > i_x:
                nb = j - 1 if j == half else j + 1
                src = index[i, nb]
                if not done[src]:
                    for ii in range(2, i + 1):
                        prev_nb, nd = index[ii - 1, nb], index[ii, nb]
                        if not done[nd]:
                            st = _continue_edge(p, col_path(nb, ii - 1, ii),
                                                state(prev_nb), clearance, lower[nb])
                            arg[nd] = st.as_tuple()
                            parent[nd] = prev_nb
                            done[nd] = True
                st = _continue_edge(p, row_path(i, nb, j), state(src), clearance,
                                    lower[j])
                arg[node] = st.as_tuple()
                parent[node], kind[node] = src, 1
                done[node] = True
                continue
            prev = index[i - 1, j]
            if node == x_node:
                # branch point of B: only A and F**2 are continued
                st = _continue_edge(p, col_path(j, i - 1, i), state(prev), clearance,
                                    lower[j], track_b=False)
                arg[node] = st.as_tuple()
                parent[node] = prev
                done[node] = True
                continue
            st = _continue_edge(p, col_path(j, i - 1, i), state(prev), clearance,
                                lower[j])
            arg[node] = st.as_tuple()
            parent[node] = prev
            done[node] = True
    arg[0] = (0.0, 0.0, 0.0)

    faces = []
    for j in range(ncol - 1):
        if j == half:
            continue  # the two banks of the slit share no cell
        faces.append(np.stack([np.zeros(1, int), index[1:2, j], index[1:2, j + 1]], -1))
        a = index[1:n, j]
        b = index[2:, j]
        c = index[2:, j + 1]
        d = index[1:n, j + 1]
        faces.append(np.stack([a, b, c], -1))
        faces.append(np.stack([a, c, d], -1))
    faces = np.concatenate(faces).astype(int)
    faces = faces[(faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2])
                  & (faces[:, 0] != faces[:, 2])]

    return DomainGrid(
        params=p, resolution=n, end_cutoff=float(end_cutoff), slit_offset=0.0,
        pmap=pmap, s=s, sigma=sigma, columns=columns, lower=lower, index=index,
        z=z, offset=offset, level=level, column=column,
        branch=BranchState(arg[:, 0], arg[:, 1], arg[:, 2]),
        parent=parent, edge_kind=kind, faces=faces,
        special={"y": 0, "x": int(x_node)})


def shared_nodes(coarse: DomainGrid, fine: DomainGrid) -> tuple:
    """Nodes of ``coarse`` and the coincident nodes of ``fine``.

    Grids whose resolutions are multiples of 8 nest: a node of the coarse
    grid sits at the same parameters ``(s, sigma)`` on the same side of the
    slit as a node of the finer grid.
    """
    ratio = fine.resolution // coarse.resolution
    if ratio * coarse.resolution != fine.resolution or coarse.pmap.s_x != fine.pmap.s_x:
        raise ValueError("grids do not nest")

    def keys(grid, scale):
        lvl = grid.level * scale
        sg = np.rint(grid.columns[grid.column] * 2 * grid.resolution).astype(int) * scale
        return lvl, sg, grid.lower[grid.column]
    cl, cs, cw = keys(coarse, ratio)
    fl, fs, fw = keys(fine, 1)
    table = {(int(a), int(b), bool(c)): i for i, (a, b, c) in enumerate(zip(fl, fs, fw))}
    c_nodes = np.arange(coarse.n_nodes)
    f_nodes = np.array([table[(int(a), int(b), bool(c))] for a, b, c in zip(cl, cs, cw)])
    return c_nodes, f_nodes


# ---------------------------------------------------------------------------
# integration


def _edge_integrand(p: TowerParams, pmap: PolarMap, radial, fixed, lower):
    """Integrand ``Phi dz/dparam`` over a family of tree edges.

    ``radial[e]`` selects a radial edge (parameter ``s`` at fixed column
    parameter ``fixed[e]``) or an angular edge (parameter ``sigma`` at fixed
    ``s = fixed[e]``).
    """
    m = pmap.power

    def f(t, owner):
        rad = radial[owner][:, None]
        fx = fixed[owner][:, None]
        low = np.broadcast_to(lower[owner][:, None], t.shape)
        s_par = np.where(rad, t, fx)
        sg_par = np.where(rad, fx, t)
        th = pmap.theta(sg_par)
        u = pmap.u(s_par)
        r = pmap.radius(th)
        e = np.exp(1j * th)
        d = r * u ** m * e
        dz_ds = r * m * u ** (m - 1) * pmap.du(s_par) * e
        dz_dsg = (pmap.dradius(th) + 1j * r) * u ** m * e * pmap.dtheta(sg_par)
        dz = np.where(rad, dz_ds, dz_dsg)
        st = principal_branch(p, p.y + d, lower=low, offset=d)
        with np.errstate(all="ignore"):
            phi, _, _ = forms_kernel(p, d, st.arg_a, st.arg_b, st.arg_q)
            val = np.real(phi * dz[None])
        val = np.nan_to_num(val, nan=0.0, posinf=0.0, neginf=0.0)
        return np.moveaxis(val, 0, -1)

    return f


def _tree_edges(grid: DomainGrid):
    """Parameter description of the edge from each node's tree parent."""
    nodes = np.flatnonzero(grid.parent >= 0)
    par = grid.parent[nodes]
    radial = grid.edge_kind[nodes] == 0
    start = np.where(radial, grid.s[grid.level[par]], grid.columns[grid.column[par]])
    stop = np.where(radial, grid.s[grid.level[nodes]], grid.columns[grid.column[nodes]])
    fixed = np.where(radial, grid.columns[grid.column[nodes]], grid.s[grid.level[nodes]])
    lower = grid.lower[grid.column[nodes]]
    return nodes, par, radial, start, stop, fixed, lower


# relative error floor for edges near the end, where the integrand is large
EDGE_RTOL = 1e-12


def integrate_edges(p, grid, radial, start, stop, fixed, lower, tol):
    """Integrals of ``Re Phi`` over grid-parameter edges, shape ``(n, 3)``."""
    f = _edge_integrand(p, grid.pmap, radial, fixed, lower)
    vals, errs, _ = integrate_many(f, start, stop, tol, rtol=EDGE_RTOL)
    return vals, errs


@dataclass
class FundamentalMesh:
    """Triangulated image of the cut disk (or of a whole tower).

    Attributes
    ----------
    vertices : ndarray, shape (n, 3)
    faces : ndarray, shape (m, 3)
    gauss : ndarray, shape (n, 3)
        Unit normals from the Gauss map by inverse stereographic projection.
    boundary_tags : dict
        Tag name -> vertex indices of the corresponding boundary curve.
    params : TowerParams
    period : float
        Vertical translation period in the current frame.
    metadata : dict
    node_keys : ndarray, optional
        Grid parameters ``(level, column)`` per vertex, with the grid
        resolution, so that meshes of different resolution can be compared.
    """

    vertices: np.ndarray
    faces: np.ndarray
    gauss: np.ndarray
    boundary_tags: dict
    params: TowerParams
    period: float
    metadata: dict = field(default_factory=dict)
    node_keys: np.ndarray | None = None
    g_values: np.ndarray | None = None

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    def face_normals(self) -> np.ndarray:
        v = self.vertices
        f = self.faces
        n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        return n

    def vertex_normals(self) -> np.ndarray:
        """Area-weighted face-normal average per vertex."""
        fn = self.face_normals()
        acc = np.zeros_like(self.vertices)
        for c in range(3):
            np.add.at(acc, self.faces[:, c], fn)
        norm = np.linalg.norm(acc, axis=1, keepdims=True)
        return np.divide(acc, norm, out=np.zeros_like(acc), where=norm > 0)


def gauss_normal(g) -> np.ndarray:
    """Inverse stereographic projection, with ``g = inf`` mapping to +e3."""
    g = np.asarray(g, dtype=complex)
    n = np.zeros(g.shape + (3,))
    inf = ~np.isfinite(g)
    gf = np.where(inf, 0.0, g)
    a2 = np.abs(gf) ** 2
    n[..., 0] = 2 * gf.real / (a2 + 1)
    n[..., 1] = 2 * gf.imag / (a2 + 1)
    n[..., 2] = (a2 - 1) / (a2 + 1)
    n[inf] = (0.0, 0.0, 1.0)
    return n


def _boundary_tags(grid: DomainGrid) -> dict:
    half = grid.x_column
    n = grid.resolution
    ncol = grid.columns.size
    idx = grid.index
    theta = grid.pmap.theta(grid.columns)
    cap = grid.pmap.on_cap(theta)
    tags = {t: [] for t in TAGS}
    tags["stretch6"] = list(idx[:, 0])
    tags["stretch5"] = list(idx[:, ncol - 1])
    tags["Ucurve"] = list(idx[grid.i_x:, half]) + list(idx[grid.i_x + 1:, half + 1])
    for j in range(ncol):
        node = idx[n, j]
        if cap[j]:
            tags["end"].append(node)
        elif j <= half:
            tags["stretch1"].append(node)
        else:
            tags["stretch4"].append(node)
    # corner vertices are listed once, in priority order
    seen = set()
    out = {}
    for t in ("stretch5", "stretch6", "Ucurve", "end", "stretch1", "stretch4"):
        keep = [v for v in dict.fromkeys(tags[t]) if v not in seen]
        seen.update(keep)
        out[t] = np.asarray(keep, dtype=int)
    return {t: out[t] for t in TAGS}


def integrate_X(p: TowerParams, grid: DomainGrid, tol: float = 1e-10) -> FundamentalMesh:
    """Immersion ``X = Re int Phi`` at every grid node.

    The base point is ``X(y) = 0``; every other node is reached along its
    tree edge.  The returned mesh is in the raw frame of the data.
    """
    nodes, par, radial, start, stop, fixed, lower = _tree_edges(grid)
    vals, errs = integrate_edges(p, grid, radial, start, stop, fixed, lower, tol)
    X = np.full((grid.n_nodes, 3), np.nan)
    X[0] = 0.0
    step = np.zeros((grid.n_nodes, 3))
    step[nodes] = vals
    # parents precede children in tree depth
    depth = np.zeros(grid.n_nodes, dtype=int)
    pending = nodes
    while pending.size:
        pa = grid.parent[pending]
        ready = ~np.isnan(X[pa, 0])
        if not np.any(ready):
            raise RuntimeError("spanning tree is disconnected")
        done = pending[ready]
        X[done] = X[grid.parent[done]] + step[done]
        depth[done] = depth[grid.parent[done]] + 1
        pending = pending[~ready]
    g = np.zeros(grid.n_nodes, dtype=complex)
    with np.errstate(all="ignore"):
        g[1:] = gauss_kernel(p, grid.offset[1:], grid.branch.arg_a[1:],
                             grid.branch.arg_b[1:])
    g[grid.special["x"]] = np.inf
    g[0] = 0.0
    gauss = gauss_normal(g)
    faces = grid.faces.copy()
    mesh = FundamentalMesh(
        vertices=X, faces=faces, gauss=gauss, boundary_tags=_boundary_tags(grid),
        params=p, period=0.0,
        metadata={"frame": "raw", "end_cutoff": grid.end_cutoff,
                  "resolution": grid.resolution, "quadrature_tol": tol,
                  "max_edge_error": float(np.max(errs)) if errs.size else 0.0},
        node_keys=np.stack([grid.level, grid.column], -1),
        g_values=g)
    # orient faces along the Gauss map
    fn = mesh.face_normals()
    centre = gauss[faces].mean(axis=1)
    if np.sum(np.einsum("ij,ij->i", fn, centre)) < 0:
        mesh.faces = faces[:, ::-1].copy()
    mesh.period = mesh_period(mesh)
    return mesh


def mesh_period(mesh: FundamentalMesh) -> float:
    """Vertical period from the horizontal-plane height of stretch 1.

    The origin lies on the straight line of stretch 5; the composition of
    the half-turn about that line with the reflection in the plane of
    stretch 1 squares to a vertical translation by four times the height
    of that plane.
    """
    tags = mesh.boundary_tags
    h_top = np.mean(mesh.vertices[tags["stretch1"], 2])
    h_base = np.mean(mesh.vertices[tags["stretch5"], 2])
    return float(4.0 * abs(h_top - h_base))


def alternative_X(p: TowerParams, grid: DomainGrid, nodes, tol: float = 1e-10):
    """Integrate ``X`` at ``nodes`` along a second, homotopic route.

    The route runs out along the bank of ``(y, 1)`` on the node's side of the
    slit and then along the node's ring, never crossing the segment
    ``(x, y)``.
    """
    nodes = np.atleast_1d(np.asarray(nodes, dtype=int))
    half = grid.x_column
    last = grid.columns.size - 1
    out = np.zeros((nodes.size, 3))
    for k, nd in enumerate(nodes):
        if nd == 0:
            continue
        i, j = grid.level[nd], grid.column[nd]
        j0 = 0 if j <= half else last
        cols = np.arange(j0, j, 1 if j >= j0 else -1)
        radial = np.concatenate([[True], np.zeros(cols.size, bool)])
        start = np.concatenate([[0.0], grid.columns[cols]])
        stop = np.concatenate([[grid.s[i]], grid.columns[cols + np.sign(j - j0)]])
        fixed = np.concatenate([[grid.columns[j0]], np.full(cols.size, grid.s[i])])
        lower = np.full(radial.size, grid.lower[j0])
        vals, _ = integrate_edges(p, grid, radial, start, stop, fixed, lower, tol)
        out[k] = vals.sum(axis=0)
    return out


# ---------------------------------------------------------------------------
# frames and periods


def _normal_sign(linear: np.ndarray, flips: bool) -> float:
    """Sign ``s`` with image normal field ``s * linear @ n``."""
    return float(np.sign(np.linalg.det(linear))) * (-1.0 if flips else 1.0)


def transform_mesh(mesh: FundamentalMesh, linear, translation=(0.0, 0.0, 0.0),
                   flips: bool | None = None, scale: float = 1.0) -> FundamentalMesh:
    """Image of ``mesh`` under ``v -> scale * linear @ v + translation``.

    ``flips`` says whether the face winding is reversed; by default it is
    reversed exactly for orientation-reversing ``linear``, so that the
    normal field is carried along as ``linear @ n``.
    """
    L = np.asarray(linear, dtype=float)
    t = np.asarray(translation, dtype=float)
    if flips is None:
        flips = np.linalg.det(L) < 0
    sign = _normal_sign(L, flips)
    faces = mesh.faces[:, ::-1].copy() if flips else mesh.faces.copy()
    return replace(mesh, vertices=scale * mesh.vertices @ L.T + t,
                   faces=faces, gauss=sign * mesh.gauss @ L.T,
                   boundary_tags={k: v.copy() for k, v in mesh.boundary_tags.items()},
                   period=scale * mesh.period, metadata=dict(mesh.metadata))


def stretch1_height(mesh: FundamentalMesh) -> float:
    return float(np.mean(mesh.vertices[mesh.boundary_tags["stretch1"], 2]))


def canonical_frame(mesh: FundamentalMesh) -> FundamentalMesh:
    """Place the piece with the plane of stretch 1 above the origin.

    The line of stretch 5 and the vertical plane of stretch 6 pass through
    the origin in the raw frame; the antipodal map preserves both and
    brings the horizontal symmetry plane to positive height when needed.
    """
    if stretch1_height(mesh) >= 0:
        out = replace(mesh, metadata=dict(mesh.metadata))
    else:
        out = transform_mesh(mesh, -np.eye(3))
    out.metadata["frame"] = "canonical"
    return out


def scale_to_period(mesh: FundamentalMesh, target: float = 4.0) -> FundamentalMesh:
    """Uniformly scaled copy of ``mesh`` with vertical period ``target``."""
    if not mesh.period > 0:
        raise ValueError("mesh has no positive vertical period")
    if not target > 0:
        raise ValueError("target period must be positive")
    lam = target / mesh.period
    if lam == 1.0:
        return replace(mesh, metadata=dict(mesh.metadata))
    out = transform_mesh(mesh, np.eye(3), scale=lam)
    out.period = float(target)
    out.metadata["scale"] = lam * mesh.metadata.get("scale", 1.0)
    return out


def normalized_piece(p: TowerParams, resolution: int = 64, end_cutoff: float = 1e-2,
                     tol: float = 1e-10, target: float = 4.0) -> FundamentalMesh:
    """Fundamental piece in the canonical frame with vertical period ``target``."""
    grid = build_grid(p, resolution, end_cutoff)
    return scale_to_period(canonical_frame(integrate_X(p, grid, tol)), target)


def _dh_route(p: TowerParams, route: str):
    m = 4 * p.k
    if route == "bank":
        direction = 1.0 - p.y
        lower = False
    elif route == "ray":
        direction = 1j * np.sqrt(1.0 - p.y ** 2)
        lower = False
    else:
        raise ValueError(f"unknown route {route!r}")

    def f(t, owner):
        d = direction * t ** m
        dz = direction * m * t ** (m - 1)
        st = principal_branch(p, p.y + d, lower=lower, offset=d)
        with np.errstate(all="ignore"):
            _, _, dh = forms_kernel(p, d, st.arg_a, st.arg_b, st.arg_q)
            val = np.real(dh * dz)
        return np.nan_to_num(val, nan=0.0, posinf=0.0, neginf=0.0)
    return f


def vertical_period(p: TowerParams, tol: float = 1e-10, route: str = "bank") -> float:
    """Vertical period ``4 |X3|`` of the horizontal symmetry plane.

    The height is ``Re int dh`` from ``y`` to the unit circle, either along
    the upper bank of ``(y, 1)`` to ``z = 1`` (``route="bank"``) or along
    the vertical segment ``y + i t`` (``route="ray"``).  Both are taken in
    the substitution ``z - y ~ s**(4k)``.  The composition of the half-turn
    about the line of stretch 5 with the reflection in that plane is a glide
    whose square is the translation by this amount.
    """
    vals, _, _ = integrate_many(_dh_route(p, route), [0.0], [1.0], tol)
    return float(4.0 * abs(vals[0]))


# ---------------------------------------------------------------------------
# symmetry group


@dataclass(frozen=True)
class Isometry:
    """Euclidean motion ``v -> linear @ v + translation``.

    Attributes
    ----------
    linear : ndarray, shape (3, 3)
    translation : ndarray, shape (3,)
    name : str
        Word in the generators (``""`` for the identity).
    flips : bool
        Whether a copy made by this element reverses the face winding of
        the piece to keep the tower consistently oriented.
    """

    linear: np.ndarray
    translation: np.ndarray
    name: str = ""
    flips: bool = False

    def __call__(self, v) -> np.ndarray:
        return np.asarray(v, dtype=float) @ self.linear.T + self.translation

    def __matmul__(self, other: "Isometry") -> "Isometry":
        return Isometry(self.linear @ other.linear,
                        self.linear @ other.translation + self.translation,
                        self.name + other.name, self.flips != other.flips)

    def inverse(self) -> "Isometry":
        li = self.linear.T
        return Isometry(li, -li @ self.translation, f"({self.name})^-1", self.flips)

    @property
    def normal_sign(self) -> float:
        return _normal_sign(self.linear, self.flips)

    def as_dict(self) -> dict:
        return {"name": self.name, "linear": self.linear.tolist(),
                "translation": self.translation.tolist(), "flips": self.flips}


def identity() -> Isometry:
    return Isometry(np.eye(3), np.zeros(3), "", False)


def generators(k: int, height: float = 1.0) -> dict:
    """The three generating symmetries.

    ``r1`` is the half-turn about the line ``[(cot(pi/2k), 1, 0)]``, ``s2``
    the reflection in the plane ``x2 = 0`` and ``s3`` the reflection in the
    horizontal plane at ``x3 = height``.  Every generator reverses the
    face winding of a copy.
    """
    a = np.pi / (2 * k)
    d = np.array([np.cos(a), np.sin(a), 0.0])
    r1 = Isometry(2.0 * np.outer(d, d) - np.eye(3), np.zeros(3), "r1", True)
    s2 = Isometry(np.diag([1.0, -1.0, 1.0]), np.zeros(3), "s2", True)
    s3 = Isometry(np.diag([1.0, 1.0, -1.0]), np.array([0.0, 0.0, 2.0 * height]),
                  "s3", True)
    return {"r1": r1, "s2": s2, "s3": s3}


def rho(k: int) -> Isometry:
    """``pi/k``-rotation about the x3-axis composed with ``x3 -> -x3``."""
    g = generators(k)
    out = g["r1"] @ g["s2"]
    return replace(out, name="rho")


def translation(dz: float) -> Isometry:
    return Isometry(np.eye(3), np.array([0.0, 0.0, dz]), f"T({dz:g})", False)


def _group_key(iso: Isometry, period: float):
    c = iso.translation[2] % period
    if np.isclose(c, period, atol=1e-9):
        c = 0.0
    return tuple(np.round(iso.linear, 9).ravel()) + (round(float(c), 9),)


def symmetry_group(p: TowerParams | int, copies: int = 1, period: float = 4.0,
                   include_translations: bool = True) -> list:
    """Group elements tiling ``2 * copies - 1`` vertical periods.

    The finite set generated by ``r1, s2, s3`` modulo the vertical
    translation by ``period`` has ``8k`` elements; each is returned with
    its translation reduced so that the copy of a piece with
    ``0 <= x3 <= period/4`` lies in ``-period/4 <= x3 <= 3 period/4``.
    These are then combined with the translations ``(0, 0, period*m)``,
    ``|m| < copies``.

    Raises
    ------
    ValueError
        ``copies < 1``, or inconsistent face orientation (the generated
        set would not be orientable).
    """
    k = p.k if isinstance(p, TowerParams) else int(p)
    if copies < 1:
        raise ValueError("copies must be >= 1")
    gens = list(generators(k, period / 4.0).values())
    found = {_group_key(identity(), period): identity()}
    frontier = [identity()]
    while frontier:
        nxt = []
        for g in frontier:
            for s in gens:
                h = s @ g
                key = _group_key(h, period)
                if key in found:
                    if found[key].flips != h.flips:
                        raise ValueError("generated set is not orientable")
                    continue
                c = h.translation[2] % period
                if np.isclose(c, period, atol=1e-9):
                    c = 0.0
                h = Isometry(h.linear, np.array([h.translation[0], h.translation[1], c]),
                             h.name, h.flips)
                found[key] = h
                nxt.append(h)
        frontier = nxt
    base = sorted(found.values(), key=lambda g: (len(g.name), g.name))
    if not include_translations:
        return base
    out = []
    for m in range(-(copies - 1), copies):
        t = translation(period * m)
        for g in base:
            h = t @ g if m else g
            out.append(replace(h, name=g.name if m == 0 else f"T{m:+d}{g.name}"))
    return out


# ---------------------------------------------------------------------------
# replication


DEFAULT_WELD_TOL = 1e-6

# symmetry fixing each Schwarz boundary, as a word in r1, s2, s3
_FIXING = {"stretch5": ("r1",), "stretch6": ("r1", "s2", "r1"),
           "stretch1": ("s3",), "stretch4": ("s3",)}


def weld_residuals(mesh: FundamentalMesh, period: float = 4.0) -> dict:
    """Distance by which each symmetry boundary misses its fixing symmetry."""
    g = generators(mesh.params.k, period / 4.0)
    out = {}
    for tag, word in _FIXING.items():
        idx = mesh.boundary_tags[tag]
        if idx.size == 0:
            out[tag] = 0.0
            continue
        iso = identity()
        for w in word:
            iso = iso @ g[w]
        v = mesh.vertices[idx]
        out[tag] = float(np.max(np.linalg.norm(iso(v) - v, axis=1)))
    return out


def _weld(vertices, tol):
    """Representative index per vertex after merging points within ``tol``."""
    n = vertices.shape[0]
    parent = np.arange(n)
    pairs = cKDTree(vertices).query_pairs(tol, output_type="ndarray")

    def root(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i
    for a, b in pairs:
        ra, rb = root(a), root(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    return np.array([root(i) for i in range(n)])


def replicate(mesh: FundamentalMesh, group: list, weld_tol: float = DEFAULT_WELD_TOL,
              check: bool = True) -> FundamentalMesh:
    """Union of the images of ``mesh`` under ``group``, welded.

    Parameters
    ----------
    mesh : FundamentalMesh
        Piece in the canonical frame, normalized to its period.
    group : list of Isometry
    weld_tol : float
        Vertices of different copies closer than this are merged.
    check : bool
        Verify first that the symmetry boundaries are fixed by their
        symmetries within ``weld_tol``.

    Raises
    ------
    WeldMismatch
        A symmetry boundary misses its symmetry by more than ``weld_tol``.
    """
    if check and len(group) > 1:
        res = weld_residuals(mesh, mesh.period)
        bad = {t: r for t, r in res.items() if r > weld_tol}
        if bad:
            worst = max(bad, key=bad.get)
            raise WeldMismatch(f"{worst} misses its symmetry by {bad[worst]:.3g} "
                               f"> weld tolerance {weld_tol:g}")
    n = mesh.n_vertices
    verts, faces, normals, copy_of = [], [], [], []
    for c, g in enumerate(group):
        verts.append(g(mesh.vertices))
        f = mesh.faces[:, ::-1] if g.flips else mesh.faces
        faces.append(f + c * n)
        normals.append(g.normal_sign * mesh.gauss @ g.linear.T)
        copy_of.append(np.full(n, c))
    V = np.concatenate(verts)
    F = np.concatenate(faces)
    N = np.concatenate(normals)
    rep = _weld(V, weld_tol) if len(group) > 1 else np.arange(V.shape[0])
    keep, new_index = np.unique(rep, return_inverse=True)
    F = new_index[F]
    F = F[(F[:, 0] != F[:, 1]) & (F[:, 1] != F[:, 2]) & (F[:, 0] != F[:, 2])]
    tags = {}
    for t in ("Ucurve", "end"):
        idx = np.concatenate([mesh.boundary_tags[t] + c * n for c in range(len(group))])
        tags[t] = np.unique(new_index[idx]).astype(int)
    for t in TAGS:
        tags.setdefault(t, np.zeros(0, dtype=int))
    meta = dict(mesh.metadata)
    meta.update({"copies": len(group), "weld_tol": weld_tol,
                 "group": [g.name for g in group]})
    return FundamentalMesh(vertices=V[keep], faces=F, gauss=N[keep],
                           boundary_tags=tags, params=mesh.params,
                           period=mesh.period, metadata=meta)


# ---------------------------------------------------------------------------
# embeddedness


def _segment_hits_triangle(p0, p1, a, b, c, eps):
    """Vectorized proper crossing test of segments ``p0 p1`` with triangles."""
    e1, e2 = b - a, c - a
    d = p1 - p0
    h = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, h)
    scale = np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1) * np.linalg.norm(d, axis=1)
    ok = np.abs(det) > 1e-12 * scale
    inv = np.divide(1.0, det, out=np.zeros_like(det), where=ok)
    s = p0 - a
    u = np.einsum("ij,ij->i", s, h) * inv
    q = np.cross(s, e1)
    v = np.einsum("ij,ij->i", d, q) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    return ok & (u > eps) & (v > eps) & (u + v < 1 - eps) & (t > eps) & (t < 1 - eps)


class _FaceIndex:
    """Bounding-sphere search structure over the faces of a mesh.

    Faces are binned by radius in factors of two, one KD-tree per bin, so
    that a few long faces do not widen the search for all others.
    """

    def __init__(self, tri):
        self.tri = tri
        self.lo = tri.min(axis=1)
        self.hi = tri.max(axis=1)
        self.centre = tri.mean(axis=1)
        self.radius = np.linalg.norm(tri - self.centre[:, None, :], axis=2).max(axis=1)
        base = max(float(self.radius.min()), 1e-300)
        level = np.floor(np.log2(np.maximum(self.radius, base) / base)).astype(int)
        self.bins = [np.flatnonzero(level == b) for b in np.unique(level)]
        self.tops = [float(self.radius[i].max()) for i in self.bins]
        self.trees = [cKDTree(self.centre[i]) for i in self.bins]

    def partners(self, faces):
        """Pairs ``(i, j)``, ``i`` in ``faces``, with overlapping boxes."""
        out = []
        for members, top, tree in zip(self.bins, self.tops, self.trees):
            hits = tree.query_ball_point(self.centre[faces], self.radius[faces] + top)
            counts = np.fromiter((len(h) for h in hits), int, len(hits))
            if not counts.sum():
                continue
            first = np.repeat(faces, counts)
            second = members[np.concatenate([h for h in hits if h]).astype(int)]
            out.append(np.stack([first, second], -1))
        if not out:
            return np.zeros((0, 2), dtype=int)
        pairs = np.concatenate(out)
        i, j = pairs[:, 0], pairs[:, 1]
        box = np.all((self.lo[i] <= self.hi[j]) & (self.lo[j] <= self.hi[i]), axis=1)
        return pairs[box & (i != j)]


def _pairs_intersect(tri, pairs, eps):
    hit = np.zeros(pairs.shape[0], dtype=bool)
    for first, second in ((0, 1), (1, 0)):
        A, B = tri[pairs[:, first]], tri[pairs[:, second]]
        for e in range(3):
            hit |= _segment_hits_triangle(A[:, e], A[:, (e + 1) % 3],
                                          B[:, 0], B[:, 1], B[:, 2], eps)
    return hit


def self_intersections(mesh: FundamentalMesh, max_pairs: int | None = None,
                       seed: int = 0, eps: float = 1e-9, chunk: int = 2000) -> dict:
    """Count intersecting pairs of faces that share no vertex.

    Candidate pairs have overlapping bounding boxes.  Without
    ``max_pairs`` every pair is tested once; otherwise faces are visited
    in random order and all their candidate pairs are tested until at
    least ``max_pairs`` pairs have been tested.  Two triangles in general
    position intersect exactly when an edge of one crosses the other.

    Returns
    -------
    dict
        ``tested`` pairs, ``intersecting`` pairs, the intersecting
        ``pairs`` and whether the test was ``exhaustive``.
    """
    v, f = mesh.vertices, mesh.faces
    tri = v[f]
    index = _FaceIndex(tri)
    n = f.shape[0]
    if max_pairs is None:
        order = np.arange(n)
    else:
        order = np.random.default_rng(seed).permutation(n)
    tested = 0
    found = []
    exhaustive = True
    for start in range(0, n, chunk):
        if max_pairs is not None and tested >= max_pairs:
            exhaustive = start >= n
            break
        pairs = index.partners(order[start:start + chunk])
        if max_pairs is None:
            pairs = pairs[pairs[:, 0] < pairs[:, 1]]
        shared = np.zeros(pairs.shape[0], dtype=bool)
        for a in range(3):
            for b in range(3):
                shared |= f[pairs[:, 0], a] == f[pairs[:, 1], b]
        pairs = pairs[~shared]
        tested += pairs.shape[0]
        hit = _pairs_intersect(tri, pairs, eps)
        found.append(pairs[hit])
    hits = np.concatenate(found) if found else np.zeros((0, 2), dtype=int)
    if max_pairs is not None:
        hits = np.unique(np.sort(hits, axis=1), axis=0)
    return {"tested": int(tested), "intersecting": int(hits.shape[0]),
            "pairs": hits, "exhaustive": exhaustive}


# ---------------------------------------------------------------------------
# export


def atomic_write(path, data: bytes) -> None:
    """Write ``data`` to ``path`` through a temporary file and a rename."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def obj_text(mesh: FundamentalMesh) -> str:
    """ASCII OBJ with ``v``, ``vn`` and ``f`` records."""
    lines = [f"# scherktower k={mesh.params.k} y={mesh.params.y!r} x={mesh.params.x!r}"]
    lines += ["v %.17g %.17g %.17g" % tuple(r) for r in mesh.vertices]
    lines += ["vn %.17g %.17g %.17g" % tuple(r) for r in mesh.gauss]
    lines += ["f {0}//{0} {1}//{1} {2}//{2}".format(*(r + 1)) for r in mesh.faces]
    return "\n".join(lines) + "\n"


def ply_bytes(mesh: FundamentalMesh) -> bytes:
    """Binary little-endian PLY with float64 positions and normals."""
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {mesh.n_vertices}\n"
        "property double x\nproperty double y\nproperty double z\n"
        "property double nx\nproperty double ny\nproperty double nz\n"
        f"element face {mesh.faces.shape[0]}\n"
        "property list uchar int vertex_indices\nend_header\n").encode("ascii")
    vert = np.concatenate([mesh.vertices, mesh.gauss], axis=1).astype("<f8")
    face = np.zeros(mesh.faces.shape[0], dtype=[("n", "u1"), ("i", "<i4", (3,))])
    face["n"] = 3
    face["i"] = mesh.faces
    return header + vert.tobytes() + face.tobytes()


def read_ply(path) -> tuple:
    """Vertices, normals and faces of a file written by :func:`ply_bytes`."""
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.index(b"end_header\n") + len(b"end_header\n")
    header = data[:end].decode("ascii").split("\n")
    nv = int(next(h for h in header if h.startswith("element vertex")).split()[-1])
    nf = int(next(h for h in header if h.startswith("element face")).split()[-1])
    vert = np.frombuffer(data, dtype="<f8", count=6 * nv, offset=end).reshape(nv, 6)
    face = np.frombuffer(data, dtype=[("n", "u1"), ("i", "<i4", (3,))], count=nf,
                         offset=end + 48 * nv)
    return vert[:, :3].copy(), vert[:, 3:].copy(), face["i"].astype(int)


def sidecar(mesh: FundamentalMesh, residual: float | None = None) -> dict:
    """Metadata record accompanying an exported mesh."""
    g = generators(mesh.params.k, mesh.period / 4.0 if mesh.period else 1.0)
    meta = {k: v for k, v in mesh.metadata.items() if k != "group"}
    return {
        "k": mesh.params.k, "y": mesh.params.y, "x": mesh.params.x,
        "end_cutoff": mesh.metadata.get("end_cutoff"),
        "period": mesh.period, "residual_D": residual,
        "generators": {name: iso.as_dict() for name, iso in g.items()},
        "n_vertices": mesh.n_vertices, "n_faces": int(mesh.faces.shape[0]),
        "metadata": meta,
    }


def export_mesh(mesh: FundamentalMesh, stem, formats=("obj", "ply"),
                residual: float | None = None) -> list:
    """Write ``stem.obj``/``stem.ply`` and the ``stem.json`` sidecar atomically."""
    written = []
    stem = str(stem)
    if "obj" in formats:
        atomic_write(stem + ".obj", obj_text(mesh).encode("ascii"))
        written.append(stem + ".obj")
    if "ply" in formats:
        atomic_write(stem + ".ply", ply_bytes(mesh))
        written.append(stem + ".ply")
    text = json.dumps(sidecar(mesh, residual), indent=2, sort_keys=True, default=float)
    atomic_write(stem + ".json", (text + "\n").encode("ascii"))
    written.append(stem + ".json")
    return written
