"""Discrete geometry of one time level.

The level set is interpolated nodally (piecewise linear), its zero set is
reconstructed tet by tet as one or two planar triangles, and the narrow band
of tetrahedra where ``|phi_h| <= delta`` somewhere is selected as the active
region.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import DataError, DegenerateGeometryError, GeometryError, ProjectionError

TET_EDGES = tuple(combinations(range(4), 2))  # (0,1),(0,2),(0,3),(1,2),(1,3),(2,3)


@dataclass(frozen=True)
class NodalLevelSet:
    t: float
    values: np.ndarray  # one value per mesh vertex


@dataclass(frozen=True)
class DiscreteSurface:
    """Piecewise planar zero set of a P1 level set.

    Triangles are stored flat; ``tri_tet[k]`` is the tet holding triangle ``k``
    and ``tri_normal[k]`` the (constant) unit normal of that tet.
    """

    tri_tet: np.ndarray  # (ntri,)
    tri_xyz: np.ndarray  # (ntri, 3, 3)
    tri_normal: np.ndarray  # (ntri, 3)
    tri_area: np.ndarray  # (ntri,)

    @property
    def area(self):
        return float(self.tri_area.sum())

    @property
    def cut_tets(self):
        return np.unique(self.tri_tet)

    def __len__(self):
        return len(self.tri_tet)

    def patches(self):
        """Yield ``(tet, triangles, normal)`` grouped by tet in ascending order."""
        order = np.argsort(self.tri_tet, kind="stable")
        tets, starts = np.unique(self.tri_tet[order], return_index=True)
        ends = np.append(starts[1:], len(order))
        for tet, a, b in zip(tets, starts, ends):
            idx = order[a:b]
            yield int(tet), self.tri_xyz[idx], self.tri_normal[idx[0]]


@dataclass(frozen=True)
class ActiveRegion:
    band: np.ndarray  # sorted tet ids
    cut: np.ndarray  # sorted tet ids, subset of band
    delta: float
    dofs: np.ndarray  # sorted vertex ids
    dof_of_vertex: np.ndarray = field(repr=False)  # (n_vertices,), -1 if inactive

    @property
    def n_dofs(self):
        return len(self.dofs)


def interpolate_levelset(problem, t, mesh):
    """Nodal values of ``problem.phi(., t)`` on all mesh vertices."""
    values = np.asarray(problem.phi(mesh.vertex_coords(), t), dtype=float)
    if not np.all(np.isfinite(values)):
        raise DataError(f"non-finite level set value at t={t}")
    values.setflags(write=False)
    return NodalLevelSet(t=float(t), values=values)


def tet_normals(mesh, ls, tets):
    """Unit normals ``grad phi_h / |grad phi_h|`` of the given tets."""
    phi = ls.values[mesh.tet_vertices(tets)]
    g = np.einsum("ti,tij->tj", phi, mesh.tet_gradients(tets))
    norm = np.linalg.norm(g, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return g / norm[:, None]


def _candidate_tets(mesh, values, lo_bound, hi_bound):
    """Tets of cubes whose corner value range meets [lo_bound, hi_bound]."""
    lo, hi = mesh.cube_corner_values(values)
    cubes = np.nonzero((lo <= hi_bound) & (hi >= lo_bound))[0]
    return mesh.cube_tets(cubes)


def extract_surface(mesh, ls, min_area_factor=1e-14):
    """Planar reconstruction of the zero level of the P1 level set.

    Zero vertex values count as positive.  Triangles with area below
    ``min_area_factor * h**2`` are dropped.
    """
    values = ls.values
    tets = _candidate_tets(mesh, values, 0.0, 0.0)
    verts = mesh.tet_vertices(tets)
    phi = values[verts]
    allzero = np.all(phi == 0.0, axis=1)
    if allzero.any():
        bad = int(tets[np.argmax(allzero)])
        raise DegenerateGeometryError(f"level set vanishes identically on tet {bad}")
    neg = phi < 0.0
    nneg = neg.sum(axis=1)
    cut = (nneg > 0) & (nneg < 4)
    tets, verts, phi, neg, nneg = tets[cut], verts[cut], phi[cut], neg[cut], nneg[cut]
    xyz = mesh.vertex_coords(verts)  # (m, 4, 3)

    # crossing point on every edge whose endpoints differ in sign; the
    # parameter is measured from the lower local index, so phi and -phi give
    # bit-identical points
    edge_pts = np.zeros((len(tets), 6, 3))
    crossing = np.zeros((len(tets), 6), dtype=bool)
    for e, (a, b) in enumerate(TET_EDGES):
        crossing[:, e] = neg[:, a] != neg[:, b]
        pa, pb = phi[:, a], phi[:, b]
        with np.errstate(invalid="ignore", divide="ignore"):
            s = np.where(crossing[:, e], pa / (pa - pb), 0.0)
        edge_pts[:, e] = xyz[:, a] + s[:, None] * (xyz[:, b] - xyz[:, a])

    tri_tet, tri_pts = [], []
    single = (nneg == 1) | (nneg == 3)
    if single.any():
        e_idx = np.nonzero(crossing[single])[1].reshape(-1, 3)
        rows = np.nonzero(single)[0]
        tri_tet.append(tets[rows])
        tri_pts.append(np.take_along_axis(edge_pts[rows], e_idx[:, :, None], axis=1))
    quad = nneg == 2
    if quad.any():
        rows = np.nonzero(quad)[0]
        e_idx = np.nonzero(crossing[quad])[1].reshape(-1, 4)
        # the four crossing edges in enumeration order are (p,r),(p,s),(q,r),(q,s)
        # for one vertex pairing; the cycle is 0-1-3-2 and the split diagonal
        # joins the first edge with the edge disjoint from it
        cyc = e_idx[:, [0, 1, 3, 2]]
        p = np.take_along_axis(edge_pts[rows], cyc[:, :, None], axis=1)
        tri_tet.append(np.concatenate([tets[rows], tets[rows]]))
        tri_pts.append(np.concatenate([p[:, [0, 1, 2]], p[:, [0, 2, 3]]]))
    if tri_tet:
        tri_tet = np.concatenate(tri_tet)
        tri_pts = np.concatenate(tri_pts)
    else:
        tri_tet = np.zeros(0, dtype=np.int64)
        tri_pts = np.zeros((0, 3, 3))

    cross = np.cross(tri_pts[:, 1] - tri_pts[:, 0], tri_pts[:, 2] - tri_pts[:, 0])
    area = 0.5 * np.linalg.norm(cross, axis=1)
    keep = area >= min_area_factor * mesh.h**2
    order = np.argsort(tri_tet[keep], kind="stable")
    tri_tet = tri_tet[keep][order]
    tri_pts = tri_pts[keep][order]
    area = area[keep][order]
    cross = cross[keep][order]
    normal = tet_normals(mesh, ls, tri_tet)
    # orient triangles counter-clockwise about n_h (cosmetic, for export)
    flip = np.einsum("ij,ij->i", cross, normal) < 0
    tri_pts[flip] = tri_pts[flip][:, [0, 2, 1]]
    return DiscreteSurface(tri_tet=tri_tet, tri_xyz=tri_pts, tri_normal=normal, tri_area=area)


def select_active_region(mesh, ls, delta, surface=None):
    """Narrow band ``{S : |phi_h| <= delta somewhere in S}`` and its dofs."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    values = ls.values
    cand = _candidate_tets(mesh, values, -delta, delta)
    phi = values[mesh.tet_vertices(cand)]
    inband = (phi.min(axis=1) <= delta) & (phi.max(axis=1) >= -delta)
    if surface is None:
        surface = extract_surface(mesh, ls)
    cut = surface.cut_tets
    # keep the cut set inside the band even when delta == 0 and a vertex is 0
    band = np.union1d(cand[inband], cut)
    if len(band) == 0:
        raise GeometryError(f"empty narrow band at t={ls.t}: the surface left the domain")
    dofs = np.unique(mesh.tet_vertices(band))
    dof_of_vertex = np.full(mesh.n_vertices, -1, dtype=np.int64)
    dof_of_vertex[dofs] = np.arange(len(dofs))
    return ActiveRegion(band=band, cut=cut, delta=float(delta), dofs=dofs, dof_of_vertex=dof_of_vertex)


def closest_point(problem, x, t, max_iter=50, tol=1e-12):
    """Closest point projection onto Gamma(t), vectorized over rows of ``x``.

    Uses the problem's analytic projection when available, otherwise the
    fixed-point iteration ``x <- x - phi grad(phi) / |grad(phi)|^2`` with step
    halving whenever ``|phi|`` would grow.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if problem.projection is not None:
        p = np.asarray(problem.projection(x, t), dtype=float)
        return p[0] if single else p
    p = x.copy()
    phi = problem.phi(p, t)
    for _ in range(max_iter):
        active = ~(np.abs(phi) <= tol)  # NaN counts as not converged
        if not active.any():
            break
        g = problem.grad_phi(p[active], t)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = (phi[active] / np.einsum("ij,ij->i", g, g))[:, None] * g
        if not np.all(np.isfinite(step)):
            raise ProjectionError("closest point iteration hit a critical point of phi")
        cur = np.abs(phi[active])
        damp = np.ones(len(step))
        trial = p[active] - step
        trial_phi = problem.phi(trial, t)
        for _ in range(30):
            worse = np.abs(trial_phi) > cur
            if not worse.any():
                break
            damp[worse] *= 0.5
            trial[worse] = p[active][worse] - damp[worse, None] * step[worse]
            trial_phi[worse] = problem.phi(trial[worse], t)
        p[active] = trial
        phi[active] = trial_phi
    if not np.all(np.abs(phi) <= tol):
        raise ProjectionError(f"closest point iteration did not converge in {max_iter} steps")
    return p[0] if single else p
