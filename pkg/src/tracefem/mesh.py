"""Structured background tetrahedral mesh.

The box is divided into ``n`` cubes per axis and every cube is split into the
6 Kuhn tetrahedra sharing the cube diagonal from local corner ``(0,0,0)`` to
``(1,1,1)``.  Connectivity is never stored: vertex, cube and tet indices are
related arithmetically.

Numbering
---------
vertex ``(i, j, k)``  ->  ``i + (nx+1) * (j + (ny+1) * k)``
cube   ``(i, j, k)``  ->  ``i + nx * (j + ny * k)``
tet                   ->  ``6 * cube + local`` with ``local`` in ``0..5``
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError

# Local tet ``l`` follows the monotone path 0 -> e_p0 -> e_p0+e_p1 -> (1,1,1)
# for the l-th permutation p.  It holds the points with xi_p0 >= xi_p1 >= xi_p2.
KUHN_PERMUTATIONS = tuple(itertools.permutations(range(3)))


def _perm_parity(p):
    inversions = sum(1 for a in range(3) for b in range(a + 1, 3) if p[a] > p[b])
    return inversions % 2


def _build_reference():
    offsets = np.zeros((6, 4, 3), dtype=np.int64)
    # path position -> stored vertex slot (odd permutations swap slots 1 and 2
    # so that every tet is positively oriented)
    slot_of_path = np.zeros((6, 4), dtype=np.int64)
    for l, p in enumerate(KUHN_PERMUTATIONS):
        path = [np.zeros(3, dtype=np.int64)]
        for axis in p:
            nxt = path[-1].copy()
            nxt[axis] = 1
            path.append(nxt)
        order = [0, 1, 2, 3] if _perm_parity(p) == 0 else [0, 2, 1, 3]
        for slot, pos in enumerate(order):
            offsets[l, slot] = path[pos]
            slot_of_path[l, pos] = slot
    grads = np.zeros((6, 4, 3))
    for l in range(6):
        v = offsets[l].astype(float)
        jac = (v[1:] - v[0]).T  # columns are edge vectors
        inv = np.linalg.inv(jac)
        grads[l, 1:] = inv
        grads[l, 0] = -inv.sum(axis=0)
        assert np.linalg.det(jac) > 0
    return offsets, slot_of_path, np.round(grads)


_REF_OFFSETS, _SLOT_OF_PATH, _REF_GRADS = _build_reference()


@dataclass(frozen=True)
class ElementGeometry:
    tet: int
    vertices: np.ndarray  # (4,) vertex ids
    coords: np.ndarray  # (4, 3)
    gradients: np.ndarray  # (4, 3) gradients of the P1 nodal basis
    volume: float


@dataclass(frozen=True)
class BackgroundMesh:
    box_min: np.ndarray
    box_max: np.ndarray
    h: float
    shape: tuple  # cubes per axis (nx, ny, nz)

    @property
    def cells_per_axis(self):
        return self.shape

    @property
    def n_cubes(self):
        nx, ny, nz = self.shape
        return nx * ny * nz

    @property
    def n_tets(self):
        return 6 * self.n_cubes

    @property
    def n_vertices(self):
        nx, ny, nz = self.shape
        return (nx + 1) * (ny + 1) * (nz + 1)

    @property
    def tet_volume(self):
        return self.h**3 / 6.0

    # -- vertices ---------------------------------------------------------
    def vertex_ijk(self, vids):
        vids = np.asarray(vids, dtype=np.int64)
        mx, my = self.shape[0] + 1, self.shape[1] + 1
        return np.stack([vids % mx, (vids // mx) % my, vids // (mx * my)], axis=-1)

    def vertex_coords(self, vids=None):
        """Coordinates ``box_min + ijk * h`` (bit-reproducible)."""
        if vids is None:
            vids = np.arange(self.n_vertices)
        return self.box_min + self.vertex_ijk(vids) * self.h

    def vertex_id(self, ijk):
        ijk = np.asarray(ijk, dtype=np.int64)
        mx, my = self.shape[0] + 1, self.shape[1] + 1
        return ijk[..., 0] + mx * (ijk[..., 1] + my * ijk[..., 2])

    def cube_id(self, ijk):
        ijk = np.asarray(ijk, dtype=np.int64)
        nx, ny = self.shape[0], self.shape[1]
        return ijk[..., 0] + nx * (ijk[..., 1] + ny * ijk[..., 2])

    # -- tets -------------------------------------------------------------
    def _check_tets(self, tets):
        tets = np.asarray(tets, dtype=np.int64)
        if tets.size and (tets.min() < 0 or tets.max() >= self.n_tets):
            raise IndexError("tet id out of range")
        return tets

    def cube_ijk(self, cubes):
        cubes = np.asarray(cubes, dtype=np.int64)
        nx, ny = self.shape[0], self.shape[1]
        return np.stack([cubes % nx, (cubes // nx) % ny, cubes // (nx * ny)], axis=-1)

    def tet_vertices(self, tets):
        """Vertex ids, shape ``(..., 4)``, in positively oriented order."""
        tets = self._check_tets(tets)
        base = self.cube_ijk(tets // 6)
        return self.vertex_id(base[..., None, :] + _REF_OFFSETS[tets % 6])

    def tet_gradients(self, tets):
        """Constant P1 basis gradients, shape ``(..., 4, 3)``."""
        tets = self._check_tets(tets)
        return _REF_GRADS[tets % 6] / self.h

    def cube_tets(self, cubes):
        cubes = np.asarray(cubes, dtype=np.int64)
        return (6 * cubes[:, None] + np.arange(6)).ravel()

    def element_geometry(self, tet):
        tet = int(tet)
        if not 0 <= tet < self.n_tets:
            raise IndexError(f"tet id {tet} out of range [0, {self.n_tets})")
        verts = self.tet_vertices(tet)
        return ElementGeometry(
            tet=tet,
            vertices=verts,
            coords=self.vertex_coords(verts),
            gradients=self.tet_gradients(tet),
            volume=self.tet_volume,
        )

    def cube_corner_values(self, nodal):
        """Min and max of nodal values over the 8 corners of every cube."""
        nx, ny, nz = self.shape
        g = np.asarray(nodal).reshape(nz + 1, ny + 1, nx + 1)  # indexed [k, j, i]
        lo = g[:-1, :-1, :-1].copy()
        hi = lo.copy()
        for dk, dj, di in itertools.product((0, 1), repeat=3):
            c = g[dk : dk + nz, dj : dj + ny, di : di + nx]
            np.minimum(lo, c, out=lo)
            np.maximum(hi, c, out=hi)
        return lo.ravel(), hi.ravel()

    # -- point location ---------------------------------------------------
    def locate_points(self, x, tol=1e-12):
        """Containing tet and barycentric coordinates for an array of points.

        Points on shared faces, edges or vertices resolve to the lowest tet id
        among all tets containing them.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        width = self.box_max - self.box_min
        slack = 1e-12 * width
        if np.any(x < self.box_min - slack) or np.any(x > self.box_max + slack):
            raise DomainError("point outside the mesh box")
        xi = (x - self.box_min) / self.h
        top = np.asarray(self.shape) - 1
        ijk = np.clip(np.floor(xi).astype(np.int64), 0, top)
        loc = np.clip(xi - ijk, 0.0, 1.0)
        tets, bary = self._kuhn_locate(ijk, loc)

        srt = np.sort(loc, axis=1)
        at_face = ((loc <= tol) & (ijk > 0)) | ((loc >= 1 - tol) & (ijk < top))
        tie = at_face.any(axis=1) | (np.diff(srt, axis=1) <= tol).any(axis=1)
        if tie.any():
            t2, b2 = self._resolve_ties(x[tie], ijk[tie], tol)
            tets[tie] = t2
            bary[tie] = b2
        return tets, bary

    def _kuhn_locate(self, ijk, loc):
        order = np.argsort(-loc, axis=1, kind="stable")
        # permutation -> local tet index
        code = order[:, 0] * 9 + order[:, 1] * 3 + order[:, 2]
        lut = np.full(27, -1, dtype=np.int64)
        for l, p in enumerate(KUHN_PERMUTATIONS):
            lut[p[0] * 9 + p[1] * 3 + p[2]] = l
        local = lut[code]
        s = np.take_along_axis(loc, order, axis=1)
        path_bary = np.stack(
            [1.0 - s[:, 0], s[:, 0] - s[:, 1], s[:, 1] - s[:, 2], s[:, 2]], axis=1
        )
        bary = np.empty_like(path_bary)
        slots = _SLOT_OF_PATH[local]
        np.put_along_axis(bary, slots, path_bary, axis=1)
        return 6 * self.cube_id(ijk) + local, bary

    def _neighbor_barycentrics(self, x, ijk):
        """Barycentrics of ``x`` in all tets of the 27 cubes around ``ijk``."""
        shifts = np.array(list(itertools.product((-1, 0, 1), repeat=3)))
        cand_ijk = ijk[:, None, :] + shifts[None]  # (m, 27, 3)
        top = np.asarray(self.shape) - 1
        valid = np.all((cand_ijk >= 0) & (cand_ijk <= top), axis=2)
        cubes = self.cube_id(np.clip(cand_ijk, 0, top))
        tets = (6 * cubes[..., None] + np.arange(6)).reshape(len(x), -1)
        ok = np.repeat(valid, 6, axis=1)
        verts = self.vertex_coords(self.tet_vertices(tets))  # (m, 162, 4, 3)
        grads = self.tet_gradients(tets)
        centroid = verts.mean(axis=2)
        bary = 0.25 + np.einsum("mcij,mcj->mci", grads, x[:, None, :] - centroid)
        return tets, bary, ok

    def _pick_lowest(self, tets, bary, ok):
        ids = np.where(ok, tets, np.iinfo(np.int64).max)
        pick = np.argmin(ids, axis=1)
        rows = np.arange(len(tets))
        b = np.clip(bary[rows, pick], 0.0, 1.0)
        b /= b.sum(axis=1, keepdims=True)
        return tets[rows, pick], b, ok[rows, pick]

    def _resolve_ties(self, x, ijk, tol):
        tets, bary, ok = self._neighbor_barycentrics(x, ijk)
        ok &= bary.min(axis=2) >= -tol
        t, b, _ = self._pick_lowest(tets, bary, ok)
        return t, b

    def locate_points_in(self, x, allowed, tol=1e-12):
        """Like :meth:`locate_points` but only among the sorted tet ids ``allowed``.

        Returns ``(tets, bary, found)``; ``tets`` is -1 where no allowed tet
        contains the point.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        allowed = np.asarray(allowed, dtype=np.int64)
        tets, bary = self.locate_points(x, tol)
        found = _isin_sorted(tets, allowed)
        miss = np.nonzero(~found)[0]
        if len(miss):
            xi = (x[miss] - self.box_min) / self.h
            ijk = np.clip(np.floor(xi).astype(np.int64), 0, np.asarray(self.shape) - 1)
            ct, cb, ok = self._neighbor_barycentrics(x[miss], ijk)
            ok &= cb.min(axis=2) >= -tol
            ok &= _isin_sorted(ct, allowed)
            t2, b2, hit = self._pick_lowest(ct, cb, ok)
            tets[miss] = np.where(hit, t2, -1)
            bary[miss] = b2
            found[miss] = hit
        return tets, bary, found

    def locate_point(self, x):
        """Scalar convenience wrapper around :meth:`locate_points`."""
        x = np.asarray(x, dtype=float)
        if x.shape != (3,):
            raise ValueError("expected a single 3D point")
        tets, bary = self.locate_points(x[None])
        return int(tets[0]), bary[0]


def _isin_sorted(values, sorted_ids):
    if len(sorted_ids) == 0:
        return np.zeros(np.shape(values), dtype=bool)
    pos = np.clip(np.searchsorted(sorted_ids, values), 0, len(sorted_ids) - 1)
    return sorted_ids[pos] == values


def build_mesh(box_min, box_max, h):
    """Uniform Kuhn mesh of the box with cube side ``h``."""
    box_min = np.asarray(box_min, dtype=float)
    box_max = np.asarray(box_max, dtype=float)
    if box_min.shape != (3,) or box_max.shape != (3,):
        raise ConfigurationError("box corners must be 3D points")
    h = float(h)
    if h <= 0:
        raise ConfigurationError("h must be positive")
    width = box_max - box_min
    if np.any(width <= 0):
        raise ConfigurationError("box widths must be positive")
    counts = width / h
    n = np.rint(counts)
    if np.any(np.abs(counts - n) > 1e-12 * counts):
        raise ConfigurationError(f"box width {width} is not an integer multiple of h={h}")
    return BackgroundMesh(box_min=box_min, box_max=box_max, h=h, shape=tuple(int(c) for c in n))
