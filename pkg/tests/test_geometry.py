import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tracefem import build_mesh
from tracefem.errors import DegenerateGeometryError, GeometryError, ProjectionError
from tracefem.geometry import (
    NodalLevelSet,
    closest_point,
    extract_surface,
    interpolate_levelset,
    select_active_region,
)
from tracefem.problem import ProblemSpec, builtin_experiment, experiment_1

BOX = ((-2.0, -2.0, -2.0), (2.0, 2.0, 2.0))


def _ls(mesh, fn, t=0.0):
    return NodalLevelSet(t, fn(mesh.vertex_coords()))


def _sphere(x):
    return np.linalg.norm(x, axis=1) - 1.0


def _plain_problem(phi, grad_phi):
    return ProblemSpec(name="plain", nu=1.0, phi=phi, grad_phi=grad_phi,
                       w=lambda x, t: np.zeros_like(x), u0=lambda x: np.ones(len(x)),
                       wN_bound=lambda a, b: 0.0, w_sup=0.0, T=1.0)


def test_interpolate_levelset_values(mesh2):
    e1 = builtin_experiment(1)
    ls = interpolate_levelset(e1, 0.0, mesh2)
    assert ls.values[mesh2.vertex_id([6, 4, 4])] == 0.0  # vertex (1,0,0)
    e3 = builtin_experiment(3)
    assert interpolate_levelset(e3, 0.0, mesh2).values[mesh2.vertex_id([4, 4, 4])] == -1.5


def test_single_tet_one_triangle():
    m = build_mesh((0, 0, 0), (1, 1, 1), 1.0)
    vals = np.ones(m.n_vertices)
    tet = 0
    verts = m.tet_vertices(tet)
    vals[verts[0]] = -1.0
    # the other corners of the cube stay positive; only tets containing verts[0] are cut
    surf = extract_surface(m, NodalLevelSet(0.0, vals))
    mine = surf.tri_tet == tet
    assert mine.sum() == 1
    tri = surf.tri_xyz[mine][0]
    x = m.vertex_coords(verts)
    mids = {tuple(np.round((x[0] + x[k]) / 2, 12)) for k in (1, 2, 3)}
    assert {tuple(np.round(p, 12)) for p in tri} == mids


def test_two_two_split_gives_planar_quad():
    m = build_mesh((0, 0, 0), (1, 1, 1), 1.0)
    verts = m.tet_vertices(0)
    vals = np.ones(m.n_vertices)
    vals[verts[:2]] = -1.0
    surf = extract_surface(m, NodalLevelSet(0.0, vals))
    mine = surf.tri_tet == 0
    assert mine.sum() == 2
    tris = surf.tri_xyz[mine]
    n = surf.tri_normal[mine][0]
    # all four corners lie in one plane orthogonal to n_h
    pts = tris.reshape(-1, 3)
    assert np.ptp(pts @ n) < 1e-12
    # both diagonals give the same area
    quad = np.unique(np.round(pts, 12), axis=0)
    assert len(quad) == 4
    c = quad.mean(axis=0)
    e1 = np.cross(n, quad[0] - c)
    ang = np.arctan2((quad - c) @ e1, (quad - c) @ (quad[0] - c))
    q = quad[np.argsort(ang)]

    def tri_area(a, b, c):
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a))

    d1 = tri_area(q[0], q[1], q[2]) + tri_area(q[0], q[2], q[3])
    d2 = tri_area(q[1], q[2], q[3]) + tri_area(q[1], q[3], q[0])
    assert d1 == pytest.approx(d2, rel=1e-12)
    assert surf.tri_area[mine].sum() == pytest.approx(d1, rel=1e-12)


def test_all_zero_tet_is_degenerate():
    m = build_mesh((0, 0, 0), (1, 1, 1), 1.0)
    with pytest.raises(DegenerateGeometryError):
        extract_surface(m, NodalLevelSet(0.0, np.zeros(m.n_vertices)))


def test_surface_invariants(mesh4):
    ls = _ls(mesh4, lambda x: _sphere(x - 0.013))
    surf = extract_surface(mesh4, ls)
    assert np.allclose(np.linalg.norm(surf.tri_normal, axis=1), 1.0, atol=1e-12)
    # triangle corners are zeros of the P1 interpolant
    for tet, tris, n in list(surf.patches())[:200]:
        eg = mesh4.element_geometry(tet)
        phi = ls.values[eg.vertices]
        grad = phi @ eg.gradients
        vals = phi[0] + (tris.reshape(-1, 3) - eg.coords[0]) @ grad
        assert np.all(np.abs(vals) <= 1e-12 * np.abs(ls.values).max())
        # coplanar and orthogonal to n_h
        for tri in tris:
            nt = np.cross(tri[1] - tri[0], tri[2] - tri[0])
            nt /= np.linalg.norm(nt)
            assert abs(abs(nt @ n) - 1) < 1e-10
        # n_h points towards positive phi
        assert grad @ n > 0


def _sphere_defect(h):
    m = build_mesh(*BOX, h)
    return abs(extract_surface(m, _ls(m, _sphere)).area - 4 * np.pi)


def test_sphere_area_within_two_percent():
    assert _sphere_defect(1 / 8) / (4 * np.pi) < 0.02


def test_sphere_area_second_order():
    ratio = _sphere_defect(1 / 8) / _sphere_defect(1 / 16)
    assert 2.5 <= ratio <= 6.0


def test_plane_cross_section(mesh4):
    surf = extract_surface(mesh4, _ls(mesh4, lambda x: x[:, 2] - 0.3))
    assert surf.area == pytest.approx(16.0, rel=1e-10)


def test_negated_levelset_flips_normals(mesh4):
    ls = _ls(mesh4, lambda x: _sphere(x - np.array([0.05, -0.11, 0.07])))
    neg = NodalLevelSet(0.0, -ls.values)
    a, b = extract_surface(mesh4, ls), extract_surface(mesh4, neg)
    assert np.array_equal(a.tri_tet, b.tri_tet)
    assert np.allclose(a.tri_normal, -b.tri_normal, atol=1e-15)
    def key(s):
        tris = [sorted(map(tuple, np.round(t, 13))) for t in s.tri_xyz]
        return sorted(tris)

    assert key(a) == key(b)
    assert np.allclose(np.sort(a.tri_area), np.sort(b.tri_area), rtol=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0, 0.25, exclude_max=True), min_size=3, max_size=3))
def test_shifted_sphere_has_no_tiny_patches(offset):
    m = build_mesh(*BOX, 0.25)
    surf = extract_surface(m, _ls(m, lambda x: _sphere(x - np.array(offset))))
    assert np.all(surf.tri_area >= 1e-14 * m.h**2)
    assert surf.area == pytest.approx(4 * np.pi, rel=0.05)


def test_band_criterion_and_cut(mesh4):
    ls = _ls(mesh4, lambda x: _sphere(x - 0.02))
    surf = extract_surface(mesh4, ls)
    r0 = select_active_region(mesh4, ls, 0.0, surf)
    assert np.array_equal(r0.band, surf.cut_tets)
    assert np.array_equal(r0.cut, surf.cut_tets)
    delta = 0.1
    r = select_active_region(mesh4, ls, delta, surf)
    tets = np.arange(mesh4.n_tets)
    phi = ls.values[mesh4.tet_vertices(tets)]
    expect = tets[(phi.min(axis=1) <= delta) & (phi.max(axis=1) >= -delta)]
    assert np.array_equal(r.band, expect)
    assert np.all(np.isin(r.cut, r.band))
    assert np.array_equal(r.dofs, np.unique(mesh4.tet_vertices(r.band)))
    assert np.array_equal(r.dof_of_vertex[r.dofs], np.arange(r.n_dofs))


def test_band_everything(mesh2):
    ls = _ls(mesh2, _sphere)
    r = select_active_region(mesh2, ls, np.abs(ls.values).max())
    assert len(r.band) == mesh2.n_tets


@settings(max_examples=15, deadline=None)
@given(st.floats(0, 0.5), st.floats(0, 0.5))
def test_band_monotone(d1, d2):
    m = build_mesh(*BOX, 0.5)
    ls = _ls(m, _sphere)
    lo, hi = sorted((d1, d2))
    a, b = select_active_region(m, ls, lo), select_active_region(m, ls, hi)
    assert np.all(np.isin(a.band, b.band))


def test_empty_band(mesh2):
    with pytest.raises(GeometryError):
        select_active_region(mesh2, NodalLevelSet(0.0, np.ones(mesh2.n_vertices)), 0.1)


def test_closest_point_examples():
    e1 = experiment_1()
    assert np.allclose(closest_point(e1, np.array([2.0, 0, 0]), 0.0), [1, 0, 0], atol=1e-14)
    quad = _plain_problem(lambda x, t: np.sum(x * x, axis=1) - 1.0, lambda x, t: 2 * x)
    assert np.allclose(closest_point(quad, np.array([2.0, 0, 0]), 0.0), [1, 0, 0], atol=1e-12)
    on = np.array([0.6, 0.0, 0.8])
    assert np.allclose(closest_point(quad, on, 0.0), on, atol=1e-15)


def test_closest_point_failure():
    # no zero level: phi = |x|^2 + 1
    bad = _plain_problem(lambda x, t: np.sum(x * x, axis=1) + 1.0, lambda x, t: 2 * x)
    with pytest.raises(ProjectionError):
        closest_point(bad, np.array([1.0, 0.0, 0.0]), 0.0)
