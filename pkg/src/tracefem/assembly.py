"""Sparse assembly of the per-step TraceFEM system.

The matrix is split as ``A = c0 M + D + nu L + rho S + C`` with

* ``M``  surface mass on Gamma_h,
* ``D``  mass weighted by ``sigma = div_{Gamma_h}(w^e - w_T^e / 2)``,
* ``L``  surface stiffness with tangential gradients ``P_h grad``,
* ``S``  normal-gradient volume term over all band tets,
* ``C``  skew convection ``(1/2)[(w_T^e . grad_G u) v - (w_T^e . grad_G v) u]``,

and ``c0 = 1/dt`` (backward Euler) or ``3/(2 dt)`` (BDF2).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError
from .geometry import closest_point, tet_normals
from .problem import divergence_coefficient, lifted_fields, resolve_sigma_mode, surface_quadrature_points
from .state import eval_fe_on_points

SCHEMES = ("be", "bdf2")


@dataclass(frozen=True)
class StabParams:
    rho: float
    policy: str = "const"
    delta: float = 0.0
    scheme: str = "be"

    def __post_init__(self):
        if not self.rho > 0:
            raise ConfigurationError("stabilization parameter must be positive")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")


@dataclass(frozen=True)
class SystemParts:
    M: sp.csr_matrix
    D: sp.csr_matrix
    L: sp.csr_matrix
    S: sp.csr_matrix
    C: sp.csr_matrix
    sigma_max: float = 0.0  # max |sigma| over quadrature points


@dataclass(frozen=True)
class LinearSystem:
    A: sp.csr_matrix
    b: np.ndarray
    region: object
    parts: Optional[SystemParts] = field(default=None, repr=False)
    sigma_mode: str = "fd"

    @property
    def n(self):
        return self.A.shape[0]


def leading_coefficient(scheme, dt):
    return 1.0 / dt if scheme == "be" else 1.5 / dt


def _csr(rows, cols, vals, n, symmetric=False):
    m = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()
    m.sum_duplicates()
    if symmetric:
        # duplicate summation order differs between (i, j) and (j, i); mirroring
        # the upper triangle makes the result bit-symmetric
        m = (sp.triu(m, format="csr") + sp.triu(m, k=1, format="csr").T).tocsr()
    m.sort_indices()
    return m


@dataclass(frozen=True)
class SurfaceQuadrature:
    """Surface quadrature points with their P1 basis data."""

    points: np.ndarray  # (Q, 3)
    weights: np.ndarray  # (Q,)
    tri: np.ndarray  # owning triangle per point
    dofs: np.ndarray  # (Q, 4) dofs of the owning tet
    phi: np.ndarray  # (Q, 4) basis values
    grads: np.ndarray  # (Q, 4, 3) basis gradients
    normal: np.ndarray  # (Q, 3) n_h


def surface_quadrature(mesh, surface, region, degree=4):
    pts, wts, tri = surface_quadrature_points(surface, degree)
    tets = surface.tri_tet[tri]
    verts = mesh.tet_vertices(tets)
    grads = mesh.tet_gradients(tets)
    centroid = mesh.vertex_coords(verts).mean(axis=1)
    phi = 0.25 + np.einsum("qij,qj->qi", grads, pts - centroid)
    dofs = region.dof_of_vertex[verts]
    if np.any(dofs < 0):
        raise RuntimeError("cut tet outside the active region")
    return SurfaceQuadrature(pts, wts, tri, dofs, phi, grads, surface.tri_normal[tri])


def assemble_parts(mesh, surface, region, problem, t, ls, quad_degree=4, sigma_mode="auto", quad=None):
    """The five matrices of the scheme, unscaled (``rho``, ``nu``, ``c0`` excluded)."""
    n = region.n_dofs
    q = quad if quad is not None else surface_quadrature(mesh, surface, region, quad_degree)
    rows = np.repeat(q.dofs[:, :, None], 4, axis=2)
    cols = np.repeat(q.dofs[:, None, :], 4, axis=1)

    mass = q.weights[:, None, None] * q.phi[:, :, None] * q.phi[:, None, :]
    M = _csr(rows, cols, mass, n, symmetric=True)

    sigma = divergence_coefficient(problem, q.points, t, q.normal, mesh.h, sigma_mode)
    D = _csr(rows, cols, sigma[:, None, None] * mass, n, symmetric=True)

    # tangential gradients P_h grad phi_i
    ng = np.einsum("qd,qid->qi", q.normal, q.grads)
    tg = q.grads - ng[:, :, None] * q.normal[:, None, :]
    stiff = q.weights[:, None, None] * np.einsum("qid,qjd->qij", tg, tg)
    L = _csr(rows, cols, stiff, n, symmetric=True)

    lf = lifted_fields(problem, q.points, t)
    conv = np.einsum("qd,qjd->qj", lf.wT_e, tg)  # w_T^e . grad_G phi_j
    K = _csr(rows, cols, q.weights[:, None, None] * q.phi[:, :, None] * conv[:, None, :], n)
    C = (0.5 * (K - K.T)).tocsr()
    C.sort_indices()

    S = assemble_stabilization(mesh, region, ls)
    return SystemParts(M=M, D=D, L=L, S=S, C=C, sigma_max=float(np.abs(sigma).max(initial=0.0)))


def assemble_stabilization(mesh, region, ls, volume_degree=1):
    """``int_band (n_h . grad u)(n_h . grad v) dx`` over all band tets.

    The integrand is constant per tet, so the 1-point rule is exact;
    ``volume_degree > 1`` uses a tetrahedral rule instead (for verification).
    """
    band = region.band
    n_h = tet_normals(mesh, ls, band)
    n_h = np.nan_to_num(n_h)  # flat phi_h: no normal direction, no contribution
    g = np.einsum("td,tid->ti", n_h, mesh.tet_gradients(band))
    local = np.einsum("ti,tj->tij", g, g)
    if volume_degree <= 1:
        weight = mesh.tet_volume
    else:
        from .quadrature import TETRAHEDRON, reference_quadrature

        rule = reference_quadrature(TETRAHEDRON, volume_degree)
        weight = 6.0 * mesh.tet_volume * rule.weights.sum()
    dofs = region.dof_of_vertex[mesh.tet_vertices(band)]
    rows = np.repeat(dofs[:, :, None], 4, axis=2)
    cols = np.repeat(dofs[:, None, :], 4, axis=1)
    return _csr(rows, cols, weight * local, region.n_dofs, symmetric=True)


def assemble_rhs(mesh, quad, region, problem, t, dt, prev, scheme="be"):
    """Right-hand side from the history states and the lifted source."""
    if scheme == "be":
        hist = eval_fe_on_points(prev[-1], mesh, quad.points) / dt
    else:
        if len(prev) < 2:
            raise ValueError("BDF2 needs two history states")
        u1 = eval_fe_on_points(prev[-1], mesh, quad.points)
        u2 = eval_fe_on_points(prev[-2], mesh, quad.points)
        hist = (4.0 * u1 - u2) / (2.0 * dt)
    p = closest_point(problem, quad.points, t)
    load = hist + problem.f(p, t)
    vals = (quad.weights * load)[:, None] * quad.phi
    return np.bincount(quad.dofs.ravel(), weights=vals.ravel(), minlength=region.n_dofs)


def combine(parts, c0, nu, rho):
    A = c0 * parts.M + parts.D + nu * parts.L + rho * parts.S + parts.C
    A = A.tocsr()
    A.sort_indices()
    return A


def assemble_system(mesh, surface, region, problem, prev, params, dt, t, ls,
                    quad_degree=4, sigma_mode="auto", keep_parts=True):
    """Matrix and right-hand side of one time step.

    ``prev`` is the list of history states, most recent last.
    """
    mode = resolve_sigma_mode(problem, sigma_mode)
    quad = surface_quadrature(mesh, surface, region, quad_degree)
    parts = assemble_parts(mesh, surface, region, problem, t, ls, quad_degree, mode, quad=quad)
    c0 = leading_coefficient(params.scheme, dt)
    A = combine(parts, c0, problem.nu, params.rho)
    b = assemble_rhs(mesh, quad, region, problem, t, dt, prev, params.scheme)
    return LinearSystem(A=A, b=b, region=region, parts=parts if keep_parts else None, sigma_mode=mode)
