"""Finite element state on one time level."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BandCoverageError
from .geometry import ActiveRegion, NodalLevelSet


@dataclass(frozen=True)
class FEState:
    t: float
    region: ActiveRegion
    coeffs: np.ndarray  # one value per active dof
    levelset: NodalLevelSet

    def __post_init__(self):
        if len(self.coeffs) != self.region.n_dofs:
            raise ValueError(
                f"coefficient vector has length {len(self.coeffs)}, expected {self.region.n_dofs}"
            )

    def nodal(self, mesh, fill=np.nan):
        """Coefficients scattered to all mesh vertices."""
        out = np.full(mesh.n_vertices, fill)
        out[self.region.dofs] = self.coeffs
        return out


def eval_fe_on_points(state, mesh, points):
    """Values of the P1 function ``state`` at ``points``.

    Every point must lie in a (closed) tet of the state's band.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    tets, bary, found = mesh.locate_points_in(points, state.region.band)
    if not found.all():
        i = int(np.argmin(found))
        tet, _ = mesh.locate_point(points[i])
        raise BandCoverageError(
            f"point {points[i].tolist()} lies in tet {tet}, outside the band at t={state.t}; "
            "increase c_delta",
            tet=tet,
        )
    dofs = state.region.dof_of_vertex[mesh.tet_vertices(tets)]
    return np.einsum("pk,pk->p", bary, state.coeffs[dofs])


def interpolate_to_state(mesh, region, levelset, fn, t):
    """Nodal interpolant of ``fn(x)`` on the active dofs."""
    coeffs = np.asarray(fn(mesh.vertex_coords(region.dofs)), dtype=float)
    return FEState(t=float(t), region=region, coeffs=coeffs, levelset=levelset)
