"""Quadrature on the reference triangle and tetrahedron.

Rules are conical (collapsed) Gauss--Jacobi products, which are exact for
every polynomial of the requested total degree and have positive weights.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .errors import ConfigurationError

TRIANGLE = "triangle"
TETRAHEDRON = "tetrahedron"

_MIN_DEGREE = {TRIANGLE: 4, TETRAHEDRON: 2}
_REF_MEASURE = {TRIANGLE: 0.5, TETRAHEDRON: 1.0 / 6.0}


@dataclass(frozen=True)
class QuadRule:
    kind: str
    degree: int
    points: np.ndarray  # barycentric coordinates, (npts, dim+1)
    weights: np.ndarray  # sum to the reference measure

    @property
    def cartesian(self):
        """Points in reference Cartesian coordinates (drop the first barycentric)."""
        return self.points[:, 1:]


def _gauss_jacobi01(n, alpha):
    """Gauss--Jacobi nodes on [0, 1] for the weight (1 - x)**alpha."""
    s, w = roots_jacobi(n, alpha, 0.0)
    return (1.0 + s) / 2.0, w / 2.0 ** (alpha + 1)


@lru_cache(maxsize=None)
def reference_quadrature(kind, degree):
    if kind not in _MIN_DEGREE:
        raise ConfigurationError(f"unknown element kind {kind!r}")
    degree = int(degree)
    if degree < _MIN_DEGREE[kind] or degree > 30:
        raise ConfigurationError(f"unsupported {kind} quadrature degree {degree}")
    n = (degree + 2) // 2
    if kind == TRIANGLE:
        a, wa = _gauss_jacobi01(n, 1.0)
        b, wb = _gauss_jacobi01(n, 0.0)
        A, B = np.meshgrid(a, b, indexing="ij")
        x = A.ravel()
        y = ((1.0 - A) * B).ravel()
        w = np.outer(wa, wb).ravel()
        pts = np.column_stack([1.0 - x - y, x, y])
    else:
        a, wa = _gauss_jacobi01(n, 2.0)
        b, wb = _gauss_jacobi01(n, 1.0)
        c, wc = _gauss_jacobi01(n, 0.0)
        A, B, C = np.meshgrid(a, b, c, indexing="ij")
        x = A.ravel()
        y = ((1.0 - A) * B).ravel()
        z = ((1.0 - A) * (1.0 - B) * C).ravel()
        w = np.einsum("i,j,k->ijk", wa, wb, wc).ravel()
        pts = np.column_stack([1.0 - x - y - z, x, y, z])
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadRule(kind=kind, degree=degree, points=pts, weights=w)


def reference_measure(kind):
    return _REF_MEASURE[kind]
