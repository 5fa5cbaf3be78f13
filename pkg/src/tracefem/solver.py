"""Linear solver and condition number diagnostics.

``gmres_gs_solve`` is restarted GMRES (modified Gram--Schmidt Arnoldi with
Givens rotations), left preconditioned by one forward Gauss--Seidel sweep,
i.e. by the lower triangle of ``A`` in ascending dof order.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import EstimatorError, PreconditionerError, SolverWarning

DENSE_LIMIT = 2000


@dataclass(frozen=True)
class SolverStats:
    iterations: int
    residual: float  # final relative preconditioned residual
    converged: bool
    restarts: int = 0


class GaussSeidelPreconditioner:
    """Applies ``tril(A)^{-1}``, one forward Gauss--Seidel sweep from zero."""

    def __init__(self, A):
        A = sp.csr_matrix(A)
        diag = A.diagonal()
        zero = np.nonzero(diag == 0.0)[0]
        if len(zero):
            raise PreconditionerError(f"zero diagonal entry in row {int(zero[0])}")
        lower = sp.tril(A, format="csc")
        # natural ordering and no pivoting keep this a plain triangular solve
        self._lu = spla.splu(lower, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                             options={"SymmetricMode": True})

    def __call__(self, v):
        return self._lu.solve(np.asarray(v, dtype=float))


def gmres_gs_solve(A, b, x0=None, tol=1e-15, restart=200, max_iter=2000):
    """Solve ``A x = b``; returns ``(x, SolverStats)``.

    The relative residual is measured in the preconditioned norm,
    ``|M^{-1}(b - A x)| / |M^{-1} b|``.  A restart cycle that fails to halve
    the residual counts as floating point stagnation: the iteration stops
    with ``converged=False`` and a :class:`SolverWarning`.
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    b = np.asarray(b, dtype=float)
    if b.shape != (n,):
        raise ValueError(f"right-hand side has shape {b.shape}, expected ({n},)")
    prec = GaussSeidelPreconditioner(A)
    # residuals are formed in extended precision so that the true residual can
    # follow the Arnoldi estimate down to the requested 1e-15 level
    A_ext = A.astype(np.longdouble)
    b_ext = b.astype(np.longdouble)
    x = np.zeros(n, dtype=np.longdouble) if x0 is None else np.array(x0, dtype=np.longdouble)
    pb = prec(b)
    bnorm = np.linalg.norm(pb)
    if bnorm == 0.0:
        return np.zeros(n), SolverStats(0, 0.0, True)

    def true_residual(x):
        return prec((b_ext - A_ext @ x).astype(float))

    its = restarts = 0
    prev_rel = np.inf
    while True:
        r = true_residual(x)
        beta = np.linalg.norm(r)
        rel = beta / bnorm
        if rel <= tol:
            return x.astype(float), SolverStats(its, rel, True, restarts)
        if its >= max_iter or rel > 0.5 * prev_rel:
            break
        prev_rel = rel
        m = min(restart, max_iter - its)
        V = np.zeros((m + 1, n))
        H = np.zeros((m + 1, m))
        cs, sn = np.zeros(m), np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        for k in range(m):
            w = prec(A @ V[k])
            for j in range(k + 1):
                H[j, k] = w @ V[j]
                w -= H[j, k] * V[j]
            H[k + 1, k] = np.linalg.norm(w)
            breakdown = H[k + 1, k] == 0.0
            if not breakdown:
                V[k + 1] = w / H[k + 1, k]
            for j in range(k):
                hj = H[j, k]
                H[j, k] = cs[j] * hj + sn[j] * H[j + 1, k]
                H[j + 1, k] = -sn[j] * hj + cs[j] * H[j + 1, k]
            denom = np.hypot(H[k, k], H[k + 1, k])
            cs[k], sn[k] = H[k, k] / denom, H[k + 1, k] / denom
            H[k, k] = denom
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            its += 1
            if abs(g[k + 1]) / bnorm <= tol or breakdown:
                break
        k += 1
        y = np.linalg.solve(np.triu(H[:k, :k]), g[:k]) if k else np.zeros(0)
        x = x + V[:k].T @ y
        restarts += 1

    warnings.warn(
        f"GMRES stopped at relative residual {rel:.3e} > tol {tol:.1e} after {its} iterations",
        SolverWarning,
        stacklevel=2,
    )
    return x.astype(float), SolverStats(its, rel, False, restarts)


# -- condition numbers --------------------------------------------------------

@dataclass(frozen=True)
class ConditionReport:
    kappa: float
    lam_max_B: float
    lam_min_B: float
    rho_C: float
    method: str
    n: int = 0

    @property
    def bound(self):
        return (self.lam_max_B + self.rho_C) / self.lam_min_B

    def as_dict(self):
        return {
            "kappa": self.kappa,
            "lam_max_B": self.lam_max_B,
            "lam_min_B": self.lam_min_B,
            "rho_C": self.rho_C,
            "bound": self.bound,
            "method": self.method,
            "n": self.n,
        }


def _dense_report(A):
    Ad = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    s = np.linalg.svd(Ad, compute_uv=False)
    B = 0.5 * (Ad + Ad.T)
    C = 0.5 * (Ad - Ad.T)
    lam = np.linalg.eigvalsh(B)
    rho_c = np.linalg.norm(C, 2) if C.any() else 0.0
    return ConditionReport(
        kappa=float(s[0] / s[-1]),
        lam_max_B=float(lam[-1]),
        lam_min_B=float(lam[0]),
        rho_C=float(rho_c),
        method="dense",
        n=Ad.shape[0],
    )


def _top_eig(op, n, tol, what, partial):
    try:
        val = spla.eigsh(op, k=1, which="LA", tol=tol, maxiter=max(1000, 20 * n),
                         return_eigenvectors=False, v0=np.ones(n))
    except spla.ArpackNoConvergence as exc:
        raise EstimatorError(f"{what} did not converge", partial=partial) from exc
    return float(val[0])


def _iterative_report(A, tol):
    A = sp.csc_matrix(A)
    n = A.shape[0]
    B = (0.5 * (A + A.T)).tocsc()
    C = (0.5 * (A - A.T)).tocsc()
    partial = {}
    partial["lam_max_B"] = _top_eig(B, n, tol, "largest eigenvalue of B", partial)
    luB = spla.splu(B)
    inv_b = spla.LinearOperator((n, n), matvec=luB.solve, dtype=float)
    partial["lam_min_B"] = 1.0 / _top_eig(inv_b, n, tol, "smallest eigenvalue of B", partial)
    if C.nnz:
        ctc = spla.LinearOperator((n, n), matvec=lambda v: C.T @ (C @ v), dtype=float)
        partial["rho_C"] = np.sqrt(max(_top_eig(ctc, n, tol, "norm of C", partial), 0.0))
    else:
        partial["rho_C"] = 0.0
    ata = spla.LinearOperator((n, n), matvec=lambda v: A.T @ (A @ v), dtype=float)
    smax2 = _top_eig(ata, n, tol, "largest singular value", partial)
    luA = spla.splu(A)
    inv_ata = spla.LinearOperator(
        (n, n), matvec=lambda v: luA.solve(luA.solve(v, trans="T")), dtype=float
    )
    smin2 = 1.0 / _top_eig(inv_ata, n, tol, "smallest singular value", partial)
    return ConditionReport(
        kappa=float(np.sqrt(smax2 / smin2)),
        lam_max_B=partial["lam_max_B"],
        lam_min_B=partial["lam_min_B"],
        rho_C=partial["rho_C"],
        method="iterative",
        n=n,
    )


def estimate_condition(A, mode="auto", tol=1e-10):
    """Spectral condition number of ``A`` and the symmetric/skew bound data.

    ``mode`` is ``"dense"``, ``"iterative"`` or ``"auto"`` (dense up to
    ``DENSE_LIMIT`` unknowns).
    """
    n = A.shape[0]
    if mode == "auto":
        mode = "dense" if n <= DENSE_LIMIT else "iterative"
    if mode == "dense" or n < 3:
        return _dense_report(A)
    if mode == "iterative":
        return _iterative_report(A, tol)
    raise ValueError(f"unknown condition estimation mode {mode!r}")
