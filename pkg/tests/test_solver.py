import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from tracefem.assembly import StabParams, assemble_system
from tracefem.errors import PreconditionerError, SolverWarning
from tracefem.solver import (
    ConditionReport,
    GaussSeidelPreconditioner,
    estimate_condition,
    gmres_gs_solve,
)
from tracefem.state import interpolate_to_state


def test_identity_one_iteration(rng):
    b = rng.normal(size=20)
    x, stats = gmres_gs_solve(sp.identity(20, format="csr"), b)
    assert np.allclose(x, b, rtol=0, atol=1e-15 * np.abs(b).max())
    assert stats.converged and stats.iterations <= 1


def test_diagonal():
    n = 30
    A = sp.diags(np.arange(1.0, n + 1)).tocsr()
    x, stats = gmres_gs_solve(A, A @ np.ones(n))
    assert stats.converged and stats.residual <= 1e-15
    assert np.allclose(x, 1.0, atol=1e-14)


def test_zero_rhs():
    x, stats = gmres_gs_solve(sp.identity(4, format="csr"), np.zeros(4))
    assert not x.any() and stats.converged


def test_zero_diagonal():
    A = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 2.0]]))
    with pytest.raises(PreconditionerError):
        gmres_gs_solve(A, np.ones(2))


def test_shape_errors():
    with pytest.raises(ValueError):
        gmres_gs_solve(sp.identity(3, format="csr"), np.ones(4))


def test_gauss_seidel_is_lower_triangular_solve(rng):
    A = sp.random(40, 40, density=0.2, random_state=1) + 5 * sp.identity(40)
    v = rng.normal(size=40)
    y = GaussSeidelPreconditioner(A.tocsr())(v)
    assert np.allclose(np.tril(A.toarray()) @ y, v, atol=1e-12)


def test_nonsymmetric_convergence(rng):
    n = 200
    A = (sp.random(n, n, density=0.03, random_state=3) - sp.random(n, n, density=0.03, random_state=4)
         + 4 * sp.identity(n)).tocsr()
    xt = rng.normal(size=n)
    x, stats = gmres_gs_solve(A, A @ xt, restart=20)
    assert stats.converged and stats.residual <= 1e-15
    assert np.allclose(x, xt, atol=1e-12)


def test_max_iter_warns():
    n = 100
    A = (sp.diags(np.linspace(1, 1e4, n)) + sp.diags(np.ones(n - 1), 1)).tocsr()
    with pytest.warns(SolverWarning):
        _, stats = gmres_gs_solve(A, np.ones(n), tol=1e-300, max_iter=5, restart=5)
    assert not stats.converged


def test_assembled_step_converges(mesh4, exp1, exp1_geometry):
    ls, surface, region = exp1_geometry
    prev = interpolate_to_state(mesh4, region, ls, exp1.u0, 0.0)
    sysm = assemble_system(mesh4, surface, region, exp1, [prev], StabParams(rho=4.0), 1 / 32, 1 / 32, ls)
    with warnings.catch_warnings():
        warnings.simplefilter("error", SolverWarning)
        x, stats = gmres_gs_solve(sysm.A, sysm.b)
    assert stats.converged and stats.residual <= 1e-15
    # deterministic
    x2, stats2 = gmres_gs_solve(sysm.A, sysm.b)
    assert np.array_equal(x, x2) and stats == stats2


# -- condition numbers -----------------------------------------------------------

def test_condition_examples():
    rep = estimate_condition(sp.identity(5, format="csr"))
    assert rep.kappa == pytest.approx(1.0) and rep.bound == pytest.approx(1.0)
    rep = estimate_condition(sp.diags([1.0, 10.0]).tocsr())
    assert rep.kappa == pytest.approx(10.0)
    assert rep.method == "dense"
    with pytest.raises(ValueError):
        estimate_condition(sp.identity(5, format="csr"), mode="magic")


def _random_matrix(rng, n):
    S = rng.normal(size=(n, n))
    B = S @ S.T / n + np.eye(n)
    C = rng.normal(size=(n, n))
    return sp.csr_matrix(B + 0.5 * (C - C.T))


def test_iterative_matches_dense():
    # estimator self-test: 50 random nonsymmetric matrices with positive definite symmetric part
    rng = np.random.default_rng(2024)
    for _ in range(50):
        A = _random_matrix(rng, int(rng.integers(10, 60)))
        d = estimate_condition(A, mode="dense")
        it = estimate_condition(A, mode="iterative")
        assert it.method == "iterative"
        assert it.kappa == pytest.approx(d.kappa, rel=0.01)
        assert it.lam_max_B == pytest.approx(d.lam_max_B, rel=0.01)
        assert it.lam_min_B == pytest.approx(d.lam_min_B, rel=0.01)
        assert it.rho_C == pytest.approx(d.rho_C, rel=0.01)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 25), st.floats(0.0, 5.0), st.integers(0, 2**31 - 1))
def test_condition_bound_holds(n, skew, seed):
    rng = np.random.default_rng(seed)
    S = rng.normal(size=(n, n))
    C = rng.normal(size=(n, n))
    A = sp.csr_matrix(S @ S.T + 0.1 * np.eye(n) + skew * (C - C.T))
    rep = estimate_condition(A)
    assert rep.kappa <= rep.bound * (1 + 1e-10)


def test_condition_bound_on_step_system(mesh4, exp1, exp1_geometry):
    ls, surface, region = exp1_geometry
    prev = interpolate_to_state(mesh4, region, ls, exp1.u0, 0.0)
    sysm = assemble_system(mesh4, surface, region, exp1, [prev], StabParams(rho=4.0), 1 / 32, 1 / 32, ls)
    rep = estimate_condition(sysm.A)
    assert rep.kappa <= rep.bound * 1.01
    skew = 0.5 * (sysm.A - sysm.A.T)
    assert rep.rho_C == pytest.approx(np.linalg.norm(skew.toarray(), 2), rel=1e-10)


def test_report_dict():
    rep = ConditionReport(kappa=2.0, lam_max_B=3.0, lam_min_B=1.0, rho_C=1.0, method="dense", n=2)
    d = rep.as_dict()
    assert d["bound"] == 4.0 and d["kappa"] == 2.0
