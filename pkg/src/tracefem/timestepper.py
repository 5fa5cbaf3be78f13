"""Time stepping: band construction, assembly, solve and diagnostics per step."""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional

import numpy as np

from . import postproc
from .assembly import StabParams, assemble_system
from .errors import ConfigurationError, ParameterConditionWarning
from .geometry import extract_surface, interpolate_levelset, select_active_region
from .mesh import build_mesh
from .solver import estimate_condition, gmres_gs_solve
from .state import FEState, interpolate_to_state

__all__ = [
    "FEState",
    "RhoPolicy",
    "RunConfig",
    "SolutionHistory",
    "StepDiagnostics",
    "advance",
    "initialize",
    "run",
    "step_width",
]


@dataclass(frozen=True)
class RhoPolicy:
    kind: str = "const"  # "const" or "scaled"
    value: float = 4.0

    @classmethod
    def parse(cls, text):
        text = str(text).strip().lower()
        if text == "scaled":
            return cls("scaled", float("nan"))
        kind, _, val = text.partition(":")
        if kind != "const":
            raise ConfigurationError(f"unknown rho policy {text!r} (use const:<value> or scaled)")
        try:
            value = float(val) if val else 4.0
        except ValueError:
            raise ConfigurationError(f"bad rho value in {text!r}") from None
        if not value > 0:
            raise ConfigurationError("rho must be positive")
        return cls("const", value)

    def __str__(self):
        return "scaled" if self.kind == "scaled" else f"const:{self.value:g}"

    def rho(self, problem, delta, h):
        if self.kind == "const":
            return self.value
        return problem.w_sup + problem.nu / (delta + h)


@dataclass
class RunConfig:
    problem: object  # ProblemSpec
    h: float
    dt: float
    scheme: str = "be"
    rho: RhoPolicy = field(default_factory=RhoPolicy)
    c_delta: float = 2.5
    c_band: float = 0.5  # constant in the warning dt <= c_band / (c_delta |w_N|)
    quad_degree: int = 4
    error_quad_degree: int = 4
    sigma_mode: str = "auto"
    tol: float = 1e-15
    restart: int = 200
    max_iter: int = 2000
    condition: bool = False
    condition_mode: str = "auto"
    bdf2_start: str = "be"  # or "exact" (debugging only)
    keep_states: bool = False
    T: Optional[float] = None  # defaults to problem.T
    mesh: object = None  # reuse a prebuilt background mesh

    def __post_init__(self):
        if isinstance(self.rho, str):
            self.rho = RhoPolicy.parse(self.rho)
        if not self.dt > 0 or not self.h > 0:
            raise ConfigurationError("h and dt must be positive")
        if self.c_delta < 1:
            raise ConfigurationError("c_delta must be at least 1")
        if self.scheme not in ("be", "bdf2"):
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        if self.bdf2_start not in ("be", "exact"):
            raise ConfigurationError(f"unknown BDF2 startup {self.bdf2_start!r}")
        if self.bdf2_start == "exact" and self.problem.u_exact is None:
            raise ConfigurationError("exact BDF2 startup needs an exact solution")
        if self.T is None:
            self.T = self.problem.T

    @property
    def n_steps(self):
        n = self.T / self.dt
        N = int(round(n))
        if N < 1 or abs(n - N) > 1e-9 * max(n, 1.0):
            raise ConfigurationError(f"T={self.T} is not an integer multiple of dt={self.dt}")
        return N

    def time(self, n):
        return n * self.dt

    def provenance(self):
        return {
            "problem": self.problem.name,
            "h": self.h,
            "dt": self.dt,
            "T": self.T,
            "scheme": self.scheme,
            "rho": str(self.rho),
            "c_delta": self.c_delta,
            "c_band": self.c_band,
            "quad_degree": self.quad_degree,
            "error_quad_degree": self.error_quad_degree,
            "sigma_mode": self.sigma_mode,
            "solver": {"tol": self.tol, "restart": self.restart, "max_iter": self.max_iter},
            "bdf2_start": self.bdf2_start if self.scheme == "bdf2" else None,
            "condition": self.condition,
            "eoc_convention": "log2(e_coarse/e_fine)",
            "h1_aggregation": "trapezoid of squared full H1 norm, t0 included",
            "source_evaluation": "f at closest point",
        }


@dataclass
class StepDiagnostics:
    n: int
    t: float
    scheme: str
    delta: float
    rho: float
    band_tets: int
    cut_tets: int
    dofs: int
    area: float
    xi_h: Optional[float]
    sigma_mode: str = ""
    iterations: int = 0
    residual: float = 0.0
    converged: bool = True
    norm_l2: float = 0.0
    err_l2: Optional[float] = None
    err_grad: Optional[float] = None
    condition: Optional[dict] = None
    warnings: List[str] = field(default_factory=list)
    seconds: float = 0.0

    def record(self):
        return asdict(self)


@dataclass
class SolutionHistory:
    config: RunConfig
    mesh: object
    states: List[FEState]
    diagnostics: List[StepDiagnostics]

    @property
    def current(self):
        return self.states[-1]

    @property
    def times(self):
        return np.array([d.t for d in self.diagnostics])

    def push(self, state, diag):
        if state.t <= self.states[-1].t:
            raise ValueError("time levels must increase")
        self.states.append(state)
        self.diagnostics.append(diag)
        if not self.config.keep_states and len(self.states) > 2:
            del self.states[0]


def _width(p, config, n):
    """Band half-width for step ``n`` (``n = 0`` is the initial band)."""
    dt, cd = config.dt, config.c_delta
    t = config.time
    if config.scheme == "bdf2":
        if n == 0:
            return 2 * cd * p.wN_bound(t(0), t(2)) * dt
        return 2 * cd * p.wN_bound(t(max(n - 2, 0)), t(n)) * dt
    if n == 0:
        return cd * p.wN_bound(t(0), t(1)) * dt
    return cd * p.wN_bound(t(n - 1), t(n)) * dt


def step_width(problem, config, n):
    """``delta_n`` for step ``n >= 1``."""
    if n < 1:
        raise ValueError("step index must be >= 1")
    return _width(problem, config, n)


def _warn(diag, message):
    diag.warnings.append(message)
    warnings.warn(message, ParameterConditionWarning, stacklevel=3)


def _measure(mesh, state, surface, config, diag):
    problem = config.problem
    nrm = postproc.surface_norm(mesh, state, surface, config.error_quad_degree)
    diag.norm_l2 = nrm
    if problem.u_exact is not None:
        diag.err_l2, diag.err_grad = postproc.step_errors(
            mesh, state, problem, surface, config.error_quad_degree
        )


def initialize(problem, mesh, config):
    """Nodal interpolant of ``u0`` on the initial band; returns ``(state, diagnostics)``."""
    t0 = config.time(0)
    ls = interpolate_levelset(problem, t0, mesh)
    surface = extract_surface(mesh, ls)
    delta = _width(problem, config, 0)
    region = select_active_region(mesh, ls, delta, surface)
    state = interpolate_to_state(mesh, region, ls, problem.u0, t0)
    diag = StepDiagnostics(
        n=0, t=t0, scheme="init", delta=delta, rho=0.0, band_tets=len(region.band),
        cut_tets=len(region.cut), dofs=region.n_dofs, area=surface.area, xi_h=None,
    )
    _measure(mesh, state, surface, config, diag)
    return state, diag


def _initial_guess(prev, region):
    x0 = np.zeros(region.n_dofs)
    shared = prev.region.dof_of_vertex[region.dofs]
    mask = shared >= 0
    x0[mask] = prev.coeffs[shared[mask]]
    return x0


def advance(history, config, on_system=None):
    """Compute the next time level and append it to ``history``.

    ``on_system(n, system)`` is called with each assembled :class:`LinearSystem`.
    """
    start = time.perf_counter()
    mesh, problem = history.mesh, config.problem
    n = history.diagnostics[-1].n + 1
    t = config.time(n)
    scheme = config.scheme
    if scheme == "bdf2" and n == 1:
        scheme = "be"  # startup step
    if scheme == "bdf2" and len(history.states) < 2:
        raise ValueError("BDF2 needs two history states")
    prev = history.states[-2:] if scheme == "bdf2" else history.states[-1:]

    ls = interpolate_levelset(problem, t, mesh)
    surface = extract_surface(mesh, ls)
    delta = _width(problem, config, n)
    region = select_active_region(mesh, ls, delta, surface)
    rho = config.rho.rho(problem, delta, config.h)
    params = StabParams(rho=rho, policy=config.rho.kind, delta=delta, scheme=scheme)

    if config.scheme == "bdf2" and n == 1 and config.bdf2_start == "exact":
        state = interpolate_to_state(mesh, region, ls, lambda x: problem.u_exact(x, t), t)
        diag = StepDiagnostics(
            n=n, t=t, scheme="exact", delta=delta, rho=rho, band_tets=len(region.band),
            cut_tets=len(region.cut), dofs=region.n_dofs, area=surface.area, xi_h=None,
        )
        _measure(mesh, state, surface, config, diag)
        history.push(state, diag)
        return state

    system = assemble_system(
        mesh, surface, region, problem, prev, params, config.dt, t, ls,
        quad_degree=config.quad_degree, sigma_mode=config.sigma_mode,
    )
    if on_system is not None:
        on_system(n, system)
    xi_h = system.parts.sigma_max
    diag = StepDiagnostics(
        n=n, t=t, scheme=scheme, delta=delta, rho=rho, band_tets=len(region.band),
        cut_tets=len(region.cut), dofs=region.n_dofs, area=surface.area, xi_h=xi_h,
        sigma_mode=system.sigma_mode,
    )
    if xi_h > 0 and config.dt > 1.0 / (4.0 * xi_h):
        _warn(diag, f"step {n}: dt={config.dt:g} exceeds 1/(4 xi_h)={1 / (4 * xi_h):.4g}")
    wn = problem.wN_bound(config.time(max(n - 1, 0)), t)
    if wn > 0 and config.dt > config.c_band / (config.c_delta * wn):
        _warn(diag, f"step {n}: dt={config.dt:g} exceeds c_band/(c_delta |w_N|)="
                    f"{config.c_band / (config.c_delta * wn):.4g}")

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        coeffs, stats = gmres_gs_solve(
            system.A, system.b, x0=_initial_guess(prev[-1], region),
            tol=config.tol, restart=config.restart, max_iter=config.max_iter,
        )
    for w in caught:
        diag.warnings.append(f"step {n}: {w.message}")
        warnings.warn(w.message, w.category, stacklevel=2)
    diag.iterations, diag.residual, diag.converged = stats.iterations, float(stats.residual), stats.converged
    if config.condition:
        diag.condition = estimate_condition(system.A, config.condition_mode).as_dict()

    state = FEState(t=t, region=region, coeffs=coeffs, levelset=ls)
    _measure(mesh, state, surface, config, diag)
    diag.seconds = time.perf_counter() - start
    history.push(state, diag)
    return state


def run(config, on_step: Optional[Callable] = None, on_system: Optional[Callable] = None):
    """Full simulation from ``t = 0`` to ``T``; returns the :class:`SolutionHistory`."""
    problem = config.problem
    mesh = config.mesh or build_mesh(*problem.box, config.h)
    if not math.isclose(mesh.h, config.h, rel_tol=1e-12):
        raise ConfigurationError("supplied mesh does not match h")
    N = config.n_steps
    state, diag = initialize(problem, mesh, config)
    history = SolutionHistory(config=config, mesh=mesh, states=[state], diagnostics=[diag])
    if on_step is not None:
        on_step(diag)
    for _ in range(N):
        advance(history, config, on_system)
        if on_step is not None:
            on_step(history.diagnostics[-1])
    return history
