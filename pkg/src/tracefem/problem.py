"""Evolving-surface transport--diffusion problems.

A :class:`ProblemSpec` bundles the level set, velocity, diffusion, source and
(optionally) the exact solution of

    du/dt + w . grad u + (div_Gamma w) u - nu Laplace_Gamma u = f   on Gamma(t).

All callables are vectorized over points of shape ``(N, 3)``.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import CapabilityError, ConfigurationError
from .geometry import closest_point
from .quadrature import TRIANGLE, reference_quadrature

Field = Callable[[np.ndarray, float], np.ndarray]


def _zeros(x, t):
    return np.zeros(len(x))


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    nu: float
    phi: Field
    grad_phi: Field
    w: Field
    u0: Callable[[np.ndarray], np.ndarray]
    wN_bound: Callable[[float, float], float]
    w_sup: float
    T: float
    f: Field = _zeros
    u_exact: Optional[Field] = None
    grad_u_exact: Optional[Field] = None
    projection: Optional[Field] = None
    sigma: Optional[Field] = None
    xi_ref: Optional[float] = None
    box: tuple = ((-2.0, -2.0, -2.0), (2.0, 2.0, 2.0))

    def __post_init__(self):
        if not self.nu > 0:
            raise ConfigurationError("diffusion coefficient must be positive")
        if self.T <= 0:
            raise ConfigurationError("final time must be positive")

    @property
    def has_exact(self):
        return self.u_exact is not None

    def require_exact(self):
        if self.u_exact is None or self.grad_u_exact is None:
            raise CapabilityError(f"problem {self.name!r} has no exact solution")


@dataclass(frozen=True)
class LiftedData:
    p: np.ndarray  # closest points
    n_p: np.ndarray  # exact unit normals at p
    w_e: np.ndarray  # w(p)
    wT_e: np.ndarray  # tangential part of w(p)
    w_N: np.ndarray  # normal part of w(p)


def lifted_fields(problem, x, t):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    p = closest_point(problem, x, t)
    g = problem.grad_phi(p, t)
    n_p = g / np.linalg.norm(g, axis=1)[:, None]
    w_e = problem.w(p, t)
    w_N = np.einsum("ij,ij->i", w_e, n_p)
    wT_e = w_e - w_N[:, None] * n_p
    return LiftedData(p=p, n_p=n_p, w_e=w_e, wT_e=wT_e, w_N=w_N)


def _g_field(problem, y, t):
    lf = lifted_fields(problem, y, t)
    return lf.w_e - 0.5 * lf.wT_e


def divergence_coefficient(problem, x, t, n_h, h, mode="auto"):
    """Coefficient ``div_{Gamma_h}(w^e - w_T^e / 2)`` at points of Gamma_h.

    ``mode`` is ``"analytic"`` (use ``problem.sigma`` at the closest point),
    ``"fd"`` (central differences of the lifted field, step ``1e-5 h``,
    projected with ``P_h = I - n_h n_h^T``) or ``"auto"`` (analytic if the
    problem provides it).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n_h = np.broadcast_to(np.asarray(n_h, dtype=float), x.shape)
    mode = resolve_sigma_mode(problem, mode)
    if mode == "analytic":
        return np.asarray(problem.sigma(closest_point(problem, x, t), t), dtype=float)
    eps = 1e-5 * h
    jac = np.empty((len(x), 3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = eps
        jac[:, :, j] = (_g_field(problem, x + e, t) - _g_field(problem, x - e, t)) / (2 * eps)
    trace = np.trace(jac, axis1=1, axis2=2)
    return trace - np.einsum("ni,nij,nj->n", n_h, jac, n_h)


def resolve_sigma_mode(problem, mode):
    if mode not in ("auto", "fd", "analytic"):
        raise ConfigurationError(f"unknown sigma mode {mode!r}")
    if mode == "auto":
        return "analytic" if problem.sigma is not None else "fd"
    if mode == "analytic" and problem.sigma is None:
        raise CapabilityError(f"problem {problem.name!r} has no analytic divergence coefficient")
    return mode


def surface_quadrature_points(surface, degree=4):
    """Physical points, weights and owning-triangle index for a surface rule."""
    rule = reference_quadrature(TRIANGLE, degree)
    pts = np.einsum("qk,tkd->tqd", rule.points, surface.tri_xyz)
    wts = 2.0 * surface.tri_area[:, None] * rule.weights[None, :]
    tri = np.repeat(np.arange(len(surface)), len(rule.weights))
    return pts.reshape(-1, 3), wts.ravel(), tri


def estimate_xi_h(problem, surface, t, h, degree=4, mode="auto"):
    """Max of ``|sigma|`` over the surface quadrature points."""
    if len(surface) == 0:
        raise ValueError("empty surface")
    pts, _, tri = surface_quadrature_points(surface, degree)
    sigma = divergence_coefficient(problem, pts, t, surface.tri_normal[tri], h, mode)
    return float(np.abs(sigma).max())


# -- built-in experiments ------------------------------------------------------

def _sphere_projection(center, radius):
    def proj(x, t):
        c = center(t)
        d = x - c
        return c + radius(t) * d / np.linalg.norm(d, axis=1)[:, None]

    return proj


def experiment_1(offset=(0.0, 0.0, 0.0)):
    """Unit sphere translated with constant velocity (0.2, 0, 0).

    ``offset`` shifts the whole configuration (sphere centre and exact
    solution) and is used to probe robustness to the cut position.
    """
    vel = np.array([0.2, 0.0, 0.0])
    off = np.asarray(offset, dtype=float)

    def center(t):
        return off + t * vel

    def phi(x, t):
        return np.linalg.norm(x - center(t), axis=1) - 1.0

    def grad_phi(x, t):
        d = x - center(t)
        return d / np.linalg.norm(d, axis=1)[:, None]

    def u_exact(x, t):
        y = x - off
        return 1.0 + (y.sum(axis=1) - 0.2 * t) * np.exp(-2.0 * t)

    def grad_u_exact(x, t):
        return np.full((len(x), 3), np.exp(-2.0 * t))

    return ProblemSpec(
        name="exp1",
        nu=1.0,
        phi=phi,
        grad_phi=grad_phi,
        w=lambda x, t: np.broadcast_to(vel, np.shape(x)).copy(),
        u0=lambda x: u_exact(x, 0.0),
        wN_bound=lambda t0, t1: 0.2,
        w_sup=0.2,
        T=1.0,
        u_exact=u_exact,
        grad_u_exact=grad_u_exact,
        projection=_sphere_projection(center, lambda t: 1.0),
        xi_ref=0.1,
    )


def experiment_2():
    """Off-centre unit sphere revolved by a standing vortex; non-distance level set."""
    omega = 0.2 * np.pi

    def center(t):
        return np.array([0.5 * np.cos(omega * t), 0.5 * np.sin(omega * t), 0.0])

    def phi(x, t):
        d = x - center(t)
        return np.einsum("ij,ij->i", d, d) - 1.0

    def grad_phi(x, t):
        return 2.0 * (x - center(t))

    def w(x, t):
        return np.column_stack([-omega * x[:, 1], omega * x[:, 0], np.zeros(len(x))])

    def coeffs(t):
        c, s = np.cos(omega * t), np.sin(omega * t)
        return np.array([c - s, c + s, 1.0])

    def u_exact(x, t):
        return 1.0 + (x @ coeffs(t) - 0.5) * np.exp(-2.0 * t)

    def grad_u_exact(x, t):
        return np.tile(coeffs(t) * np.exp(-2.0 * t), (len(x), 1))

    return ProblemSpec(
        name="exp2",
        nu=1.0,
        phi=phi,
        grad_phi=grad_phi,
        w=w,
        u0=lambda x: 1.0 + (x[:, 0] - 0.5) + x[:, 1] + x[:, 2],
        wN_bound=lambda t0, t1: np.pi / 10.0,
        # |w| = omega * dist to the z-axis <= omega * 1.5 on Gamma(t)
        w_sup=0.3 * np.pi,
        T=1.0,
        u_exact=u_exact,
        grad_u_exact=grad_u_exact,
        projection=_sphere_projection(center, lambda t: 1.0),
        xi_ref=0.6,
    )


def experiment_3():
    """Shrinking sphere r(t) = 1.5 exp(-t/2) with a source term."""
    r0 = 1.5
    origin = np.zeros(3)

    def radius(t):
        return r0 * np.exp(-t / 2.0)

    def phi(x, t):
        return np.linalg.norm(x, axis=1) - radius(t)

    def grad_phi(x, t):
        return x / np.linalg.norm(x, axis=1)[:, None]

    def w(x, t):
        return -0.75 * np.exp(-t / 2.0) * x / np.linalg.norm(x, axis=1)[:, None]

    def f(x, t):
        return (-1.5 * np.exp(t) + 16.0 / 3.0 * np.exp(2.0 * t)) * np.prod(x, axis=1)

    def u_exact(x, t):
        return (1.0 + np.prod(x, axis=1)) * np.exp(t)

    def grad_u_exact(x, t):
        return np.exp(t) * np.column_stack(
            [x[:, 1] * x[:, 2], x[:, 0] * x[:, 2], x[:, 0] * x[:, 1]]
        )

    return ProblemSpec(
        name="exp3",
        nu=1.0,
        phi=phi,
        grad_phi=grad_phi,
        w=w,
        u0=lambda x: u_exact(x, 0.0),
        wN_bound=lambda t0, t1: 0.75 * np.exp(-t0 / 2.0),
        w_sup=0.75,
        T=0.5,
        f=f,
        u_exact=u_exact,
        grad_u_exact=grad_u_exact,
        projection=_sphere_projection(lambda t: origin, radius),
        sigma=lambda x, t: np.full(len(x), -1.0),
        xi_ref=1.0,
    )


def experiment_4(centers=((-0.8, 0.0, 0.0), (0.8, 0.0, 0.0)), r0=0.6, speed=0.4, T=1.0):
    """Two equal spheres growing with normal speed ``speed`` until they merge.

    No exact solution; intended as a qualitative stability demo.
    """
    c1, c2 = (np.asarray(c, dtype=float) for c in centers)
    axis = c2 - c1
    half = 0.5 * np.linalg.norm(axis)
    axis = axis / (2.0 * half)
    mid = 0.5 * (c1 + c2)

    def radius(t):
        return r0 + speed * t

    def _nearest(x):
        d1 = np.linalg.norm(x - c1, axis=1)
        d2 = np.linalg.norm(x - c2, axis=1)
        first = d1 <= d2
        c = np.where(first[:, None], c1, c2)
        return c, np.where(first, d1, d2)

    def phi(x, t):
        return _nearest(x)[1] - radius(t)

    def grad_phi(x, t):
        c, d = _nearest(x)
        return (x - c) / d[:, None]

    def w(x, t):
        return speed * grad_phi(x, t)

    def projection(x, t):
        r = radius(t)
        c, d = _nearest(x)
        p = c + r * (x - c) / d[:, None]
        # radial projections landing inside the other sphere go to the seam circle
        inside = phi(p, t) < -1e-12
        if inside.any() and r > half:
            y = x[inside] - mid
            along = y @ axis
            radial = y - along[:, None] * axis
            rn = np.linalg.norm(radial, axis=1)
            ring = np.sqrt(r * r - half * half)
            perp = np.cross(axis, [1.0, 0.0, 0.0] if abs(axis[0]) < 0.9 else [0.0, 1.0, 0.0])
            perp /= np.linalg.norm(perp)
            safe = rn > 1e-14
            dirs = np.where(safe[:, None], radial / np.where(safe, rn, 1.0)[:, None], perp)
            p[inside] = mid + ring * dirs
        return p

    return ProblemSpec(
        name="exp4",
        nu=1.0,
        phi=phi,
        grad_phi=grad_phi,
        w=w,
        u0=lambda x: np.ones(len(x)),
        wN_bound=lambda t0, t1: speed,
        w_sup=speed,
        T=T,
        projection=projection,
    )


_BUILTINS = {1: experiment_1, 2: experiment_2, 3: experiment_3, 4: experiment_4}


def builtin_experiment(exp_id, **kwargs):
    try:
        factory = _BUILTINS[int(exp_id)]
    except (KeyError, ValueError, TypeError):
        raise ConfigurationError(f"unknown experiment id {exp_id!r} (expected 1-4)") from None
    return factory(**kwargs)


# -- problems from config files -------------------------------------------------

def _compile(expr, symbols, sympy):
    e = sympy.sympify(expr)
    fn = sympy.lambdify(symbols, e, modules="numpy")

    def field(x, t):
        x = np.atleast_2d(x)
        out = fn(x[:, 0], x[:, 1], x[:, 2], t)
        return np.broadcast_to(np.asarray(out, dtype=float), (len(x),)).copy()

    return e, field


def load_problem(path):
    """Build a :class:`ProblemSpec` from a key=value file with a ``[problem]`` section.

    Keys: ``nu``, ``phi``, ``w`` (three comma separated expressions), ``f``,
    ``u0``, ``u_exact``, ``T``, ``wN_bound``, ``w_sup``, ``sigma``.
    Expressions use ``x1, x2, x3, t`` and the usual math functions.
    """
    import sympy

    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise ConfigurationError(f"cannot read problem file {path}")
    if "problem" not in cp:
        raise ConfigurationError(f"{path}: missing [problem] section")
    sec = cp["problem"]
    x1, x2, x3, t = syms = sympy.symbols("x1 x2 x3 t")
    try:
        phi_e, phi = _compile(sec["phi"], syms, sympy)
        grads = [_compile(sympy.diff(phi_e, v), syms, sympy)[1] for v in (x1, x2, x3)]
        w_parts = [_compile(e, syms, sympy)[1] for e in sec["w"].split(",")]
        if len(w_parts) != 3:
            raise ConfigurationError("w needs three components")
        f = _compile(sec.get("f", "0"), syms, sympy)[1]
        u0 = _compile(sec.get("u0", "1"), syms, sympy)[1]
        u_exact = grad_u = None
        if "u_exact" in sec:
            ue_e, u_exact = _compile(sec["u_exact"], syms, sympy)
            gu = [_compile(sympy.diff(ue_e, v), syms, sympy)[1] for v in (x1, x2, x3)]
            grad_u = lambda x, tt: np.column_stack([g(x, tt) for g in gu])  # noqa: E731
        sigma = _compile(sec["sigma"], syms, sympy)[1] if "sigma" in sec else None
        wN = float(sec["wN_bound"])
        spec = ProblemSpec(
            name=sec.get("name", str(path)),
            nu=float(sec.get("nu", "1")),
            phi=phi,
            grad_phi=lambda x, tt: np.column_stack([g(x, tt) for g in grads]),
            w=lambda x, tt: np.column_stack([c(x, tt) for c in w_parts]),
            u0=lambda x: u0(x, 0.0),
            wN_bound=lambda a, b: wN,
            w_sup=float(sec.get("w_sup", sec["wN_bound"])),
            T=float(sec.get("T", "1")),
            f=f,
            u_exact=u_exact,
            grad_u_exact=grad_u,
            sigma=sigma,
        )
    except (KeyError, sympy.SympifyError) as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    return spec
