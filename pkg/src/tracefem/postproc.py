"""Error norms, convergence orders and table rendering."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import CapabilityError, DomainError

NORMS = ("l2h1", "linf_l2")
CSV_COLUMNS = ("h", "dt", "l2h1", "linf_l2", "eoc_x", "eoc_t", "eoc_xt", "eoc_xtt")


def _fe_at_quad(mesh, state, surface, degree):
    from .assembly import surface_quadrature

    q = surface_quadrature(mesh, surface, state.region, degree)
    c = state.coeffs[q.dofs]
    uh = np.einsum("qk,qk->q", q.phi, c)
    grad = np.einsum("qk,qkd->qd", c, q.grads)
    return q, uh, grad


def surface_norm(mesh, state, surface, degree=4):
    """``||u_h||_{L2(Gamma_h)}``."""
    q, uh, _ = _fe_at_quad(mesh, state, surface, degree)
    return float(np.sqrt(np.sum(q.weights * uh * uh)))


def step_errors(mesh, state, problem, surface, degree=4):
    """``(||u_h - u||_{L2(Gamma_h)}, ||P_h grad(u_h - u)||_{L2(Gamma_h)})``.

    The exact solution and its ambient gradient are evaluated directly at
    the points of Gamma_h.
    """
    if problem.u_exact is None or problem.grad_u_exact is None:
        raise CapabilityError(f"problem {problem.name!r} has no exact solution")
    q, uh, grad = _fe_at_quad(mesh, state, surface, degree)
    e = uh - problem.u_exact(q.points, state.t)
    ge = grad - problem.grad_u_exact(q.points, state.t)
    ge -= np.einsum("qd,qd->q", ge, q.normal)[:, None] * q.normal
    l2 = np.sqrt(np.sum(q.weights * e * e))
    h1 = np.sqrt(np.sum(q.weights * np.einsum("qd,qd->q", ge, ge)))
    return float(l2), float(h1)


@dataclass(frozen=True)
class ErrorReport:
    times: np.ndarray
    err_l2: np.ndarray  # per step, including t0
    err_grad: np.ndarray
    l2h1: float
    linf_l2: float
    meta: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "l2h1": self.l2h1,
            "linf_l2": self.linf_l2,
            "times": self.times.tolist(),
            "err_l2": self.err_l2.tolist(),
            "err_grad": self.err_grad.tolist(),
            **self.meta,
        }


def aggregate(times, err_l2, err_grad, meta=None):
    """Aggregate per-step errors.

    ``L2(H1)^2`` is the trapezoid rule over all recorded levels applied to
    ``err_l2^2 + err_grad^2``; ``Linf(L2)`` is the max over levels ``n >= 1``.
    """
    times = np.asarray(times, dtype=float)
    l2 = np.asarray(err_l2, dtype=float)
    gr = np.asarray(err_grad, dtype=float)
    if len(times) < 2:
        raise ValueError("need at least the initial and one computed level")
    sq = l2**2 + gr**2
    l2h1 = math.sqrt(float(np.sum(0.5 * (sq[1:] + sq[:-1]) * np.diff(times))))
    return ErrorReport(times, l2, gr, l2h1, float(l2[1:].max()), dict(meta or {}))


def aggregate_norms(history):
    diags = history.diagnostics
    if any(d.err_l2 is None for d in diags):
        raise CapabilityError("history has no recorded error measures")
    cfg = history.config
    meta = {"h": cfg.h, "dt": cfg.dt, "scheme": cfg.scheme, "rho": str(cfg.rho)}
    return aggregate([d.t for d in diags], [d.err_l2 for d in diags], [d.err_grad for d in diags], meta)


def eoc(e_coarse, e_fine):
    """``log2(e_coarse / e_fine)``: positive for converging sequences."""
    if not (e_coarse > 0 and e_fine > 0):
        raise DomainError("errors must be positive to compute an order")
    return math.log2(e_coarse / e_fine)


# -- tables --------------------------------------------------------------------

@dataclass
class EocTable:
    """Errors on an ``(h, dt)`` grid with the derived convergence orders.

    ``values[(h, dt)]`` maps to a dict with keys ``l2h1`` and ``linf_l2``
    (``None`` marks a failed cell).  Orders are computed for ``norm``.
    """

    norm: str
    hs: List[float]
    dts: List[float]
    values: Dict[Tuple[float, float], Optional[dict]]

    def __post_init__(self):
        if self.norm not in NORMS:
            raise ValueError(f"unknown norm {self.norm!r}")
        self.hs = sorted(set(self.hs), reverse=True)
        self.dts = sorted(set(self.dts), reverse=True)

    def value(self, i, j):
        if i < 0 or j < 0:
            return None
        cell = self.values.get((self.hs[i], self.dts[j]))
        return None if cell is None else cell.get(self.norm)

    def _order(self, a, b):
        if a is None or b is None or not (a > 0 and b > 0):
            return None
        return eoc(a, b)

    def orders(self, i, j):
        """``eoc_x, eoc_t, eoc_xt, eoc_xtt`` for cell ``(i, j)`` (``None`` if undefined)."""
        e = self.value(i, j)
        ox = self._order(self.value(i - 1, j), e) if i > 0 else None
        ot = self._order(self.value(i, j - 1), e) if j > 0 else None
        oxt = oxtt = None
        if i > 0 and j > 0:
            d = self._order(self.value(i - 1, j - 1), e)
            ratio = self.dts[j - 1] / self.dts[j]
            if math.isclose(ratio, 2.0, rel_tol=1e-9):
                oxt = d
            elif math.isclose(ratio, 4.0, rel_tol=1e-9):
                oxtt = d
        return ox, ot, oxt, oxtt

    def rows(self):
        out = []
        for i, h in enumerate(self.hs):
            for j, dt in enumerate(self.dts):
                if (h, dt) not in self.values:
                    continue
                cell = self.values[(h, dt)] or {}
                ox, ot, oxt, oxtt = self.orders(i, j)
                out.append({
                    "h": h, "dt": dt,
                    "l2h1": cell.get("l2h1"), "linf_l2": cell.get("linf_l2"),
                    "eoc_x": ox, "eoc_t": ot, "eoc_xt": oxt, "eoc_xtt": oxtt,
                })
        return out


def _fmt(v):
    return "" if v is None else format(v, ".12g")


def render_csv(table):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_COLUMNS)
    for row in table.rows():
        wr.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def parse_csv(text):
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        rows.append({k: (float(v) if v != "" else None) for k, v in rec.items()})
    return rows


def _frac(x):
    f = Fraction(x).limit_denominator(4096)
    return str(f) if abs(float(f) - x) < 1e-12 * abs(x) else format(x, "g")


def _md(v, digits=6):
    return "---" if v is None else format(v, f".{digits}g")


def render_markdown(table):
    """Layout: dt rows, h columns, eoc_t column (finest h), eoc_x and diagonal rows."""
    hs, dts = table.hs, table.dts
    title = {"l2h1": "L2(H1) error", "linf_l2": "Linf(L2) error"}[table.norm]
    lines = [f"**{title}**", ""]
    lines.append("| | " + " | ".join(f"h={_frac(h)}" for h in hs) + " | eoc_t |")
    lines.append("|---" * (len(hs) + 2) + "|")
    last = len(hs) - 1
    for j, dt in enumerate(dts):
        cells = []
        for i, h in enumerate(hs):
            if (h, dt) not in table.values:
                cells.append("")
            elif table.values[(h, dt)] is None:
                cells.append("failed")
            else:
                cells.append(_md(table.value(i, j)))
        ot = table.orders(last, j)[1]
        lines.append(f"| dt={_frac(dt)} | " + " | ".join(cells) + f" | {_md(ot, 4)} |")
    jl = len(dts) - 1
    lines.append("| eoc_x | " + " | ".join(_md(table.orders(i, jl)[0], 4) for i in range(len(hs))) + " | |")
    diag = []
    label = "eoc_diag"
    for i in range(len(hs)):
        v = None
        if 0 < i < len(dts):
            _, _, oxt, oxtt = table.orders(i, i)
            v = oxt if oxt is not None else oxtt
            label = "eoc_xt" if oxt is not None else ("eoc_xtt" if oxtt is not None else label)
        diag.append(_md(v, 4))
    lines.append(f"| {label} | " + " | ".join(diag) + " | |")
    return "\n".join(lines) + "\n"


def render(table, fmt="csv"):
    if fmt == "csv":
        return render_csv(table)
    if fmt in ("md", "markdown"):
        return render_markdown(table)
    raise ValueError(f"unknown table format {fmt!r}")
