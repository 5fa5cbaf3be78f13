"""Command line interface: ``tracefem run|convergence|condition|demo``."""
from __future__ import annotations

import argparse
import configparser
import datetime as _dt
import logging
import os
import sys
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ParameterConditionWarning, SolverWarning, TraceFEMError
from .io import atomic_write_text, write_json, write_jsonl, write_matrix_market, write_vtk_surface
from .postproc import EocTable, aggregate_norms, render_csv, render_markdown
from .problem import builtin_experiment, load_problem
from .solver import estimate_condition
from .timestepper import RunConfig, run

log = logging.getLogger("tracefem")

EXIT_OK, EXIT_ERROR, EXIT_WARN = 0, 1, 2
WORKERS_ENV = "TRACEFEM_WORKERS"

# option name -> (type, default); shared by CLI flags and config files
OPTIONS = {
    "experiment": (int, None),
    "problem": (str, None),
    "h": ("levels", None),
    "dt": ("levels", None),
    "scheme": (str, "be"),
    "rho": (str, "const:4"),
    "cdelta": (float, 2.5),
    "cband": (float, 0.5),
    "quad_degree": (int, 4),
    "sigma_mode": (str, "auto"),
    "tol": (float, 1e-15),
    "restart": (int, 200),
    "max_iter": (int, 2000),
    "condition": (bool, False),
    "condition_mode": (str, "auto"),
    "vtk": (bool, False),
    "dump_matrices": (bool, False),
    "diagonal": (bool, False),
    "bdf2_start": (str, "be"),
    "T": (float, None),
    "workers": (int, None),
    "out": (str, None),
}


def parse_level(text):
    """``"1/8"``, ``"0.125"`` or ``"2^-3"`` -> float."""
    text = str(text).strip()
    if "^" in text:
        base, exp = text.split("^")
        return float(base) ** float(exp)
    return float(Fraction(text))


def parse_levels(text):
    if isinstance(text, (list, tuple)):
        items = [t for part in text for t in str(part).replace(",", " ").split()]
    else:
        items = str(text).replace(",", " ").split()
    if not items:
        raise ValueError("empty level list")
    return [parse_level(t) for t in items]


def _coerce(name, value):
    kind = OPTIONS[name][0]
    if value is None:
        return None
    if kind == "levels":
        return parse_levels(value)
    if kind is bool:
        if isinstance(value, bool):
            return value
        return str(value).strip().lower() in ("1", "true", "yes", "on")
    return kind(value)


def build_parser():
    p = argparse.ArgumentParser(
        prog="tracefem",
        description="Stabilized trace finite elements for transport-diffusion on evolving surfaces.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key=value config file with one section per command")
        sp.add_argument("--experiment", type=int, help="built-in experiment id (1-4)")
        sp.add_argument("--problem", help="problem definition file (overrides --experiment)")
        sp.add_argument("--h", nargs="+", help="mesh size(s), e.g. 1/4 1/8")
        sp.add_argument("--dt", nargs="+", help="time step(s), e.g. 1/32")
        sp.add_argument("--scheme", choices=("be", "bdf2"))
        sp.add_argument("--rho", help="stabilization: const:<value> or scaled")
        sp.add_argument("--cdelta", type=float, help="band constant c_delta (default 2.5)")
        sp.add_argument("--cband", type=float, help="constant in the dt band warning (default 0.5)")
        sp.add_argument("--quad-degree", dest="quad_degree", type=int, help="surface quadrature degree")
        sp.add_argument("--sigma-mode", dest="sigma_mode", choices=("auto", "fd", "analytic"))
        sp.add_argument("--tol", type=float, help="GMRES relative tolerance (default 1e-15)")
        sp.add_argument("--restart", type=int, help="GMRES restart length")
        sp.add_argument("--max-iter", dest="max_iter", type=int, help="GMRES iteration cap")
        sp.add_argument("--bdf2-start", dest="bdf2_start", choices=("be", "exact"))
        sp.add_argument("--T", type=float, help="final time (default: the problem's)")
        sp.add_argument("--out", help="output directory (default ./out/<command>-<timestamp>)")
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("run", help="single simulation")
    common(sp)
    sp.add_argument("--condition", action="store_true", default=None, help="estimate condition numbers")
    sp.add_argument("--condition-mode", dest="condition_mode", choices=("auto", "dense", "iterative"))
    sp.add_argument("--vtk", action="store_true", default=None, help="write surface VTK files")
    sp.add_argument("--dump-matrices", dest="dump_matrices", action="store_true", default=None,
                    help="write every system matrix in Matrix Market format")

    for name, text in (("convergence", "error table over an (h, dt) grid"),
                       ("condition", "condition number table over an (h, dt) grid")):
        sp = sub.add_parser(name, help=text)
        common(sp)
        sp.add_argument("--diagonal", action="store_true", default=None,
                        help="pair the i-th h with the i-th dt instead of the full grid")
        sp.add_argument("--workers", type=int, help=f"worker processes (env {WORKERS_ENV} caps it)")
        if name == "condition":
            sp.add_argument("--condition-mode", dest="condition_mode", choices=("auto", "dense", "iterative"))
            sp.add_argument("--self-test", dest="self_test", action="store_true",
                            help="estimate the condition number of the identity and exit")

    sp = sub.add_parser("demo", help="merging spheres demo (experiment 4)")
    common(sp)
    sp.add_argument("--vtk", action="store_true", default=None)
    return p


def resolve_options(args):
    """Merge defaults, the config file section and CLI flags (CLI wins)."""
    opts = {k: v[1] for k, v in OPTIONS.items()}
    if getattr(args, "config", None):
        cp = configparser.ConfigParser()
        if not cp.read(args.config):
            raise FileNotFoundError(f"cannot read config file {args.config}")
        section = cp[args.command] if cp.has_section(args.command) else cp[cp.default_section]
        for key, value in section.items():
            name = key.replace("-", "_")
            if name == "t":
                name = "T"
            if name not in OPTIONS:
                raise ValueError(f"unknown config key {key!r}")
            opts[name] = _coerce(name, value)
    for name in OPTIONS:
        value = getattr(args, name, None)
        if value is not None:
            opts[name] = _coerce(name, value)
    if args.command == "demo" and opts["experiment"] is None and opts["problem"] is None:
        opts["experiment"] = 4
    return opts


def make_problem(opts):
    if opts["problem"]:
        return load_problem(opts["problem"])
    if opts["experiment"] is None:
        raise ValueError("give --experiment or --problem")
    return builtin_experiment(opts["experiment"])


def make_config(opts, problem, h, dt, **extra):
    return RunConfig(
        problem=problem, h=h, dt=dt, scheme=opts["scheme"], rho=opts["rho"],
        c_delta=opts["cdelta"], c_band=opts["cband"], quad_degree=opts["quad_degree"],
        error_quad_degree=opts["quad_degree"], sigma_mode=opts["sigma_mode"], tol=opts["tol"],
        restart=opts["restart"], max_iter=opts["max_iter"], bdf2_start=opts["bdf2_start"],
        condition=opts["condition"], condition_mode=opts["condition_mode"], T=opts["T"], **extra,
    )


def out_dir(opts, command):
    if opts["out"]:
        path = Path(opts["out"])
    else:
        stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
        path = Path("out") / f"{command}-{stamp}"
    path.mkdir(parents=True, exist_ok=True)
    return path


class _WarningLog:
    """Collects warnings raised while a block runs."""

    def __enter__(self):
        self._cm = warnings.catch_warnings(record=True)
        self.records = self._cm.__enter__()
        warnings.simplefilter("always")
        return self

    def __exit__(self, *exc):
        self._cm.__exit__(*exc)
        return False

    @property
    def messages(self):
        keep = (ParameterConditionWarning, SolverWarning, RuntimeWarning, UserWarning)
        return [str(w.message) for w in self.records if issubclass(w.category, keep)]


# -- commands ------------------------------------------------------------------

def _single_run(opts, problem, h, dt, out=None, vtk=False, dump=False):
    cfg = make_config(opts, problem, h, dt)
    hooks = {}
    if out is not None and dump:
        mdir = out / "matrices"
        hooks["on_system"] = lambda n, s: write_matrix_market(mdir / f"A_{n:05d}.mtx", s.A, f"step {n}")
    with _WarningLog() as wl:
        history = run(cfg, **hooks)
    result = {"config": cfg.provenance(), "warnings": wl.messages}
    if problem.u_exact is not None:
        result["errors"] = aggregate_norms(history).as_dict()
    conds = [d.condition for d in history.diagnostics if d.condition]
    if conds:
        worst = max(conds, key=lambda c: c["kappa"])
        result["condition"] = {
            "max_kappa": worst["kappa"],
            "bound_at_max": worst["bound"],
            "bound_holds": all(c["kappa"] <= c["bound"] * (1 + 1e-8) for c in conds),
        }
    if out is not None and vtk:
        from .geometry import extract_surface

        mesh = history.mesh
        for st in (history.states[0], history.states[-1]):
            surf = extract_surface(mesh, st.levelset)
            idx = int(round(st.t / dt))
            write_vtk_surface(out / f"surface_{idx:05d}.vtk", mesh, surf, st)
    return history, result


def cmd_run(opts):
    problem = make_problem(opts)
    if not opts["h"] or not opts["dt"]:
        raise ValueError("run needs --h and --dt")
    h, dt = opts["h"][0], opts["dt"][0]
    out = out_dir(opts, "run")
    history, result = _single_run(opts, problem, h, dt, out, opts["vtk"], opts["dump_matrices"])
    result["version"] = __version__
    write_json(out / "run.json", result)
    write_jsonl(out / "steps.jsonl", [d.record() for d in history.diagnostics])
    if "errors" in result:
        e = result["errors"]
        cell = {(h, dt): {"l2h1": e["l2h1"], "linf_l2": e["linf_l2"]}}
        atomic_write_text(out / "errors.csv", render_csv(EocTable("l2h1", [h], [dt], cell)))
        print(f"L2(H1) = {e['l2h1']:.6g}   Linf(L2) = {e['linf_l2']:.6g}")
    if "condition" in result:
        print(f"max condition number = {result['condition']['max_kappa']:.4g}")
    print(f"output written to {out}")
    return EXIT_WARN if result["warnings"] else EXIT_OK


def _cells(opts):
    hs, dts = opts["h"], opts["dt"]
    if not hs or not dts:
        raise ValueError("give --h and --dt level lists")
    if opts["diagonal"]:
        if len(hs) != len(dts):
            raise ValueError("--diagonal needs as many h levels as dt levels")
        return list(zip(hs, dts))
    return [(h, dt) for dt in dts for h in hs]


def _cell_task(opts, h, dt, condition):
    """Runs one grid cell; returns a JSON-ready dict (never raises)."""
    try:
        o = dict(opts, condition=condition)
        problem = make_problem(o)
        history, result = _single_run(o, problem, h, dt)
        cell = {"h": h, "dt": dt, "ok": True, "warnings": result["warnings"]}
        if "errors" in result:
            cell["l2h1"] = result["errors"]["l2h1"]
            cell["linf_l2"] = result["errors"]["linf_l2"]
        if condition:
            cell["kappa"] = result["condition"]["max_kappa"]
            cell["bound"] = result["condition"]["bound_at_max"]
            cell["bound_holds"] = result["condition"]["bound_holds"]
            cell["steps"] = [d.condition for d in history.diagnostics if d.condition]
        return cell
    except Exception as exc:  # a failed cell is reported, not fatal
        return {"h": h, "dt": dt, "ok": False, "error": f"{type(exc).__name__}: {exc}",
                "trace": traceback.format_exc()}


def _worker_count(opts, n_tasks):
    n = opts["workers"] or os.cpu_count() or 1
    cap = os.environ.get(WORKERS_ENV)
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, min(n, n_tasks))


def _run_grid(opts, condition):
    cells = _cells(opts)
    workers = _worker_count(opts, len(cells))
    if workers == 1:
        return [_cell_task(opts, h, dt, condition) for h, dt in cells]
    # forked workers would otherwise re-emit whatever is still buffered
    sys.stdout.flush()
    sys.stderr.flush()
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futs = [pool.submit(_cell_task, opts, h, dt, condition) for h, dt in cells]
        return [f.result() for f in futs]


def _grid_values(results, key_map):
    values = {}
    for r in results:
        values[(r["h"], r["dt"])] = ({k: r.get(v) for k, v in key_map.items()} if r["ok"] else None)
    return values


def cmd_convergence(opts):
    out = out_dir(opts, "convergence")
    results = _run_grid(opts, condition=False)
    hs, dts = opts["h"], opts["dt"]
    values = _grid_values(results, {"l2h1": "l2h1", "linf_l2": "linf_l2"})
    md = []
    for norm in ("l2h1", "linf_l2"):
        table = EocTable(norm, hs, dts, values)
        atomic_write_text(out / f"{norm}.csv", render_csv(table))
        md.append(render_markdown(table))
    atomic_write_text(out / "tables.md", "\n".join(md))
    write_jsonl(out / "cells.jsonl", [{k: v for k, v in r.items() if k != "trace"} for r in results])
    write_json(out / "run.json", {"command": "convergence", "version": __version__,
                                  "options": opts, "cells": len(results)})
    print("\n".join(md))
    print(f"output written to {out}")
    failed = [r for r in results if not r["ok"]]
    for r in failed:
        print(f"cell h={r['h']:g} dt={r['dt']:g} failed: {r['error']}", file=sys.stderr)
    if failed:
        return EXIT_ERROR
    return EXIT_WARN if any(r["warnings"] for r in results) else EXIT_OK


def render_condition_markdown(results):
    hs = sorted({r["h"] for r in results}, reverse=True)
    dts = sorted({r["dt"] for r in results}, reverse=True)
    by = {(r["h"], r["dt"]): r for r in results}
    head = "| | " + " | ".join(f"h={Fraction(h).limit_denominator(4096)}" for h in hs) + " |"
    lines = ["**max condition number**", "", head, "|---" * (len(hs) + 1) + "|"]
    for dt in dts:
        row = []
        for h in hs:
            r = by.get((h, dt))
            row.append("" if r is None else (f"{r['kappa']:.3e}" if r["ok"] else "failed"))
        lines.append(f"| dt={Fraction(dt).limit_denominator(4096)} | " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


def cmd_condition(opts, self_test=False):
    if self_test:
        rep = estimate_condition(np.eye(4))
        print(f"identity: kappa = {rep.kappa:g}, bound = {rep.bound:g}")
        return EXIT_OK if abs(rep.kappa - 1) < 1e-12 else EXIT_ERROR
    out = out_dir(opts, "condition")
    results = _run_grid(opts, condition=True)
    rows = ["h,dt,kappa,bound,bound_holds"]
    for r in results:
        if r["ok"]:
            rows.append(f"{r['h']:.12g},{r['dt']:.12g},{r['kappa']:.12g},{r['bound']:.12g},{r['bound_holds']}")
        else:
            rows.append(f"{r['h']:.12g},{r['dt']:.12g},,,")
    atomic_write_text(out / "condition.csv", "\n".join(rows) + "\n")
    md = render_condition_markdown(results)
    atomic_write_text(out / "condition.md", md)
    write_jsonl(out / "cells.jsonl", [{k: v for k, v in r.items() if k != "trace"} for r in results])
    print(md)
    print(f"output written to {out}")
    if any(not r["ok"] for r in results):
        return EXIT_ERROR
    return EXIT_WARN if any(r["warnings"] for r in results) else EXIT_OK


def cmd_demo(opts):
    problem = make_problem(opts)
    h = opts["h"][0] if opts["h"] else 1 / 8
    dt = opts["dt"][0] if opts["dt"] else 1 / 16
    out = out_dir(opts, "demo")
    cfg = make_config(opts, problem, h, dt)
    from .geometry import extract_surface

    def on_step(diag):
        log.info("t=%.4f area=%.4f |u|=%.4f dofs=%d", diag.t, diag.area, diag.norm_l2, diag.dofs)

    cfg.keep_states = bool(opts["vtk"])
    with _WarningLog() as wl:
        history = run(cfg, on_step=on_step)
    if opts["vtk"]:
        for st in history.states:
            idx = int(round(st.t / dt))
            surf = extract_surface(history.mesh, st.levelset)
            write_vtk_surface(out / f"surface_{idx:05d}.vtk", history.mesh, surf, st)
    diags = history.diagnostics
    norms = [d.norm_l2 for d in diags]
    summary = {
        "config": cfg.provenance(), "warnings": wl.messages,
        "growth_ratio": max(norms) / norms[0], "final_area": diags[-1].area,
    }
    write_json(out / "run.json", summary)
    write_jsonl(out / "steps.jsonl", [d.record() for d in diags])
    print(f"area {diags[0].area:.4f} -> {diags[-1].area:.4f}, max |u_h| growth {summary['growth_ratio']:.3f}")
    print(f"output written to {out}")
    return EXIT_WARN if wl.messages else EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        opts = resolve_options(args)
        if args.command == "run":
            return cmd_run(opts)
        if args.command == "convergence":
            return cmd_convergence(opts)
        if args.command == "condition":
            return cmd_condition(opts, getattr(args, "self_test", False))
        return cmd_demo(opts)
    except (TraceFEMError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
