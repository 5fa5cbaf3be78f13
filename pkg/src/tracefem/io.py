"""Output helpers: atomic file writes, VTK surfaces, Matrix Market dumps."""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` via a temporary file in the same directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def to_json(obj, **kw):
    return json.dumps(obj, default=_default, **kw)


def write_json(path, obj):
    atomic_write_text(path, to_json(obj, indent=2, sort_keys=True) + "\n")


def write_jsonl(path, records):
    atomic_write_text(path, "".join(to_json(r, sort_keys=True) + "\n" for r in records))


def vtk_polydata(surface, values=None, title="tracefem surface"):
    """Legacy ASCII VTK POLYDATA of the surface triangles.

    Triangle corners are written unmerged; ``values`` (one per corner,
    shape ``(ntri, 3)``) become the point data field ``u``.
    """
    pts = surface.tri_xyz.reshape(-1, 3)
    ntri = len(surface)
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET POLYDATA",
        f"POINTS {len(pts)} double",
    ]
    lines += [" ".join(repr(float(c)) for c in p) for p in pts]
    lines.append(f"POLYGONS {ntri} {4 * ntri}")
    lines += [f"3 {3 * k} {3 * k + 1} {3 * k + 2}" for k in range(ntri)]
    if values is not None:
        vals = np.asarray(values, dtype=float).ravel()
        if len(vals) != len(pts):
            raise ValueError("need one value per triangle corner")
        lines += [f"POINT_DATA {len(pts)}", "SCALARS u double 1", "LOOKUP_TABLE default"]
        lines += [repr(float(v)) for v in vals]
    return "\n".join(lines) + "\n"


def write_vtk_surface(path, mesh, surface, state=None):
    values = None
    if state is not None:
        from .state import eval_fe_on_points

        values = eval_fe_on_points(state, mesh, surface.tri_xyz.reshape(-1, 3))
    atomic_write_text(path, vtk_polydata(surface, values))


def write_matrix_market(path, A, comment=""):
    import scipy.io

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.stem}.", suffix=".mtx", dir=path.parent)
    os.close(fd)
    try:
        scipy.io.mmwrite(tmp, A, comment=comment)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
