import json
import os
import subprocess
import sys

import pytest

from tracefem import cli, io
from tracefem.postproc import parse_csv

FAST = ["--experiment", "1", "--h", "1/2", "--dt", "1/4", "--T", "0.5"]


def test_parse_level():
    assert cli.parse_level("1/8") == 0.125
    assert cli.parse_level("0.125") == 0.125
    assert cli.parse_level("2^-3") == 0.125
    assert cli.parse_levels("1/4, 1/8") == [0.25, 0.125]
    with pytest.raises(ValueError):
        cli.parse_level("eighth")


def test_run_outputs(tmp_path, capsys):
    code = cli.main(["run", *FAST, "--out", str(tmp_path), "--condition"])
    assert code == cli.EXIT_OK
    run = json.loads((tmp_path / "run.json").read_text())
    for key in ("sigma_mode", "quad_degree", "eoc_convention", "bdf2_start", "h1_aggregation"):
        assert key in run["config"]
    assert run["condition"]["bound_holds"]
    steps = [json.loads(line) for line in (tmp_path / "steps.jsonl").read_text().splitlines()]
    assert len(steps) == 3 and steps[0]["xi_h"] is None
    for key in ("t", "delta", "band_tets", "dofs", "iterations", "residual", "condition"):
        assert key in steps[-1]
    (row,) = parse_csv((tmp_path / "errors.csv").read_text())
    assert row["l2h1"] == pytest.approx(run["errors"]["l2h1"], rel=1e-11)
    assert "L2(H1)" in capsys.readouterr().out


def test_missing_problem_is_error(tmp_path, capsys):
    assert cli.main(["run", "--h", "1/2", "--dt", "1/4", "--out", str(tmp_path)]) == cli.EXIT_ERROR
    assert "error" in capsys.readouterr().err


def test_unknown_experiment_is_error(tmp_path):
    assert cli.main(["run", "--experiment", "9", "--h", "1/2", "--dt", "1/4", "--out", str(tmp_path)]) == 1


def test_warnings_give_exit_2(tmp_path):
    argv = ["run", "--experiment", "1", "--h", "1/2", "--dt", "2", "--T", "2", "--out", str(tmp_path)]
    assert cli.main(argv) == cli.EXIT_WARN
    assert json.loads((tmp_path / "run.json").read_text())["warnings"]


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[run]\nexperiment = 1\nh = 1/2\ndt = 1/8\nT = 0.5\nrho = scaled\nscheme = bdf2\n")
    parser = cli.build_parser()
    opts = cli.resolve_options(parser.parse_args(["run", "--config", str(cfg), "--dt", "1/4"]))
    assert opts["dt"] == [0.25]  # CLI wins
    assert opts["h"] == [0.5] and opts["rho"] == "scaled" and opts["scheme"] == "bdf2"
    assert opts["T"] == 0.5
    assert cli.main(["run", "--config", str(cfg), "--dt", "1/4", "--out", str(tmp_path / "o")]) == 0
    run = json.loads((tmp_path / "o" / "run.json").read_text())
    assert run["config"]["dt"] == 0.25 and run["config"]["rho"] == "scaled"


def test_bad_config_key(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[run]\nbogus = 1\n")
    assert cli.main(["run", "--config", str(cfg)]) == cli.EXIT_ERROR


def test_convergence_1x1(tmp_path):
    code = cli.main(["convergence", *FAST, "--out", str(tmp_path), "--workers", "1"])
    assert code == cli.EXIT_OK
    rows = parse_csv((tmp_path / "l2h1.csv").read_text())
    assert len(rows) == 1 and rows[0]["eoc_x"] is None
    assert (tmp_path / "tables.md").exists() and (tmp_path / "linf_l2.csv").exists()


def test_convergence_2x2_parallel(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.WORKERS_ENV, "2")
    argv = ["convergence", "--experiment", "1", "--h", "1/2", "1/4", "--dt", "1/4", "1/8",
            "--T", "0.25", "--out", str(tmp_path)]
    assert cli.main(argv) == cli.EXIT_OK
    rows = parse_csv((tmp_path / "linf_l2.csv").read_text())
    assert len(rows) == 4
    fine = [r for r in rows if r["h"] == 0.25 and r["dt"] == 0.125][0]
    assert fine["eoc_x"] is not None and fine["eoc_t"] is not None and fine["eoc_xt"] is not None


def test_failed_cell_gives_exit_1(tmp_path):
    # the declared normal speed bound is 0, so the band is the cut set and the
    # surface moving by 2h in one step leaves it
    prob = tmp_path / "fast.ini"
    prob.write_text("[problem]\nphi = sqrt((x1 - t)**2 + x2**2 + x3**2) - 1\nw = 1, 0, 0\n"
                    "u_exact = 1\nwN_bound = 0\n")
    argv = ["convergence", "--problem", str(prob), "--h", "1/2", "--dt", "1", "--T", "1",
            "--out", str(tmp_path / "o"), "--workers", "1"]
    assert cli.main(argv) == cli.EXIT_ERROR
    cell = json.loads((tmp_path / "o" / "cells.jsonl").read_text().splitlines()[0])
    assert not cell["ok"] and "BandCoverageError" in cell["error"]
    assert "failed" in (tmp_path / "o" / "tables.md").read_text()


def test_condition_self_test(capsys):
    assert cli.main(["condition", "--self-test"]) == cli.EXIT_OK
    assert "kappa = 1" in capsys.readouterr().out


def test_condition_grid(tmp_path):
    argv = ["condition", *FAST, "--out", str(tmp_path), "--workers", "1"]
    assert cli.main(argv) == cli.EXIT_OK
    lines = (tmp_path / "condition.csv").read_text().splitlines()
    assert lines[0] == "h,dt,kappa,bound,bound_holds" and lines[1].endswith("True")


def test_demo_vtk(tmp_path):
    argv = ["demo", "--h", "1/4", "--dt", "1/8", "--T", "0.25", "--vtk", "--out", str(tmp_path)]
    assert cli.main(argv) == cli.EXIT_OK
    vtks = sorted(p.name for p in tmp_path.glob("*.vtk"))
    assert vtks == ["surface_00000.vtk", "surface_00001.vtk", "surface_00002.vtk"]
    text = (tmp_path / vtks[0]).read_text()
    assert text.startswith("# vtk DataFile") and "SCALARS u double" in text
    assert json.loads((tmp_path / "run.json").read_text())["growth_ratio"] < 10


def test_dump_matrices(tmp_path):
    import scipy.io

    assert cli.main(["run", *FAST, "--dump-matrices", "--out", str(tmp_path)]) == 0
    mats = sorted((tmp_path / "matrices").glob("*.mtx"))
    assert len(mats) == 2
    A = scipy.io.mmread(mats[0])
    assert A.shape[0] == A.shape[1] > 0


def test_default_out_dir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert cli.main(["run", *FAST]) == 0
    (d,) = (tmp_path / "out").iterdir()
    assert d.name.startswith("run-")


def test_atomic_write_leaves_no_partial_file(tmp_path, monkeypatch):
    target = tmp_path / "t.csv"
    target.write_text("old\n")

    def boom(*a, **k):
        raise RuntimeError("interrupted")

    monkeypatch.setattr(io.os, "replace", boom)
    with pytest.raises(RuntimeError):
        io.atomic_write_text(target, "new contents\n")
    assert target.read_text() == "old\n"
    assert [p.name for p in tmp_path.iterdir()] == ["t.csv"]


def test_console_script(tmp_path):
    out = subprocess.run([sys.executable, "-m", "tracefem.cli", "condition", "--self-test"],
                         capture_output=True, text=True, env={**os.environ})
    assert out.returncode == 0
