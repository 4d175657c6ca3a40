import csv
import math

import numpy as np
import pytest

from biharm.cli import build_parser, eoc_rows, format_eoc, main
from biharm.vtk import sample, subgrid, write_vtk
from biharm.femspace import DofMap
from biharm.hct import smooth
from biharm.mesh import uniform_refine, unit_square


def _rows(path):
    return list(csv.DictReader(open(path)))


def test_solve_square(tmp_path, capsys):
    out = tmp_path / "run.csv"
    code = main(["solve", "--problem", "square-smooth", "--sigma", "20", "--theta", "0.5",
                 "--marking", "max", "--max-dofs", "20000", "--out", str(out)])
    assert code == 0
    rows = _rows(out)
    assert len(rows) >= 8
    eta = [float(r["eta_total"]) for r in rows]
    assert all(b < a for a, b in zip(eta[2:], eta[3:]))
    text = capsys.readouterr().out
    assert text.splitlines()[0].split() == ["level", "ndof", "eta", "error", "rate"]
    assert "stop: max_dofs" in text


def test_solve_zero_rhs(tmp_path):
    out = tmp_path / "z.csv"
    assert main(["solve", "--problem", "zero-rhs", "--max-iters", "5", "--out", str(out)]) == 0
    rows = _rows(out)
    assert len(rows) == 1 and float(rows[0]["eta_total"]) == 0.0


def test_sigma_scan(capsys):
    assert main(["sigma-scan", "--problem", "square-smooth", "--from", "0.5", "--to", "40"]) == 0
    value = float(capsys.readouterr().out.split("=")[1])
    assert 0 < value < 40 and math.isfinite(value)
    assert value == pytest.approx(0.6, rel=1e-5)


@pytest.mark.parametrize("argv", [
    ["solve", "--problem", "nope", "--max-iters", "1"],
    ["solve", "--problem", "square-smooth"],
    ["solve", "--problem", "square-smooth", "--max-iters", "1", "--theta", "1.5"],
    ["solve", "--problem", "square-smooth", "--max-iters", "1", "--marking", "greedy"],
    ["frobnicate"],
])
def test_usage_errors(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 2


def test_solver_abort(capsys):
    assert main(["solve", "--problem", "square-smooth", "--sigma", "0.1", "--max-iters", "1"]) == 1
    assert "not positive definite" in capsys.readouterr().err


def test_identical_flags_identical_csv(tmp_path):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for p in paths:
        main(["solve", "--problem", "lshape-singular", "--marking", "doerfler", "--max-iters", "4",
              "--out", str(p)])
    a, b = (_rows(p) for p in paths)
    for r in a + b:
        del r["wall_ms"]
    assert a == b
    assert all(r["energy_err"] == "" for r in a)


def test_vtk_output(tmp_path):
    assert main(["solve", "--problem", "square-smooth", "--max-iters", "2",
                 "--vtk", str(tmp_path / "vtk")]) == 0
    files = sorted((tmp_path / "vtk").glob("*.vtk"))
    assert [f.name for f in files] == ["iter_000.vtk", "iter_001.vtk", "iter_002.vtk"]
    text = files[0].read_text()
    assert "POINTS 20 double" in text and "CELLS 18 72" in text and "SCALARS eta" in text


def test_thread_cap(monkeypatch, tmp_path):
    monkeypatch.setenv("BIHARM_THREADS", "1")
    assert main(["solve", "--problem", "square-smooth", "--max-iters", "1"]) == 0


def test_audit(capsys):
    assert main(["audit", "--rounds", "20", "--seed", "3", "--problem", "lshape-singular"]) == 0
    assert "rounds=20" in capsys.readouterr().out


def test_parser_defaults():
    args = build_parser().parse_args(["solve", "--problem", "zero-rhs", "--max-iters", "1"])
    assert (args.sigma, args.theta, args.marking, args.bisections, args.quad_degree) == \
        (20.0, 0.5, "max", 1, 8)


def test_eoc_rows():
    rows = eoc_rows([10, 40, 160], [1.0, 0.5, 0.25], [0.2, 0.1, 0.05])
    assert math.isnan(rows[0][4])
    assert rows[1][4] == pytest.approx(1.0) and rows[2][4] == pytest.approx(1.0)
    assert all(not math.isnan(r[4]) for r in rows[1:])
    rows = eoc_rows([1, 2], [0.0, 0.0], [None, None])
    assert math.isnan(rows[1][4])
    assert "level" in format_eoc(rows)


def test_subgrid():
    lam, tris = subgrid(3)
    assert lam.shape == (10, 3) and tris.shape == (9, 3)
    assert np.allclose(lam.sum(axis=1), 1)


def test_sample_p2_and_hct(rng):
    mesh = uniform_refine(unit_square(), 1)
    v = DofMap(mesh).random(rng)
    pts, vals = sample(v)
    lam, _ = subgrid(3)
    # vertices of the subgrid include the element vertices, where v is nodal
    corner = np.flatnonzero(np.isclose(lam.max(axis=1), 1))
    assert np.allclose(vals[:, corner], v.nodal[mesh.elements][:, [0, 1, 2]][:, np.argmax(lam[corner], axis=1)])
    E = smooth(v)
    pts_e, vals_e = sample(E)
    assert np.allclose(pts, pts_e) and vals_e.shape == vals.shape


def test_write_vtk_hct(tmp_path, rng):
    mesh = uniform_refine(unit_square(), 1)
    E = smooth(DofMap(mesh).random(rng))
    write_vtk(tmp_path / "e.vtk", E, name="Ev")
    assert "SCALARS Ev double 1" in (tmp_path / "e.vtk").read_text()
