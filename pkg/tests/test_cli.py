import csv
import json

import numpy as np
import pytest
from scipy.spatial import cKDTree

from scherktower.cli import (
    EXIT_AUDIT,
    EXIT_IO,
    EXIT_NO_ROOT,
    EXIT_OK,
    EXIT_WELD,
    RunConfig,
    main,
)
from scherktower.meshgen import read_ply
from scherktower.periods import residual
from scherktower.weier import TowerParams

Y0, X0 = "1e-4", "-0.2533566909822839"


def run(*argv):
    return main([str(a) for a in argv])


def test_config_round_trip():
    cfg = RunConfig(k=5, y=0.25, x=-0.4, resolution=32, end_cutoff=0.02, copies=2,
                    output_dir="out dir", seed=7, x_window=(-0.8, -0.01),
                    y_grid=(1e-4, 0.1))
    cfg.tolerances["quad"] = 1e-12
    back = RunConfig.from_text(cfg.to_text())
    assert back == cfg
    assert RunConfig.from_text(RunConfig().to_text()) == RunConfig()


def test_config_file_comments_and_errors():
    cfg = RunConfig.from_text("# comment\nk = 4  # trailing\n\ntol_weld = 1e-7\n")
    assert cfg.k == 4 and cfg.tolerances["weld"] == 1e-7
    with pytest.raises(ValueError):
        RunConfig.from_text("colour = blue\n")
    with pytest.raises(ValueError):
        RunConfig.from_text("k 4\n")
    with pytest.raises(ValueError):
        RunConfig(k=3, tolerances={"quad": 0.0}).validate()
    with pytest.raises(ValueError):
        RunConfig(k=3, y=0.3).validate()


def test_solve(tmp_path, capsys):
    assert run("solve", "--k", 3, "--y-grid", "1e-4,1e-3", "--out", tmp_path) == EXIT_OK
    assert "y=0.0001" in capsys.readouterr().out
    rows = list(csv.DictReader((tmp_path / "period_curve_k3.csv").open()))
    assert len(rows) == 2 and all(abs(float(r["residual"])) < 1e-8 for r in rows)
    summary = json.loads((tmp_path / "solve_k3.json").read_text())
    assert summary["roots"] == 2 and summary["config"]["k"] == 3


def test_solve_rejects_small_k(capsys):
    with pytest.raises(SystemExit) as exc:
        run("solve", "--k", 2)
    assert exc.value.code == 2
    assert "k must be" in capsys.readouterr().err


def test_solve_window_respected(tmp_path):
    code = run("solve", "--k", 4, "--x-window", "-0.9:-0.1", "--y-grid", "0.05,0.2,0.4",
               "--out", tmp_path)
    rows = list(csv.DictReader((tmp_path / "period_curve_k4.csv").open()))
    assert all(-0.9 <= float(r["x"]) <= -0.1 for r in rows)
    assert code == (EXIT_OK if rows else EXIT_NO_ROOT)


def test_solve_no_root(tmp_path):
    assert run("solve", "--k", 3, "--y-grid", "1e-4", "--x-window", "-0.9:-0.5",
               "--out", tmp_path) == EXIT_NO_ROOT
    assert (tmp_path / "solve_k3.json").exists()


def outputs(folder):
    return {p.name: p.read_bytes() for p in sorted(folder.iterdir())}


def test_solve_deterministic(tmp_path):
    run("solve", "--k", 3, "--y-grid", "1e-4,1e-2", "--out", tmp_path)
    first = outputs(tmp_path)
    run("solve", "--k", 3, "--y-grid", "1e-4,1e-2", "--out", tmp_path)
    assert outputs(tmp_path) == first and len(first) == 2


def test_config_file_and_override(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("k = 5\ny_grid = 1e-4\nout = ignored\n")
    assert run("solve", "--config", conf, "--k", 3, "--out", tmp_path) == EXIT_OK
    summary = json.loads((tmp_path / "solve_k3.json").read_text())
    assert summary["config"]["k"] == 3 and summary["config"]["y_grid"] == [1e-4]


def test_periods_corner(capsys):
    assert run("periods", "--k", 3, "--corner", "0,-1") == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["I1"]["value"] == pytest.approx(-11.1747, abs=1e-3)
    assert run("periods", "--k", 3, "--corner", "0,0") == EXIT_OK
    assert json.loads(capsys.readouterr().out)["I1"]["divergent"] is True


def test_periods_point(capsys, tmp_path):
    assert run("periods", "--k", 3, "--y", 0.1, "--x", -0.9, "--out", tmp_path) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    ref = residual(TowerParams(3, 0.1, -0.9))
    assert rep["D"] == pytest.approx(ref.D, abs=1e-12)
    assert rep["config"]["y"] == 0.1
    assert json.loads((tmp_path / "periods_k3.json").read_text())["D"] == rep["D"]


def test_periods_needs_point(capsys):
    assert run("periods", "--k", 3) == 2


def test_mesh_and_verify(tmp_path):
    assert run("mesh", "--k", 3, "--y", Y0, "--x", X0, "--resolution", 16, "--copies", 2,
               "--out", tmp_path) == EXIT_OK
    meta = json.loads((tmp_path / "tower_k3.json").read_text())
    assert meta["period"] == 4.0 and abs(meta["residual_D"]) < 1e-8
    assert meta["metadata"]["config"]["copies"] == 2
    v, _, _ = read_ply(tmp_path / "tower_k3.ply")
    tree = cKDTree(v)
    inside = np.abs(v[:, 2]) < 2.0
    d, _ = tree.query(v[inside] + [0.0, 0.0, 4.0])
    assert d.max() < 10 * (1 / 16) ** 2
    # the audit of the written file: the tower is not embedded
    code = run("verify", "--mesh", tmp_path / "tower_k3.ply", "--only", "mesh",
               "--out", tmp_path)
    audit = json.loads((tmp_path / "audit_k3.json").read_text())
    status = {c["name"]: c["status"] for c in audit["checks"]}
    assert status["mesh_translation"] == "pass"
    assert status["mesh_symmetry_s2"] == "pass"
    assert code == (EXIT_OK if audit["ok"] else EXIT_AUDIT)


def test_mesh_refinement(tmp_path):
    for r in (8, 16):
        run("mesh", "--k", 3, "--y", Y0, "--x", X0, "--resolution", r, "--formats", "ply",
            "--out", tmp_path / str(r))
    coarse, _, _ = read_ply(tmp_path / "8" / "piece_k3.ply")
    fine, _, _ = read_ply(tmp_path / "16" / "piece_k3.ply")
    d, _ = cKDTree(fine).query(coarse)
    assert d.max() < 1e-9


def test_mesh_off_curve(tmp_path):
    assert run("mesh", "--k", 3, "--y", 0.5, "--x", -0.5, "--resolution", 8,
               "--formats", "ply", "--out", tmp_path) == EXIT_OK
    meta = json.loads((tmp_path / "tower_k3.json").read_text())
    assert abs(meta["residual_D"]) > 1.0


def test_mesh_deterministic(tmp_path):
    args = ("mesh", "--k", 3, "--y", Y0, "--x", X0, "--resolution", 8, "--out", tmp_path)
    run(*args)
    first = outputs(tmp_path)
    run(*args)
    assert outputs(tmp_path) == first and len(first) == 6


def test_mesh_weld_mismatch(tmp_path):
    assert run("mesh", "--k", 3, "--y", Y0, "--x", X0, "--resolution", 8,
               "--tol-weld", 1e-20, "--out", tmp_path) == EXIT_WELD


def test_mesh_solves_when_point_missing(tmp_path):
    assert run("mesh", "--k", 3, "--y-grid", "1e-4", "--resolution", 8, "--formats", "ply",
               "--out", tmp_path) == EXIT_OK
    meta = json.loads((tmp_path / "piece_k3.json").read_text())
    assert meta["x"] == pytest.approx(float(X0), abs=1e-9)


def test_verify_tampered(tmp_path):
    run("mesh", "--k", 3, "--y", Y0, "--x", X0, "--resolution", 16, "--formats", "ply",
        "--out", tmp_path)
    path = tmp_path / "tower_k3.ply"
    data = bytearray(path.read_bytes())
    end = data.index(b"end_header\n") + len(b"end_header\n")
    v, _, _ = read_ply(path)
    i = int(np.argmin(np.abs(v[:, 2] - 1.0)))
    off = end + 48 * i + 16
    z = np.frombuffer(bytes(data[off:off + 8]), "<f8")[0] + 0.1
    data[off:off + 8] = np.float64(z).astype("<f8").tobytes()
    path.write_bytes(bytes(data))
    assert run("verify", "--mesh", path, "--only", "mesh", "--out", tmp_path) == EXIT_AUDIT
    audit = json.loads((tmp_path / "audit_k3.json").read_text())
    failed = {c["name"] for c in audit["checks"] if c["status"] == "fail"}
    assert failed & {"mesh_symmetry_r1", "mesh_symmetry_s2", "mesh_symmetry_s3"}


def test_verify_only(tmp_path, capsys):
    assert run("verify", "--k", 3, "--y", Y0, "--x", X0, "--only", "gauss_circle",
               "--out", tmp_path) == EXIT_OK
    audit = json.loads((tmp_path / "audit_k3.json").read_text())
    assert [c["name"] for c in audit["checks"]] == ["gauss_circle"]
    assert audit["config"]["y"] == 1e-4


def test_verify_off_curve_fails(tmp_path):
    assert run("verify", "--k", 3, "--y", 0.3, "--x", -0.5, "--only",
               "period_residual", "--out", tmp_path) == EXIT_AUDIT


def test_verify_missing_mesh(tmp_path):
    assert run("verify", "--mesh", tmp_path / "nope.ply", "--out", tmp_path) == EXIT_IO


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run("solve", "--k", 3, "--y-grid", "1e-4", "--out", blocker / "sub") == EXIT_IO


def test_module_entry_point():
    import subprocess
    import sys
    out = subprocess.run([sys.executable, "-m", "scherktower", "--help"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "solve" in out.stdout
