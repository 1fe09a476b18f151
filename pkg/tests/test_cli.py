import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from meshparam.cli import load_config, loglog_fit, main
from meshparam.geometry import load_dat, naca_generate
from meshparam.mesh import mesh_quality, o_mesh, read_su2_mesh, write_su2_mesh

SMALL = [
    "--set", "naca.points=64",
    "--set", "mesh.n_radial=5",
    "--set", "mesh.fixed_band=1.0",
    "--set", "dmm.hidden_width=16",
    "--set", "dmm.iters=15",
    "--set", "lsm.latent_dim=4",
    "--set", "lsm.hidden_width=16",
    "--set", "lsm.hidden_layers=2",
    "--set", "lsm.epochs=2",
    "--set", "lsm.corpus_size=3",
    "--set", "lsm.reg_batch=64",
    "--set", "lsm.infer_max_iters=10",
]


def run(tmp_path, *argv, small=True):
    return main([*argv, "--out-dir", str(tmp_path), *(SMALL if small else [])])


def test_gen_naca_symmetric_and_manifest(tmp_path, capsys):
    assert run(tmp_path, "gen-naca", "0012", "--points", "200", small=False) == 0
    curve = load_dat(tmp_path / "naca0012.dat")
    assert len(curve.points) == 200
    mirrored = curve.points * [1, -1]
    # the mirror image is the same loop traversed backwards
    assert np.allclose(np.roll(mirrored[::-1], 1, axis=0), curve.points, atol=1e-12)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["command"] == "gen-naca"
    assert man["argv"][:3] == ["gen-naca", "0012", "--points"]
    assert man["config"]["naca"]["points"] == "200"
    assert {"python", "numpy", "scipy"} <= set(man["versions"])
    assert man["outputs"] == [str(tmp_path / "naca0012.dat")]


def test_gen_naca_bitwise_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run(a, "gen-naca", "2412")
    run(b, "gen-naca", "2412")
    assert (a / "naca2412.dat").read_bytes() == (b / "naca2412.dat").read_bytes()


@pytest.mark.parametrize(
    "argv",
    [
        ["frobnicate"],
        ["gen-naca", "0012", "--bogus"],
        ["mesh-quality"],
        ["gen-naca", "0012", "--points", "many"],
    ],
)
def test_usage_errors_exit_2(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2


def test_bad_override_exit_2(tmp_path):
    assert main(["gen-naca", "0012", "--out-dir", str(tmp_path), "--set", "nosuch.key=1"]) == 2
    assert main(["gen-naca", "0012", "--out-dir", str(tmp_path), "--config", str(tmp_path / "missing.ini")]) == 2


def test_module_errors_exit_1(tmp_path, capsys):
    assert run(tmp_path, "gen-naca", "99x9") == 1
    assert "DesignationError" in capsys.readouterr().err
    assert run(tmp_path, "mesh-quality", str(tmp_path / "missing.su2")) == 1
    bad = tmp_path / "bad.su2"
    bad.write_text("NDIME= 3\n")
    assert run(tmp_path, "mesh-quality", str(bad)) == 1
    assert "UnsupportedDimensionError" in capsys.readouterr().err


def test_console_script_exit_codes(tmp_path):
    cmd = [sys.executable, "-m", "meshparam.cli"]
    ok = subprocess.run([*cmd, "gen-naca", "0012", "--out-dir", str(tmp_path)], capture_output=True)
    assert ok.returncode == 0
    usage = subprocess.run([*cmd, "nope"], capture_output=True)
    assert usage.returncode == 2
    err = subprocess.run([*cmd, "gen-naca", "1", "--out-dir", str(tmp_path)], capture_output=True)
    assert err.returncode == 1


def test_mesh_quality_report(tmp_path):
    mesh = o_mesh(naca_generate("0012", 64), n_radial=5)
    path = tmp_path / "m.su2"
    write_su2_mesh(mesh, path)
    before = path.read_bytes()
    assert run(tmp_path, "mesh-quality", str(path)) == 0
    rep = json.loads((tmp_path / "quality.json").read_text())
    q = mesh_quality(mesh)
    assert rep["inverted_count"] == 0
    assert rep["max_skewness"] == q.max_skewness
    assert path.read_bytes() == before


def test_bench_reg_small(tmp_path, capsys):
    assert run(tmp_path, "bench-reg", "--sizes", "64,128,256", "--set", "bench.hidden_width=16", "--set", "bench.repeats=1") == 0
    rows = list(csv.reader((tmp_path / "bench_reg.csv").open()))
    assert rows[0] == ["M", "seconds"]
    assert [int(r[0]) for r in rows[1:]] == [64, 128, 256]
    assert all(float(r[1]) > 0 for r in rows[1:])
    assert "log-log slope" in capsys.readouterr().out
    assert json.loads((tmp_path / "manifest.json").read_text())["seed"] == 0


def test_loglog_fit_exact():
    rows = [(m, 3e-6 * m) for m in (256, 512, 1024, 4096)]
    slope, r2 = loglog_fit(rows)
    assert slope == pytest.approx(1.0) and r2 == pytest.approx(1.0)


def test_config_layering(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[dmm]\niters = 42\n")
    cfg = load_config([ini], ["dmm.lr=0.5"])
    assert cfg["dmm"].getint("iters") == 42
    assert cfg["dmm"].getfloat("lr") == 0.5
    assert cfg["lsm"].getint("epochs") == 20


def test_dmm_pipeline(tmp_path, capsys):
    fit = tmp_path / "fit"
    assert run(fit, "fit-dmm", "--target", "2412") == 0
    assert (fit / "dmm.npz").exists() and (fit / "dmm_loss.csv").exists()
    assert 0 < (fit / "deformed_mesh.svg").read_text().count("<polygon") <= 64 * 5
    deformed = read_su2_mesh(fit / "deformed.su2")

    again = tmp_path / "again"
    assert run(again, "fit-dmm", "--target", "2412") == 0
    assert (fit / "dmm.npz").read_bytes() == (again / "dmm.npz").read_bytes()

    tm_b = tmp_path / "tm_b.su2"
    write_su2_mesh(o_mesh(naca_generate("0012", 80), n_radial=4, kind="tri"), tm_b)
    rec = tmp_path / "rec"
    assert run(rec, "reconstruct", "--model", "dmm", "--target", "2412", "--also-template", str(tm_b)) == 0
    a, b = read_su2_mesh(rec / "deformed_a.su2"), read_su2_mesh(rec / "deformed_b.su2")
    assert a.topology_id == deformed.topology_id
    assert b.topology_id == read_su2_mesh(tm_b).topology_id
    assert (rec / "reconstruct.svg").read_text().startswith("<svg")

    dm = tmp_path / "dm"
    assert run(dm, "deform-mesh", "--model", "dmm", "--checkpoint", str(fit / "dmm.npz"), "--mesh", str(tm_b)) == 0
    assert np.array_equal(read_su2_mesh(dm / "deformed.su2").vertices, b.vertices)

    opt = tmp_path / "opt"
    assert run(opt, "optimize", "--model", "dmm", "--checkpoint", str(fit / "dmm.npz"), "--steps", "4", "--set", "optimize.snapshot_every=2") == 0
    rows = list(csv.DictReader((opt / "optimize_log.csv").open()))
    assert [int(r["step"]) for r in rows] == [0, 1, 2, 3]
    assert {"T1_bounding", "M2_edges", "M3_chord"} <= set(rows[0])
    assert "np.float64" not in (opt / "optimize_log.csv").read_text()
    assert (opt / "snapshot_00000.svg").exists() and (opt / "snapshot_00002.svg").exists()
    assert (opt / "optimize_loss.svg").exists()
    assert read_su2_mesh(opt / "final.su2").topology_id == deformed.topology_id


def test_lsm_pipeline(tmp_path):
    tr = tmp_path / "train"
    assert run(tr, "train-lsm") == 0
    ckpt = tr / "lsm.npz"
    rows = list(csv.reader((tr / "lsm_loss.csv").open()))
    assert len(rows) == 3
    man = json.loads((tr / "manifest.json").read_text())
    assert man["seed"] == 0 and man["config"]["lsm"]["epochs"] == "2"

    sm = tmp_path / "sample"
    assert run(sm, "sample-latent", "--checkpoint", str(ckpt), "--scale", "0.5", "--seed", "3") == 0
    assert np.load(sm / "sample_latent.npy").shape == (4,)
    assert len(load_dat(sm / "sample.dat").points) == 64

    rec = tmp_path / "rec"
    assert run(rec, "reconstruct", "--model", "lsm", "--checkpoint", str(ckpt), "--target", "2410") == 0
    assert np.load(rec / "latent.npy").shape == (4,)

    opt = tmp_path / "opt"
    assert run(opt, "optimize", "--model", "lsm", "--checkpoint", str(ckpt), "--steps", "3") == 0
    rows = list(csv.DictReader((opt / "optimize_log.csv").open()))
    assert len(rows) == 3 and "M1_latent_norm" in rows[0]

    assert run(tmp_path / "x", "reconstruct", "--model", "lsm", "--target", "2410") == 1
