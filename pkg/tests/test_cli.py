import csv
import json
import os

import numpy as np
import pytest
from PIL import Image

from taylorgrid.cli import ConfigError, content_hash, parse_overrides, resolve_config
from taylorgrid.geometry import cube_mesh, write_obj
from conftest import run_cli

SMALL_SDF = ("--resolution", 8, "--steps", 20, "--data.n_samples", 2000, "--data.heldout_samples", 2000,
             "--eval.iou_samples", 5000, "--eval.chamfer_points", 2000)


# ---------------------------------------------------------------- config handling

def test_parse_overrides_forms():
    over = parse_overrides(["--loss.lambda1", "1e-4", "--grid.order=0", "--image.fixture", "glyph"])
    assert over == {"loss": {"lambda1": 1e-4}, "grid": {"order": 0}, "image": {"fixture": "glyph"}}


@pytest.mark.parametrize("over", [{"loss": {"lambda1": -1}}, {"grid": {"order": 3}}, {"bogus": 1},
                                  {"loss": {"nope": 1}}, {"grid": 5}])
def test_resolve_config_rejects(over):
    with pytest.raises(ConfigError):
        resolve_config("fit-sdf", None, over)


def test_defaults_carry_reference_weights():
    cfg = resolve_config("fit-sdf")
    assert cfg["loss"]["lambda1"] == 1e-4 and cfg["loss"]["lambda2"] == 2e-5 and cfg["lr"] == 0.003


def test_content_hash_ignores_output_dir():
    a = resolve_config("fit-sdf", None, {"out": "x"})
    b = resolve_config("fit-sdf", None, {"out": "y"})
    c = resolve_config("fit-sdf", None, {"seed": 1})
    assert content_hash(a, {}) == content_hash(b, {}) != content_hash(c, {})


def test_config_file_and_flag_precedence(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"grid": {"order": 1, "resolution": 16}}))
    cfg = resolve_config("fit-sdf", tmp_path / "c.json", {"grid": {"resolution": 8}})
    assert cfg["grid"]["order"] == 1 and cfg["grid"]["resolution"] == 8


# ---------------------------------------------------------------- exit codes

def test_missing_mesh_exit_3(tmp_path):
    r = run_cli("fit-sdf", "--mesh", tmp_path / "missing.obj", out=tmp_path / "o")
    assert r.code == 3 and "missing.obj" in r.stderr
    assert not (tmp_path / "o").exists()


@pytest.mark.parametrize("args", [("--loss.lambda1", -1), ("--bogus.key", 1), ("--grid.order", 7)])
def test_config_error_exit_2(tmp_path, args):
    assert run_cli("fit-sdf", *args, out=tmp_path / "o").code == 2


def test_bad_config_file_exit_2(tmp_path):
    (tmp_path / "c.json").write_text("{not json")
    assert run_cli("fit-sdf", "--config", tmp_path / "c.json", out=tmp_path / "o").code == 2


def test_thread_env(tmp_path):
    env = dict(os.environ, TAYLORGRID_THREADS="many")
    assert run_cli("fit-sdf", *SMALL_SDF, out=tmp_path / "o", env=env).code == 2
    env["TAYLORGRID_THREADS"] = "1"
    assert run_cli("fit-sdf", *SMALL_SDF, out=tmp_path / "p", env=env).code == 0


def test_render_missing_grid_exit_3(tmp_path):
    r = run_cli("render", "--density", tmp_path / "none.tgrid", "--sh", tmp_path / "none.npz",
                "--cameras", tmp_path / "c.json", out=tmp_path / "o")
    assert r.code == 3 and "none.tgrid" in r.stderr


def test_all_black_image_exit_3(tmp_path):
    Image.fromarray(np.zeros((32, 32), np.uint8)).save(tmp_path / "black.png")
    r = run_cli("fit-image", "--image", tmp_path / "black.png", out=tmp_path / "o")
    assert r.code == 3 and "surface" in r.stderr


# ---------------------------------------------------------------- fit-sdf

@pytest.fixture(scope="module")
def small_sdf_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli_sdf")
    return {order: run_cli("fit-sdf", "--order", order, *SMALL_SDF, out=base / f"o{order}") for order in (0, 2)}


def test_fit_sdf_artifacts(small_sdf_runs):
    r = small_sdf_runs[2]
    assert r.code == 0, r.stderr
    for name in ("grid.tgrid", "mesh.obj", "report.json", "metrics.json", "trace.csv", "config.json"):
        assert (r.out / name).exists(), name
    assert 0 <= r.json("metrics.json")["iou"] <= 1
    assert "resolved config:" in r.stdout and "content hash:" in r.stdout
    rec = r.json("config.json")
    assert rec["seed"] == 0 and rec["config"]["grid"]["resolution"] == 8 and len(rec["content_hash"]) == 40


def test_fit_sdf_order_echo(small_sdf_runs):
    reports = {o: r.json("report.json") for o, r in small_sdf_runs.items()}
    assert reports[0]["order"] == 0 and reports[2]["order"] == 2
    assert reports[0]["config"]["order"] == 0 and reports[0] != reports[2]


def test_fit_sdf_from_sdfpts_and_mesh(tmp_path):
    from taylorgrid.geometry import MeshShape, sample_points
    write_obj(cube_mesh(1.2), tmp_path / "cube.obj")
    sample_points(MeshShape(cube_mesh(1.2)), 1000, seed=0).save(tmp_path / "s.sdfpts")
    r = run_cli("fit-sdf", "--sdfpts", tmp_path / "s.sdfpts", *SMALL_SDF, out=tmp_path / "o")
    assert r.code == 0, r.stderr
    assert "iou" in r.json("metrics.json")
    rec = r.json("config.json")
    assert any(k.endswith("s.sdfpts") for k in rec["inputs"])


def test_deterministic_reruns_identical(tmp_path):
    for name in ("a", "b"):
        assert run_cli("fit-sdf", "--deterministic", *SMALL_SDF, out=tmp_path / name).code == 0
    for f in ("trace.csv", "metrics.json", "report.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_extract_and_eval(small_sdf_runs, tmp_path):
    grid = small_sdf_runs[2].out / "grid.tgrid"
    r = run_cli("extract-mesh", "--grid", grid, "--extract.resolution", 16, out=tmp_path / "x")
    assert r.code == 0 and json.loads(r.stdout)["faces"] > 0
    mesh = tmp_path / "x" / "mesh.obj"
    e = run_cli("eval", "--mesh-a", mesh, "--mesh-b", mesh, "--eval.chamfer_points", 2000, out=tmp_path / "e")
    assert e.code == 0 and json.loads(e.stdout)["chamfer_l1"] == 0.0
    g = run_cli("eval", "--grid-a", grid, "--grid-b", grid, out=tmp_path / "g")
    assert g.code == 0 and json.loads(g.stdout)["iou"] == 1.0


# ---------------------------------------------------------------- fit-image

@pytest.fixture(scope="module")
def disk_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli_img")
    return {order: run_cli("fit-image", "--order", order, "--image.fixture", "disk", "--image.size", 256,
                           "--image.cell_pixels", 32, out=base / f"o{order}") for order in (0, 2)}


def test_fit_image_artifacts(disk_runs):
    r = disk_runs[2]
    assert r.code == 0, r.stderr
    for name in ("contour.png", "heatmap.png", "grid.tgrid", "metrics.json", "trace.csv"):
        assert (r.out / name).stat().st_size > 0, name


def test_fit_image_order_ordering(disk_runs):
    m0, m2 = disk_runs[0].json("metrics.json"), disk_runs[2].json("metrics.json")
    print(f"disk held-out band MSE: order0 {m0['heldout_band_mse']:.3g}, order2 {m2['heldout_band_mse']:.3g}")
    assert m0["cells"] == [8, 8]
    assert m2["heldout_band_mse"] < m0["heldout_band_mse"]


def test_extract_2d(disk_runs, tmp_path):
    r = run_cli("extract-mesh", "--grid", disk_runs[2].out / "grid.tgrid", "--extract.resolution", 64,
                out=tmp_path / "x")
    assert r.code == 0, r.stderr
    assert json.loads((tmp_path / "x" / "contours.json").read_text())["contours"]


# ---------------------------------------------------------------- fit-nerf / render

def test_fit_nerf_and_render(tmp_path):
    common = ("--resolution", 8, "--steps", 4, "--scene.views", 3, "--scene.size", 8, "--scene.holdout_views", 2)
    r = run_cli("fit-nerf", *common, out=tmp_path / "n")
    assert r.code == 0, r.stderr
    assert len(list((tmp_path / "n" / "renders").glob("*.png"))) == 2
    assert "psnr" in r.json("metrics.json")
    args = ("render", "--density", tmp_path / "n" / "density.tgrid", "--sh", tmp_path / "n" / "sh.npz",
            "--cameras", tmp_path / "n" / "cameras.json", "--render.seed", 3)
    a, b = run_cli(*args, out=tmp_path / "ra"), run_cli(*args, out=tmp_path / "rb")
    assert a.code == 0 and b.code == 0, a.stderr
    assert (tmp_path / "ra" / "render_000.png").read_bytes() == (tmp_path / "rb" / "render_000.png").read_bytes()
    img = tmp_path / "n" / "renders" / "view_000.png"
    e = run_cli("eval", "--image-a", img, "--image-b", img, out=tmp_path / "e")
    assert json.loads(e.stdout)["psnr"] == 200.0


# ---------------------------------------------------------------- bench

@pytest.mark.slow
def test_bench_table(tmp_path):
    # default bench scale: 32^3 sphere, 600 steps, 20k samples
    r = run_cli("bench", out=tmp_path / "b")
    assert r.code == 0, r.stderr
    rows = list(csv.DictReader(open(tmp_path / "b" / "bench.csv")))
    assert [int(x["order"]) for x in rows] == [0, 1, 2]
    assert [int(x["params_per_vertex"]) for x in rows] == [1, 4, 10]
    assert [int(x["params"]) for x in rows] == [32 ** 3, 4 * 32 ** 3, 10 * 32 ** 3]
    iou = {int(x["order"]): float(x["final_iou"]) for x in rows}
    print(f"bench final IoU: {iou}")
    assert iou[2] >= iou[0]
    assert "0,1,32768,600," in r.stdout
