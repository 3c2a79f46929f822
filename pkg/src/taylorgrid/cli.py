"""``taylorgrid`` command line: fitting, rendering, extraction, evaluation and benchmarks.

Every command takes an optional JSON config (``--config``) and flat dotted
overrides such as ``--loss.lambda1 1e-4``.  Exit codes: 0 success, 2 config
error, 3 ingestion error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .field import GridSpec, ResourceError, evaluate, sample_field
from .formats import FormatError, load_tgrid, save_tgrid
from .optim import NumericalError, Schedule, Stage
from .sdf import LossConfig, SampleSet, fit_sdf, near_surface_mse

log = logging.getLogger("taylorgrid")

EXIT_OK, EXIT_CONFIG, EXIT_INGEST, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


BASE_DEFAULTS = {
    "seed": 0,
    "out": "run",
    "threads": None,
    "deterministic": False,
    "lr": 0.003,
    "grid": {"order": 2, "resolution": 64, "lo": -1.0, "hi": 1.0},
    "schedule": {"steps": 1500, "levels": 3, "stages": None},
    "loss": asdict(LossConfig()),
    "data": {"mesh": None, "sdfpts": None, "shape": "sphere", "radius": 0.5, "n_samples": 50000,
             "ratio": [1, 2, 2], "sigma_near": 0.02, "heldout_samples": 20000},
    "eval": {"iou_samples": 100000, "chamfer_points": 100000, "mesh_resolution": None},
    "image": {"path": None, "fixture": "disk", "size": 256, "threshold": 0.5, "invert": False,
              "cell_pixels": 32, "holdout": 0.2},
    "scene": {"path": None, "views": 20, "size": 64, "holdout_views": 5, "holdout_seed": 99},
    "sh_degree": 2,
    "nerf": None,
    "render": {"density": None, "sh": None, "scene": None, "cameras": None, "seed": None},
    "extract": {"grid": None, "resolution": None, "isolevel": 0.0, "output": None},
    "evaluate": {"mesh_a": None, "mesh_b": None, "grid_a": None, "grid_b": None, "image_a": None, "image_b": None},
    "bench": {"orders": [0, 1, 2], "target_iou": 0.99, "check_every": 50, "check_samples": 20000},
}

COMMAND_DEFAULTS = {
    "fit-image": {"schedule": {"steps": 1000, "levels": 1}, "loss": {"batch_size": 8192}},
    "fit-nerf": {"schedule": {"steps": 600, "levels": 3}},
    "bench": {"grid": {"resolution": 32}, "schedule": {"steps": 600},
              "data": {"n_samples": 20000}, "eval": {"iou_samples": 100000}},
}


def _nerf_defaults():
    from .radiance import NerfConfig
    return asdict(NerfConfig())


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        key = f"{path}{k}"
        if k not in out:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(out[k], dict) and isinstance(v, dict):
            out[k] = _merge(out[k], v, key + ".")
        elif isinstance(out[k], dict) and not isinstance(v, dict):
            raise ConfigError(f"config key {key!r} must be an object")
        else:
            out[k] = v
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_overrides(tokens: list[str]) -> dict:
    """``--a.b value`` / ``--a.b=value`` pairs into a nested dict."""
    over: dict = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"override {tok} needs a value")
            raw = tokens[i + 1]
            i += 2
        node = over
        parts = key.replace("-", "_").split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"conflicting overrides for {key!r}")
        node[parts[-1]] = _parse_value(raw)
    return over


def resolve_config(command: str, config_path=None, overrides: dict | None = None) -> dict:
    defaults = copy.deepcopy(BASE_DEFAULTS)
    defaults["nerf"] = _nerf_defaults()
    cfg = _merge(defaults, COMMAND_DEFAULTS.get(command, {}))
    if config_path is not None:
        p = Path(config_path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            cfg = _merge(cfg, json.loads(p.read_text()))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}: invalid JSON ({e})") from None
    cfg = _merge(cfg, overrides or {})
    validate_config(cfg)
    return cfg


def _check(cond, msg):
    if not cond:
        raise ConfigError(msg)


def validate_config(cfg: dict) -> None:
    """Build every typed object once so bad values fail before any compute."""
    g = cfg["grid"]
    _check(isinstance(g["resolution"], int) and g["resolution"] >= 2, "grid.resolution must be an integer >= 2")
    _check(g["order"] in (0, 1, 2), "grid.order must be 0, 1 or 2")
    _check(float(g["hi"]) > float(g["lo"]), "grid.hi must exceed grid.lo")
    _check(cfg["threads"] is None or (isinstance(cfg["threads"], int) and cfg["threads"] >= 1),
           "threads must be a positive integer")
    _check(isinstance(cfg["seed"], int), "seed must be an integer")
    _check(float(cfg["lr"]) > 0, "lr must be positive")
    try:
        LossConfig(**cfg["loss"])
        build_schedule(cfg, 3)
        from .radiance import NerfConfig
        NerfConfig(**cfg["nerf"])
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    d = cfg["data"]
    _check(d["shape"] in ("sphere",), "data.shape must be 'sphere'")
    _check(float(d["radius"]) > 0, "data.radius must be positive")
    _check(int(d["n_samples"]) >= 1, "data.n_samples must be positive")
    _check(cfg["image"]["fixture"] in ("disk", "glyph"), "image.fixture must be 'disk' or 'glyph'")
    _check(float(cfg["image"]["cell_pixels"]) > 0, "image.cell_pixels must be positive")
    _check(0 <= float(cfg["image"]["holdout"]) < 1, "image.holdout must lie in [0, 1)")
    _check(cfg["sh_degree"] in (0, 1, 2), "sh_degree must be 0, 1 or 2")
    _check(int(cfg["scene"]["views"]) >= 1, "scene.views must be positive")
    _check(set(cfg["bench"]["orders"]) <= {0, 1, 2}, "bench.orders must be drawn from 0, 1, 2")


def build_schedule(cfg: dict, dim: int) -> Schedule:
    s = cfg["schedule"]
    if s["stages"]:
        stages = [Stage(tuple(np.broadcast_to(np.atleast_1d(r), (dim,)).tolist()), int(n)) for r, n in s["stages"]]
        return Schedule(stages)
    return Schedule.progressive(int(cfg["grid"]["resolution"]), int(s["steps"]), dim, int(s["levels"]))


# ---------------------------------------------------------------- run directory helpers

def blob_hash(data: bytes) -> str:
    """Git blob id of ``data``."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def input_hashes(paths) -> dict:
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for f in sorted(q for q in p.rglob("*") if q.is_file()):
                out[str(f)] = blob_hash(f.read_bytes())
        elif p.exists():
            out[str(p)] = blob_hash(p.read_bytes())
    return out


def content_hash(cfg: dict, hashes: dict) -> str:
    stable = {k: v for k, v in cfg.items() if k not in ("out", "threads")}
    payload = json.dumps({"config": stable, "inputs": sorted(hashes.values())}, sort_keys=True).encode()
    return blob_hash(payload)


def prepare_run(cfg: dict, inputs) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    hashes = input_hashes([p for p in inputs if p])
    h = content_hash(cfg, hashes)
    record = {"config": cfg, "seed": cfg["seed"], "inputs": hashes, "content_hash": h}
    (out / "config.json").write_text(json.dumps(record, indent=2, sort_keys=True))
    print("resolved config: " + json.dumps(cfg, sort_keys=True))
    print(f"content hash: {h}")
    return out


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _require(path, what):
    from .geometry import IngestionError
    if path is None:
        raise ConfigError(f"{what} path is required")
    p = Path(path)
    if not p.exists():
        raise IngestionError(f"{what} not found: {p}")
    return p


# ---------------------------------------------------------------- fit-sdf

def _sdf_problem(cfg: dict):
    """Samples, ground-truth shape (or None) and ground-truth mesh (or None)."""
    from .geometry import MeshShape, SphereShape, icosphere, load_mesh, sample_points
    d = cfg["data"]
    lo, hi = (float(cfg["grid"]["lo"]),) * 3, (float(cfg["grid"]["hi"]),) * 3
    if d["sdfpts"]:
        samples = SampleSet.load(_require(d["sdfpts"], "sample file"))
        shape = gt_mesh = None
        if d["mesh"]:
            gt_mesh = load_mesh(_require(d["mesh"], "mesh"))
            shape = MeshShape(gt_mesh)
        return samples, shape, gt_mesh
    if d["mesh"]:
        gt_mesh = load_mesh(_require(d["mesh"], "mesh"))
        shape = MeshShape(gt_mesh)
    else:
        shape = SphereShape(float(d["radius"]))
        gt_mesh = icosphere(5, float(d["radius"]))
    samples = sample_points(shape, int(d["n_samples"]), d["ratio"], float(d["sigma_near"]), cfg["seed"], lo, hi)
    return samples, shape, gt_mesh


def _sdf_metrics(cfg, grid, shape, gt_mesh, samples) -> dict:
    from .geometry import chamfer_l1, extract_mesh, iou, sample_points
    metrics = {}
    e = cfg["eval"]
    spec = grid.spec
    if shape is not None:
        metrics["iou"] = iou(lambda p: evaluate(grid, p), shape.sdf, int(e["iou_samples"]), cfg["seed"] + 1,
                             spec.lo, spec.hi)
        held = sample_points(shape, int(cfg["data"]["heldout_samples"]), cfg["data"]["ratio"],
                             float(cfg["data"]["sigma_near"]), cfg["seed"] + 2, spec.lo, spec.hi)
        try:
            metrics["heldout_band_mse"] = near_surface_mse(grid, held.points, held.sdf)
        except ValueError:
            pass
    else:
        uni = samples.source == 0
        if uni.any():
            pred_in = evaluate(grid, samples.points[uni]) < 0
            gt_in = samples.sdf[uni] < 0
            union = np.sum(pred_in | gt_in)
            metrics["iou"] = float(np.sum(pred_in & gt_in) / union) if union else 1.0
    mesh = extract_mesh(grid, e["mesh_resolution"])
    metrics["mesh_faces"] = int(len(mesh.triangles))
    if gt_mesh is not None and not mesh.is_empty:
        metrics["chamfer_l1"] = chamfer_l1(mesh, gt_mesh, int(e["chamfer_points"]), cfg["seed"])
    return metrics, mesh


def cmd_fit_sdf(cfg: dict) -> int:
    from .geometry import write_obj
    samples, shape, gt_mesh = _sdf_problem(cfg)
    out = prepare_run(cfg, [cfg["data"]["mesh"], cfg["data"]["sdfpts"]])
    g = cfg["grid"]
    spec = GridSpec.cube(int(g["resolution"]), int(g["order"]), 3, float(g["lo"]), float(g["hi"]))
    loss = LossConfig(**cfg["loss"])
    grid, report, trace = fit_sdf(samples, spec, loss, build_schedule(cfg, 3), float(cfg["lr"]), cfg["seed"])
    metrics, mesh = _sdf_metrics(cfg, grid, shape, gt_mesh, samples)
    report.metrics.update(metrics)
    save_tgrid(grid, out / "grid.tgrid")
    write_obj(mesh, out / "mesh.obj")
    det = cfg["deterministic"]
    (out / "report.json").write_text(report.to_json(include_timing=not det) + "\n")
    write_json(out / "metrics.json", {"order": grid.order, "parameter_count": grid.parameter_count, **metrics})
    trace.write_csv(out / "trace.csv", deterministic=det)
    log.info("fit-sdf done: %s", json.dumps(metrics, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------- fit-image

def _load_image(cfg):
    from .geometry import Image2D, disk_image, glyph_image
    im = cfg["image"]
    if im["path"]:
        img = Image2D.load(_require(im["path"], "image"))
    elif im["fixture"] == "glyph":
        img = glyph_image(int(im["size"]), cfg["seed"])
    else:
        size = int(im["size"])
        img = disk_image(size, 0.3125 * size)
    return img.inverted() if im["invert"] else img


def _save_image_plots(out: Path, img, grid, sdf):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from .geometry import marching_squares, pixel_points

    pred = evaluate(grid, pixel_points(img)).reshape(sdf.shape)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(img.pixels, cmap="gray", origin="upper")
    for line in marching_squares(pred):
        ax.plot(line[:, 1], line[:, 0], color="tab:red", lw=1.5)
    ax.set_axis_off()
    fig.savefig(out / "contour.png", dpi=100, bbox_inches="tight")
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5.8, 5))
    im = ax.imshow(np.abs(pred - sdf), cmap="magma", origin="upper")
    fig.colorbar(im, ax=ax, label="|SDF error|")
    ax.set_axis_off()
    fig.savefig(out / "heatmap.png", dpi=100, bbox_inches="tight")
    plt.close(fig)


def cmd_fit_image(cfg: dict) -> int:
    from .geometry import binarize, fit_image, image_cells
    img = _load_image(cfg)
    binarize(img, float(cfg["image"]["threshold"]))
    out = prepare_run(cfg, [cfg["image"]["path"]])
    cells = image_cells(img, float(cfg["image"]["cell_pixels"]))
    s = cfg["schedule"]
    if s["stages"]:
        sched = build_schedule(cfg, 2)
    else:
        # per-axis vertex counts follow the image aspect ratio; coarse levels halve the cell counts
        levels = int(s["levels"])
        per = [int(s["steps"]) // levels + (1 if i < int(s["steps"]) % levels else 0) for i in range(levels)]
        sched = Schedule([Stage(tuple(max(1, c // 2 ** (levels - 1 - i)) + 1 for c in cells), n)
                          for i, n in enumerate(per)])
    loss = LossConfig(**cfg["loss"])
    grid, report, trace, sdf = fit_image(img, int(cfg["grid"]["order"]), cells, loss, sched, float(cfg["lr"]),
                                         cfg["seed"], float(cfg["image"]["holdout"]),
                                         float(cfg["image"]["threshold"]))
    save_tgrid(grid, out / "grid.tgrid")
    _save_image_plots(out, img, grid, sdf)
    det = cfg["deterministic"]
    (out / "report.json").write_text(report.to_json(include_timing=not det) + "\n")
    write_json(out / "metrics.json", {"order": grid.order, "parameter_count": grid.parameter_count,
                                      **report.metrics})
    trace.write_csv(out / "trace.csv", deterministic=det)
    return EXIT_OK


# ---------------------------------------------------------------- fit-nerf / render

def _load_scene(cfg):
    from .radiance import PosedImages, orbit_cameras, toy_scene
    sc = cfg["scene"]
    if sc["path"]:
        scene = PosedImages.load(_require(sc["path"], "scene directory"))
        k = int(sc["holdout_views"])
        if k and len(scene) - k >= 2:
            hold = PosedImages(scene.images[-k:], scene.cameras[-k:], scene.near, scene.far, scene.background)
            scene = PosedImages(scene.images[:-k], scene.cameras[:-k], scene.near, scene.far, scene.background)
        else:
            hold = None
        return scene, hold
    scene, spheres = toy_scene(int(sc["views"]), int(sc["size"]), cfg["seed"])
    hold = None
    if int(sc["holdout_views"]):
        cams = orbit_cameras(int(sc["holdout_views"]), 4.0, int(sc["size"]), seed=int(sc["holdout_seed"]))
        hold = PosedImages(np.stack([spheres.render(c)[0] for c in cams]), cams, scene.near, scene.far,
                           scene.background)
    return scene, hold


def cmd_fit_nerf(cfg: dict) -> int:
    from .radiance import NerfConfig, fit_nerf, render_image, save_png
    scene, hold = _load_scene(cfg)
    out = prepare_run(cfg, [cfg["scene"]["path"]])
    g = cfg["grid"]
    spec = GridSpec.cube(int(g["resolution"]), int(g["order"]), 3, float(g["lo"]), float(g["hi"]))
    ncfg = NerfConfig(**{**cfg["nerf"], "seed": cfg["nerf"]["seed"] + cfg["seed"]})
    density, shgrid, report, trace = fit_nerf(scene, spec, int(cfg["sh_degree"]), ncfg, build_schedule(cfg, 3), hold)
    save_tgrid(density, out / "density.tgrid")
    shgrid.save(out / "sh.npz")
    views = hold if hold is not None else scene
    rdir = out / "renders"
    rdir.mkdir(exist_ok=True)
    rcfg = ncfg.render_config(scene.background)
    for i, cam in enumerate(views.cameras):
        save_png(render_image(density, shgrid, cam, views.near, views.far, rcfg), rdir / f"view_{i:03d}.png")
    write_json(out / "cameras.json", {"near": views.near, "far": views.far, "background": list(views.background),
                                      "cameras": [c.to_dict() for c in views.cameras]})
    det = cfg["deterministic"]
    (out / "report.json").write_text(report.to_json(include_timing=not det) + "\n")
    write_json(out / "metrics.json", {"order": density.order, "psnr": report.psnr,
                                      "parameter_count": density.parameter_count})
    trace.write_csv(out / "trace.csv", deterministic=det)
    log.info("fit-nerf done: PSNR %.2f dB", report.psnr)
    return EXIT_OK


def _render_cameras(cfg):
    from .geometry import IngestionError
    from .radiance import Camera, PosedImages
    r = cfg["render"]
    if r["scene"]:
        sc = PosedImages.load(_require(r["scene"], "scene directory"))
        return sc.cameras, sc.near, sc.far, sc.background
    p = _require(r["cameras"], "camera file")
    try:
        d = json.loads(p.read_text())
        cams = [Camera.from_dict(c) for c in d["cameras"]]
        return cams, float(d["near"]), float(d["far"]), tuple(d.get("background", (1, 1, 1)))
    except (KeyError, TypeError, ValueError) as e:
        raise IngestionError(f"{p}: malformed camera file ({e})") from None


def cmd_render(cfg: dict) -> int:
    from .radiance import NerfConfig, SHColorGrid, render_image, save_png
    r = cfg["render"]
    density = load_tgrid(_require(r["density"], "density grid"))
    sh_path = _require(r["sh"], "SH grid")
    cams, near, far, bg = _render_cameras(cfg)
    out = prepare_run(cfg, [r["density"], r["sh"], r["scene"], r["cameras"]])
    shgrid = SHColorGrid.load(sh_path)
    rcfg = NerfConfig(**cfg["nerf"]).render_config(bg)
    for i, cam in enumerate(cams):
        seed = None if r["seed"] is None else int(r["seed"]) + i
        save_png(render_image(density, shgrid, cam, near, far, rcfg, seed), out / f"render_{i:03d}.png")
    return EXIT_OK


# ---------------------------------------------------------------- extract / eval

def cmd_extract(cfg: dict) -> int:
    from .geometry import extract_mesh, marching_squares, write_obj
    e = cfg["extract"]
    grid = load_tgrid(_require(e["grid"], "grid"))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    if grid.dim == 3:
        mesh = extract_mesh(grid, e["resolution"], float(e["isolevel"]))
        target = Path(e["output"]) if e["output"] else out / "mesh.obj"
        write_obj(mesh, target)
        print(json.dumps({"faces": int(len(mesh.triangles)), "vertices": int(len(mesh.vertices)),
                          "output": str(target)}))
    else:
        res = tuple(grid.spec.resolution) if e["resolution"] is None else (int(e["resolution"]),) * 2
        field = sample_field(grid, res)
        spacing = grid.spec.extent / (np.asarray(res) - 1)
        lines = marching_squares(field, float(e["isolevel"]), grid.spec.lo, spacing)
        target = Path(e["output"]) if e["output"] else out / "contours.json"
        write_json(target, {"contours": [line.tolist() for line in lines]})
        print(json.dumps({"contours": len(lines), "output": str(target)}))
    return EXIT_OK


def cmd_eval(cfg: dict) -> int:
    from .geometry import chamfer_l1, iou, load_mesh
    from .radiance import load_png, psnr, report_psnr
    e = cfg["evaluate"]
    metrics = {}
    if e["mesh_a"] or e["mesh_b"]:
        a = load_mesh(_require(e["mesh_a"], "mesh_a"), normalize=False)
        b = load_mesh(_require(e["mesh_b"], "mesh_b"), normalize=False)
        metrics["chamfer_l1"] = chamfer_l1(a, b, int(cfg["eval"]["chamfer_points"]), cfg["seed"])
    if e["grid_a"] or e["grid_b"]:
        ga = load_tgrid(_require(e["grid_a"], "grid_a"))
        gb = load_tgrid(_require(e["grid_b"], "grid_b"))
        if ga.dim != gb.dim:
            raise ConfigError("grids differ in dimension")
        metrics["iou"] = iou(lambda p: evaluate(ga, p), lambda p: evaluate(gb, p), int(cfg["eval"]["iou_samples"]),
                             cfg["seed"], ga.spec.lo, ga.spec.hi)
    if e["image_a"] or e["image_b"]:
        ia = load_png(_require(e["image_a"], "image_a"))
        ib = load_png(_require(e["image_b"], "image_b"))
        if ia.shape != ib.shape:
            raise ConfigError(f"image shapes differ: {ia.shape} vs {ib.shape}")
        metrics["psnr"] = report_psnr(psnr(ia, ib))
    if not metrics:
        raise ConfigError("eval needs a mesh, grid or image pair")
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------- bench

BENCH_COLUMNS = ("order", "params_per_vertex", "params", "steps", "wall_seconds", "seconds_to_target", "final_iou")


def run_bench(cfg: dict) -> list[dict]:
    from .field import coeff_count
    from .geometry import SphereShape, iou, sample_points
    b, g = cfg["bench"], cfg["grid"]
    shape = SphereShape(float(cfg["data"]["radius"]))
    lo, hi = (float(g["lo"]),) * 3, (float(g["hi"]),) * 3
    samples = sample_points(shape, int(cfg["data"]["n_samples"]), cfg["data"]["ratio"],
                            float(cfg["data"]["sigma_near"]), cfg["seed"], lo, hi)
    schedule = build_schedule(cfg, 3)
    rows = []
    for order in b["orders"]:
        spec = GridSpec.cube(int(g["resolution"]), order, 3, float(g["lo"]), float(g["hi"]))
        hit = {"t": None}
        t0 = time.perf_counter()

        def check(model, stage, step, order=order):
            if hit["t"] is not None or (step + 1) % int(b["check_every"]):
                return
            grid = model.grids[0]
            if iou(lambda p: evaluate(grid, p), shape.sdf, int(b["check_samples"]), cfg["seed"], lo, hi) \
                    >= float(b["target_iou"]):
                hit["t"] = time.perf_counter() - t0

        grid, report, _ = fit_sdf(samples, spec, LossConfig(**cfg["loss"]), schedule, float(cfg["lr"]), cfg["seed"],
                                  callback=check)
        wall = time.perf_counter() - t0
        final = iou(lambda p: evaluate(grid, p), shape.sdf, int(cfg["eval"]["iou_samples"]), cfg["seed"] + 1, lo, hi)
        rows.append({"order": order, "params_per_vertex": coeff_count(order, 3), "params": grid.parameter_count,
                     "steps": schedule.total_steps, "wall_seconds": round(wall, 3),
                     "seconds_to_target": "" if hit["t"] is None else round(hit["t"], 3), "final_iou": final})
        log.info("bench order %d: %s", order, rows[-1])
    return rows


def cmd_bench(cfg: dict) -> int:
    out = prepare_run(cfg, [])
    rows = run_bench(cfg)
    params = [r["params"] for r in sorted(rows, key=lambda r: r["order"])]
    if any(b <= a for a, b in zip(params, params[1:])):
        raise NumericalError(f"parameter counts are not increasing with order: {params}")
    with open(out / "bench.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=BENCH_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(",".join(str(r[c]) for c in BENCH_COLUMNS))
    return EXIT_OK


# ---------------------------------------------------------------- entry point

COMMANDS = {
    "fit-sdf": cmd_fit_sdf,
    "fit-image": cmd_fit_image,
    "fit-nerf": cmd_fit_nerf,
    "render": cmd_render,
    "extract-mesh": cmd_extract,
    "eval": cmd_eval,
    "bench": cmd_bench,
}

# shortcut flags -> dotted config keys
SHORTCUTS = {
    "out": "out", "seed": "seed", "order": "grid.order", "resolution": "grid.resolution",
    "steps": "schedule.steps", "threads": "threads",
    "mesh": "data.mesh", "sdfpts": "data.sdfpts", "image": "image.path", "scene": "scene.path",
    "density": "render.density", "sh": "render.sh", "cameras": "render.cameras", "grid": "extract.grid",
    "output": "extract.output", "mesh_a": "evaluate.mesh_a", "mesh_b": "evaluate.mesh_b",
    "grid_a": "evaluate.grid_a", "grid_b": "evaluate.grid_b", "image_a": "evaluate.image_a",
    "image_b": "evaluate.image_b",
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="taylorgrid", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, help="thread cap (default: $TAYLORGRID_THREADS)")
        p.add_argument("--deterministic", action="store_true", help="omit timings; single-threaded reductions")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("fit-sdf", "fit-image", "fit-nerf", "bench"):
            p.add_argument("--order", type=int)
            p.add_argument("--resolution", type=int)
            p.add_argument("--steps", type=int)
        if name == "fit-sdf":
            p.add_argument("--mesh")
            p.add_argument("--sdfpts")
        if name == "fit-image":
            p.add_argument("--image")
        if name == "fit-nerf":
            p.add_argument("--scene")
        if name == "render":
            p.add_argument("--density")
            p.add_argument("--sh")
            p.add_argument("--cameras")
            p.add_argument("--scene", dest="render_scene")
        if name == "extract-mesh":
            p.add_argument("--grid")
            p.add_argument("--output")
        if name == "eval":
            for k in ("mesh-a", "mesh-b", "grid-a", "grid-b", "image-a", "image-b"):
                p.add_argument(f"--{k}")
    return ap


def _shortcut_overrides(args: argparse.Namespace) -> dict:
    over: dict = {}
    flat = dict(vars(args))
    if flat.get("render_scene") is not None:
        over.setdefault("render", {})["scene"] = flat["render_scene"]
    for k, key in SHORTCUTS.items():
        v = flat.get(k)
        if v is None:
            continue
        node = over
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = v
    if args.deterministic:
        over["deterministic"] = True
    return over


def _thread_cap(cfg: dict) -> int | None:
    if cfg["threads"] is not None:
        return int(cfg["threads"])
    if cfg["deterministic"]:
        return 1
    env = os.environ.get("TAYLORGRID_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"TAYLORGRID_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError("TAYLORGRID_THREADS must be positive")
        return n
    return None


def main(argv=None) -> int:
    from .geometry import IngestionError, NoSurfaceError, NotWatertightError

    ap = build_parser()
    args, rest = ap.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        over = _merge_dicts(parse_overrides(rest), _shortcut_overrides(args))
        cfg = resolve_config(args.command, args.config, over)
        cap = _thread_cap(cfg)
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=cap):
            return COMMANDS[args.command](cfg)
    except (ConfigError, ResourceError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (IngestionError, NoSurfaceError, NotWatertightError, FormatError, FileNotFoundError) as e:
        print(f"ingestion error: {e}", file=sys.stderr)
        return EXIT_INGEST
    except NumericalError as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC


def _merge_dicts(a: dict, b: dict) -> dict:
    out = copy.deepcopy(a)
    for k, v in b.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge_dicts(out[k], v)
        else:
            out[k] = v
    return out


if __name__ == "__main__":
    sys.exit(main())
