"""Joint photometric training of a density TaylorGrid and an SH color grid."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..field import GridSpec, coeff_count, init_grid
from ..optim import Model, Schedule, StepResult, run_schedule
from ..sdf import tv_loss
from .render import DensityActivation, RayBatch, RenderConfig, all_pixels, generate_rays, photometric_loss, psnr, \
    render_image, report_psnr
from .scene import PosedImages
from .sh import SHColorGrid


@dataclass
class NerfConfig:
    batch_rays: int = 1024
    n_samples: int = 64
    lr_density: float = 0.1
    lr_sh: float = 0.05
    # derivative channels get lr/h and lr/h**2 so one step moves values near a cell edge alike
    cell_scaled_lr: bool = True
    lambda_tv: float = 0.0
    sh_resolution: Optional[int] = None  # None: follow the density grid through the schedule
    activation: str = "softplus"
    density_shift: float = -10.0
    weight_threshold: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.batch_rays < 1 or self.n_samples < 1:
            raise ValueError("batch_rays and n_samples must be positive")
        if self.lr_density <= 0 or self.lr_sh <= 0:
            raise ValueError("learning rates must be positive")
        if self.lambda_tv < 0:
            raise ValueError("lambda_tv must be non-negative")
        DensityActivation(self.activation, self.density_shift)

    def render_config(self, background) -> RenderConfig:
        return RenderConfig(self.n_samples, tuple(background), DensityActivation(self.activation, self.density_shift),
                            weight_threshold=self.weight_threshold)


@dataclass
class NerfReport:
    psnr: float
    view_psnr: list
    train_seconds: float
    stage_seconds: list
    config: dict
    order: int
    parameter_count: int
    sh_parameter_count: int
    final_photometric: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_json(self, include_timing: bool = True) -> str:
        d = asdict(self)
        if not include_timing:
            d.pop("stage_seconds")
            d.pop("train_seconds")
        return json.dumps(d, indent=2, sort_keys=True)


def scene_rays(scene: PosedImages) -> RayBatch:
    """Every pixel of every view as one ray batch with ground-truth colors."""
    o, d, c = [], [], []
    for img, cam in zip(scene.images, scene.cameras):
        r = generate_rays(cam, all_pixels(cam), scene.near, scene.far)
        o.append(r.origins)
        d.append(r.dirs)
        c.append(img.reshape(-1, 3))
    return RayBatch(np.concatenate(o), np.concatenate(d), np.concatenate(c), scene.near, scene.far)


def _lr_vector(spec: GridSpec, base: float, cell_scaled: bool):
    if spec.order == 0 or not cell_scaled:
        return base
    K = coeff_count(spec.order, spec.dim)
    h = float(np.mean(spec.spacing))
    per = np.empty(K)
    per[0] = base
    per[1:1 + spec.dim] = base / h
    per[1 + spec.dim:] = base / (h * h)
    return np.tile(per, spec.vertex_count)


def evaluate_views(density_grid, shgrid, views: PosedImages, cfg: RenderConfig):
    """Mean PSNR over the views plus the per-view list (deterministic bin-start sampling)."""
    vals = []
    for img, cam in zip(views.images, views.cameras):
        pred = render_image(density_grid, shgrid, cam, views.near, views.far, cfg)
        vals.append(report_psnr(psnr(pred, img)))
    return float(np.mean(vals)), vals


def fit_nerf(scene: PosedImages, density_spec: GridSpec, sh_degree: int = 2, cfg: NerfConfig = NerfConfig(),
             schedule: Optional[Schedule] = None, holdout: Optional[PosedImages] = None):
    """Fit density and color grids to posed images.

    ``density_spec`` fixes order and domain; the schedule supplies density
    resolutions.  Returns ``(density_grid, shgrid, report, trace)``; the report
    PSNR is measured on ``holdout`` when given, otherwise on the training views.
    """
    if len(scene) < 2:
        raise ValueError(f"need at least 2 training views, got {len(scene)}")
    schedule = schedule or Schedule.single(density_spec.resolution[0], 1000)
    rcfg = cfg.render_config(scene.background)
    rays = scene_rays(scene)
    rng = np.random.default_rng(cfg.seed)
    n = len(rays)
    bs = min(cfg.batch_rays, n)

    first = schedule.stages[0].resolution
    density = init_grid(density_spec.with_resolution(first))
    sh_res = first if cfg.sh_resolution is None else (cfg.sh_resolution,) * 3
    shgrid = SHColorGrid.zeros(density_spec.with_resolution(sh_res), sh_degree)
    model = Model([density, shgrid], [cfg.lr_density, cfg.lr_sh], [True, cfg.sh_resolution is None])

    def problem(m: Model, step: int) -> StepResult:
        dg, sg = m.grids
        batch = rays.subset(rng.integers(0, n, size=bs))
        gd = np.zeros_like(dg.coeffs)
        gs = np.zeros_like(sg.coeffs)
        photo = photometric_loss(dg, sg, batch, rcfg, rng, gd, gs)
        loss, terms = photo, {"photometric": photo}
        if cfg.lambda_tv > 0:
            gtv = np.zeros_like(dg.coeffs)
            tv = tv_loss(dg, gtv)
            gd += cfg.lambda_tv * gtv
            loss += cfg.lambda_tv * tv
            terms["tv"] = tv
        return StepResult(loss, [gd, gs], terms)

    def on_stage(m: Model):
        m.lrs[0] = _lr_vector(m.grids[0].spec, cfg.lr_density, cfg.cell_scaled_lr)

    on_stage(model)
    t0 = time.perf_counter()
    model, trace, stage_seconds = run_schedule(problem, schedule, model, stage_hook=on_stage)
    train_seconds = time.perf_counter() - t0
    density, shgrid = model.grids

    views = holdout if holdout is not None else scene
    mean_psnr, per_view = evaluate_views(density, shgrid, views, rcfg)
    report = NerfReport(mean_psnr, per_view, train_seconds, stage_seconds,
                        {"nerf": asdict(cfg), "sh_degree": sh_degree,
                         "schedule": [[list(s.resolution), s.steps] for s in schedule.stages],
                         "order": density_spec.order, "origin": list(density_spec.origin),
                         "extent": list(density_spec.extent), "holdout": holdout is not None},
                        density_spec.order, density.parameter_count, shgrid.parameter_count,
                        float(trace.rows[-1]["photometric"]) if trace.rows else 0.0)
    return density, shgrid, report, trace
