"""Signed-distance fitting: weighted reconstruction, eikonal and TV terms."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import formats
from .field import (GridSpec, Stencil, TaylorGrid, backprop_gradients, backprop_values,
                    build_stencil, evaluate, evaluate_stencil, gradient_contrib, init_grid, scatter,
                    value_contrib)
from .optim import Model, Schedule, StepResult, run_schedule

log = logging.getLogger(__name__)

SOURCE_CODES = {name: i for i, name in enumerate(formats.SOURCES)}


@dataclass
class LossConfig:
    lambda1: float = 1e-4  # eikonal
    lambda2: float = 2e-5  # total variation
    k: float = 50.0
    use_weighting: bool = True
    use_tv: bool = True
    batch_size: int = 8192
    eikonal_points: str = "reuse-batch"  # or "fresh-uniform"
    weight_gradient: bool = False  # differentiate through the adaptive weight

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")
        if not self.k > 0:
            raise ValueError("weight sharpness k must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.eikonal_points not in ("reuse-batch", "fresh-uniform"):
            raise ValueError(f"unknown eikonal point source {self.eikonal_points!r}")


@dataclass
class SampleSet:
    points: np.ndarray  # (N, D)
    sdf: np.ndarray  # (N,)
    source: np.ndarray  # (N,) uint8 codes into formats.SOURCES
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.sdf = np.asarray(self.sdf, dtype=np.float64).reshape(-1)
        self.source = np.asarray(self.source, dtype=np.uint8).reshape(-1)
        if self.points.ndim != 2 or len(self.points) != len(self.sdf) or len(self.sdf) != len(self.source):
            raise ValueError("points, sdf and source must agree in length")
        if not np.isfinite(self.sdf).all():
            raise ValueError("ground-truth SDF values must be finite")

    def __len__(self):
        return len(self.sdf)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def counts(self) -> dict:
        return {name: int(np.sum(self.source == code)) for name, code in SOURCE_CODES.items()}

    def subset(self, idx) -> "SampleSet":
        return SampleSet(self.points[idx], self.sdf[idx], self.source[idx], dict(self.provenance))

    def save(self, path) -> None:
        formats.save_sdfpts(path, self.points, self.sdf, self.source)

    @classmethod
    def load(cls, path) -> "SampleSet":
        p, d, s = formats.load_sdfpts(path)
        return cls(p, d, s, {"path": str(path)})


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def surface_weight(d, k: float):
    """1 - |2 sigmoid(k d) - 1|: 1 on the surface, decaying to 0 away from it."""
    return 1.0 - np.abs(2.0 * _sigmoid(k * np.asarray(d)) - 1.0)


def adaptive_weight(d_hat, d, k: float):
    if not k > 0:
        raise ValueError("k must be positive")
    w = np.maximum(surface_weight(d_hat, k), surface_weight(d, k))
    return float(w) if np.ndim(w) == 0 else w


def _surface_weight_deriv(d, k):
    s = _sigmoid(k * d)
    return -np.sign(2.0 * s - 1.0) * 2.0 * k * s * (1.0 - s)


def _recon_terms(pred, gt_sdf, cfg: LossConfig):
    """Return the weighted L1 loss and its derivative with respect to ``pred``."""
    r = pred - gt_sdf
    if cfg.use_weighting:
        wp, wg = surface_weight(pred, cfg.k), surface_weight(gt_sdf, cfg.k)
        w = np.maximum(wp, wg)
    else:
        w = np.ones_like(r)
    up = w * np.sign(r)
    if cfg.use_weighting and cfg.weight_gradient:
        up = up + np.where(wp >= wg, _surface_weight_deriv(pred, cfg.k), 0.0) * np.abs(r)
    return float(np.mean(w * np.abs(r))), up / r.size


def _eikonal_terms(spatial_grad):
    norm = np.linalg.norm(spatial_grad, axis=1)
    safe = np.where(norm > 0, norm, 1.0)
    coef = np.where(norm > 0, 2.0 * (norm - 1.0) / safe, 0.0) / len(norm)
    return float(np.mean((norm - 1.0) ** 2)), coef[:, None] * spatial_grad


def recon_loss(grid: TaylorGrid, points, gt_sdf, cfg: LossConfig, grad_accum: Optional[np.ndarray] = None,
               stencil: Optional[Stencil] = None) -> float:
    """Mean of w(x) |d_hat(x) - d(x)|, the weight held constant unless configured otherwise."""
    gt_sdf = np.asarray(gt_sdf, dtype=np.float64).reshape(-1)
    if gt_sdf.size == 0:
        raise ValueError("empty batch")
    st = stencil if stencil is not None else build_stencil(grid.spec, points)
    loss, up = _recon_terms(evaluate_stencil(grid, st), gt_sdf, cfg)
    if grad_accum is not None:
        backprop_values(grid, st, up, grad_accum)
    return loss


def eikonal_loss(grid: TaylorGrid, points=None, grad_accum: Optional[np.ndarray] = None,
                 stencil: Optional[Stencil] = None) -> float:
    """Mean of (|grad f| - 1)^2.  Zero-norm points contribute a zero subgradient."""
    st = stencil if stencil is not None else build_stencil(grid.spec, points, with_grad=True)
    if len(st) == 0:
        raise ValueError("empty point set")
    _, sgrad = evaluate_stencil(grid, st, with_grad=True)
    loss, up = _eikonal_terms(sgrad)
    if grad_accum is not None:
        backprop_gradients(grid, st, up, grad_accum)
    return loss


def tv_loss(grid: TaylorGrid, grad_accum: Optional[np.ndarray] = None) -> float:
    """Squared differences of neighbouring vertices.

    Per axis the mean over that axis's neighbour pairs, summed over axes and
    averaged over the K coefficient channels.
    """
    K = grid.K
    x = grid.coeffs.reshape(*grid.spec.resolution, K)
    g = None if grad_accum is None else grad_accum.reshape(x.shape)
    total = 0.0
    for a in range(grid.dim):
        hi = [slice(None)] * grid.dim
        lo = [slice(None)] * grid.dim
        hi[a], lo[a] = slice(1, None), slice(None, -1)
        hi, lo = tuple(hi), tuple(lo)
        diff = x[hi] - x[lo]
        scale = 1.0 / diff.size
        flat = diff.reshape(-1)
        total += scale * float(np.dot(flat, flat))
        if g is not None:
            diff *= 2.0 * scale
            g[hi] += diff
            g[lo] -= diff
    return total


def total_loss(grid: TaylorGrid, points, gt_sdf, cfg: LossConfig, grad_accum: Optional[np.ndarray] = None,
               eik_points=None) -> tuple[float, dict]:
    """recon + lambda1 * eikonal + lambda2 * TV; returns ``(loss, terms)``."""
    gt_sdf = np.asarray(gt_sdf, dtype=np.float64).reshape(-1)
    if gt_sdf.size == 0:
        raise ValueError("empty batch")
    need_eik = cfg.lambda1 > 0
    reuse = eik_points is None and cfg.eikonal_points == "reuse-batch"
    st = build_stencil(grid.spec, points, with_grad=need_eik and reuse)
    if need_eik and reuse:
        pred, sgrad = evaluate_stencil(grid, st, with_grad=True)
    else:
        pred = evaluate_stencil(grid, st)
    recon, up = _recon_terms(pred, gt_sdf, cfg)
    contrib = value_contrib(st, up) if grad_accum is not None else None
    eik = 0.0
    if need_eik:
        if reuse:
            eik, up_e = _eikonal_terms(sgrad)
            if contrib is not None:
                contrib += gradient_contrib(grid, st, cfg.lambda1 * up_e)
        else:
            st_e = build_stencil(grid.spec, eik_points, with_grad=True)
            eik, up_e = _eikonal_terms(evaluate_stencil(grid, st_e, with_grad=True)[1])
            if grad_accum is not None:
                scatter(grad_accum, st_e, gradient_contrib(grid, st_e, cfg.lambda1 * up_e))
    if contrib is not None:
        scatter(grad_accum, st, contrib)
    tv = 0.0
    if cfg.use_tv and cfg.lambda2 > 0:
        if grad_accum is not None:
            g2 = np.zeros_like(grad_accum)
            tv = tv_loss(grid, g2)
            g2 *= cfg.lambda2
            grad_accum += g2
        else:
            tv = tv_loss(grid)
    loss = recon + cfg.lambda1 * eik + cfg.lambda2 * tv
    return loss, {"recon": recon, "eik": eik, "tv": tv}


# the weighted loss concentrates on the zero level set; held-out errors are measured inside this band
SURFACE_BAND = 0.01


def near_surface_mse(grid: TaylorGrid, points, gt_sdf, band: float = SURFACE_BAND) -> float:
    """Mean squared SDF error over the points with ``|gt_sdf| < band``."""
    gt_sdf = np.asarray(gt_sdf, dtype=np.float64).reshape(-1)
    keep = np.abs(gt_sdf) < band
    if not keep.any():
        raise ValueError(f"no points inside the |sdf| < {band} band")
    err = evaluate(grid, np.asarray(points)[keep]) - gt_sdf[keep]
    return float(np.mean(err * err))


@dataclass
class FitReport:
    final_loss: float
    terms: dict
    stage_seconds: list
    config: dict
    metrics: dict = field(default_factory=dict)
    order: int = 2
    parameter_count: int = 0

    def to_json(self, include_timing: bool = True) -> str:
        d = asdict(self)
        if not include_timing:
            d.pop("stage_seconds")
        return json.dumps(d, indent=2, sort_keys=True)


def fit_sdf(samples: SampleSet, spec: GridSpec, cfg: LossConfig, schedule: Schedule, lr: float = 0.003,
            seed: int = 0, init: Optional[TaylorGrid] = None,
            metrics: Optional[dict[str, Callable[[TaylorGrid], float]]] = None,
            callback: Optional[Callable] = None):
    """Fit a grid to the samples; returns ``(grid, report, trace)``.

    ``spec`` fixes order and domain; the schedule supplies resolutions.
    ``callback(model, stage, step)`` runs after every optimizer step.
    """
    if len(samples) == 0:
        raise ValueError("no samples to fit")
    if samples.dim != spec.dim:
        raise ValueError(f"samples are {samples.dim}-D, grid is {spec.dim}-D")
    rng = np.random.default_rng(seed)
    n = len(samples)
    bs = min(cfg.batch_size, n)

    def problem(model: Model, step: int) -> StepResult:
        grid = model.grids[0]
        idx = rng.integers(0, n, size=bs) if bs < n else slice(None)
        eik_pts = None
        if cfg.eikonal_points == "fresh-uniform":
            eik_pts = rng.uniform(grid.spec.lo, grid.spec.hi, size=(bs, grid.dim))
        grad = np.zeros_like(grid.coeffs)
        loss, terms = total_loss(grid, samples.points[idx], samples.sdf[idx], cfg, grad, eik_points=eik_pts)
        return StepResult(loss, [grad], terms)

    first = schedule.stages[0].resolution
    grid = init if init is not None else init_grid(spec.with_resolution(first))
    grid, trace, stage_seconds = run_schedule(problem, schedule, grid, lr=lr, callback=callback)
    final_loss, terms = total_loss(grid, samples.points, samples.sdf, cfg)
    results = {name: float(fn(grid)) for name, fn in (metrics or {}).items()}
    report = FitReport(final_loss, terms, stage_seconds,
                       {"loss": asdict(cfg), "lr": lr, "seed": seed,
                        "schedule": [[list(s.resolution), s.steps] for s in schedule.stages],
                        "order": spec.order, "dim": spec.dim,
                        "origin": list(spec.origin), "extent": list(spec.extent)},
                       results, spec.order, grid.parameter_count)
    return grid, report, trace
