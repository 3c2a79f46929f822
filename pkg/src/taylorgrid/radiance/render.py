"""Cameras, rays and emission-absorption volume rendering with analytic gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from PIL import Image

from ..field import TaylorGrid, build_stencil, evaluate_stencil, scatter, value_contrib
from .sh import SHColorGrid, sigmoid

PSNR_CAP = 200.0


@dataclass
class Camera:
    focal: float
    cx: float
    cy: float
    width: int
    height: int
    c2w: np.ndarray  # (4, 4) camera-to-world

    def __post_init__(self):
        self.c2w = np.asarray(self.c2w, dtype=np.float64).reshape(4, 4)
        if not self.focal > 0:
            raise ValueError("focal length must be positive")
        R = self.c2w[:3, :3]
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-6:
            raise ValueError("camera rotation is not orthonormal")

    @property
    def origin(self) -> np.ndarray:
        return self.c2w[:3, 3]

    @classmethod
    def look_at(cls, eye, target=(0, 0, 0), up=(0, 0, 1), focal=80.0, width=64, height=64) -> "Camera":
        eye, target, up = (np.asarray(v, dtype=float) for v in (eye, target, up))
        back = eye - target
        back /= np.linalg.norm(back)
        right = np.cross(up, back)
        if np.linalg.norm(right) < 1e-9:
            right = np.cross((0.0, 1.0, 0.0), back)
        right /= np.linalg.norm(right)
        cam_up = np.cross(back, right)
        c2w = np.eye(4)
        c2w[:3, 0], c2w[:3, 1], c2w[:3, 2], c2w[:3, 3] = right, cam_up, back, eye
        return cls(focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height, c2w)

    def to_dict(self) -> dict:
        return {"focal": self.focal, "cx": self.cx, "cy": self.cy, "width": self.width,
                "height": self.height, "c2w": self.c2w.reshape(-1).tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(d["focal"], d["cx"], d["cy"], d["width"], d["height"], np.asarray(d["c2w"]).reshape(4, 4))


@dataclass
class RayBatch:
    origins: np.ndarray
    dirs: np.ndarray
    colors: Optional[np.ndarray] = None
    near: float = 0.0
    far: float = 1.0

    def __post_init__(self):
        if not self.near < self.far:
            raise ValueError("near must be smaller than far")
        n = np.linalg.norm(self.dirs, axis=1)
        if np.abs(n - 1).max(initial=0) > 1e-6:
            raise ValueError("ray directions must be unit length")

    def __len__(self):
        return len(self.origins)

    def subset(self, idx) -> "RayBatch":
        return RayBatch(self.origins[idx], self.dirs[idx],
                        None if self.colors is None else self.colors[idx], self.near, self.far)


def all_pixels(camera: Camera) -> np.ndarray:
    """(H*W, 2) integer (row, col) pairs in raster order."""
    r, c = np.meshgrid(np.arange(camera.height), np.arange(camera.width), indexing="ij")
    return np.stack([r.ravel(), c.ravel()], axis=1)


def generate_rays(camera: Camera, pixels=None, near: float = 0.0, far: float = 1.0, colors=None) -> RayBatch:
    """Pinhole rays through (row, col) pixels; image x right, y down, view along camera -z."""
    pixels = all_pixels(camera) if pixels is None else np.atleast_2d(np.asarray(pixels))
    rows, cols = pixels[:, 0], pixels[:, 1]
    if (rows < 0).any() or (rows >= camera.height).any() or (cols < 0).any() or (cols >= camera.width).any():
        raise ValueError("pixel outside the image")
    d_cam = np.stack([(cols - camera.cx) / camera.focal, -(rows - camera.cy) / camera.focal,
                      -np.ones(len(pixels))], axis=1)
    d = d_cam @ camera.c2w[:3, :3].T
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = np.broadcast_to(camera.origin, d.shape).copy()
    return RayBatch(o, d, colors, near, far)


# ---------------------------------------------------------------- density

@dataclass(frozen=True)
class DensityActivation:
    kind: str = "softplus"  # or "relu"
    shift: float = -10.0

    def __post_init__(self):
        if self.kind not in ("softplus", "relu"):
            raise ValueError(f"unknown density activation {self.kind!r}")

    def __call__(self, raw):
        if self.kind == "softplus":
            return np.logaddexp(0.0, raw + self.shift)
        return np.maximum(raw, 0.0)

    def derivative(self, raw):
        if self.kind == "softplus":
            return sigmoid(raw + self.shift)
        return (raw > 0).astype(np.float64)


def density(grid: TaylorGrid, x, activation: DensityActivation = DensityActivation()):
    single = np.ndim(x) == 1
    st = build_stencil(grid.spec, np.atleast_2d(x))
    sigma = activation(evaluate_stencil(grid, st))
    return float(sigma[0]) if single else sigma


# ---------------------------------------------------------------- quadrature

def composite(sigma: np.ndarray, delta: np.ndarray, colors: np.ndarray, background=None):
    """Emission-absorption quadrature over (R, N) samples.

    Returns ``(rgb (R, 3), weights (R, N), residual transmittance (R,))``.
    """
    sd = sigma * delta
    acc = np.cumsum(sd, axis=1)
    trans = np.exp(-np.concatenate([np.zeros((len(sd), 1)), acc[:, :-1]], axis=1))
    weights = trans * (-np.expm1(-sd))
    residual = np.exp(-acc[:, -1]) if sd.shape[1] else np.ones(len(sd))
    rgb = np.einsum("rn,rnc->rc", weights, colors)
    if background is not None:
        rgb = rgb + residual[:, None] * np.asarray(background, dtype=float)
    return rgb, weights, residual


def composite_backward(sigma, delta, colors, weights, residual, grad_rgb, background=None):
    """d loss / d sigma (R, N) and d loss / d colors (R, N, 3) given d loss / d rgb."""
    wc = np.einsum("rnc,rc->rn", colors, grad_rgb)  # c_i . g
    g_colors = weights[..., None] * grad_rgb[:, None, :]
    # contribution of samples strictly after i, plus the background term
    after = np.cumsum((weights * wc)[:, ::-1], axis=1)[:, ::-1]
    after = np.concatenate([after[:, 1:], np.zeros((len(after), 1))], axis=1)
    if background is not None:
        after = after + (residual * (grad_rgb @ np.asarray(background, dtype=float)))[:, None]
    trans_next = np.exp(-np.cumsum(sigma * delta, axis=1))
    g_sigma = delta * (trans_next * wc - after)
    return g_sigma, g_colors


def ray_box(origins, dirs, lo, hi, near, far):
    """Per-ray [t_near, t_far] clipped to the axis-aligned box; empty rays get t_near == t_far."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    tmin = np.nanmax(np.minimum(t0, t1), axis=1)
    tmax = np.nanmin(np.maximum(t0, t1), axis=1)
    tn = np.maximum(tmin, near)
    tf = np.minimum(tmax, far)
    empty = ~(tf > tn)
    tn = np.where(empty, near, tn)
    tf = np.where(empty, near, tf)
    return tn, tf


def stratified_t(tn, tf, n_samples, rng: Optional[np.random.Generator]):
    """Sample distances (R, N) and spacings with the last spacing running to ``tf``.

    ``rng=None`` puts samples at bin starts, so the spacings tile [tn, tf] exactly.
    """
    u = np.zeros((len(tn), n_samples)) if rng is None else rng.random((len(tn), n_samples))
    span = (tf - tn)[:, None]
    t = tn[:, None] + span * (np.arange(n_samples) + u) / n_samples
    delta = np.diff(np.concatenate([t, tf[:, None]], axis=1), axis=1)
    return t, delta


@dataclass
class RenderConfig:
    n_samples: int = 64
    background: tuple = (1.0, 1.0, 1.0)
    activation: DensityActivation = DensityActivation()
    clip_to_grid: bool = True
    chunk: int = 1024
    # samples whose weight falls below this skip color evaluation (treated as black); 0 keeps all
    weight_threshold: float = 0.0


@dataclass
class RenderResult:
    rgb: np.ndarray
    weights: np.ndarray
    residual: np.ndarray
    t: np.ndarray


def _sample_rays(density_grid, rays: RayBatch, cfg: RenderConfig, rng):
    if cfg.clip_to_grid:
        tn, tf = ray_box(rays.origins, rays.dirs, density_grid.spec.lo, density_grid.spec.hi, rays.near, rays.far)
    else:
        tn = np.full(len(rays), rays.near)
        tf = np.full(len(rays), rays.far)
    t, delta = stratified_t(tn, tf, cfg.n_samples, rng)
    pts = rays.origins[:, None, :] + t[..., None] * rays.dirs[:, None, :]
    return t, delta, pts.reshape(-1, 3)


def _forward(density_grid, shgrid, rays, cfg, rng, keep=False):
    R, N = len(rays), cfg.n_samples
    t, delta, pts = _sample_rays(density_grid, rays, cfg, rng)
    st_d = build_stencil(density_grid.spec, pts)
    raw = evaluate_stencil(density_grid, st_d)
    sigma = cfg.activation(raw).reshape(R, N)
    bg = cfg.background
    if cfg.weight_threshold > 0:
        _, w0, _ = composite(sigma, delta, np.zeros((R, N, 3)))
        live = np.flatnonzero(w0.reshape(-1) >= cfg.weight_threshold)
    else:
        live = None
    same = shgrid.spec.resolution == density_grid.spec.resolution and \
        shgrid.spec.extent == density_grid.spec.extent and shgrid.spec.origin == density_grid.spec.origin
    if live is None:
        st_c = st_d if same else build_stencil(shgrid.spec, pts)
        dirs = np.repeat(rays.dirs, N, axis=0)
        colors = sigmoid(shgrid.raw_color(None, dirs, stencil=st_c)).reshape(R, N, 3)
    else:
        st_c = build_stencil(shgrid.spec, pts[live])
        dirs = rays.dirs[live // N]
        colors = np.zeros((R * N, 3))
        colors[live] = sigmoid(shgrid.raw_color(None, dirs, stencil=st_c))
        colors = colors.reshape(R, N, 3)
    rgb, weights, residual = composite(sigma, delta, colors, bg)
    ctx = (st_d, st_c, raw, sigma, delta, colors, dirs, weights, residual, live) if keep else None
    return RenderResult(rgb, weights, residual, t), ctx


def render_rays(density_grid: TaylorGrid, shgrid: SHColorGrid, rays: RayBatch, cfg: RenderConfig = RenderConfig(),
                rng: Optional[np.random.Generator] = None) -> RenderResult:
    """Render a batch of rays; ``rng=None`` places samples at bin starts."""
    parts = [_forward(density_grid, shgrid, rays.subset(slice(s, s + cfg.chunk)), cfg, rng)[0]
             for s in range(0, len(rays), cfg.chunk)]
    return RenderResult(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("rgb", "weights", "residual", "t")))


def render_ray(density_grid, shgrid, origin, direction, n_samples: int = 64, near: float = 0.0, far: float = 1.0,
               background=None, activation: DensityActivation = DensityActivation(), rng=None):
    """Single-ray convenience wrapper; ``background=None`` composites over black."""
    if n_samples < 1:
        raise ValueError("need at least one sample per ray")
    rays = RayBatch(np.atleast_2d(origin).astype(float), np.atleast_2d(direction).astype(float), None, near, far)
    cfg = RenderConfig(n_samples, background, activation, clip_to_grid=False)
    res = render_rays(density_grid, shgrid, rays, cfg, rng)
    return res.rgb[0], res.weights[0]


def photometric_loss(density_grid: TaylorGrid, shgrid: SHColorGrid, rays: RayBatch, cfg: RenderConfig = RenderConfig(),
                     rng: Optional[np.random.Generator] = None, grad_density: Optional[np.ndarray] = None,
                     grad_sh: Optional[np.ndarray] = None) -> float:
    """Mean over rays of the squared RGB error, with gradients into both grids."""
    if len(rays) == 0:
        raise ValueError("empty ray batch")
    if rays.colors is None:
        raise ValueError("rays carry no ground-truth colors")
    total = 0.0
    want_grad = grad_density is not None or grad_sh is not None
    for s in range(0, len(rays), cfg.chunk):
        sub = rays.subset(slice(s, s + cfg.chunk))
        res, ctx = _forward(density_grid, shgrid, sub, cfg, rng, keep=want_grad)
        err = res.rgb - sub.colors
        total += float(np.sum(err * err))
        if not want_grad:
            continue
        st_d, st_c, raw, sigma, delta, colors, dirs, weights, residual, live = ctx
        g_rgb = 2.0 * err / len(rays)
        g_sigma, g_colors = composite_backward(sigma, delta, colors, weights, residual, g_rgb, cfg.background)
        if grad_density is not None:
            g_raw = g_sigma.reshape(-1) * cfg.activation.derivative(raw)
            scatter(grad_density, st_d, value_contrib(st_d, g_raw))
        if grad_sh is not None:
            c = colors.reshape(-1, 3)
            g_raw_c = g_colors.reshape(-1, 3) * c * (1.0 - c)
            if live is not None:
                g_raw_c = g_raw_c[live]
            shgrid.backprop(st_c, dirs, g_raw_c, grad_sh)
    return total / len(rays)


def render_image(density_grid, shgrid, camera: Camera, near: float, far: float, cfg: RenderConfig = RenderConfig(),
                 seed: Optional[int] = None) -> np.ndarray:
    """(H, W, 3) float image.  ``seed`` jitters samples reproducibly; None uses bin starts."""
    rays = generate_rays(camera, None, near, far)
    rng = None if seed is None else np.random.default_rng(seed)
    return render_rays(density_grid, shgrid, rays, cfg, rng).rgb.reshape(camera.height, camera.width, 3)


def render_alpha(density_grid, shgrid, camera: Camera, near: float, far: float, cfg: RenderConfig = RenderConfig()):
    rays = generate_rays(camera, None, near, far)
    res = render_rays(density_grid, shgrid, rays, cfg)
    return (1.0 - res.residual).reshape(camera.height, camera.width)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(img: np.ndarray, path) -> None:
    Image.fromarray(to_uint8(img)).save(path, optimize=False)


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def psnr(img_a: np.ndarray, img_b: np.ndarray) -> float:
    """10 log10(1 / MSE) for images in [0, 1]; identical images give ``inf``."""
    a, b = np.asarray(img_a, dtype=np.float64), np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)


def report_psnr(value: float) -> float:
    """Finite stand-in for JSON reports."""
    return PSNR_CAP if math.isinf(value) else value
