"""Image-based signed distance fields for 2D experiments."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from ..field import GridSpec
from .mesh import IngestionError


class NoSurfaceError(ValueError):
    pass


@dataclass
class Image2D:
    pixels: np.ndarray  # (H, W) in [0, 1]

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2 or min(self.pixels.shape) < 2:
            raise ValueError(f"image must be 2-D with both sides >= 2, got {self.pixels.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.height, self.width))

    @classmethod
    def load(cls, path) -> "Image2D":
        path = Path(path)
        if not path.exists():
            raise IngestionError(f"image file not found: {path}")
        try:
            with Image.open(path) as im:
                return cls(np.asarray(im.convert("L"), dtype=np.float64) / 255.0)
        except OSError as e:
            raise IngestionError(f"{path}: {e}") from None

    def save(self, path) -> None:
        Image.fromarray(np.round(np.clip(self.pixels, 0, 1) * 255).astype(np.uint8)).save(path)

    def inverted(self) -> "Image2D":
        return Image2D(1.0 - self.pixels)


def binarize(img: Image2D, threshold: float = 0.5) -> np.ndarray:
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    fg = img.pixels > threshold
    if fg.all() or not fg.any():
        raise NoSurfaceError("binarized image is uniform; there is no surface")
    return fg


def image_sdf_pixels(img: Image2D, threshold: float = 0.5) -> np.ndarray:
    """Signed distance in pixels between pixel centres, negative in the foreground."""
    fg = binarize(img, threshold)
    # edt(mask) = distance from each True pixel to the nearest False pixel
    return ndimage.distance_transform_edt(~fg) - ndimage.distance_transform_edt(fg)


def image_sdf(img: Image2D, threshold: float = 0.5) -> np.ndarray:
    """Signed distance normalised by the image diagonal."""
    return image_sdf_pixels(img, threshold) / img.diagonal


def image_domain(img: Image2D, order: int, cells: tuple[int, int]) -> GridSpec:
    """Grid over pixel centres in diagonal units: pixel (i, j) sits at (i, j) / diagonal."""
    ext = ((img.height - 1) / img.diagonal, (img.width - 1) / img.diagonal)
    return GridSpec(2, (cells[0] + 1, cells[1] + 1), (0.0, 0.0), ext, order)


def pixel_points(img: Image2D) -> np.ndarray:
    """(H*W, 2) domain coordinates of all pixel centres, row-major."""
    i, j = np.meshgrid(np.arange(img.height), np.arange(img.width), indexing="ij")
    return np.stack([i.ravel(), j.ravel()], axis=1) / img.diagonal


def disk_image(size: int = 64, radius: float = 20.0, center=None) -> Image2D:
    c = (size - 1) / 2.0 if center is None else center
    i, j = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    return Image2D(((i - c) ** 2 + (j - c) ** 2 <= radius ** 2).astype(float))


def glyph_image(size: int = 256, seed: int = 0) -> Image2D:
    """A handwriting-like stroke glyph: a few thick random Bezier strokes."""
    rng = np.random.default_rng(seed)
    im = Image.new("L", (size, size), 0)
    draw = ImageDraw.Draw(im)
    width = max(2, size // 14)
    for _ in range(3):
        ctrl = rng.uniform(0.2 * size, 0.8 * size, size=(4, 2))
        t = np.linspace(0, 1, 64)[:, None]
        curve = ((1 - t) ** 3 * ctrl[0] + 3 * (1 - t) ** 2 * t * ctrl[1]
                 + 3 * (1 - t) * t ** 2 * ctrl[2] + t ** 3 * ctrl[3])
        pts = [tuple(p) for p in curve]
        draw.line(pts, fill=255, width=width, joint="curve")
        for p in (pts[0], pts[-1]):
            r = width / 2
            draw.ellipse([p[0] - r, p[1] - r, p[0] + r, p[1] + r], fill=255)
    return Image2D(np.asarray(im, dtype=np.float64) / 255.0)


def image_cells(img: Image2D, cell_pixels: float) -> tuple[int, int]:
    """Cell counts giving roughly ``cell_pixels`` pixels per cell along each axis."""
    if cell_pixels <= 0:
        raise ValueError("cell_pixels must be positive")
    return (max(1, round((img.height - 1) / cell_pixels)), max(1, round((img.width - 1) / cell_pixels)))


def fit_image(img: Image2D, order: int, cells: tuple[int, int], cfg, schedule=None, lr: float = 0.003,
              seed: int = 0, holdout: float = 0.2, threshold: float = 0.5):
    """Fit a 2-D grid to an image's SDF on a random pixel subset.

    Returns ``(grid, report, trace, sdf)``.  ``report.metrics`` gains
    ``heldout_mse`` (all held-out pixels) and ``heldout_band_mse`` (held-out
    pixels inside the near-surface band, see :func:`near_surface_mse`).
    """
    from ..field import evaluate
    from ..optim import Schedule
    from ..sdf import SampleSet, fit_sdf, near_surface_mse

    if not 0 <= holdout < 1:
        raise ValueError("holdout fraction must lie in [0, 1)")
    sdf = image_sdf(img, threshold)
    pts = pixel_points(img)
    vals = sdf.reshape(-1)
    perm = np.random.default_rng(seed).permutation(len(vals))
    n_hold = int(round(holdout * len(vals)))
    hold, train = perm[:n_hold], perm[n_hold:]
    spec = image_domain(img, order, cells)
    samples = SampleSet(pts[train], vals[train], np.zeros(len(train)),
                        {"image": [img.height, img.width], "threshold": threshold, "holdout": holdout})
    schedule = schedule or Schedule.single(spec.resolution[0], 1000, dim=2)
    grid, report, trace = fit_sdf(samples, spec, cfg, schedule, lr=lr, seed=seed)
    if n_hold:
        err = evaluate(grid, pts[hold]) - vals[hold]
        report.metrics["heldout_mse"] = float(np.mean(err * err))
        report.metrics["heldout_band_mse"] = near_surface_mse(grid, pts[hold], vals[hold])
    report.metrics["cells"] = [int(c) for c in cells]
    return grid, report, trace, sdf
