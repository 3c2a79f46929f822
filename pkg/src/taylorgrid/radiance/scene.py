"""Posed-image scenes: manifest I/O and an analytic toy scene of shaded spheres."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..geometry.mesh import IngestionError
from .render import Camera, generate_rays, load_png, save_png


@dataclass
class PosedImages:
    images: np.ndarray  # (V, H, W, 3) in [0, 1]
    cameras: list
    near: float
    far: float
    background: tuple = (1.0, 1.0, 1.0)

    def __len__(self):
        return len(self.cameras)

    def save(self, directory) -> None:
        """Write ``manifest.json`` plus one PNG per view."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        frames = []
        for i, (img, cam) in enumerate(zip(self.images, self.cameras)):
            name = f"view_{i:03d}.png"
            save_png(img, d / name)
            frames.append({"file": name, "transform_matrix": cam.c2w.reshape(-1).tolist()})
        c0 = self.cameras[0]
        manifest = {"intrinsics": {"focal": c0.focal, "cx": c0.cx, "cy": c0.cy, "width": c0.width,
                                   "height": c0.height},
                    "near": self.near, "far": self.far, "background": list(self.background), "frames": frames}
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, directory) -> "PosedImages":
        d = Path(directory)
        mpath = d / "manifest.json"
        if not mpath.exists():
            raise IngestionError(f"scene manifest not found: {mpath}")
        try:
            m = json.loads(mpath.read_text())
            intr = m["intrinsics"]
            cams, imgs = [], []
            for fr in m["frames"]:
                c2w = np.asarray(fr["transform_matrix"], dtype=float).reshape(4, 4)
                cams.append(Camera(intr["focal"], intr["cx"], intr["cy"], intr["width"], intr["height"], c2w))
                p = d / fr["file"]
                if not p.exists():
                    raise IngestionError(f"image not found: {p}")
                imgs.append(load_png(p))
        except (KeyError, TypeError, ValueError) as e:
            raise IngestionError(f"{mpath}: malformed manifest ({e})") from None
        return cls(np.stack(imgs), cams, float(m["near"]), float(m["far"]), tuple(m.get("background", (1, 1, 1))))


@dataclass
class ToySpheres:
    """Opaque Lambertian spheres under a fixed directional light."""
    centers: np.ndarray = field(default_factory=lambda: np.array([[-0.35, -0.25, -0.1], [0.4, -0.1, 0.15],
                                                                  [0.0, 0.4, 0.0]]))
    radii: np.ndarray = field(default_factory=lambda: np.array([0.35, 0.3, 0.28]))
    colors: np.ndarray = field(default_factory=lambda: np.array([[0.9, 0.15, 0.1], [0.15, 0.8, 0.2],
                                                                 [0.15, 0.3, 0.9]]))
    light: tuple = (0.4, -0.5, 0.77)
    ambient: float = 0.35
    background: tuple = (1.0, 1.0, 1.0)

    def trace(self, origins, dirs):
        """Colors (R, 3) and a hit mask (R,)."""
        best = np.full(len(origins), np.inf)
        which = np.full(len(origins), -1)
        for k, (c, r) in enumerate(zip(self.centers, self.radii)):
            oc = origins - c
            b = np.einsum("ij,ij->i", oc, dirs)
            disc = b * b - (np.einsum("ij,ij->i", oc, oc) - r * r)
            t = -b - np.sqrt(np.maximum(disc, 0.0))
            hit = (disc > 0) & (t > 0) & (t < best)
            best = np.where(hit, t, best)
            which = np.where(hit, k, which)
        mask = which >= 0
        rgb = np.broadcast_to(np.asarray(self.background, dtype=float), (len(origins), 3)).copy()
        if mask.any():
            idx = which[mask]
            p = origins[mask] + best[mask, None] * dirs[mask]
            n = (p - self.centers[idx]) / self.radii[idx, None]
            L = np.asarray(self.light) / np.linalg.norm(self.light)
            shade = self.ambient + (1 - self.ambient) * np.clip(n @ L, 0.0, 1.0)
            rgb[mask] = self.colors[idx] * shade[:, None]
        return rgb, mask

    def render(self, camera: Camera):
        rays = generate_rays(camera)
        rgb, mask = self.trace(rays.origins, rays.dirs)
        return rgb.reshape(camera.height, camera.width, 3), mask.reshape(camera.height, camera.width)


def orbit_cameras(n: int, radius: float = 4.0, size: int = 64, focal: float = None, seed: int = 0,
                  elevation=(-0.3, 1.0)) -> list:
    """Cameras on a sphere around the origin (fibonacci spiral in azimuth, jittered elevation)."""
    rng = np.random.default_rng(seed)
    focal = focal if focal is not None else 1.1 * size
    cams = []
    golden = np.pi * (3.0 - np.sqrt(5.0))
    for i in range(n):
        az = i * golden + rng.uniform(0, 0.1)
        el = rng.uniform(*elevation)
        eye = radius * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        cams.append(Camera.look_at(eye, focal=focal, width=size, height=size))
    return cams


def toy_scene(n_views: int = 20, size: int = 64, seed: int = 0, radius: float = 4.0) -> tuple[PosedImages, ToySpheres]:
    scene = ToySpheres()
    cams = orbit_cameras(n_views, radius, size, seed=seed)
    imgs = np.stack([scene.render(c)[0] for c in cams])
    return PosedImages(imgs, cams, radius - 2.0, radius + 2.0, scene.background), scene
