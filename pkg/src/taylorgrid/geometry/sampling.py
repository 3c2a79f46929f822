"""Supervision points: uniform, near-surface and ray-hit samples in a 1:2:2 mix."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import formats
from ..sdf import SampleSet
from .mesh import TriMesh
from .oracle import ray_triangle_hits, signed_distance


class Shape:
    """What the sampler needs from a ground-truth surface."""

    def sdf(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def first_hit(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Distance along each ray to the first surface crossing, inf if none."""
        raise NotImplementedError

    def describe(self) -> str:
        return type(self).__name__


@dataclass
class SphereShape(Shape):
    radius: float = 0.5
    center: tuple = (0.0, 0.0, 0.0)

    def _c(self, dim):
        return np.asarray(self.center[:dim], dtype=float)

    def sdf(self, points):
        points = np.atleast_2d(points)
        return np.linalg.norm(points - self._c(points.shape[1]), axis=1) - self.radius

    def gradient(self, points):
        d = np.atleast_2d(points) - self._c(np.shape(points)[-1])
        return d / np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-300)

    def hessian(self, points):
        d = np.atleast_2d(points) - self._c(np.shape(points)[-1])
        r = np.maximum(np.linalg.norm(d, axis=1), 1e-300)
        n = d / r[:, None]
        eye = np.eye(d.shape[1])[None]
        return (eye - n[:, :, None] * n[:, None, :]) / r[:, None, None]

    def sample_surface(self, n, rng, dim: int = 3):
        x = rng.normal(size=(n, dim))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        return self._c(dim) + self.radius * x

    def first_hit(self, origins, dirs):
        oc = origins - self._c(origins.shape[1])
        b = np.einsum("ij,ij->i", oc, dirs)
        c = np.einsum("ij,ij->i", oc, oc) - self.radius ** 2
        disc = b * b - c
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0, t1 = -b - sq, -b + sq
        t = np.where(t0 > 0, t0, t1)
        return np.where((disc >= 0) & (t > 0), t, np.inf)

    def describe(self):
        return f"sphere(r={self.radius}, c={tuple(self.center)})"


@dataclass
class MeshShape(Shape):
    mesh: TriMesh
    signed: bool = True

    def sdf(self, points):
        return signed_distance(self.mesh, points, signed=self.signed)

    def sample_surface(self, n, rng):
        return self.mesh.sample_surface(n, rng)

    def first_hit(self, origins, dirs):
        out = np.empty(len(origins))
        step = max(1, (1 << 20) // max(len(self.mesh.triangles), 1))
        for s in range(0, len(origins), step):
            out[s:s + step] = ray_triangle_hits(origins[s:s + step], dirs[s:s + step], self.mesh).min(axis=1)
        return out

    def describe(self):
        return f"mesh({len(self.mesh.vertices)} verts, {len(self.mesh.triangles)} tris, {self.mesh.content_hash()[:12]})"


def split_counts(total: int, ratio: Sequence[float]) -> list[int]:
    """Integer counts proportional to ``ratio`` summing to ``total`` (largest remainder)."""
    if total <= 0:
        raise ValueError("total sample count must be positive")
    r = np.asarray(ratio, dtype=float)
    exact = total * r / r.sum()
    counts = np.floor(exact).astype(int)
    rem = total - counts.sum()
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[:rem]] += 1
    return counts.tolist()


def _boundary_points(n, lo, hi, rng):
    dim = len(lo)
    p = rng.uniform(lo, hi, size=(n, dim))
    axis = rng.integers(0, dim, size=n)
    side = rng.integers(0, 2, size=n)
    p[np.arange(n), axis] = np.where(side == 1, hi[axis], lo[axis])
    return p


def ray_samples(shape: Shape, n: int, sigma: float, lo, hi, rng, max_rounds: int = 50) -> np.ndarray:
    """Rays launched from the domain boundary at random interior targets; samples
    sit at the first hit, jittered along the ray by U(-sigma, sigma)."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    out = []
    have = 0
    for _ in range(max_rounds):
        if have >= n:
            break
        m = max(2 * (n - have), 64)
        o = _boundary_points(m, lo, hi, rng)
        target = rng.uniform(lo, hi, size=o.shape)
        d = target - o
        d /= np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-300)
        t = shape.first_hit(o, d)
        ok = np.isfinite(t)
        jitter = rng.uniform(-sigma, sigma, size=int(ok.sum()))
        p = o[ok] + (t[ok] + jitter)[:, None] * d[ok]
        p = p[np.all((p >= lo) & (p <= hi), axis=1)]
        out.append(p)
        have += len(p)
    if have < n:
        raise RuntimeError(f"ray sampling produced only {have}/{n} hits; does the shape lie in the domain?")
    return np.concatenate(out)[:n]


def sample_points(shape: Shape, total_n: int, ratio: Sequence[float] = (1, 2, 2), sigma_near: float = 0.02,
                  seed: int = 0, lo=(-1.0, -1.0, -1.0), hi=(1.0, 1.0, 1.0)) -> SampleSet:
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    n_u, n_n, n_r = split_counts(total_n, ratio)
    rng = np.random.default_rng(seed)
    uni = rng.uniform(lo, hi, size=(n_u, len(lo)))
    near = shape.sample_surface(n_n, rng) + rng.normal(scale=sigma_near, size=(n_n, len(lo)))
    near = np.clip(near, lo, hi)
    ray = ray_samples(shape, n_r, sigma_near, lo, hi, rng) if n_r else np.zeros((0, len(lo)))
    points = np.concatenate([uni, near, ray])
    source = np.repeat(np.arange(3, dtype=np.uint8), [n_u, n_n, n_r])
    sdf = shape.sdf(points)
    prov = {"shape": shape.describe(), "counts": dict(zip(formats.SOURCES, (n_u, n_n, n_r))),
            "seed": seed, "sigma_near": sigma_near}
    return SampleSet(points, sdf, source, prov)
