"""Ground-truth signed distance: exact point-triangle distance plus ray parity."""

from __future__ import annotations

import numpy as np

from .mesh import TriMesh

_CHUNK_PAIRS = 1 << 20


class NotWatertightError(ValueError):
    pass


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def point_triangle_distance_sq(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Squared distance from points to triangles, fully broadcast.

    Closest-point construction by Voronoi region of the triangle; see Ericson,
    Real-Time Collision Detection, 5.1.5.
    """
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = _dot(ab, ap), _dot(ac, ap)
    bp = p - b
    d3, d4 = _dot(ab, bp), _dot(ac, bp)
    cp = p - c
    d5, d6 = _dot(ab, cp), _dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    denom = va + vb + vc
    safe = np.where(denom != 0, denom, 1.0)
    v = vb / safe
    w = vc / safe
    # default: interior
    q = a + v[..., None] * ab + w[..., None] * ac

    def put(mask, value):
        nonlocal q
        q = np.where(mask[..., None], value, q)

    # edge regions (assigned before vertex regions, which take priority)
    e_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
    t = (d4 - d3) / np.where(e_bc, (d4 - d3) + (d5 - d6), 1.0)
    put(e_bc, b + t[..., None] * (c - b))
    e_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    t = d2 / np.where(e_ac, d2 - d6, 1.0)
    put(e_ac, a + t[..., None] * ac)
    e_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    t = d1 / np.where(e_ab, d1 - d3, 1.0)
    put(e_ab, a + t[..., None] * ab)
    put((d6 >= 0) & (d5 <= d6), np.broadcast_to(c, q.shape))
    put((d3 >= 0) & (d4 <= d3), np.broadcast_to(b, q.shape))
    put((d1 <= 0) & (d2 <= 0), np.broadcast_to(a, q.shape))
    diff = p - q
    return _dot(diff, diff)


def unsigned_distance(mesh: TriMesh, points: np.ndarray) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    c = mesh.corners()
    out = np.empty(len(points))
    step = max(1, _CHUNK_PAIRS // max(len(c), 1))
    for s in range(0, len(points), step):
        p = points[s:s + step, None, :]
        d2 = point_triangle_distance_sq(p, c[None, :, 0], c[None, :, 1], c[None, :, 2])
        out[s:s + step] = np.sqrt(d2.min(axis=1))
    return out


def ray_triangle_hits(origins: np.ndarray, direction: np.ndarray, mesh: TriMesh, eps: float = 1e-12):
    """Möller-Trumbore; returns an (M, F) matrix of hit distances (inf where missed).

    ``direction`` is one (3,) vector or one per origin (M, 3).
    """
    c = mesh.corners()
    v0, e1, e2 = c[:, 0], c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]
    d = np.broadcast_to(np.asarray(direction, dtype=float), origins.shape)[:, None, :]
    pvec = np.cross(d, e2[None])
    det = _dot(e1[None], pvec)
    ok = np.abs(det) > eps
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = origins[:, None, :] - v0[None]
    u = _dot(tvec, pvec) * inv
    qvec = np.cross(tvec, e1[None])
    v = _dot(d, qvec) * inv
    t = _dot(e2[None], qvec) * inv
    hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > eps)
    return np.where(hit, t, np.inf)


def inside_parity(mesh: TriMesh, points: np.ndarray, n_rays: int = 3, seed: int = 12345) -> np.ndarray:
    """Majority vote over ``n_rays`` random directions of crossing-count parity."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_rays, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    votes = np.zeros(len(points), dtype=np.int64)
    step = max(1, _CHUNK_PAIRS // max(len(mesh.triangles), 1))
    for d in dirs:
        for s in range(0, len(points), step):
            hits = np.isfinite(ray_triangle_hits(points[s:s + step], d, mesh))
            votes[s:s + step] += hits.sum(axis=1) % 2
    return votes * 2 > n_rays


def signed_distance(mesh: TriMesh, points: np.ndarray, signed: bool = True) -> np.ndarray:
    """Distance to the mesh, negative inside.  Requires a watertight mesh when signed."""
    if signed and not mesh.watertight:
        raise NotWatertightError("mesh is not watertight; request unsigned distances (signed=False)")
    d = unsigned_distance(mesh, points)
    if signed:
        d = np.where(inside_parity(mesh, points), -d, d)
    return d


def signed_distance_oracle(mesh: TriMesh, point, signed: bool = True) -> float:
    return float(signed_distance(mesh, np.atleast_2d(point), signed)[0])
