"""Reconstruction metrics: Monte-Carlo IoU and symmetric Chamfer-L1."""

from __future__ import annotations

import logging

import numpy as np
from scipy.spatial import cKDTree

from .mesh import TriMesh

log = logging.getLogger(__name__)


def iou(field_pred, field_gt, n: int = 100_000, seed: int = 0, lo=(-1.0, -1.0, -1.0),
        hi=(1.0, 1.0, 1.0), chunk: int = 1 << 17) -> float:
    """IoU of the inside sets ``{f < 0}`` over ``n`` uniform points in the box."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    pts = np.random.default_rng(seed).uniform(lo, hi, size=(n, len(lo)))
    inter = union = 0
    for s in range(0, n, chunk):
        p = pts[s:s + chunk]
        a = np.asarray(field_pred(p)) < 0
        b = np.asarray(field_gt(p)) < 0
        inter += int(np.sum(a & b))
        union += int(np.sum(a | b))
    if union == 0:
        log.warning("IoU: both inside sets are empty; returning 1.0")
        return 1.0
    return inter / union


def _mesh_seed(mesh: TriMesh, seed: int) -> np.random.Generator:
    # the sample set depends only on (mesh, seed), so argument order cannot matter
    h = int(mesh.content_hash()[:16], 16)
    return np.random.default_rng([seed, h])


def chamfer_l1(mesh_a: TriMesh, mesh_b: TriMesh, n_points: int = 100_000, seed: int = 0) -> float:
    """0.5 * (mean_a min_b |a - b| + mean_b min_a |a - b|) over area-weighted samples."""
    if mesh_a.is_empty or mesh_b.is_empty:
        raise ValueError("chamfer distance needs two non-empty meshes")
    pa = mesh_a.sample_surface(n_points, _mesh_seed(mesh_a, seed))
    pb = mesh_b.sample_surface(n_points, _mesh_seed(mesh_b, seed))
    return chamfer_points(pa, pb)


def chamfer_points(pa: np.ndarray, pb: np.ndarray) -> float:
    da, _ = cKDTree(pb).query(pa)
    db, _ = cKDTree(pa).query(pb)
    return 0.5 * float(da.mean()) + 0.5 * float(db.mean())
