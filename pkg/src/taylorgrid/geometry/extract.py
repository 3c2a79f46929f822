"""Zero level-set extraction from sampled scalar grids."""

from __future__ import annotations

import logging

import numpy as np
from skimage import measure

from ..field import TaylorGrid, sample_field
from .mesh import TriMesh

log = logging.getLogger(__name__)


def marching_cubes(field: np.ndarray, isolevel: float = 0.0, lo=(0.0, 0.0, 0.0), spacing=(1.0, 1.0, 1.0)) -> TriMesh:
    """Triangulate ``{field == isolevel}``; face normals point toward larger values.

    ``field[i, j, k]`` is the value at ``lo + (i, j, k) * spacing``.  A field
    without a crossing yields an empty mesh.
    """
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 3 or min(field.shape) < 2:
        raise ValueError(f"need a 3-D field with >= 2 samples per axis, got {field.shape}")
    if not np.isfinite(field).all():
        raise ValueError("field contains non-finite values")
    if not (field.min() < isolevel < field.max()):
        log.info("no crossing of level %g; returning an empty mesh", isolevel)
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    verts, faces, _, _ = measure.marching_cubes(field, level=isolevel, spacing=tuple(spacing),
                                                gradient_direction="ascent")
    mesh = TriMesh(verts + np.asarray(lo, dtype=float), faces)
    # skimage's winding depends on version; orient against the sampled field gradient
    if len(faces):
        gx = np.gradient(field, *spacing)
        centers = (mesh.corners().mean(axis=1) - np.asarray(lo)) / np.asarray(spacing)
        idx = np.clip(np.round(centers).astype(int), 0, np.array(field.shape) - 1)
        g = np.stack([gi[tuple(idx.T)] for gi in gx], axis=1)
        if np.sum(np.einsum("ij,ij->i", mesh.face_normals(), g)) < 0:
            mesh = TriMesh(mesh.vertices, mesh.triangles[:, ::-1])
    return mesh


def marching_squares(field: np.ndarray, isolevel: float = 0.0, lo=(0.0, 0.0), spacing=(1.0, 1.0)) -> list[np.ndarray]:
    """Polylines (each (P, 2)) tracing ``{field == isolevel}`` in world coordinates."""
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 2 or min(field.shape) < 2:
        raise ValueError(f"need a 2-D field with >= 2 samples per axis, got {field.shape}")
    if not (field.min() < isolevel < field.max()):
        return []
    contours = measure.find_contours(field, level=isolevel)
    return [c * np.asarray(spacing) + np.asarray(lo) for c in contours]


def extract_mesh(grid: TaylorGrid, resolution: int | None = None, isolevel: float = 0.0) -> TriMesh:
    """Sample a 3-D grid on a lattice (default: its own vertices) and run marching cubes."""
    if grid.dim != 3:
        raise ValueError("extract_mesh needs a 3-D grid")
    res = grid.spec.resolution if resolution is None else (int(resolution),) * 3
    vals = sample_field(grid, res)
    spacing = np.asarray(grid.spec.extent) / (np.asarray(res) - 1)
    return marching_cubes(vals, isolevel, grid.spec.lo, spacing)
