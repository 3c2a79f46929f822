"""Indexed triangle meshes: ingestion, cleanup, fixtures, surface sampling."""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)


class IngestionError(ValueError):
    pass


@dataclass
class TriMesh:
    vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (F, 3) int
    normals: Optional[np.ndarray] = None
    watertight: bool = field(default=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles) and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise IngestionError("triangle index out of range")
        self.watertight = is_edge_manifold(self.triangles)

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def corners(self) -> np.ndarray:
        """(F, 3, 3) triangle vertex positions."""
        return self.vertices[self.triangles]

    def face_normals(self, normalize: bool = True) -> np.ndarray:
        c = self.corners()
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        if normalize:
            n = n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
        return n

    def areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_normals(normalize=False), axis=1)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices).tobytes())
        h.update(np.ascontiguousarray(self.triangles).tobytes())
        return h.hexdigest()

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Area-weighted uniform points on the surface."""
        if self.is_empty:
            raise ValueError("cannot sample an empty mesh")
        a = self.areas()
        face = rng.choice(len(a), size=n, p=a / a.sum())
        r1, r2 = rng.random(n), rng.random(n)
        s = np.sqrt(r1)
        c = self.corners()[face]
        return ((1 - s)[:, None] * c[:, 0] + (s * (1 - r2))[:, None] * c[:, 1]
                + (s * r2)[:, None] * c[:, 2])

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def is_edge_manifold(triangles: np.ndarray) -> bool:
    """Every undirected edge is shared by exactly two faces."""
    if len(triangles) == 0:
        return False
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e.sort(axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return bool(np.all(counts == 2))


def drop_degenerate(mesh: TriMesh, tol: float = 1e-14) -> TriMesh:
    """Remove zero-area faces and exact duplicates of earlier faces."""
    t = mesh.triangles
    keep = mesh.areas() > tol
    key = np.sort(t, axis=1)
    _, first = np.unique(key, axis=0, return_index=True)
    unique = np.zeros(len(t), dtype=bool)
    unique[first] = True
    keep &= unique
    dropped = int((~keep).sum())
    if dropped:
        log.warning("dropped %d degenerate or duplicate face(s)", dropped)
    return TriMesh(mesh.vertices, t[keep])


def normalize_mesh(mesh: TriMesh, half_size: float = 0.9) -> TriMesh:
    """Centre the bounding box and scale uniformly into [-half_size, half_size]^3."""
    lo, hi = mesh.bounds()
    scale = (hi - lo).max() / 2.0
    if scale <= 0:
        raise IngestionError("mesh has zero extent")
    v = (mesh.vertices - (lo + hi) / 2.0) * (half_size / scale)
    return TriMesh(v, mesh.triangles)


def _parse_obj(path: Path) -> TriMesh:
    verts, faces = [], []
    with open(path, "r", errors="replace") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(x) for x in parts[1:4]])
                elif parts[0] == "f":
                    idx = [int(p.split("/")[0]) for p in parts[1:]]
                    idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                    for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                        faces.append([idx[0], idx[k], idx[k + 1]])
            except (ValueError, IndexError) as e:
                raise IngestionError(f"{path}:{lineno}: cannot parse {line.strip()!r} ({e})") from None
    if not verts or not faces:
        raise IngestionError(f"{path}: empty mesh ({len(verts)} vertices, {len(faces)} faces)")
    try:
        return TriMesh(np.array(verts), np.array(faces))
    except IngestionError as e:
        raise IngestionError(f"{path}: {e}") from None


def _parse_stl(path: Path) -> TriMesh:
    data = path.read_bytes()
    if len(data) >= 84:
        (n,) = struct.unpack_from("<I", data, 80)
        if len(data) == 84 + 50 * n:
            rec = np.frombuffer(data, dtype=np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")]),
                                count=n, offset=84)
            tri = rec["v"].astype(np.float64).reshape(-1, 3)
            return _weld(tri)
    text = data.decode("ascii", errors="replace")
    if text.lstrip().startswith("solid"):
        pts = []
        for lineno, line in enumerate(text.splitlines(), 1):
            parts = line.split()
            if parts and parts[0] == "vertex":
                try:
                    pts.append([float(x) for x in parts[1:4]])
                except ValueError:
                    raise IngestionError(f"{path}:{lineno}: bad vertex record") from None
        if pts and len(pts) % 3 == 0:
            return _weld(np.array(pts))
    raise IngestionError(f"{path}: unrecognised or empty STL")


def _weld(points: np.ndarray) -> TriMesh:
    uniq, inverse = np.unique(points, axis=0, return_inverse=True)
    return TriMesh(uniq, inverse.reshape(-1, 3))


def load_mesh(path, normalize: bool = True) -> TriMesh:
    """Read OBJ or STL, drop degenerate faces, normalise into [-0.9, 0.9]^3."""
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"mesh file not found: {path}")
    suffix = path.suffix.lower()
    if suffix == ".obj":
        mesh = _parse_obj(path)
    elif suffix == ".stl":
        mesh = _parse_stl(path)
    else:
        raise IngestionError(f"{path}: unsupported mesh format {suffix!r}")
    mesh = drop_degenerate(mesh)
    if mesh.is_empty:
        raise IngestionError(f"{path}: no faces left after cleanup")
    if normalize:
        mesh = normalize_mesh(mesh)
    if not mesh.watertight:
        log.warning("%s is not watertight; only unsigned distances are available", path)
    return mesh


def write_obj(mesh: TriMesh, path) -> None:
    with open(path, "w") as f:
        for v in mesh.vertices:
            f.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for t in mesh.triangles + 1:
            f.write(f"f {t[0]} {t[1]} {t[2]}\n")


def cube_mesh(side: float = 1.0) -> TriMesh:
    """Axis-aligned cube centred at the origin, outward winding."""
    h = side / 2.0
    v = np.array([[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)])
    # vertex index = 4*ix + 2*iy + iz
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    return TriMesh(v, np.array(tris))


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
         (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, dtype=float) / np.linalg.norm(p) for p in v]
    faces = f
    for _ in range(subdivisions):
        cache: dict = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return TriMesh(np.array(verts) * radius, np.array(faces))


def icosphere_sagitta(subdivisions: int, radius: float = 1.0) -> float:
    """Upper bound on the gap between the icosphere and its circumscribed sphere."""
    mesh = icosphere(subdivisions, radius)
    c = mesh.corners()
    e = np.linalg.norm(c - np.roll(c, 1, axis=1), axis=2).max()
    # circumradius of an equilateral triangle with the longest edge
    rc = e / np.sqrt(3.0)
    return radius - np.sqrt(max(radius ** 2 - rc ** 2, 0.0))
