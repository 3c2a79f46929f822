"""Binary file formats: ``.tgrid`` coefficient grids and ``.sdfpts`` sample sets.

Both are little-endian.  ``.tgrid`` layout::

    b"TGRD" | version u32 | dim u8 | order u8 | resolution dim*u32
           | origin dim*f64 | extent dim*f64 | precision u8 (0=f64, 1=f32)
           | coefficients (vertex-major blocks)

``.sdfpts`` layout::

    b"SDFP" | count u64 | dim u8 | count * (point dim*f64, sdf f64, source u8)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .field import GridSpec, TaylorGrid

TGRID_MAGIC = b"TGRD"
TGRID_VERSION = 1
SDFPTS_MAGIC = b"SDFP"

SOURCES = ("uniform", "near-surface", "ray")


class FormatError(ValueError):
    pass


def tgrid_bytes(grid: TaylorGrid) -> bytes:
    spec = grid.spec
    if grid.coeffs.dtype == np.float64:
        precision, dt = 0, "<f8"
    elif grid.coeffs.dtype == np.float32:
        precision, dt = 1, "<f4"
    else:
        raise FormatError(f"unsupported coefficient dtype {grid.coeffs.dtype}")
    d = spec.dim
    header = struct.pack(
        f"<4sIBB{d}I{d}d{d}dB", TGRID_MAGIC, TGRID_VERSION, d, spec.order,
        *spec.resolution, *spec.origin, *spec.extent, precision)
    return header + np.ascontiguousarray(grid.coeffs, dtype=dt).tobytes()


def save_tgrid(grid: TaylorGrid, path) -> None:
    Path(path).write_bytes(tgrid_bytes(grid))


def load_tgrid(path) -> TaylorGrid:
    data = Path(path).read_bytes()
    if data[:4] != TGRID_MAGIC:
        raise FormatError(f"{path}: not a .tgrid file")
    version, d, order = struct.unpack_from("<IBB", data, 4)
    if version != TGRID_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    off = 10
    res = struct.unpack_from(f"<{d}I", data, off); off += 4 * d
    origin = struct.unpack_from(f"<{d}d", data, off); off += 8 * d
    extent = struct.unpack_from(f"<{d}d", data, off); off += 8 * d
    (precision,) = struct.unpack_from("<B", data, off); off += 1
    dt = {0: "<f8", 1: "<f4"}.get(precision)
    if dt is None:
        raise FormatError(f"{path}: bad precision flag {precision}")
    spec = GridSpec(d, res, origin, extent, order)
    coeffs = np.frombuffer(data, dtype=dt, offset=off)
    expected = spec.vertex_count * spec.coeffs_per_vertex
    if coeffs.size != expected:
        raise FormatError(f"{path}: expected {expected} coefficients, found {coeffs.size}")
    return TaylorGrid(spec, coeffs.astype(np.float64 if precision == 0 else np.float32))


def _sdfpts_dtype(dim: int) -> np.dtype:
    return np.dtype([("point", "<f8", (dim,)), ("sdf", "<f8"), ("source", "u1")])


def save_sdfpts(path, points: np.ndarray, sdf: np.ndarray, source: np.ndarray) -> None:
    points = np.asarray(points, dtype=np.float64)
    n, dim = points.shape
    rec = np.empty(n, dtype=_sdfpts_dtype(dim))
    rec["point"] = points
    rec["sdf"] = sdf
    rec["source"] = source
    with open(path, "wb") as f:
        f.write(struct.pack("<4sQB", SDFPTS_MAGIC, n, dim))
        f.write(rec.tobytes())


def load_sdfpts(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != SDFPTS_MAGIC:
        raise FormatError(f"{path}: not a .sdfpts file")
    n, dim = struct.unpack_from("<QB", data, 4)
    dt = _sdfpts_dtype(dim)
    if len(data) - 13 != n * dt.itemsize:
        raise FormatError(f"{path}: truncated ({n} records announced)")
    rec = np.frombuffer(data, dtype=dt, offset=13)
    return rec["point"].copy(), rec["sdf"].copy(), rec["source"].copy()
