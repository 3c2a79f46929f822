"""Real spherical harmonics up to degree 2 and a per-vertex SH color grid."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..field import GridSpec, build_stencil, scatter

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)

MAX_DEGREE = 2


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """(M, (degree+1)**2) basis values for unit directions (M, 3)."""
    if not 0 <= degree <= MAX_DEGREE:
        raise ValueError(f"SH degree must be in 0..{MAX_DEGREE}, got {degree}")
    dirs = np.atleast_2d(dirs)
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    cols = [np.full(len(dirs), SH_C0)]
    if degree >= 1:
        cols += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree >= 2:
        cols += [SH_C2[0] * x * y, SH_C2[1] * y * z, SH_C2[2] * (2 * z * z - x * x - y * y),
                 SH_C2[3] * x * z, SH_C2[4] * (x * x - y * y)]
    return np.stack(cols, axis=1)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class SHColorGrid:
    """Multilinearly interpolated SH coefficients, laid out per vertex as (3, B)."""
    spec: GridSpec
    degree: int
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.ascontiguousarray(self.coeffs).reshape(-1)
        if self.coeffs.size != self.spec.vertex_count * self.channels:
            raise ValueError(f"expected {self.spec.vertex_count * self.channels} coefficients, got {self.coeffs.size}")

    @classmethod
    def zeros(cls, spec: GridSpec, degree: int = 2) -> "SHColorGrid":
        spec = spec.with_order(0)
        return cls(spec, degree, np.zeros(spec.vertex_count * 3 * (degree + 1) ** 2))

    @property
    def n_basis(self) -> int:
        return (self.degree + 1) ** 2

    @property
    def channels(self) -> int:
        return 3 * self.n_basis

    @property
    def blocks(self) -> np.ndarray:
        return self.coeffs.reshape(self.spec.vertex_count, 3, self.n_basis)

    @property
    def parameter_count(self) -> int:
        return self.coeffs.size

    def interpolate(self, stencil) -> np.ndarray:
        """(M, 3, B) coefficients at the stencil's points."""
        return np.einsum("mc,mcrb->mrb", stencil.weights, self.blocks[stencil.vertex_ids])

    def stencil(self, points):
        return build_stencil(self.spec, points)

    def raw_color(self, points, dirs, stencil=None) -> np.ndarray:
        st = stencil if stencil is not None else self.stencil(points)
        return np.einsum("mrb,mb->mr", self.interpolate(st), sh_basis(dirs, self.degree))

    def backprop(self, stencil, dirs, upstream_raw: np.ndarray, grad_accum: np.ndarray) -> None:
        """Accumulate gradients given d loss / d raw color (M, 3)."""
        if len(upstream_raw) == 0:
            return
        basis = sh_basis(dirs, self.degree)
        per_point = upstream_raw[:, :, None] * basis[:, None, :]  # (M, 3, B)
        contrib = stencil.weights[:, :, None] * per_point.reshape(len(basis), 1, -1)
        _scatter_channels(grad_accum, stencil, contrib, self.channels)

    def save(self, path) -> None:
        """``.npz`` with the grid box, degree and coefficients."""
        with open(path, "wb") as f:
            np.savez(f, resolution=np.asarray(self.spec.resolution), origin=np.asarray(self.spec.origin),
                     extent=np.asarray(self.spec.extent), degree=np.asarray(self.degree), coeffs=self.coeffs)

    @classmethod
    def load(cls, path) -> "SHColorGrid":
        with np.load(path) as z:
            try:
                spec = GridSpec(3, tuple(int(r) for r in z["resolution"]), tuple(map(float, z["origin"])),
                                tuple(map(float, z["extent"])), 0)
                return cls(spec, int(z["degree"]), z["coeffs"].astype(np.float64))
            except KeyError as e:
                raise ValueError(f"{path}: missing field {e}") from None

    def upsample(self, resolution: Sequence[int]) -> "SHColorGrid":
        new_spec = self.spec.with_resolution(resolution)
        st = build_stencil(self.spec, new_spec.vertex_positions())
        data = np.einsum("mc,mck->mk", st.weights, self.coeffs.reshape(self.spec.vertex_count, -1)[st.vertex_ids])
        return SHColorGrid(new_spec, self.degree, data.reshape(-1))


def _scatter_channels(grad_accum, stencil, contrib, channels):
    idx = (stencil.vertex_ids[..., None] * channels + np.arange(channels)).ravel()
    grad_accum += np.bincount(idx, weights=contrib.ravel(), minlength=grad_accum.size)


def sh_color(shgrid: SHColorGrid, x, dirs) -> np.ndarray:
    """View-dependent RGB in [0, 1] (sigmoid of the SH expansion)."""
    single = np.ndim(x) == 1
    c = sigmoid(shgrid.raw_color(np.atleast_2d(x), np.atleast_2d(dirs)))
    return c[0] if single else c
