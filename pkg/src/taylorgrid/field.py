"""Dense grids of per-vertex Taylor coefficients.

Every vertex ``v`` stores a block ``[f0 | f1 (D) | f2 upper triangle]``.  A
query ``x`` inside a cell evaluates the truncated Taylor polynomial of each of
the ``2**D`` corners at the world-space offset ``x - v`` and blends the results
with multilinear weights.  Order 0 is plain multilinear interpolation.

The second-order block holds raw Hessian entries ``H[j, k]`` for ``j <= k``;
the polynomial is ``f0 + f1.d + 0.5 d^T H d`` with ``H`` symmetric, so an
off-diagonal entry enters twice.

All heavy lifting goes through :class:`Stencil`, which caches the per-point
weights and Taylor monomials so that a forward pass and the matching backward
pass share the work.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

MAX_COEFFS_DEFAULT = 1 << 28


class ResourceError(MemoryError):
    """Raised when a grid allocation would exceed the configured cap."""


def coeff_count(order: int, dim: int) -> int:
    """Number of stored coefficients per vertex."""
    if order not in (0, 1, 2):
        raise ValueError(f"unsupported Taylor order {order!r}; expected 0, 1 or 2")
    if dim not in (2, 3):
        raise ValueError(f"unsupported dimension {dim!r}; expected 2 or 3")
    n = 1
    if order >= 1:
        n += dim
    if order >= 2:
        n += dim * (dim + 1) // 2
    return n


def hessian_pairs(dim: int) -> list[tuple[int, int]]:
    """(j, k) index pairs of the stored upper triangle in row-major order."""
    return [(j, k) for j in range(dim) for k in range(j, dim)]


@dataclass(frozen=True)
class GridSpec:
    dim: int
    resolution: tuple[int, ...]
    origin: tuple[float, ...]
    extent: tuple[float, ...]
    order: int = 2

    def __post_init__(self):
        object.__setattr__(self, "resolution", tuple(int(r) for r in self.resolution))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "extent", tuple(float(e) for e in self.extent))
        coeff_count(self.order, self.dim)
        for name in ("resolution", "origin", "extent"):
            if len(getattr(self, name)) != self.dim:
                raise ValueError(f"{name} must have {self.dim} entries")
        if any(r < 2 for r in self.resolution):
            raise ValueError(f"resolution must be >= 2 on every axis, got {self.resolution}")
        if not all(np.isfinite(self.origin)):
            raise ValueError("origin must be finite")
        if not all(np.isfinite(e) and e > 0 for e in self.extent):
            raise ValueError(f"extent must be finite and positive, got {self.extent}")

    @classmethod
    def cube(cls, res: int | Sequence[int], order: int = 2, dim: int = 3,
             lo: float = -1.0, hi: float = 1.0) -> "GridSpec":
        if np.isscalar(res):
            res = (int(res),) * dim
        return cls(dim, tuple(res), (lo,) * dim, (hi - lo,) * dim, order)

    @property
    def spacing(self) -> np.ndarray:
        return np.asarray(self.extent) / (np.asarray(self.resolution) - 1)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.origin)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.origin) + np.asarray(self.extent)

    @property
    def vertex_count(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def coeffs_per_vertex(self) -> int:
        return coeff_count(self.order, self.dim)

    @property
    def strides(self) -> np.ndarray:
        """Flat-index strides, C order (last axis fastest)."""
        res = self.resolution
        return np.array([int(np.prod(res[a + 1:])) for a in range(self.dim)], dtype=np.int64)

    def with_resolution(self, resolution: Sequence[int]) -> "GridSpec":
        return GridSpec(self.dim, tuple(resolution), self.origin, self.extent, self.order)

    def with_order(self, order: int) -> "GridSpec":
        return GridSpec(self.dim, self.resolution, self.origin, self.extent, order)

    def vertex_positions(self) -> np.ndarray:
        """(V, D) world positions in flat-index order."""
        axes = [self.origin[a] + self.spacing[a] * np.arange(self.resolution[a])
                for a in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass
class TaylorGrid:
    spec: GridSpec
    coeffs: np.ndarray  # flat, vertex-major

    def __post_init__(self):
        expected = self.spec.vertex_count * self.spec.coeffs_per_vertex
        self.coeffs = np.ascontiguousarray(self.coeffs).reshape(-1)
        if self.coeffs.size != expected:
            raise ValueError(f"coeffs has {self.coeffs.size} entries, expected {expected}")

    @property
    def order(self) -> int:
        return self.spec.order

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def K(self) -> int:
        return self.spec.coeffs_per_vertex

    @property
    def blocks(self) -> np.ndarray:
        """(V, K) view onto :attr:`coeffs`."""
        return self.coeffs.reshape(self.spec.vertex_count, self.K)

    @property
    def parameter_count(self) -> int:
        return self.coeffs.size

    def copy(self) -> "TaylorGrid":
        return TaylorGrid(self.spec, self.coeffs.copy())

    def zeros_like_coeffs(self) -> np.ndarray:
        return np.zeros_like(self.coeffs)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return evaluate(self, points)


def init_grid(spec: GridSpec, mode: str = "zeros", value: float = 0.0, eps: float = 1e-3,
              seed: Optional[int] = None, dtype=np.float64,
              max_coeffs: int = MAX_COEFFS_DEFAULT) -> TaylorGrid:
    """Allocate a grid.

    ``mode`` is ``"zeros"``, ``"constant"`` (f0 = ``value``, higher orders 0)
    or ``"uniform"`` (every coefficient drawn from U(-eps, eps)).
    """
    n = spec.vertex_count * spec.coeffs_per_vertex
    if n > max_coeffs:
        raise ResourceError(f"grid needs {n} coefficients, cap is {max_coeffs}")
    coeffs = np.zeros(n, dtype=dtype)
    if mode == "zeros":
        pass
    elif mode == "constant":
        coeffs.reshape(-1, spec.coeffs_per_vertex)[:, 0] = value
    elif mode == "uniform":
        rng = np.random.default_rng(seed)
        coeffs[:] = rng.uniform(-eps, eps, size=n)
    else:
        raise ValueError(f"unknown init mode {mode!r}")
    return TaylorGrid(spec, coeffs)


@dataclass
class CellRef:
    cell_index: np.ndarray  # (M, D) int
    local: np.ndarray  # (M, D) in [0, 1]
    vertex_ids: np.ndarray  # (M, 2**D) flat vertex indices

    def __len__(self):
        return len(self.cell_index)


def corner_offsets(dim: int) -> np.ndarray:
    """(2**D, D) binary corner pattern; corner c has bit a of c on axis D-1-a."""
    return np.array(list(itertools.product((0, 1), repeat=dim)), dtype=np.int64)


def _as_points(spec: GridSpec, points) -> tuple[np.ndarray, bool]:
    p = np.asarray(points, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    if p.shape[-1] != spec.dim:
        raise ValueError(f"points must have last dimension {spec.dim}, got shape {p.shape}")
    if np.isnan(p).any():
        raise ValueError("NaN query point")
    return p, single


def locate(spec: GridSpec, points) -> CellRef:
    """Find the containing cell of each point.

    Points outside the domain are clamped onto its boundary first.  Points on
    the max face belong to the last cell with local coordinate 1.
    """
    p, _ = _as_points(spec, points)
    h = spec.spacing
    u = (np.clip(p, spec.lo, spec.hi) - spec.lo) / h
    res = np.asarray(spec.resolution)
    cell = np.clip(np.floor(u).astype(np.int64), 0, res - 2)
    local = np.clip(u - cell, 0.0, 1.0)
    base = cell @ spec.strides
    corner_ids = corner_offsets(spec.dim) @ spec.strides
    return CellRef(cell, local, base[:, None] + corner_ids[None, :])


@dataclass
class Stencil:
    """Per-point interpolation data reused across forward and backward passes.

    ``basis[m, c, k]`` is the Taylor monomial paired with coefficient ``k`` of
    corner ``c``; ``offsets`` are the world-space ``x - v_c``.
    """
    spec: GridSpec
    cells: CellRef
    weights: np.ndarray  # (M, C)
    offsets: np.ndarray  # (M, C, D)
    basis: np.ndarray  # (M, C, K)
    weight_grads: Optional[np.ndarray] = None  # (M, C, D)

    @property
    def vertex_ids(self) -> np.ndarray:
        return self.cells.vertex_ids

    def __len__(self):
        return len(self.weights)


def multilinear_weights(local: np.ndarray, spacing: np.ndarray, with_grad: bool = False):
    """Corner weights (M, C) and, optionally, their x-derivatives (M, C, D)."""
    dim = local.shape[1]
    corners = corner_offsets(dim)  # (C, D)
    # per-axis factor t or 1 - t, shape (M, C, D)
    factors = np.where(corners[None, :, :] == 1, local[:, None, :], 1.0 - local[:, None, :])
    weights = np.prod(factors, axis=-1)
    if not with_grad:
        return weights, None
    sign = np.where(corners == 1, 1.0, -1.0) / spacing[None, :]  # (C, D)
    grads = np.empty(factors.shape)
    for a in range(dim):
        others = [b for b in range(dim) if b != a]
        grads[:, :, a] = sign[None, :, a] * np.prod(factors[:, :, others], axis=-1)
    return weights, grads


def taylor_basis(offsets: np.ndarray, order: int) -> np.ndarray:
    """Monomials (..., K) multiplying the stored coefficients."""
    dim = offsets.shape[-1]
    cols = [np.ones(offsets.shape[:-1])]
    if order >= 1:
        cols.extend(offsets[..., a] for a in range(dim))
    if order >= 2:
        for j, k in hessian_pairs(dim):
            if j == k:
                cols.append(0.5 * offsets[..., j] ** 2)
            else:
                cols.append(offsets[..., j] * offsets[..., k])
    return np.stack(cols, axis=-1)


def taylor_basis_directional(offsets: np.ndarray, direction: np.ndarray, order: int) -> np.ndarray:
    """x-derivative of :func:`taylor_basis` contracted with ``direction``.

    ``direction`` broadcasts against ``offsets``; result is (..., K).
    """
    dim = offsets.shape[-1]
    direction = np.broadcast_to(direction, offsets.shape)
    cols = [np.zeros(offsets.shape[:-1])]
    if order >= 1:
        cols.extend(direction[..., a] for a in range(dim))
    if order >= 2:
        for j, k in hessian_pairs(dim):
            if j == k:
                cols.append(offsets[..., j] * direction[..., j])
            else:
                cols.append(offsets[..., k] * direction[..., j] + offsets[..., j] * direction[..., k])
    return np.stack(cols, axis=-1)


def build_stencil(spec: GridSpec, points, with_grad: bool = False) -> Stencil:
    p, _ = _as_points(spec, points)
    cells = locate(spec, p)
    h = spec.spacing
    weights, wgrads = multilinear_weights(cells.local, h, with_grad)
    corner_pos = (cells.cell_index[:, None, :] + corner_offsets(spec.dim)[None]) * h + spec.lo
    xq = np.clip(p, spec.lo, spec.hi)
    offsets = xq[:, None, :] - corner_pos
    basis = taylor_basis(offsets, spec.order)
    return Stencil(spec, cells, weights, offsets, basis, wgrads)


def _gather(grid: TaylorGrid, st: Stencil) -> np.ndarray:
    return grid.blocks[st.vertex_ids]  # (M, C, K)


def _local_gradients(grid: TaylorGrid, st: Stencil, coeffs: np.ndarray) -> np.ndarray:
    """Gradient of each corner polynomial at the query, f1 + H d, shape (M, C, D)."""
    dim = grid.dim
    out = np.zeros(st.offsets.shape)
    if grid.order >= 1:
        out += coeffs[..., 1:1 + dim]
    if grid.order >= 2:
        d = st.offsets
        for n, (j, k) in enumerate(hessian_pairs(dim)):
            hjk = coeffs[..., 1 + dim + n]
            out[..., j] += hjk * d[..., k]
            if j != k:
                out[..., k] += hjk * d[..., j]
    return out


def evaluate_stencil(grid: TaylorGrid, st: Stencil, with_grad: bool = False):
    c = _gather(grid, st)
    corner_vals = np.einsum("mck,mck->mc", c, st.basis)
    values = np.einsum("mc,mc->m", st.weights, corner_vals)
    if not with_grad:
        return values
    if st.weight_grads is None:
        raise ValueError("stencil was built without weight gradients")
    grads = np.einsum("mcd,mc->md", st.weight_grads, corner_vals)
    if grid.order >= 1:
        grads += np.einsum("mc,mcd->md", st.weights, _local_gradients(grid, st, c))
    return values, grads


def evaluate(grid: TaylorGrid, points) -> np.ndarray | float:
    """Field value at one point (D,) or a batch (M, D)."""
    _, single = _as_points(grid.spec, points)
    values = evaluate_stencil(grid, build_stencil(grid.spec, points))
    return float(values[0]) if single else values


@dataclass
class EvalResult:
    value: np.ndarray | float
    spatial_gradient: Optional[np.ndarray] = None


def eval_with_spatial_gradient(grid: TaylorGrid, points) -> EvalResult:
    _, single = _as_points(grid.spec, points)
    st = build_stencil(grid.spec, points, with_grad=True)
    values, grads = evaluate_stencil(grid, st, with_grad=True)
    if single:
        return EvalResult(float(values[0]), grads[0])
    return EvalResult(values, grads)


def scatter(grad_accum: np.ndarray, st: Stencil, contrib: np.ndarray) -> None:
    """Add per-stencil coefficient contributions (M, C, K) into the flat buffer."""
    K = st.spec.coeffs_per_vertex
    idx = (st.vertex_ids[..., None] * K + np.arange(K)).ravel()
    grad_accum += np.bincount(idx, weights=contrib.ravel(), minlength=grad_accum.size)


def value_contrib(st: Stencil, upstream: np.ndarray) -> np.ndarray:
    """upstream[m] * d value[m] / d c[m, corner, k], shape (M, C, K)."""
    upstream = np.broadcast_to(np.asarray(upstream, dtype=np.float64), (len(st),))
    return (upstream[:, None] * st.weights)[..., None] * st.basis


def gradient_contrib(grid: TaylorGrid, st: Stencil, upstream: np.ndarray) -> np.ndarray:
    """upstream[m] . d grad_x f(x_m) / d c[m, corner, k], shape (M, C, K)."""
    if st.weight_grads is None:
        raise ValueError("stencil was built without weight gradients")
    upstream = np.asarray(upstream, dtype=np.float64).reshape(len(st), grid.dim)
    uw = np.einsum("mcd,md->mc", st.weight_grads, upstream)
    contrib = uw[..., None] * st.basis
    if grid.order >= 1:
        contrib += st.weights[..., None] * taylor_basis_directional(
            st.offsets, upstream[:, None, :], grid.order)
    return contrib


def _check_accum(grid: TaylorGrid, grad_accum: np.ndarray) -> None:
    if grad_accum.shape != grid.coeffs.shape:
        raise ValueError(f"gradient buffer shape {grad_accum.shape} does not match coeffs {grid.coeffs.shape}")


def backprop_values(grid: TaylorGrid, st: Stencil, upstream: np.ndarray, grad_accum: np.ndarray) -> None:
    """Accumulate ``sum_m upstream[m] * d value[m] / d coeffs``."""
    _check_accum(grid, grad_accum)
    scatter(grad_accum, st, value_contrib(st, upstream))


def backprop_gradients(grid: TaylorGrid, st: Stencil, upstream: np.ndarray, grad_accum: np.ndarray) -> None:
    """Accumulate ``sum_m upstream[m] . d grad_x f(x_m) / d coeffs``; ``upstream`` is (M, D)."""
    _check_accum(grid, grad_accum)
    scatter(grad_accum, st, gradient_contrib(grid, st, upstream))


def backprop_point(grid: TaylorGrid, point, upstream: float, grad_accum: np.ndarray) -> None:
    st = build_stencil(grid.spec, np.atleast_2d(point))
    backprop_values(grid, st, np.array([upstream], dtype=np.float64), grad_accum)


def backprop_spatial_chain(grid: TaylorGrid, point, upstream_vec, grad_accum: np.ndarray) -> None:
    st = build_stencil(grid.spec, np.atleast_2d(point), with_grad=True)
    backprop_gradients(grid, st, np.atleast_2d(upstream_vec), grad_accum)


def upsample(grid: TaylorGrid, new_resolution: Sequence[int] | int, mode: str = "taylor",
             chunk: int = 1 << 16) -> TaylorGrid:
    """Resample onto a finer grid over the same domain.

    ``mode="channelwise"`` multilinearly interpolates every coefficient channel.
    ``mode="taylor"`` (default) sets f0 and f1 at each new vertex to the value
    and spatial gradient of the old field there and resamples f2 channelwise.
    The two agree for order 0; the Taylor mode keeps the old field's values at
    the new vertices, which channelwise resampling of f0 does not once f1 or f2
    are non-zero.
    """
    if np.isscalar(new_resolution):
        new_resolution = (int(new_resolution),) * grid.dim
    new_resolution = tuple(int(r) for r in new_resolution)
    if any(n < o for n, o in zip(new_resolution, grid.spec.resolution)):
        raise ValueError(f"cannot shrink resolution {grid.spec.resolution} -> {new_resolution}")
    if mode not in ("taylor", "channelwise"):
        raise ValueError(f"unknown upsample mode {mode!r}")
    new_spec = grid.spec.with_resolution(new_resolution)
    positions = new_spec.vertex_positions()
    K, dim = grid.K, grid.dim
    out = np.empty((new_spec.vertex_count, K), dtype=grid.coeffs.dtype)
    for s in range(0, len(positions), chunk):
        pts = positions[s:s + chunk]
        st = build_stencil(grid.spec, pts, with_grad=(mode == "taylor" and grid.order >= 1))
        c = _gather(grid, st)
        out[s:s + chunk] = np.einsum("mc,mck->mk", st.weights, c)
        if mode == "taylor":
            if grid.order >= 1:
                v, g = evaluate_stencil(grid, st, with_grad=True)
                out[s:s + chunk, 0] = v
                out[s:s + chunk, 1:1 + dim] = g
            # order 0: channelwise resample of f0 equals the field value already
    return TaylorGrid(new_spec, out.reshape(-1))


def change_order(grid: TaylorGrid, order: int) -> TaylorGrid:
    """Copy into a grid of another order, truncating or zero-padding each block."""
    spec = grid.spec.with_order(order)
    out = np.zeros((spec.vertex_count, spec.coeffs_per_vertex), dtype=grid.coeffs.dtype)
    k = min(out.shape[1], grid.K)
    out[:, :k] = grid.blocks[:, :k]
    return TaylorGrid(spec, out.reshape(-1))


def sample_field(grid: TaylorGrid, resolution: Sequence[int], lo=None, hi=None,
                 chunk: int = 1 << 17) -> np.ndarray:
    """Evaluate on a regular lattice; returns an array shaped ``resolution``."""
    lo = grid.spec.lo if lo is None else np.asarray(lo, dtype=float)
    hi = grid.spec.hi if hi is None else np.asarray(hi, dtype=float)
    axes = [np.linspace(lo[a], hi[a], resolution[a]) for a in range(grid.dim)]
    pts = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=-1)
    vals = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        vals[s:s + chunk] = evaluate(grid, pts[s:s + chunk])
    return vals.reshape(tuple(resolution))


def set_from_function(spec: GridSpec, value_fn, grad_fn=None, hess_fn=None) -> TaylorGrid:
    """Build a grid whose blocks hold exact derivatives supplied as callables.

    Each callable maps (V, D) vertex positions to (V,), (V, D) or (V, D, D).
    Missing callables leave the corresponding block at zero.
    """
    x = spec.vertex_positions()
    blocks = np.zeros((spec.vertex_count, spec.coeffs_per_vertex))
    blocks[:, 0] = value_fn(x)
    if spec.order >= 1 and grad_fn is not None:
        blocks[:, 1:1 + spec.dim] = grad_fn(x)
    if spec.order >= 2 and hess_fn is not None:
        H = hess_fn(x)
        for n, (j, k) in enumerate(hessian_pairs(spec.dim)):
            blocks[:, 1 + spec.dim + n] = H[:, j, k]
    return TaylorGrid(spec, blocks.reshape(-1))
