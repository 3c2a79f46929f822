"""Independent reference implementations used as test oracles."""

import itertools

import numpy as np
from scipy.interpolate import RegularGridInterpolator


def full_hessian(upper, dim):
    H = np.zeros((dim, dim))
    n = 0
    for j in range(dim):
        for k in range(j, dim):
            H[j, k] = H[k, j] = upper[n]
            n += 1
    return H


def taylor_eval_ref(spec, coeffs, x):
    """Point-by-point Taylor blend with an explicit Hessian matrix."""
    D = spec.dim
    lo = np.asarray(spec.origin, float)
    ext = np.asarray(spec.extent, float)
    res = np.asarray(spec.resolution)
    h = ext / (res - 1)
    K = {0: 1, 1: 1 + D, 2: 1 + D + D * (D + 1) // 2}[spec.order]
    blocks = np.asarray(coeffs).reshape(tuple(res) + (K,))
    x = np.clip(np.asarray(x, float), lo, lo + ext)
    cell = np.minimum(np.floor((x - lo) / h).astype(int), res - 2)
    t = (x - lo) / h - cell
    total = 0.0
    for corner in itertools.product((0, 1), repeat=D):
        idx = cell + np.array(corner)
        w = np.prod([t[a] if corner[a] else 1 - t[a] for a in range(D)])
        b = blocks[tuple(idx)]
        d = x - (lo + idx * h)
        val = b[0]
        if spec.order >= 1:
            val += b[1:1 + D] @ d
        if spec.order >= 2:
            val += 0.5 * d @ full_hessian(b[1 + D:], D) @ d
        total += w * val
    return total


def multilinear_ref(spec, values, points):
    axes = [spec.origin[a] + np.linspace(0, spec.extent[a], spec.resolution[a]) for a in range(spec.dim)]
    f = RegularGridInterpolator(axes, np.asarray(values).reshape(spec.resolution), method="linear")
    return f(points)


def central_fd(fn, x, eps=1e-6):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        old = x.flat[i]
        x.flat[i] = old + eps
        a = fn(x)
        x.flat[i] = old - eps
        b = fn(x)
        x.flat[i] = old
        g.flat[i] = (a - b) / (2 * eps)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def edt_brute(fg):
    """Signed pixel distance, negative inside, by exhaustive search."""
    fg = np.asarray(fg, bool)
    ij = np.argwhere(np.ones_like(fg))
    inside, outside = np.argwhere(fg), np.argwhere(~fg)
    out = np.zeros(fg.shape)
    for p in ij:
        if fg[tuple(p)]:
            out[tuple(p)] = -np.sqrt(((outside - p) ** 2).sum(1).min())
        else:
            out[tuple(p)] = np.sqrt(((inside - p) ** 2).sum(1).min())
    return out


def psnr_ref(a, b):
    mse = sum((float(x) - float(y)) ** 2 for x, y in zip(np.ravel(a), np.ravel(b))) / np.size(a)
    return float("inf") if mse == 0 else -10.0 * np.log10(mse)


def composite_ref(sigma, delta, colors, background=None):
    """Single-ray quadrature with an explicit loop."""
    T, rgb = 1.0, np.zeros(3)
    for s, d, c in zip(sigma, delta, colors):
        a = 1.0 - np.exp(-s * d)
        rgb += T * a * np.asarray(c)
        T *= np.exp(-s * d)
    if background is not None:
        rgb += T * np.asarray(background)
    return rgb
