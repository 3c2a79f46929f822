import struct

import numpy as np
import pytest

from taylorgrid.field import GridSpec, TaylorGrid, evaluate
from taylorgrid.formats import FormatError, load_sdfpts, load_tgrid, save_sdfpts, save_tgrid, tgrid_bytes


def grid(order=2, dim=3, dtype=np.float64):
    spec = GridSpec(dim, (3, 4, 5)[:dim], (-1.0, 0.5, 2.0)[:dim], (2.0, 1.5, 0.25)[:dim], order)
    c = np.random.default_rng(order).normal(size=spec.vertex_count * spec.coeffs_per_vertex).astype(dtype)
    return TaylorGrid(spec, c)


@pytest.mark.parametrize("order", [0, 1, 2])
@pytest.mark.parametrize("dim", [2, 3])
def test_tgrid_roundtrip_bit_exact(tmp_path, order, dim):
    g = grid(order, dim)
    p = tmp_path / "g.tgrid"
    save_tgrid(g, p)
    h = load_tgrid(p)
    assert h.spec == g.spec and np.array_equal(h.coeffs, g.coeffs)
    x = np.random.default_rng(0).uniform(-1, 2, (200, dim))
    assert np.array_equal(evaluate(h, x), evaluate(g, x))


def test_tgrid_size_and_header():
    g = grid(2, 3)
    data = tgrid_bytes(g)
    header = 4 + 4 + 1 + 1 + 3 * 4 + 3 * 8 + 3 * 8 + 1
    assert len(data) == header + 3 * 4 * 5 * 10 * 8
    assert data[:4] == b"TGRD"
    assert struct.unpack_from("<IBB3I", data, 4) == (1, 3, 2, 3, 4, 5)


def test_tgrid_float32(tmp_path):
    g = grid(1, 3, np.float32)
    save_tgrid(g, tmp_path / "g.tgrid")
    h = load_tgrid(tmp_path / "g.tgrid")
    assert h.coeffs.dtype == np.float32 and np.array_equal(h.coeffs, g.coeffs)


def test_tgrid_rejects_garbage(tmp_path):
    (tmp_path / "bad.tgrid").write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(FormatError):
        load_tgrid(tmp_path / "bad.tgrid")
    data = tgrid_bytes(grid())
    (tmp_path / "short.tgrid").write_bytes(data[:-8])
    with pytest.raises(FormatError):
        load_tgrid(tmp_path / "short.tgrid")


def test_sdfpts_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    pts, sdf, src = rng.normal(size=(50, 3)), rng.normal(size=50), rng.integers(0, 3, 50).astype(np.uint8)
    save_sdfpts(tmp_path / "s.sdfpts", pts, sdf, src)
    p2, s2, c2 = load_sdfpts(tmp_path / "s.sdfpts")
    assert np.array_equal(p2, pts) and np.array_equal(s2, sdf) and np.array_equal(c2, src)
    assert (tmp_path / "s.sdfpts").stat().st_size == 13 + 50 * (3 * 8 + 8 + 1)


def test_sdfpts_truncated(tmp_path):
    save_sdfpts(tmp_path / "s.sdfpts", np.zeros((4, 2)), np.zeros(4), np.zeros(4, np.uint8))
    data = (tmp_path / "s.sdfpts").read_bytes()
    (tmp_path / "t.sdfpts").write_bytes(data[:-3])
    with pytest.raises(FormatError):
        load_sdfpts(tmp_path / "t.sdfpts")
