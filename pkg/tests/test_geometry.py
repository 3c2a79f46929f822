import logging

import numpy as np
import pytest

from taylorgrid.field import GridSpec, set_from_function
from taylorgrid.formats import load_sdfpts
from taylorgrid.geometry import (IngestionError, MeshShape, NoSurfaceError, NotWatertightError, SphereShape,
                                 TriMesh, chamfer_l1, cube_mesh, disk_image, extract_mesh, icosphere, image_sdf,
                                 image_sdf_pixels, iou, load_mesh, marching_cubes, marching_squares,
                                 sample_points, signed_distance, signed_distance_oracle, split_counts, write_obj)
from taylorgrid.geometry.image import Image2D
from taylorgrid.geometry.mesh import icosphere_sagitta
from oracles import edt_brute


# ---------------------------------------------------------------- ingestion

def test_load_cube_obj(tmp_path):
    write_obj(cube_mesh(), tmp_path / "cube.obj")
    m = load_mesh(tmp_path / "cube.obj")
    assert m.watertight and len(m.triangles) == 12 and len(m.vertices) == 8


def test_degenerate_face_dropped_with_warning(tmp_path, caplog):
    write_obj(cube_mesh(), tmp_path / "cube.obj")
    with open(tmp_path / "cube.obj", "a") as f:
        f.write("f 1 1 2\n")
    with caplog.at_level(logging.WARNING):
        m = load_mesh(tmp_path / "cube.obj")
    assert len(m.triangles) == 12 and m.watertight
    assert any("degenerate" in r.getMessage() for r in caplog.records)


def test_icosphere_obj_normalized(tmp_path):
    write_obj(icosphere(3), tmp_path / "ico.obj")
    m = load_mesh(tmp_path / "ico.obj")
    assert len(m.vertices) == 642
    lo, hi = m.bounds()
    assert np.all(lo >= -0.9 - 1e-9) and np.all(hi <= 0.9 + 1e-9)
    assert np.isclose(np.max(hi - lo), 1.8)


def test_stl_roundtrip(tmp_path):
    import struct
    m = cube_mesh()
    with open(tmp_path / "c.stl", "wb") as f:
        f.write(bytes(80) + struct.pack("<I", len(m.triangles)))
        for tri in m.corners():
            f.write(struct.pack("<12fH", 0, 0, 0, *tri.ravel(), 0))
    s = load_mesh(tmp_path / "c.stl", normalize=False)
    assert s.watertight and len(s.triangles) == 12 and len(s.vertices) == 8


@pytest.mark.parametrize("body", ["", "v 0 0 0\nv 1 0 0\nf 1 2 7\n", "v 0 0\n"])
def test_bad_obj(tmp_path, body):
    (tmp_path / "bad.obj").write_text(body)
    with pytest.raises(IngestionError):
        load_mesh(tmp_path / "bad.obj")


def test_missing_mesh_names_path(tmp_path):
    with pytest.raises(IngestionError, match="nope.obj"):
        load_mesh(tmp_path / "nope.obj")


# ---------------------------------------------------------------- distance oracle

def test_cube_oracle_values():
    m = cube_mesh(1.0)
    assert signed_distance_oracle(m, (0, 0, 0)) == pytest.approx(-0.5, abs=1e-12)
    assert signed_distance_oracle(m, (1, 0, 0)) == pytest.approx(0.5, abs=1e-12)
    assert signed_distance_oracle(m, (1, 1, 0)) == pytest.approx(np.sqrt(0.5), abs=1e-12)


def test_icosphere_oracle_within_sagitta():
    r = 0.6
    m = icosphere(3, r)
    pts = np.random.default_rng(0).uniform(-1, 1, (1000, 3))
    err = np.abs(signed_distance(m, pts) - (np.linalg.norm(pts, axis=1) - r))
    assert err.max() <= icosphere_sagitta(3, r)


def test_signed_requires_watertight():
    m = cube_mesh()
    open_mesh = TriMesh(m.vertices, m.triangles[:-1])
    assert not open_mesh.watertight
    with pytest.raises(NotWatertightError):
        signed_distance(open_mesh, np.zeros((1, 3)))
    assert signed_distance(open_mesh, np.zeros((1, 3)), signed=False)[0] == pytest.approx(0.5)


# ---------------------------------------------------------------- sampling

def test_split_counts():
    assert split_counts(5, (1, 2, 2)) == [1, 2, 2]
    assert sum(split_counts(500_000, (1, 2, 2))) == 500_000
    c = split_counts(7, (1, 2, 2))
    assert sum(c) == 7 and np.all(np.abs(np.array(c) - 7 * np.array([0.2, 0.4, 0.4])) < 1)


def test_sample_counts_follow_ratio():
    s = sample_points(SphereShape(0.5), 1000, seed=0)
    assert s.counts() == {"uniform": 200, "near-surface": 400, "ray": 400}


def test_near_surface_gaussian_bound():
    r, sigma = 0.5, 0.02
    m = icosphere(3, r)
    s = sample_points(MeshShape(m), 2500, seed=1, sigma_near=sigma)
    near = s.source == 1
    assert np.all(np.abs(s.sdf[near]) <= 4 * sigma + icosphere_sagitta(3, r))


def test_ray_samples_near_surface():
    s = sample_points(SphereShape(0.5), 1000, seed=2, sigma_near=0.02)
    assert np.all(np.abs(s.sdf[s.source == 2]) <= 0.02 + 1e-12)


def test_sampling_deterministic(tmp_path):
    a = sample_points(MeshShape(icosphere(2, 0.5)), 500, seed=7)
    b = sample_points(MeshShape(icosphere(2, 0.5)), 500, seed=7)
    a.save(tmp_path / "a.sdfpts")
    b.save(tmp_path / "b.sdfpts")
    assert (tmp_path / "a.sdfpts").read_bytes() == (tmp_path / "b.sdfpts").read_bytes()
    assert len(load_sdfpts(tmp_path / "a.sdfpts")[0]) == 500


# ---------------------------------------------------------------- image SDF

def test_edt_matches_brute_force_random():
    rng = np.random.default_rng(3)
    img = Image2D((rng.random((23, 31)) > 0.7).astype(float))
    fg = img.pixels > 0.5
    assert np.allclose(image_sdf_pixels(img), edt_brute(fg), rtol=0, atol=1e-12)


def test_edt_matches_brute_force_disk():
    img = disk_image(64, 20.0)
    assert np.allclose(image_sdf_pixels(img), edt_brute(img.pixels > 0.5), rtol=0, atol=1e-12)


def test_disk_center_value():
    d = image_sdf_pixels(disk_image(64, 20.0, center=32.0))
    assert abs(d[32, 32] + 20.0) <= 1.0


def test_boundary_adjacent_pixels():
    img = disk_image(64, 20.0)
    fg = img.pixels > 0.5
    d = image_sdf_pixels(img)
    edge = np.zeros_like(fg)
    edge[:-1] |= fg[:-1] != fg[1:]
    edge[1:] |= fg[:-1] != fg[1:]
    edge[:, :-1] |= fg[:, :-1] != fg[:, 1:]
    edge[:, 1:] |= fg[:, :-1] != fg[:, 1:]
    assert np.all(np.abs(d[edge]) <= np.sqrt(2))


def test_inversion_negates():
    img = disk_image(64, 17.0)
    a, b = image_sdf_pixels(img), image_sdf_pixels(img.inverted())
    assert np.max(np.abs(a + b)) <= 1.0


def test_normalized_by_diagonal():
    img = disk_image(40, 10.0)
    assert np.allclose(image_sdf(img) * np.hypot(40, 40), image_sdf_pixels(img))


@pytest.mark.parametrize("value", [0.0, 1.0])
def test_uniform_image_has_no_surface(value):
    with pytest.raises(NoSurfaceError):
        image_sdf(Image2D(np.full((8, 8), value)))


# ---------------------------------------------------------------- extraction

def test_single_negative_corner_one_triangle():
    f = np.ones((2, 2, 2))
    f[0, 0, 0] = -1
    assert len(marching_cubes(f).triangles) == 1


def test_constant_field_empty_mesh():
    assert marching_cubes(np.ones((4, 4, 4))).is_empty
    assert marching_squares(np.ones((4, 4))) == []


def test_marching_cubes_sphere_bound_and_manifold():
    n, r = 64, 0.5
    ax = np.linspace(-1, 1, n)
    x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
    f = np.sqrt(x * x + y * y + z * z) - r
    h = 2 / (n - 1)
    m = marching_cubes(f, 0.0, (-1, -1, -1), (h, h, h))
    assert np.all(np.abs(np.linalg.norm(m.vertices, axis=1) - r) <= np.sqrt(3) * h)
    assert m.watertight
    # outward normals point toward positive field values
    assert np.all(np.einsum("ij,ij->i", m.face_normals(), m.corners().mean(1)) > 0)


def test_extract_from_grid():
    s = SphereShape(0.5)
    g = set_from_function(GridSpec.cube(16, 1), lambda x: s.sdf(x.reshape(-1, 3)).reshape(x.shape[:-1]),
                          lambda x: s.gradient(x.reshape(-1, 3)).reshape(x.shape))
    m = extract_mesh(g, 32)
    assert not m.is_empty and np.abs(np.linalg.norm(m.vertices, axis=1) - 0.5).max() <= 0.05


def test_marching_squares_disk():
    d = image_sdf_pixels(disk_image(64, 20.0, center=32.0))
    cs = marching_squares(d)
    assert len(cs) == 1
    rad = np.linalg.norm(cs[0] - 32.0, axis=1)
    assert np.all(np.abs(rad - 20.0) <= 1.0)


# ---------------------------------------------------------------- metrics

def sphere_sdf(r):
    return lambda p: np.linalg.norm(p, axis=1) - r


def test_iou_identical_and_disjoint():
    assert iou(sphere_sdf(0.5), sphere_sdf(0.5)) == 1.0
    a = lambda p: np.linalg.norm(p - [0.5, 0, 0], axis=1) - 0.3
    b = lambda p: np.linalg.norm(p + [0.5, 0, 0], axis=1) - 0.3
    assert iou(a, b) == 0.0


def test_iou_concentric_spheres():
    assert abs(iou(sphere_sdf(0.5), sphere_sdf(0.4)) - 0.4 ** 3 / 0.5 ** 3) <= 0.01


def test_iou_both_empty(caplog):
    with caplog.at_level(logging.WARNING):
        assert iou(lambda p: np.ones(len(p)), lambda p: np.ones(len(p)), n=1000) == 1.0
    assert caplog.records


def test_iou_deterministic():
    a = iou(sphere_sdf(0.5), sphere_sdf(0.45), n=10_000, seed=4)
    assert a == iou(sphere_sdf(0.5), sphere_sdf(0.45), n=10_000, seed=4)


def unit_square(z):
    v = np.array([[0, 0, z], [1, 0, z], [1, 1, z], [0, 1, z]], float)
    return TriMesh(v, [[0, 1, 2], [0, 2, 3]])


def test_chamfer_self_zero():
    m = icosphere(2, 0.5)
    assert chamfer_l1(m, m, 10_000) == 0.0


def test_chamfer_parallel_squares():
    d = 0.1
    cd = chamfer_l1(unit_square(0.0), unit_square(d), 100_000)
    assert abs(cd - d) <= 0.02 * d


def test_chamfer_symmetric_and_deterministic():
    a, b = icosphere(2, 0.5), icosphere(1, 0.45)
    assert chamfer_l1(a, b, 5000, seed=3) == chamfer_l1(b, a, 5000, seed=3)
    assert chamfer_l1(a, b, 5000, seed=3) == chamfer_l1(a, b, 5000, seed=3)


def test_chamfer_empty_mesh():
    with pytest.raises(ValueError):
        chamfer_l1(TriMesh(np.zeros((0, 3)), np.zeros((0, 3))), cube_mesh())
