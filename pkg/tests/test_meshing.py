import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from npsr.errors import InvalidInputError
from npsr.meshing import (
    TriangleMesh,
    marching_cubes,
    masked_marching_cubes,
    sample_mesh_surface,
    watertight_check,
)

from conftest import sphere_sdf


@pytest.fixture(scope="module")
def sdf64():
    return sphere_sdf(64)


def tri_coords(mesh):
    """Set of triangles as vertex-coordinate tuples, independent of numbering and rotation."""
    out = set()
    for t in mesh.vertices[mesh.triangles]:
        k = min(range(3), key=lambda i: tuple(t[i]))
        out.add(tuple(map(tuple, np.roll(t, -k, axis=0))))
    return out


def test_sphere_sdf_vertices_and_watertight(sdf64):
    mesh = marching_cubes(sdf64)
    radial = np.abs(np.linalg.norm(mesh.vertices - 0.5, axis=1) - 0.3)
    assert radial.max() < 1.5 / 64
    assert watertight_check(mesh) == (True, 0)


def test_triangles_face_outward(sdf64):
    mesh = marching_cubes(sdf64)
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    assert np.all(np.einsum("ij,ij->i", mesh.face_normals(), centroids - 0.5) > 0)


def test_constant_grid_is_empty():
    assert marching_cubes(np.ones((8, 8, 8))).is_empty


def test_negation_symmetry(sdf64):
    a = marching_cubes(sdf64, 0.01)
    b = marching_cubes(-sdf64, -0.01)
    va = a.vertices[np.lexsort(a.vertices.T)]
    vb = b.vertices[np.lexsort(b.vertices.T)]
    assert va.shape == vb.shape and np.max(np.abs(va - vb)) < 1e-12


def test_vertices_lie_on_straddling_edges(rng):
    chi = rng.normal(size=(10, 10, 10))
    mesh = marching_cubes(chi, 0.1)
    g = mesh.vertices * 10 - 0.5
    off = np.abs(g - np.round(g)) > 1e-9
    assert np.all(off.sum(axis=1) <= 1)
    for p, o in zip(g, off):
        axis = int(np.argmax(o)) if o.any() else 0
        lo = np.round(p).astype(int)
        lo[axis] = int(np.floor(p[axis])) if o.any() else lo[axis]
        hi = lo.copy()
        hi[axis] = min(lo[axis] + 1, 9)
        a, b = chi[tuple(lo)], chi[tuple(hi)]
        assert min(a, b) <= 0.1 <= max(a, b)


def test_full_mask_is_bitwise_identical(sdf64):
    a = marching_cubes(sdf64)
    b = masked_marching_cubes(sdf64, np.ones(sdf64.shape, bool))
    assert np.array_equal(a.vertices, b.vertices) and np.array_equal(a.triangles, b.triangles)


def test_empty_mask_is_empty(sdf64):
    assert masked_marching_cubes(sdf64, np.zeros(sdf64.shape, bool)).is_empty


def test_upper_half_mask_gives_open_hemisphere(sdf64):
    z = (np.arange(64) + 0.5) / 64
    mask = np.broadcast_to(z >= 0.5 - 1 / 64, (64, 64, 64))
    mesh = masked_marching_cubes(sdf64, mask)
    watertight, boundary = watertight_check(mesh)
    assert not watertight and boundary > 0
    assert np.abs(np.linalg.norm(mesh.vertices - 0.5, axis=1) - 0.3).max() < 1.5 / 64
    assert mesh.vertices[:, 2].min() >= 0.5 - 2 / 64


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 0.95))
def test_masked_triangles_are_a_subset(seed, density):
    rng = np.random.default_rng(seed)
    chi = rng.normal(size=(8, 8, 8))
    mask = rng.random((8, 8, 8)) < density
    assert tri_coords(masked_marching_cubes(chi, mask)) <= tri_coords(marching_cubes(chi))


def test_any_rule_is_a_superset(sdf64, rng):
    mask = rng.random(sdf64.shape) < 0.5
    assert len(masked_marching_cubes(sdf64, mask, cell_rule="any")) >= len(masked_marching_cubes(sdf64, mask))


def test_mask_shape_mismatch(sdf64):
    with pytest.raises(InvalidInputError):
        masked_marching_cubes(sdf64, np.ones((8, 8, 8), bool))


def test_single_triangle_sampling():
    mesh = TriangleMesh([[0.1, 0.1, 0.2], [0.9, 0.2, 0.3], [0.3, 0.8, 0.6]], [[0, 1, 2]])
    pc = sample_mesh_surface(mesh, 1000, seed=3)
    n = mesh.face_normals()[0] / np.linalg.norm(mesh.face_normals()[0])
    assert np.max(np.abs((pc.positions - mesh.vertices[0]) @ n)) < 1e-12
    assert np.allclose(pc.normals, n, atol=1e-15)
    # barycentric coordinates are all non-negative
    A = np.column_stack([mesh.vertices[1] - mesh.vertices[0], mesh.vertices[2] - mesh.vertices[0]])
    uv = np.linalg.lstsq(A, (pc.positions - mesh.vertices[0]).T, rcond=None)[0]
    assert uv.min() >= -1e-12 and uv.sum(axis=0).max() <= 1 + 1e-12


def test_area_weighted_split():
    # triangles with area ratio 9:1
    v = [[0, 0, 0], [0.3, 0, 0], [0, 0.3, 0], [0, 0, 0.5], [0.1, 0, 0.5], [0, 0.1, 0.5]]
    mesh = TriangleMesh(v, [[0, 1, 2], [3, 4, 5]])
    pc = sample_mesh_surface(mesh, 10_000, seed=0)
    big = int(np.sum(pc.positions[:, 2] < 0.25))
    sd = np.sqrt(10_000 * 0.9 * 0.1)
    assert abs(big - 9000) <= 3 * sd


def test_sampling_is_deterministic(sdf64):
    mesh = marching_cubes(sdf64)
    a, b = sample_mesh_surface(mesh, 500, 7), sample_mesh_surface(mesh, 500, 7)
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.normals, b.normals)


def test_sample_mean_converges_to_area_centroid():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float) * 0.8 + 0.1
    mesh = TriangleMesh(v, [[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    a = mesh.areas()
    centroid = (a[:, None] * mesh.vertices[mesh.triangles].mean(axis=1)).sum(0) / a.sum()
    pc = sample_mesh_surface(mesh, 100_000, 1)
    se = pc.positions.std(axis=0) / np.sqrt(100_000)
    assert np.all(np.abs(pc.positions.mean(axis=0) - centroid) <= 3 * se)


def test_sampling_rejects_empty_mesh():
    with pytest.raises(InvalidInputError):
        sample_mesh_surface(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3))), 10)


def test_watertight_examples():
    tet = TriangleMesh(np.eye(4)[:, :3], [[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    assert watertight_check(tet) == (True, 0)
    tri = TriangleMesh(np.eye(3), [[0, 1, 2]])
    assert watertight_check(tri) == (False, 3)
