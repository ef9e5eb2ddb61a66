import numpy as np
import pytest

from npsr.dataprep import (
    AugmentationSetting,
    GENERATORS,
    HolePunchConfig,
    augment,
    box,
    icosphere,
    load_example,
    make_example,
    normalize_mesh,
    punch_holes,
    save_example,
    stage_seed,
)
from npsr.errors import InvalidInputError
from npsr.grid import PointCloud
from npsr.masks import points_to_voxels
from npsr.meshing import marching_cubes, masked_marching_cubes, watertight_check

from conftest import sphere_cloud


@pytest.mark.parametrize("name", sorted(GENERATORS))
def test_generators_are_closed_and_outward(name):
    mesh = GENERATORS[name]()
    assert watertight_check(mesh) == (True, 0)
    # signed volume is positive for outward winding
    a, b, c = (mesh.vertices[mesh.triangles[:, k]] for k in range(3))
    assert np.einsum("ij,ij->i", a, np.cross(b, c)).sum() > 0


def test_unit_cube_fits_margin_box():
    mesh = normalize_mesh(box(), rotate=False)
    assert np.allclose(mesh.vertices.min(axis=0), 0.1, atol=1e-15)
    assert np.allclose(mesh.vertices.max(axis=0), 0.9, atol=1e-15)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_normalized_bounds(seed):
    mesh = normalize_mesh(GENERATORS["torus"](), seed)
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    assert lo.min() >= 0.1 - 1e-12 and hi.max() <= 0.9 + 1e-12
    assert (hi - lo).max() == pytest.approx(0.8, abs=1e-12)


def test_rotation_is_seeded():
    a, b = normalize_mesh(icosphere(1), 5), normalize_mesh(icosphere(1), 5)
    assert np.array_equal(a.vertices, b.vertices)
    assert not np.array_equal(a.vertices, normalize_mesh(icosphere(1), 6).vertices)


def test_normalize_is_idempotent():
    once = normalize_mesh(GENERATORS["torus"](), 3)
    twice = normalize_mesh(once, rotate=False)
    assert np.max(np.abs(once.vertices - twice.vertices)) < 1e-12


def test_no_regions_is_identity():
    cloud = sphere_cloud(1000)
    out = punch_holes(cloud, HolePunchConfig(0))
    assert np.array_equal(out.positions, cloud.positions)


def test_single_region_removes_center():
    cloud = sphere_cloud(1000)
    cfg = HolePunchConfig(1, (0.1, 0.1), seed=4)
    center = cloud.positions[np.random.default_rng(4).integers(1000, size=1)][0]
    out = punch_holes(cloud, cfg)
    assert len(out) < len(cloud)
    assert not np.any(np.all(out.positions == center, axis=1))


def test_removed_count_matches_brute_force():
    cloud = sphere_cloud(20_000)
    cfg = HolePunchConfig(3, (0.1, 0.1), seed=9)
    rng = np.random.default_rng(9)
    centers = cloud.positions[rng.integers(len(cloud), size=3)]
    inside = 0
    for p in cloud.positions:
        inside += any(np.sqrt(np.sum((p - c) ** 2)) < 0.1 for c in centers)
    out = punch_holes(cloud, cfg)
    assert len(cloud) - len(out) == inside
    # survivors are untouched input points
    rows = {tuple(p) for p in cloud.positions}
    assert all(tuple(p) in rows for p in out.positions)


def test_zero_sigma_keeps_positions():
    cloud = sphere_cloud(500)
    out = augment(cloud, AugmentationSetting("low_noise", sigma=0.0), 1)
    assert np.array_equal(out.positions, cloud.positions) and not out.oriented


def test_low_noise_displacement():
    cloud = sphere_cloud(20_000)
    out = augment(cloud, AugmentationSetting("low_noise"), 2)
    mean_abs = np.abs(out.positions - cloud.positions).mean()
    assert mean_abs == pytest.approx(0.005 * np.sqrt(2 / np.pi), rel=0.05)


def test_outlier_fraction():
    cloud = sphere_cloud(20_000)
    out = augment(cloud, AugmentationSetting("outliers"), 3)
    far = np.abs(np.linalg.norm(out.positions - 0.5, axis=1) - 0.3) > 0.05
    assert len(out) == len(cloud)
    # uniform outliers that happen to land in the +-0.05 shell are not "far"
    shell = 4 / 3 * np.pi * (0.35**3 - 0.25**3)
    assert far.mean() == pytest.approx(0.5 * (1 - shell), abs=0.02)


@pytest.fixture(scope="module")
def sphere_example():
    return make_example(icosphere(4), r=32, n_samples=8000, hole_cfg=HolePunchConfig(3, (0.15, 0.2)), seed=11)


def test_example_without_holes_masks_level_set():
    ex = make_example(icosphere(4), r=32, n_samples=8000, hole_cfg=HolePunchConfig(0), seed=1)
    verts = marching_cubes(ex.gt_chi).vertices
    idx = np.clip(np.floor(verts * 32).astype(int), 0, 31)
    assert ex.gt_mask[idx[:, 0], idx[:, 1], idx[:, 2]].all()


def test_example_with_holes_is_open(sphere_example):
    ex = sphere_example
    assert watertight_check(marching_cubes(ex.gt_chi))[0]
    assert watertight_check(masked_marching_cubes(ex.gt_chi, ex.gt_mask))[1] > 0
    assert len(ex.gt_cloud) < 8000 and not ex.input_cloud.oriented


def test_example_is_deterministic(sphere_example):
    again = make_example(icosphere(4), r=32, n_samples=8000, hole_cfg=HolePunchConfig(3, (0.15, 0.2)), seed=11)
    assert np.array_equal(again.gt_chi, sphere_example.gt_chi)
    assert np.array_equal(again.input_cloud.positions, sphere_example.input_cloud.positions)
    assert again.meta == sphere_example.meta


def test_gt_chi_ignores_hole_and_noise_settings(sphere_example):
    other = make_example(icosphere(4), r=32, n_samples=8000, hole_cfg=HolePunchConfig(1, (0.3, 0.4)),
                         aug_setting=AugmentationSetting("high_noise"), seed=11)
    assert np.array_equal(other.gt_chi, sphere_example.gt_chi)


def test_stage_seeds_differ():
    assert len({stage_seed(0, t) for t in ("rotate", "sample", "holes", "augment")}) == 4


def test_save_load_roundtrip(tmp_path, sphere_example):
    save_example(sphere_example, tmp_path / "ex")
    back = load_example(tmp_path / "ex")
    assert np.array_equal(back.gt_mask, sphere_example.gt_mask)
    assert np.array_equal(back.gt_chi, sphere_example.gt_chi.astype(np.float32))
    assert back.meta == sphere_example.meta


def test_bad_configs():
    with pytest.raises(InvalidInputError):
        HolePunchConfig(1, (0.3, 0.1))
    with pytest.raises(InvalidInputError):
        AugmentationSetting("gaussian")
    with pytest.raises(InvalidInputError):
        punch_holes(PointCloud(np.zeros((0, 3))), HolePunchConfig())
