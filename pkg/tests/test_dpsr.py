import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from npsr.dpsr import (
    SolverConfig,
    dpsr_backward,
    dpsr_forward,
    mse_loss,
    normalize_chi,
    solve_unnormalized,
    solve_unnormalized_vjp,
    spectral_solution,
    workspace,
)
from npsr.errors import DegenerateNormalizationError, InvalidInputError
from npsr.grid import PointCloud, trilinear_gather, voxel_centers
from npsr.meshing import marching_cubes

from conftest import sphere_cloud


def cos_field(r):
    c = voxel_centers(r)
    v = np.zeros((r, r, r, 3))
    v[..., 0] = np.cos(2 * np.pi * c[..., 0])
    return v, c


@pytest.mark.parametrize("r", [2, 8, 32])
def test_zero_field_gives_zero(r):
    assert not solve_unnormalized(np.zeros((r, r, r, 3)), SolverConfig(r)).any()


@pytest.mark.parametrize("r", [0, 3, 31])
def test_odd_or_tiny_resolution_rejected(r):
    with pytest.raises(InvalidInputError):
        SolverConfig(r)


def test_single_mode_solves_by_hand():
    r = 64
    v, c = cos_field(r)
    chi = solve_unnormalized(v, SolverConfig(r, sigma=0.0))
    assert np.max(np.abs(chi - np.sin(2 * np.pi * c[..., 0]) / (2 * np.pi))) < 1e-8


def test_residual_identity(rng):
    r = 16
    cfg = SolverConfig(r, sigma=1.5)
    ws = workspace(r, cfg.sigma)
    X, V = spectral_solution(rng.normal(size=(r, r, r, 3)), cfg)
    rhs = ws.kernel * 1j * np.einsum("xyzc,xyzc->xyz", ws.u, V)
    lhs = -2 * np.pi * ws.u_sq * X
    nz = ws.u_sq > 0
    assert np.max(np.abs(lhs - rhs)[nz]) / np.max(np.abs(rhs)[nz]) < 1e-10
    assert X[0, 0, 0] == 0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0, 4))
def test_output_is_mean_free(seed, sigma):
    v = np.random.default_rng(seed).normal(size=(8, 8, 8, 3))
    assert abs(solve_unnormalized(v, SolverConfig(8, sigma)).mean()) < 1e-10


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-5, 5), st.floats(-5, 5))
def test_solver_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    cfg = SolverConfig(8)
    v1, v2 = rng.normal(size=(2, 8, 8, 8, 3))
    lhs = solve_unnormalized(a * v1 + b * v2, cfg)
    rhs = a * solve_unnormalized(v1, cfg) + b * solve_unnormalized(v2, cfg)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * max(1.0, np.max(np.abs(rhs)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_more_smoothing_never_raises_peak(seed):
    v = np.random.default_rng(seed).normal(size=(16, 16, 16, 3))
    peaks = [np.abs(solve_unnormalized(v, SolverConfig(16, s))).max() for s in (0.0, 0.5, 1.0, 2.0, 4.0)]
    assert all(b <= a + 1e-12 for a, b in zip(peaks, peaks[1:]))


def test_vjp_is_adjoint(rng):
    cfg = SolverConfig(8, 1.0)
    v, g = rng.normal(size=(8, 8, 8, 3)), rng.normal(size=(8, 8, 8))
    lhs = np.sum(solve_unnormalized(v, cfg) * g)
    rhs = np.sum(v * solve_unnormalized_vjp(g, cfg))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_constant_raw_field_hits_division_guard():
    cloud = PointCloud(np.full((3, 3), 0.5), np.tile([0.0, 0, 1], (3, 1)))
    with pytest.raises(DegenerateNormalizationError):
        normalize_chi(np.zeros((4, 4, 4)), cloud, SolverConfig(4))


def test_constant_raw_field_normalizes_to_zero():
    cloud = PointCloud(np.full((3, 3), 0.5), np.tile([0.0, 0, 1], (3, 1)))
    chi = normalize_chi(np.full((4, 4, 4), 2.5), cloud, SolverConfig(4))
    assert not chi.any()


def test_single_mode_zero_crossing_points_sit_on_zero_level(rng):
    r = 32
    v, _ = cos_field(r)
    raw = solve_unnormalized(v, SolverConfig(r, 0.0))
    pts = np.column_stack([np.full(50, 0.5), rng.random((50, 2))])
    chi = normalize_chi(raw, PointCloud(pts, np.tile([1.0, 0, 0], (50, 1))), SolverConfig(r, 0.0))
    assert abs(trilinear_gather(chi, pts).mean()) < 1e-8


@pytest.mark.parametrize("alpha", [1e-3, 0.7, 12.0])
def test_normalization_is_scale_invariant(rng, alpha):
    raw = solve_unnormalized(rng.normal(size=(8, 8, 8, 3)), SolverConfig(8))
    cloud = PointCloud(rng.random((10, 3)), rng.normal(size=(10, 3)))
    a = normalize_chi(raw, cloud, SolverConfig(8))
    b = normalize_chi(alpha * raw, cloud, SolverConfig(8))
    assert np.max(np.abs(a - b)) <= 1e-10 * np.max(np.abs(a))


def test_sphere_sign_and_level_set(sphere20k):
    chi, _ = dpsr_forward(sphere20k, SolverConfig(64, 2.0))
    assert chi[32, 32, 32] < 0 and chi[0, 0, 0] > 0
    verts = marching_cubes(chi).vertices
    radial = np.abs(np.linalg.norm(verts - 0.5, axis=1) - 0.3)
    assert radial.max() < 1.5 / 64


def test_mean_at_points_is_zero(sphere20k):
    chi, _ = dpsr_forward(sphere20k, SolverConfig(32))
    assert abs(trilinear_gather(chi, sphere20k.positions).mean()) < 1e-8


def test_flipping_normals_negates_chi():
    cloud = sphere_cloud(5000)
    flipped = PointCloud(cloud.positions, -cloud.normals)
    a, _ = dpsr_forward(cloud, SolverConfig(32))
    b, _ = dpsr_forward(flipped, SolverConfig(32))
    assert np.max(np.abs(a + b)) < 1e-12
    assert np.array_equal(np.sign(a[np.abs(a) > 1e-9]), -np.sign(b[np.abs(a) > 1e-9]))


def test_unoriented_cloud_rejected():
    with pytest.raises(InvalidInputError):
        dpsr_forward(PointCloud(np.full((4, 3), 0.5)), SolverConfig(8))


def _fd_check(cloud, cfg, h=1e-4):
    chi, tape = dpsr_forward(cloud, cfg)
    gp, gn = dpsr_backward(tape, 2 * chi)
    worst = 0.0
    for arr, grad in ((cloud.positions, gp), (cloud.normals, gn)):
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            lp = np.sum(dpsr_forward(cloud, cfg)[0] ** 2)
            arr[idx] = old - h
            lm = np.sum(dpsr_forward(cloud, cfg)[0] ** 2)
            arr[idx] = old
            fd = (lp - lm) / (2 * h)
            worst = max(worst, abs(fd - grad[idx]) / max(abs(fd), 1e-8))
    return worst


def test_backward_matches_finite_differences(rng):
    cloud = PointCloud(0.2 + 0.6 * rng.random((6, 3)), rng.normal(size=(6, 3)))
    assert _fd_check(cloud, SolverConfig(8, 1.0)) < 1e-4


def test_backward_zero_upstream(rng):
    cloud = PointCloud(rng.random((6, 3)), rng.normal(size=(6, 3)))
    _, tape = dpsr_forward(cloud, SolverConfig(8))
    gp, gn = dpsr_backward(tape, np.zeros((8, 8, 8)))
    assert not gp.any() and not gn.any()


def test_backward_linear_in_upstream(rng):
    cloud = PointCloud(rng.random((6, 3)), rng.normal(size=(6, 3)))
    _, tape = dpsr_forward(cloud, SolverConfig(8))
    up = rng.normal(size=(8, 8, 8))
    _, g1 = dpsr_backward(tape, up)
    _, g2 = dpsr_backward(tape, 2 * up)
    assert np.array_equal(2 * g1, g2)


def test_mse_loss(rng):
    t = rng.normal(size=(4, 4, 4))
    loss, grad = mse_loss(t, t)
    assert loss == 0 and not grad.any()
    assert mse_loss(t + 1, t)[0] == pytest.approx(1.0, abs=1e-15)
    p = rng.normal(size=(4, 4, 4))
    _, grad = mse_loss(p, t)
    h = 1e-6
    for idx in [(0, 0, 0), (1, 2, 3), (3, 3, 1)]:
        q = p.copy()
        q[idx] += h
        lp = mse_loss(q, t)[0]
        q[idx] -= 2 * h
        lm = mse_loss(q, t)[0]
        assert (lp - lm) / (2 * h) == pytest.approx(grad[idx], abs=1e-8)


def test_mse_shape_mismatch():
    with pytest.raises(InvalidInputError):
        mse_loss(np.zeros((4, 4, 4)), np.zeros((8, 8, 8)))
