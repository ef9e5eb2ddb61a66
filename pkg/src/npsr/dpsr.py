"""Differentiable spectral Poisson solver.

Given an oriented point cloud, the normals are splatted onto a periodic grid
``v`` and the Poisson equation ``lap(chi) = div(v)`` is solved in Fourier
space::

    X(u) = g(u) * (i u . V(u)) / (-2 pi |u|^2),   X(0) = 0
    g(u) = exp(-2 sigma^2 |u|^2 / r^2)

with ``u`` the integer frequency (cycles per unit-cube period).  The raw
solution is then shifted so the mean value at the input points is zero and
scaled by ``m / |chi'(0,0,0)|``.

Sign convention: with outward normals the interior is negative, the exterior
positive and the surface is the zero level set.

Even-resolution grids carry a Nyquist plane that has no real-valued
derivative; taking the real part of the inverse transform drops the odd part
there, which is the usual treatment of odd derivatives at Nyquist.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft

from .errors import DegenerateNormalizationError, InvalidInputError
from .grid import (
    PointCloud,
    check_scalar_grid,
    corner_weights,
    rasterize_point_normals,
    rasterize_vjp,
    trilinear_gather,
    trilinear_gather_grad,
)


@dataclass(frozen=True)
class SolverConfig:
    resolution: int = 64
    sigma: float = 2.0
    iso_scale: float = 0.5

    def __post_init__(self):
        if self.resolution < 2 or self.resolution % 2:
            raise InvalidInputError(f"resolution must be even and >= 2, got {self.resolution}")
        if self.sigma < 0:
            raise InvalidInputError("sigma must be >= 0")
        if self.iso_scale <= 0:
            raise InvalidInputError("iso_scale must be > 0")


class SpectralWorkspace:
    """Integer frequency grid and the cached Gaussian smoothing kernel."""

    def __init__(self, resolution: int, sigma: float):
        r = resolution
        f = scipy.fft.fftfreq(r, d=1.0 / r)  # 0, 1, ..., -1 in cycles per period
        self.u = np.stack(np.meshgrid(f, f, f, indexing="ij"), axis=-1)
        self.u_sq = np.sum(self.u**2, axis=-1)
        self.kernel = np.exp(-2.0 * sigma**2 * self.u_sq / r**2)
        denom = -2.0 * np.pi * self.u_sq
        denom[0, 0, 0] = 1.0
        # X = transfer * (u . V); zero at DC
        self.transfer = 1j * self.kernel / denom
        self.transfer[0, 0, 0] = 0.0


_WORKSPACES: dict[tuple[int, float], SpectralWorkspace] = {}


def workspace(resolution: int, sigma: float) -> SpectralWorkspace:
    key = (resolution, float(sigma))
    if key not in _WORKSPACES:
        _WORKSPACES[key] = SpectralWorkspace(resolution, sigma)
    return _WORKSPACES[key]


def _check_vector_field(v: np.ndarray, r: int | None = None) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 4 or v.shape[-1] != 3 or len(set(v.shape[:3])) != 1:
        raise InvalidInputError(f"expected an (r, r, r, 3) field, got {v.shape}")
    if r is not None and v.shape[0] != r:
        raise InvalidInputError(f"field resolution {v.shape[0]} != solver resolution {r}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("non-finite vector field")
    return v


def spectral_solution(v: np.ndarray, cfg: SolverConfig):
    """Return ``(X, V)``: the solution spectrum and the per-channel field spectrum."""
    v = _check_vector_field(v, cfg.resolution)
    ws = workspace(cfg.resolution, cfg.sigma)
    V = scipy.fft.fftn(v, axes=(0, 1, 2))
    X = ws.transfer * np.einsum("xyzc,xyzc->xyz", ws.u, V)
    return X, V


def solve_unnormalized(v: np.ndarray, cfg: SolverConfig) -> np.ndarray:
    """Mean-free raw indicator ``chi'`` for a rasterized normal field."""
    X, _ = spectral_solution(v, cfg)
    return scipy.fft.ifftn(X).real


def solve_unnormalized_vjp(grad_chi: np.ndarray, cfg: SolverConfig) -> np.ndarray:
    """Adjoint of :func:`solve_unnormalized`: (r,r,r) -> (r,r,r,3)."""
    ws = workspace(cfg.resolution, cfg.sigma)
    G = scipy.fft.fftn(np.asarray(grad_chi, dtype=np.float64))
    # the transfer function is purely imaginary, so its conjugate is its negation
    Gc = -ws.transfer * G
    return scipy.fft.ifftn(Gc[..., None] * ws.u, axes=(0, 1, 2)).real


@dataclass
class _Normalization:
    scale: float
    offset: float
    ref: float


def _normalization(chi_raw: np.ndarray, positions: np.ndarray, cfg: SolverConfig) -> _Normalization:
    if len(positions) == 0:
        raise InvalidInputError("normalization needs at least one point")
    # the (0,0,0) corner clamps onto the first voxel
    ref = float(chi_raw[0, 0, 0])
    if abs(ref) < 1e-12:
        raise DegenerateNormalizationError(f"|chi'(0)| = {abs(ref):.3g} is too small to normalize")
    offset = float(np.mean(trilinear_gather(chi_raw, positions)))
    return _Normalization(cfg.iso_scale / abs(ref), offset, ref)


def normalize_chi(chi_raw: np.ndarray, cloud: PointCloud, cfg: SolverConfig) -> np.ndarray:
    """Shift so points sit on the zero level and rescale by ``m / |chi'(0)|``."""
    check_scalar_grid(chi_raw)
    norm = _normalization(np.asarray(chi_raw, dtype=np.float64), cloud.positions, cfg)
    return norm.scale * (chi_raw - norm.offset)


@dataclass
class DPSRTape:
    """Everything :func:`dpsr_backward` needs from a forward call."""

    cloud: PointCloud
    cfg: SolverConfig
    chi_raw: np.ndarray
    norm: _Normalization


def dpsr_forward(cloud: PointCloud, cfg: SolverConfig):
    """Oriented cloud -> normalized indicator grid, plus a tape for backprop."""
    if cloud.normals is None:
        raise InvalidInputError("the Poisson solver needs point normals")
    v = rasterize_point_normals(cloud, cfg.resolution)
    chi_raw = solve_unnormalized(v, cfg)
    norm = _normalization(chi_raw, cloud.positions, cfg)
    chi = norm.scale * (chi_raw - norm.offset)
    return chi, DPSRTape(cloud, cfg, chi_raw, norm)


def dpsr_backward(tape: DPSRTape, upstream: np.ndarray):
    """Gradient of ``<upstream, chi>`` w.r.t. point positions and normals."""
    upstream = np.asarray(upstream, dtype=np.float64)
    r = tape.cfg.resolution
    if upstream.shape != (r, r, r):
        raise InvalidInputError(f"upstream shape {upstream.shape} does not match resolution {r}")
    s, mu, ref = tape.norm.scale, tape.norm.offset, tape.norm.ref
    pos = tape.cloud.positions
    n = len(pos)
    total = upstream.sum()

    # chi = s * (chi_raw - mu),  mu = mean_i chi_raw(c_i),  s = m / |chi_raw[0,0,0]|
    g_raw = s * upstream
    idx, w, _ = corner_weights(pos, r)
    flat = ((idx[..., 0] * r + idx[..., 1]) * r + idx[..., 2]).ravel()
    g_raw = g_raw + (-s * total / n) * np.bincount(flat, weights=w.ravel(), minlength=r**3).reshape(r, r, r)
    g_raw[0, 0, 0] += -(s / ref) * np.sum(upstream * (tape.chi_raw - mu))

    grad_v = solve_unnormalized_vjp(g_raw, tape.cfg)
    grad_positions, grad_normals = rasterize_vjp(tape.cloud, grad_v)
    # positions also enter through the sampled offset mu
    grad_positions = grad_positions - (s * total / n) * trilinear_gather_grad(tape.chi_raw, pos)
    return grad_positions, grad_normals


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error between two indicator grids and its gradient."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise InvalidInputError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff**2)), 2.0 * diff / diff.size
