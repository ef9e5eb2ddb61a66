"""Dense voxel grids on the unit cube and trilinear gather/scatter.

Grids are plain numpy arrays indexed ``[ix, iy, iz]``:

* scalar grid: ``(r, r, r)`` float64
* vector grid: ``(r, r, r, 3)`` float64
* surface mask: ``(r, r, r)`` bool

Voxel ``(i, j, k)`` has its center at ``((i+.5)/r, (j+.5)/r, (k+.5)/r)``.
Serialized payloads are written x-fastest (Fortran order over the spatial
axes).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError

_CORNERS = np.array(
    [[a, b, c] for c in (0, 1) for b in (0, 1) for a in (0, 1)], dtype=np.int64
)


@dataclass
class PointCloud:
    """Point positions with optional unit normals (``None`` for unoriented clouds)."""

    positions: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(self.normals) != len(self.positions):
                raise InvalidInputError(
                    f"{len(self.positions)} positions but {len(self.normals)} normals"
                )

    def __len__(self):
        return len(self.positions)

    @property
    def oriented(self) -> bool:
        return self.normals is not None

    def subset(self, keep: np.ndarray) -> "PointCloud":
        normals = None if self.normals is None else self.normals[keep]
        return PointCloud(self.positions[keep], normals)


def voxel_centers(r: int) -> np.ndarray:
    """Return an ``(r, r, r, 3)`` array of voxel-center coordinates."""
    c = (np.arange(r) + 0.5) / r
    return np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1)


def check_scalar_grid(grid: np.ndarray) -> int:
    grid = np.asarray(grid)
    if grid.ndim != 3 or not (grid.shape[0] == grid.shape[1] == grid.shape[2]):
        raise InvalidInputError(f"expected an (r, r, r) grid, got shape {grid.shape}")
    return grid.shape[0]


def _check_points(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(p)):
        raise InvalidInputError("non-finite point coordinates")
    if p.size and (p.min() < -1e-9 or p.max() > 1 + 1e-9):
        raise InvalidInputError("point coordinates must lie in the unit cube [0, 1]^3")
    return p


def corner_weights(points: np.ndarray, r: int):
    """Trilinear stencil of each point.

    Returns ``(idx, w, dw)``: ``idx`` (n, 8, 3) voxel indices of the eight
    surrounding voxels, ``w`` (n, 8) their weights (summing to 1) and ``dw``
    (n, 8, 3) the derivative of each weight w.r.t. the point coordinates.
    Coordinates past the outermost voxel centers clamp, so ``dw`` is zero
    along clamped axes.
    """
    p = _check_points(points)
    g = p * r - 0.5
    clamped = (g < 0) | (g > r - 1)
    g = np.clip(g, 0.0, r - 1)
    i0 = np.minimum(np.floor(g).astype(np.int64), r - 2)
    t = g - i0
    # per-axis weights for the low (0) and high (1) corner, plus derivatives
    lo_hi = np.stack([1.0 - t, t], axis=1)  # (n, 2, 3)
    slope = np.where(clamped, 0.0, float(r))
    dlo_hi = np.stack([-slope, slope], axis=1)

    a, b, c = _CORNERS[:, 0], _CORNERS[:, 1], _CORNERS[:, 2]
    wx, wy, wz = lo_hi[:, a, 0], lo_hi[:, b, 1], lo_hi[:, c, 2]
    w = wx * wy * wz
    dw = np.stack(
        [dlo_hi[:, a, 0] * wy * wz, wx * dlo_hi[:, b, 1] * wz, wx * wy * dlo_hi[:, c, 2]],
        axis=-1,
    )
    idx = i0[:, None, :] + _CORNERS[None, :, :]
    return idx, w, dw


def _flat(idx: np.ndarray, r: int) -> np.ndarray:
    return (idx[..., 0] * r + idx[..., 1]) * r + idx[..., 2]


def trilinear_gather(grid: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Sample a scalar ``(r,r,r)`` or vector ``(r,r,r,C)`` grid at many points."""
    grid = np.asarray(grid, dtype=np.float64)
    r = grid.shape[0]
    idx, w, _ = corner_weights(points, r)
    flat = grid.reshape(r**3, -1)[_flat(idx, r)]  # (n, 8, C)
    out = np.einsum("nk,nkc->nc", w, flat)
    return out[:, 0] if grid.ndim == 3 else out


def trilinear_sample(grid: np.ndarray, p) -> float:
    """Trilinear interpolation of a scalar grid at a single point."""
    check_scalar_grid(grid)
    return float(trilinear_gather(grid, np.asarray(p, dtype=np.float64)[None])[0])


def trilinear_gather_grad(grid: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Spatial gradient (n, 3) of the trilinear interpolant of a scalar grid."""
    r = grid.shape[0]
    idx, _, dw = corner_weights(points, r)
    vals = np.asarray(grid, dtype=np.float64).reshape(-1)[_flat(idx, r)]
    return np.einsum("nkd,nk->nd", dw, vals)


def scatter(points: np.ndarray, values: np.ndarray, r: int) -> np.ndarray:
    """Adjoint of :func:`trilinear_gather`: splat per-point values onto a grid.

    ``values`` is (n,) or (n, C); the result is (r,r,r) or (r,r,r,C).
    Accumulation uses ``bincount`` so the result is independent of point order
    up to floating-point summation in index order.
    """
    values = np.asarray(values, dtype=np.float64)
    vec = values.ndim == 2
    vals = values if vec else values[:, None]
    if len(vals) == 0:
        shape = (r, r, r, vals.shape[1]) if vec else (r, r, r)
        return np.zeros(shape)
    idx, w, _ = corner_weights(points, r)
    flat = _flat(idx, r).ravel()
    out = np.stack(
        [np.bincount(flat, weights=(w[:, :, None] * vals[:, None, :])[..., c].ravel(), minlength=r**3)
         for c in range(vals.shape[1])],
        axis=-1,
    )
    out = out.reshape(r, r, r, vals.shape[1])
    return out if vec else out[..., 0]


def rasterize_point_normals(cloud: PointCloud, r: int) -> np.ndarray:
    """Splat each point normal onto its 8 neighboring voxels -> (r,r,r,3) field."""
    if cloud.normals is None:
        raise InvalidInputError("rasterization needs an oriented point cloud")
    if r < 2:
        raise InvalidInputError("resolution must be >= 2")
    return scatter(cloud.positions, cloud.normals, r)


def rasterize_vjp(cloud: PointCloud, upstream: np.ndarray):
    """Pull a (r,r,r,3) gradient back through :func:`rasterize_point_normals`.

    Returns ``(grad_positions, grad_normals)``, both (n, 3).
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.ndim != 4 or upstream.shape[-1] != 3 or len(set(upstream.shape[:3])) != 1:
        raise InvalidInputError(f"expected an (r, r, r, 3) gradient, got {upstream.shape}")
    if cloud.normals is None:
        raise InvalidInputError("rasterization needs an oriented point cloud")
    r = upstream.shape[0]
    idx, w, dw = corner_weights(cloud.positions, r)
    g = upstream.reshape(r**3, 3)[_flat(idx, r)]  # (n, 8, 3)
    grad_normals = np.einsum("nk,nkc->nc", w, g)
    proj = np.einsum("nkc,nc->nk", g, cloud.normals)
    grad_positions = np.einsum("nkd,nk->nd", dw, proj)
    return grad_positions, grad_normals


# -- binary grid files -------------------------------------------------------

_MAGIC = {"scalar": b"VGRD", "vector": b"VVEC", "mask": b"VMSK"}


def _payload(kind: str, grid: np.ndarray) -> bytes:
    if kind == "vector":
        return np.transpose(grid, (3, 0, 1, 2)).ravel(order="F").astype("<f4").tobytes()
    dtype = "u1" if kind == "mask" else "<f4"
    return grid.ravel(order="F").astype(dtype).tobytes()


def write_grid(path, grid: np.ndarray) -> None:
    """Write a scalar, vector or mask grid; the kind is inferred from dtype/shape."""
    grid = np.asarray(grid)
    if grid.dtype == bool:
        kind = "mask"
    elif grid.ndim == 4:
        kind = "vector"
    else:
        kind = "scalar"
    r = grid.shape[0]
    Path(path).write_bytes(_MAGIC[kind] + struct.pack("<I", r) + _payload(kind, grid))


def read_grid(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise InvalidInputError(f"{path}: truncated grid header")
    magic, (r,) = raw[:4], struct.unpack("<I", raw[4:8])
    body = raw[8:]
    if magic == _MAGIC["mask"]:
        data, n = np.frombuffer(body, dtype="u1"), r**3
    elif magic in (_MAGIC["scalar"], _MAGIC["vector"]):
        data = np.frombuffer(body, dtype="<f4")
        n = r**3 * (3 if magic == _MAGIC["vector"] else 1)
    else:
        raise InvalidInputError(f"{path}: unknown grid magic {magic!r}")
    if data.size != n:
        raise InvalidInputError(f"{path}: expected {n} values, found {data.size}")
    if magic == _MAGIC["mask"]:
        return data.reshape((r, r, r), order="F").astype(bool)
    if magic == _MAGIC["vector"]:
        return np.transpose(data.reshape((3, r, r, r), order="F"), (1, 2, 3, 0)).astype(np.float64)
    return data.reshape((r, r, r), order="F").astype(np.float64)
