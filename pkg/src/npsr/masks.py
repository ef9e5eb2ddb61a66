"""Surface masks: ground truth from points, and Laplacian-filter baselines."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InvalidInputError
from .grid import PointCloud, check_scalar_grid

LAPLACE_2D = np.array([[0, -1, 0], [-1, 4, -1], [0, -1, 0]], dtype=np.float64)

# planes along the third axis
LAPLACE_3D = np.zeros((3, 3, 3))
LAPLACE_3D[1, 1, 0] = LAPLACE_3D[1, 1, 2] = 1.0
LAPLACE_3D[:, :, 1] = [[0, 1, 0], [1, -6, 1], [0, 1, 0]]

DEFAULT_THRESHOLDS = (0.00, 0.05, 0.10, 0.20, 0.40)


@dataclass(frozen=True)
class LaplacianBaselineConfig:
    mode: str = "3d"
    threshold: float = 0.05
    dilation_width: int = 7

    def __post_init__(self):
        if self.mode not in ("2d", "3d"):
            raise InvalidInputError(f"mode must be '2d' or '3d', got {self.mode!r}")
        if self.threshold < 0:
            raise InvalidInputError("threshold must be >= 0")
        _check_width(self.dilation_width)


def _check_width(width: int) -> None:
    if width < 1 or width % 2 == 0:
        raise InvalidInputError(f"dilation width must be a positive odd integer, got {width}")


def dilate(mask: np.ndarray, width: int) -> np.ndarray:
    """Binary dilation by a ``width``-wide cube (zero outside the grid)."""
    _check_width(width)
    mask = np.asarray(mask, dtype=bool)
    if width == 1:
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=np.ones((width,) * mask.ndim, dtype=bool))


def _dilate_slices(mask: np.ndarray, width: int) -> np.ndarray:
    # square element within each z-slice
    if width == 1:
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=np.ones((width, width, 1), dtype=bool))


def laplacian_response(chi: np.ndarray, mode: str) -> np.ndarray:
    """Absolute Laplacian filter response, zero-padded at the grid boundary."""
    check_scalar_grid(chi)
    chi = np.asarray(chi, dtype=np.float64)
    kernel = LAPLACE_2D[:, :, None] if mode == "2d" else LAPLACE_3D
    return np.abs(ndimage.correlate(chi, kernel, mode="constant", cval=0.0))


def laplacian_threshold(chi: np.ndarray, mode: str, threshold: float) -> np.ndarray:
    """Pre-dilation baseline mask: voxels whose |response| reaches the threshold."""
    return laplacian_response(chi, mode) >= threshold


def laplacian2d_mask(chi: np.ndarray, cfg: LaplacianBaselineConfig) -> np.ndarray:
    if cfg.mode != "2d":
        raise InvalidInputError("laplacian2d_mask needs a 2d config")
    return _dilate_slices(laplacian_threshold(chi, "2d", cfg.threshold), cfg.dilation_width)


def laplacian3d_mask(chi: np.ndarray, cfg: LaplacianBaselineConfig) -> np.ndarray:
    if cfg.mode != "3d":
        raise InvalidInputError("laplacian3d_mask needs a 3d config")
    return dilate(laplacian_threshold(chi, "3d", cfg.threshold), cfg.dilation_width)


def laplacian_mask(chi: np.ndarray, cfg: LaplacianBaselineConfig) -> np.ndarray:
    return laplacian2d_mask(chi, cfg) if cfg.mode == "2d" else laplacian3d_mask(chi, cfg)


def points_to_voxels(positions: np.ndarray, r: int) -> np.ndarray:
    """Mark the voxel containing each point."""
    mask = np.zeros((r, r, r), dtype=bool)
    if len(positions):
        idx = np.clip(np.floor(np.asarray(positions) * r).astype(np.int64), 0, r - 1)
        mask[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return mask


def gt_mask_from_points(cloud: PointCloud | np.ndarray, r: int, width: int = 7) -> np.ndarray:
    positions = cloud.positions if isinstance(cloud, PointCloud) else np.asarray(cloud).reshape(-1, 3)
    return dilate(points_to_voxels(positions, r), width)
