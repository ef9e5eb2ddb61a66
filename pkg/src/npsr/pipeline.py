"""End-to-end reconstruction: cloud -> indicator grid -> mask -> mesh."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dpsr import SolverConfig, dpsr_forward
from .errors import InvalidInputError
from .grid import PointCloud
from .masks import LaplacianBaselineConfig, gt_mask_from_points, laplacian_mask
from .meshing import TriangleMesh, marching_cubes, masked_marching_cubes
from .normals import estimate_normals

log = logging.getLogger(__name__)

MASK_MODES = ("none", "gt", "lap2d", "lap3d", "smpn")


def oriented(cloud: PointCloud, k: int = 20) -> PointCloud:
    """Return the cloud itself if it has normals, else a PCA-oriented copy."""
    if cloud.oriented:
        return cloud
    est, degenerate = estimate_normals(cloud, k=min(k, len(cloud)))
    if degenerate.any():
        log.warning("%d points got a fallback normal", int(degenerate.sum()))
    return est


def indicator_grid(cloud: PointCloud, cfg: SolverConfig, k_normals: int = 20) -> np.ndarray:
    chi, _ = dpsr_forward(oriented(cloud, k_normals), cfg)
    return chi


def compute_mask(
    chi: np.ndarray,
    mode: str,
    *,
    gt_points: np.ndarray | None = None,
    threshold: float = 0.05,
    mask_width: int | None = None,
    net=None,
    binarize: float = 0.5,
) -> np.ndarray | None:
    """Surface mask for ``chi`` according to ``mode`` (``None`` for mode "none")."""
    r = chi.shape[0]
    if mode == "none":
        return None
    if mode == "gt":
        if gt_points is None:
            raise InvalidInputError("mask mode 'gt' needs ground-truth points")
        return gt_mask_from_points(gt_points, r, mask_width or 5)
    if mode in ("lap2d", "lap3d"):
        cfg = LaplacianBaselineConfig(mode[3:], threshold, mask_width or 7)
        return laplacian_mask(chi, cfg)
    if mode == "smpn":
        if net is None:
            raise InvalidInputError("mask mode 'smpn' needs network weights")
        from .smpn import predict_mask

        return predict_mask(chi, net, binarize)
    raise InvalidInputError(f"unknown mask mode {mode!r}; expected one of {MASK_MODES}")


@dataclass
class Reconstruction:
    mesh: TriangleMesh
    chi: np.ndarray
    mask: np.ndarray | None


def extract(chi: np.ndarray, mask: np.ndarray | None, iso: float = 0.0, cell_rule: str = "all") -> TriangleMesh:
    if mask is None:
        return marching_cubes(chi, iso)
    return masked_marching_cubes(chi, mask, iso, cell_rule)


def reconstruct(
    cloud: PointCloud,
    cfg: SolverConfig,
    mask_mode: str = "none",
    iso: float = 0.0,
    cell_rule: str = "all",
    **mask_kwargs,
) -> Reconstruction:
    chi = indicator_grid(cloud, cfg)
    mask = compute_mask(chi, mask_mode, **mask_kwargs)
    return Reconstruction(extract(chi, mask, iso, cell_rule), chi, mask)
