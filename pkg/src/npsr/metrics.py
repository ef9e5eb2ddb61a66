"""Chamfer and Hausdorff distances between point sets and meshes.

Chamfer uses *squared* nearest-neighbor distances, Hausdorff plain ones.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidInputError
from .meshing import TriangleMesh, sample_mesh_surface, watertight_check

_K = 8


def _as_points(s) -> np.ndarray:
    s = np.asarray(getattr(s, "positions", s), dtype=np.float64).reshape(-1, 3)
    if len(s) == 0:
        raise InvalidInputError("point set is empty")
    return s


def _sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a - b
    return d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]


def nearest_sq_dist(query: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Exact squared distance from each query point to its nearest reference point.

    The tree proposes candidates; distances are recomputed with a fixed
    formula so results do not depend on the tree's own arithmetic.
    """
    query, ref = _as_points(query), _as_points(ref)
    k = min(_K, len(ref))
    tree = cKDTree(ref)
    dist, idx = tree.query(query, k=k)
    if k == 1:
        dist, idx = dist[:, None], idx[:, None]
    best = _sq_dist(query[:, None, :], ref[idx]).min(axis=1)
    if k < len(ref):
        # if all k candidates are near-ties the true minimum may lie beyond them
        unsure = np.nonzero(dist[:, -1] <= dist[:, 0] * (1 + 1e-9) + 1e-300)[0]
        for i in unsure:
            best[i] = _sq_dist(query[i], ref).min()
    return best


def chamfer(s1, s2) -> float:
    a, b = _as_points(s1), _as_points(s2)
    return float(np.mean(nearest_sq_dist(a, b)) + np.mean(nearest_sq_dist(b, a)))


def hausdorff(s1, s2) -> float:
    a, b = _as_points(s1), _as_points(s2)
    return float(max(np.sqrt(nearest_sq_dist(a, b).max()), np.sqrt(nearest_sq_dist(b, a).max())))


@dataclass
class MetricReport:
    chamfer: float
    hausdorff: float
    n_source: int
    n_target: int
    seed: int
    boundary_edges_source: int = 0
    boundary_edges_target: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @staticmethod
    def csv_header() -> str:
        return "chamfer,hausdorff,n_source,n_target,seed,boundary_edges_source,boundary_edges_target"

    def csv_row(self) -> str:
        d = asdict(self)
        return ",".join(repr(d[k]) if isinstance(d[k], float) else str(d[k]) for k in self.csv_header().split(","))


def evaluate_meshes(pred: TriangleMesh, gt: TriangleMesh, n: int = 10_000, seed: int = 0) -> MetricReport:
    """Sample both surfaces with the same seed and compare the samples."""
    a = sample_mesh_surface(pred, n, seed)
    b = sample_mesh_surface(gt, n, seed)
    return MetricReport(
        chamfer(a, b), hausdorff(a, b), n, n, seed,
        watertight_check(pred)[1], watertight_check(gt)[1],
    )


def evaluate_mesh_to_points(pred: TriangleMesh, gt_points, n: int = 10_000, seed: int = 0) -> MetricReport:
    """Compare a mesh against a reference point cloud (subsampled to ``n``)."""
    gt = _as_points(gt_points)
    rng = np.random.default_rng(seed)
    if len(gt) > n:
        gt = gt[np.sort(rng.choice(len(gt), n, replace=False))]
    if pred.is_empty:
        return MetricReport(float("nan"), float("nan"), 0, len(gt), seed, 0, 0)
    a = sample_mesh_surface(pred, n, seed)
    return MetricReport(chamfer(a, gt), hausdorff(a, gt), n, len(gt), seed, watertight_check(pred)[1], 0)
