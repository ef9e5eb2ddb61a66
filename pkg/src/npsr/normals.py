"""Local-PCA normal estimation with greedy orientation propagation.

Stands in for a learned normal predictor so unoriented clouds can be fed to
the Poisson solver.  Orientation is heuristic: a breadth-first walk over the
k-NN graph flips each normal to agree with its parent, starting from the
point farthest from the centroid (oriented outward).  Thin sheets whose two
sides fall into one neighborhood can fail.
"""
from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order
from scipy.spatial import cKDTree

from .errors import InvalidInputError
from .grid import PointCloud

FALLBACK_NORMAL = np.array([0.0, 0.0, 1.0])


def pca_normals(points: np.ndarray, neighbors: np.ndarray, rank_tol: float = 1e-12):
    """Unoriented normals from neighborhood covariances.

    Returns ``(normals, degenerate)``; degenerate neighborhoods (covariance
    rank < 2) get :data:`FALLBACK_NORMAL`.
    """
    nb = points[neighbors]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / neighbors.shape[1]
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0]
    scale = np.maximum(evals[:, 2], np.finfo(float).tiny)
    degenerate = evals[:, 1] <= rank_tol * scale
    degenerate |= evals[:, 2] <= 0
    normals[degenerate] = FALLBACK_NORMAL
    return normals / np.linalg.norm(normals, axis=1, keepdims=True), degenerate


def orient_normals(points: np.ndarray, normals: np.ndarray, neighbors: np.ndarray) -> np.ndarray:
    n = len(points)
    rows = np.repeat(np.arange(n), neighbors.shape[1])
    graph = coo_matrix((np.ones(rows.size), (rows, neighbors.ravel())), shape=(n, n)).tocsr()
    graph = graph + graph.T
    out = normals.copy()
    centroid = points.mean(axis=0)
    visited = np.zeros(n, dtype=bool)
    by_distance = np.argsort(-np.linalg.norm(points - centroid, axis=1), kind="stable")
    for root in by_distance:
        if visited[root]:
            continue
        if np.dot(out[root], points[root] - centroid) < 0:
            out[root] = -out[root]
        order, pred = breadth_first_order(graph, root, directed=False, return_predecessors=True)
        visited[order] = True
        for j in order[1:]:
            if np.dot(out[j], out[pred[j]]) < 0:
                out[j] = -out[j]
    return out


def estimate_normals(cloud: PointCloud | np.ndarray, k: int = 20):
    """Oriented normals for an unoriented cloud.

    Returns ``(cloud, degenerate)`` where ``degenerate`` flags points that
    received the fallback normal.
    """
    pts = np.asarray(getattr(cloud, "positions", cloud), dtype=np.float64).reshape(-1, 3)
    if k < 3:
        raise InvalidInputError("k must be >= 3")
    if k > len(pts):
        raise InvalidInputError(f"k={k} exceeds the cloud size {len(pts)}")
    _, neighbors = cKDTree(pts).query(pts, k=k)
    normals, degenerate = pca_normals(pts, neighbors)
    normals = orient_normals(pts, normals, neighbors)
    return PointCloud(pts, normals), degenerate
