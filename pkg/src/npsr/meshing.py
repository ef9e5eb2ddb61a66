"""Marching cubes (plain and mask-restricted), surface sampling, watertightness."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._mc_table import TRI_TABLE
from .errors import InvalidInputError
from .grid import PointCloud, check_scalar_grid


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles) and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise InvalidInputError("triangle index out of range")

    def __len__(self):
        return len(self.triangles)

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def face_normals(self):
        """Unnormalized face normals (length = 2 * area), following the winding."""
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return np.cross(b - a, c - a)

    def areas(self):
        return 0.5 * np.linalg.norm(self.face_normals(), axis=1)


# cube corner offsets and edges (start corner, axis) in the table's numbering
_CORNER_OFFSETS = np.array(
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]]
)
_EDGE_START = np.array(
    [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 0], [0, 0, 1], [1, 0, 1],
     [0, 1, 1], [0, 0, 1], [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]]
)
_EDGE_AXIS = np.array([0, 1, 0, 1, 0, 1, 0, 1, 2, 2, 2, 2])

_TRI_COUNT = np.array([len(t) // 3 for t in TRI_TABLE])
_TRI_PADDED = np.full((256, 15), -1, dtype=np.int64)
for _case, _tris in enumerate(TRI_TABLE):
    _TRI_PADDED[_case, : len(_tris)] = _tris


def _cube_index(chi: np.ndarray, iso: float) -> np.ndarray:
    r = chi.shape[0]
    below = chi < iso
    idx = np.zeros((r - 1,) * 3, dtype=np.int64)
    for bit, (a, b, c) in enumerate(_CORNER_OFFSETS):
        idx |= below[a : a + r - 1, b : b + r - 1, c : c + r - 1].astype(np.int64) << bit
    return idx


def _extract(chi: np.ndarray, iso: float, cell_ok: np.ndarray | None) -> TriangleMesh:
    chi = np.asarray(chi, dtype=np.float64)
    r = check_scalar_grid(chi)
    if r < 2:
        raise InvalidInputError("marching cubes needs r >= 2")
    cases = _cube_index(chi, iso)
    active = _TRI_COUNT[cases] > 0
    if cell_ok is not None:
        active &= cell_ok
    cells = np.argwhere(active)  # (m, 3), C order over the cell lattice
    if len(cells) == 0:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    cell_cases = cases[tuple(cells.T)]
    counts = _TRI_COUNT[cell_cases] * 3
    owner = np.repeat(np.arange(len(cells)), counts)
    slot = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    local_edge = _TRI_PADDED[cell_cases[owner], slot]

    # every lattice edge gets one global id, so neighboring cells share vertices
    start = cells[owner] + _EDGE_START[local_edge]
    axis = _EDGE_AXIS[local_edge]
    gid = ((axis * r + start[:, 0]) * r + start[:, 1]) * r + start[:, 2]
    uniq, inverse = np.unique(gid, return_inverse=True)

    u_axis = uniq // r**3
    rem = uniq % r**3
    p0 = np.stack([rem // (r * r), (rem // r) % r, rem % r], axis=1)
    p1 = p0.copy()
    p1[np.arange(len(p1)), u_axis] += 1
    v0 = chi[tuple(p0.T)]
    v1 = chi[tuple(p1.T)]
    t = (iso - v0) / (v1 - v0)
    pos = p0.astype(np.float64)
    pos[np.arange(len(pos)), u_axis] += t
    vertices = (pos + 0.5) / r

    triangles = inverse.reshape(-1, 3)
    # the table winds triangles inward for "below iso is inside"; flip to face outward
    triangles = triangles[:, ::-1].copy()
    return TriangleMesh(vertices, triangles)


def marching_cubes(chi: np.ndarray, iso: float = 0.0) -> TriangleMesh:
    """Iso-surface of a scalar grid; vertices are in unit-cube coordinates.

    Regions below ``iso`` count as inside and triangles face outward, i.e.
    towards increasing values.
    """
    return _extract(chi, iso, None)


def _mask_cells(mask: np.ndarray, cell_rule: str) -> np.ndarray:
    r = mask.shape[0]
    corners = [mask[a : a + r - 1, b : b + r - 1, c : c + r - 1] for a, b, c in _CORNER_OFFSETS]
    if cell_rule == "all":
        return np.logical_and.reduce(corners)
    if cell_rule == "any":
        return np.logical_or.reduce(corners)
    raise InvalidInputError(f"unknown cell rule {cell_rule!r}")


def masked_marching_cubes(chi: np.ndarray, mask: np.ndarray, iso: float = 0.0, cell_rule: str = "all") -> TriangleMesh:
    """Marching cubes over only those cells whose corners pass ``cell_rule``."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != np.shape(chi):
        raise InvalidInputError(f"mask shape {mask.shape} != grid shape {np.shape(chi)}")
    return _extract(chi, iso, _mask_cells(mask, cell_rule))


def sample_mesh_surface(mesh: TriangleMesh, n: int, seed: int = 0) -> PointCloud:
    """Area-weighted uniform samples with face normals."""
    if mesh.is_empty:
        raise InvalidInputError("cannot sample an empty mesh")
    if n < 1:
        raise InvalidInputError("need n >= 1 samples")
    rng = np.random.default_rng(seed)
    fn = mesh.face_normals()
    areas = np.linalg.norm(fn, axis=1)
    if areas.sum() <= 0:
        raise InvalidInputError("mesh has zero surface area")
    face = rng.choice(len(areas), size=n, p=areas / areas.sum())
    uv = rng.random((n, 2))
    flip = uv.sum(axis=1) > 1
    uv[flip] = 1 - uv[flip]
    a, b, c = (mesh.vertices[mesh.triangles[face, k]] for k in range(3))
    pts = a + uv[:, :1] * (b - a) + uv[:, 1:] * (c - a)
    normals = fn[face] / areas[face, None]
    return PointCloud(pts, normals)


def edge_counts(mesh: TriangleMesh):
    """Undirected edges of the mesh and how many triangles use each."""
    t = mesh.triangles
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0, return_counts=True)


def watertight_check(mesh: TriangleMesh):
    """``(is_watertight, boundary_edge_count)``; every edge must be shared by exactly two faces."""
    _, counts = edge_counts(mesh)
    return bool(np.all(counts == 2)), int(np.sum(counts == 1))
