"""Training-example generation: normalize, sample, punch holes, add noise.

Each stage draws from its own RNG stream derived from ``(seed, stage tag)``
so changing one stage's settings never perturbs another stage's randomness.
"""
from __future__ import annotations

import json
import logging
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .dpsr import SolverConfig, dpsr_forward
from .errors import InvalidInputError
from .grid import PointCloud, read_grid, write_grid
from .io import read_xyz, write_xyz
from .masks import gt_mask_from_points
from .meshing import TriangleMesh, sample_mesh_surface

log = logging.getLogger(__name__)

MARGIN = 0.1


def stage_rng(seed: int, tag: str, mesh_id: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, mesh_id, zlib.crc32(tag.encode())]))


def stage_seed(seed: int, tag: str, mesh_id: int = 0) -> int:
    return int(stage_rng(seed, tag, mesh_id).integers(2**63))


# -- analytic shapes ---------------------------------------------------------

def icosphere(subdivisions: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    t = (1 + 5**0.5) / 2
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache, new_faces = {}, []

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return TriangleMesh(np.array(verts) * radius + np.asarray(center), np.array(faces))


def torus(major: float = 1.0, minor: float = 0.4, n_major: int = 48, n_minor: int = 24) -> TriangleMesh:
    u = 2 * np.pi * np.arange(n_major) / n_major
    v = 2 * np.pi * np.arange(n_minor) / n_minor
    uu, vv = np.meshgrid(u, v, indexing="ij")
    ring = major + minor * np.cos(vv)
    verts = np.stack([ring * np.cos(uu), ring * np.sin(uu), minor * np.sin(vv)], axis=-1).reshape(-1, 3)
    i, j = np.meshgrid(np.arange(n_major), np.arange(n_minor), indexing="ij")
    a = i * n_minor + j
    b = ((i + 1) % n_major) * n_minor + j
    c = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
    d = i * n_minor + (j + 1) % n_minor
    faces = np.concatenate([np.stack([a, b, c], -1).reshape(-1, 3), np.stack([a, c, d], -1).reshape(-1, 3)])
    return TriangleMesh(verts, faces)


def box(extents=(1.0, 1.0, 1.0)) -> TriangleMesh:
    e = np.asarray(extents, dtype=np.float64) / 2
    corners = np.array([[x, y, z] for z in (-1, 1) for y in (-1, 1) for x in (-1, 1)], dtype=np.float64) * e
    faces = [(0, 2, 1), (1, 2, 3), (4, 5, 6), (5, 7, 6), (0, 1, 4), (1, 5, 4),
             (2, 6, 3), (3, 6, 7), (0, 4, 2), (2, 4, 6), (1, 3, 5), (3, 7, 5)]
    return TriangleMesh(corners, np.array(faces))


GENERATORS = {"sphere": lambda: icosphere(4), "torus": torus, "box": box}


# -- pipeline stages ---------------------------------------------------------

def normalize_mesh(mesh: TriangleMesh, seed: int | None = 0, rotate: bool = True) -> TriangleMesh:
    """Randomly rotate, then fit the bounding box centered in ``[0.1, 0.9]^3``."""
    if mesh.is_empty:
        raise InvalidInputError("cannot normalize an empty mesh")
    v = mesh.vertices
    if rotate:
        v = Rotation.random(random_state=np.random.default_rng(seed)).apply(v)
    lo, hi = v.min(axis=0), v.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0:
        raise InvalidInputError("mesh has zero extent")
    v = (v - (lo + hi) / 2) * ((1 - 2 * MARGIN) / extent) + 0.5
    return TriangleMesh(v, mesh.triangles.copy())


@dataclass(frozen=True)
class HolePunchConfig:
    num_regions: int = 4
    radius_range: tuple = (0.08, 0.15)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.radius_range
        if not (0 < lo <= hi < 0.5):
            raise InvalidInputError(f"invalid radius range {self.radius_range}")
        if self.num_regions < 0:
            raise InvalidInputError("num_regions must be >= 0")


def hole_regions(cloud: PointCloud, cfg: HolePunchConfig):
    rng = np.random.default_rng(cfg.seed)
    centers = cloud.positions[rng.integers(len(cloud), size=cfg.num_regions)]
    radii = rng.uniform(cfg.radius_range[0], cfg.radius_range[1], size=cfg.num_regions)
    return centers, radii


def punch_holes(cloud: PointCloud, cfg: HolePunchConfig) -> PointCloud:
    """Drop every point within a random sphere centered on a random cloud point."""
    if len(cloud) == 0:
        raise InvalidInputError("cannot punch holes in an empty cloud")
    centers, radii = hole_regions(cloud, cfg)
    keep = np.ones(len(cloud), dtype=bool)
    for c, rad in zip(centers, radii):
        keep &= np.linalg.norm(cloud.positions - c, axis=1) >= rad
    if not keep.any():
        log.warning("hole punching removed every point")
    return cloud.subset(keep)


NOISE_SIGMAS = {"none": 0.0, "low_noise": 0.005, "high_noise": 0.025, "outliers": 0.005}


@dataclass(frozen=True)
class AugmentationSetting:
    kind: str = "low_noise"
    sigma: float | None = None
    outlier_fraction: float = 0.5

    def __post_init__(self):
        if self.kind not in NOISE_SIGMAS:
            raise InvalidInputError(f"unknown augmentation {self.kind!r}")

    @property
    def noise_sigma(self) -> float:
        return NOISE_SIGMAS[self.kind] if self.sigma is None else self.sigma


def augment(cloud: PointCloud, setting: AugmentationSetting, seed: int = 0) -> PointCloud:
    """Noisy, unoriented copy of a cloud; point count is preserved."""
    rng = np.random.default_rng(seed)
    pos = cloud.positions.copy()
    n = len(pos)
    if setting.kind == "outliers":
        n_out = int(round(n * setting.outlier_fraction))
        order = rng.permutation(n)
        outliers, inliers = order[:n_out], order[n_out:]
        pos[inliers] += rng.normal(0.0, setting.noise_sigma, size=(len(inliers), 3))
        pos[outliers] = rng.random((n_out, 3))
    elif setting.noise_sigma > 0:
        pos += rng.normal(0.0, setting.noise_sigma, size=pos.shape)
    return PointCloud(np.clip(pos, 0.0, 1.0))


# -- examples ----------------------------------------------------------------

@dataclass
class TrainingExample:
    input_cloud: PointCloud
    gt_cloud: PointCloud
    gt_chi: np.ndarray
    gt_mask: np.ndarray
    meta: dict = field(default_factory=dict)


def make_example(
    mesh: TriangleMesh,
    r: int = 64,
    n_samples: int = 20_000,
    hole_cfg: HolePunchConfig | None = None,
    aug_setting: AugmentationSetting | None = None,
    mask_width: int = 5,
    seed: int = 0,
    mesh_id: int = 0,
    sigma: float = 2.0,
    rotate: bool = True,
) -> TrainingExample:
    hole_cfg = hole_cfg or HolePunchConfig()
    aug_setting = aug_setting or AugmentationSetting("none")
    seeds = {tag: stage_seed(seed, tag, mesh_id) for tag in ("rotate", "sample", "holes", "augment")}

    norm = normalize_mesh(mesh, seeds["rotate"], rotate=rotate)
    dense = sample_mesh_surface(norm, n_samples, seeds["sample"])
    gt_chi, _ = dpsr_forward(dense, SolverConfig(r, sigma))
    hole_cfg = HolePunchConfig(hole_cfg.num_regions, tuple(hole_cfg.radius_range), seeds["holes"])
    gt_cloud = punch_holes(dense, hole_cfg) if hole_cfg.num_regions else dense
    gt_mask = gt_mask_from_points(gt_cloud, r, mask_width)
    input_cloud = augment(gt_cloud, aug_setting, seeds["augment"])
    meta = {
        "seed": seed, "mesh_id": mesh_id, "stage_seeds": {k: str(v) for k, v in seeds.items()},
        "resolution": r, "sigma": sigma, "n_samples": n_samples, "mask_width": mask_width,
        "rotate": rotate,
        "holes": {"num_regions": hole_cfg.num_regions, "radius_range": list(hole_cfg.radius_range)},
        "augmentation": asdict(aug_setting), "n_gt_points": len(gt_cloud),
    }
    return TrainingExample(input_cloud, gt_cloud, gt_chi, gt_mask, meta)


def save_example(example: TrainingExample, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_xyz(d / "input.xyz", example.input_cloud)
    write_xyz(d / "gt.xyz", example.gt_cloud)
    write_grid(d / "chi.vgrd", example.gt_chi)
    write_grid(d / "mask.vmsk", example.gt_mask)
    (d / "meta.json").write_text(json.dumps(example.meta, indent=2, sort_keys=True) + "\n")
    return d


def load_example(directory) -> TrainingExample:
    d = Path(directory)
    return TrainingExample(
        read_xyz(d / "input.xyz"), read_xyz(d / "gt.xyz"),
        read_grid(d / "chi.vgrd"), read_grid(d / "mask.vmsk"),
        json.loads((d / "meta.json").read_text()),
    )
