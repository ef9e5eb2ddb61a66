"""Command-line entry point: ``npsr <command> ...``.

Exit codes: 0 success, 1 invalid input, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np
import scipy
import scipy.fft

from . import __version__
from .dataprep import (
    GENERATORS,
    AugmentationSetting,
    HolePunchConfig,
    load_example,
    make_example,
    save_example,
    stage_seed,
)
from .dpsr import SolverConfig
from .errors import InvalidInputError, TrainingDivergedError
from .io import read_cloud, read_mesh, write_obj
from .masks import DEFAULT_THRESHOLDS
from .metrics import MetricReport, evaluate_mesh_to_points, evaluate_meshes
from .pipeline import MASK_MODES, compute_mask, extract, indicator_grid, oriented

log = logging.getLogger("npsr")

NOISE_KINDS = {"none": "none", "low": "low_noise", "high": "high_noise", "outliers": "outliers"}


def _manifest(args, **extra) -> dict:
    flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    return {
        "command": args.command,
        "flags": flags,
        "versions": {"npsr": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
        **extra,
    }


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=str) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- dataprep ----------------------------------------------------------------

def cmd_dataprep(args) -> int:
    if args.generate:
        mesh, source = GENERATORS[args.generate](), f"generator:{args.generate}"
    else:
        mesh, source = read_mesh(args.mesh), str(args.mesh)
    example = make_example(
        mesh,
        r=args.res,
        n_samples=args.samples,
        hole_cfg=HolePunchConfig(args.holes, tuple(args.hole_radius)),
        aug_setting=AugmentationSetting(NOISE_KINDS[args.noise]),
        mask_width=args.mask_width,
        seed=args.seed,
        mesh_id=args.mesh_id,
        sigma=args.sigma,
        rotate=not args.no_rotate,
    )
    example.meta["source"] = source
    example.meta["run"] = _manifest(args)
    out = save_example(example, args.output)
    log.info("wrote example to %s (%d gt points)", out, len(example.gt_cloud))
    return 0


# -- reconstruct -------------------------------------------------------------

def _load_net(weights):
    if weights is None:
        return None
    from .smpn import load_params

    return load_params(weights)


def _resolve_input(path: Path, source: str, gt: Path | None):
    """A cloud file, or an example directory (then gt.xyz is picked up too)."""
    if path.is_dir():
        cloud = read_cloud(path / ("gt.xyz" if source == "gt" else "input.xyz"))
        gt = gt or path / "gt.xyz"
    else:
        cloud = read_cloud(path)
    gt_points = read_cloud(gt).positions if gt is not None else None
    return cloud, gt_points


def cmd_reconstruct(args) -> int:
    cloud, gt_points = _resolve_input(args.cloud, args.source, args.gt)
    if len(cloud) == 0:
        raise InvalidInputError(f"{args.cloud}: empty point cloud")
    if args.mask == "smpn" and args.weights is None:
        raise InvalidInputError("--mask smpn requires --weights")
    cfg = SolverConfig(args.res, args.sigma, args.iso_scale)
    chi = indicator_grid(cloud, cfg, args.k_normals)
    mask = compute_mask(
        chi, args.mask, gt_points=gt_points, threshold=args.threshold,
        mask_width=args.mask_width, net=_load_net(args.weights), binarize=args.binarize,
    )
    mesh = extract(chi, mask, args.iso, args.cell_rule)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    write_obj(args.output, mesh)
    from .meshing import watertight_check

    watertight, boundary = watertight_check(mesh)
    info = {
        "triangles": len(mesh), "vertices": len(mesh.vertices),
        "watertight": watertight, "boundary_edge_count": boundary,
        "mask_voxels": None if mask is None else int(mask.sum()),
    }
    if gt_points is not None and not mesh.is_empty:
        report = evaluate_mesh_to_points(mesh, gt_points, args.samples, args.seed)
        info["metrics"] = {"chamfer": report.chamfer, "hausdorff": report.hausdorff}
    _write_json(args.output.with_suffix(".json"), _manifest(args, result=info))
    log.info("wrote %s: %d triangles, %d boundary edges", args.output, len(mesh), boundary)
    return 0


# -- sweep -------------------------------------------------------------------

SWEEP_FIELDS = ["example", "mode", "threshold", "chamfer", "hausdorff", "boundary_edges", "triangles", "mask_voxels"]


def sweep_rows(example_dirs, modes, thresholds, cfg: SolverConfig, samples: int, seed: int,
               source: str = "input", mask_width=None, net=None, k_normals: int = 20):
    for d in example_dirs:
        d = Path(d)
        cloud, gt_points = _resolve_input(d, source, None)
        chi = indicator_grid(cloud, cfg, k_normals)
        for mode in modes:
            ths = thresholds if mode in ("lap2d", "lap3d") else [None]
            for th in ths:
                mask = compute_mask(chi, mode, gt_points=gt_points, threshold=th or 0.0,
                                    mask_width=mask_width, net=net)
                mesh = extract(chi, mask)
                rep = evaluate_mesh_to_points(mesh, gt_points, samples, seed)
                yield {
                    "example": d.name, "mode": mode, "threshold": "" if th is None else f"{th:.2f}",
                    "chamfer": repr(rep.chamfer), "hausdorff": repr(rep.hausdorff),
                    "boundary_edges": rep.boundary_edges_source, "triangles": len(mesh),
                    "mask_voxels": "" if mask is None else int(mask.sum()),
                }


def cmd_sweep(args) -> int:
    cfg = SolverConfig(args.res, args.sigma, args.iso_scale)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SWEEP_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in sweep_rows(args.examples, args.modes, args.thresholds, cfg, args.samples, args.seed,
                          args.source, args.mask_width, _load_net(args.weights), args.k_normals):
        writer.writerow(row)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    args.output.write_text(buf.getvalue())
    _write_json(args.output.with_suffix(".json"), _manifest(args))
    return 0


# -- train -------------------------------------------------------------------

def training_pairs(example_dirs, source: str = "gt", sigma: float = 2.0, k_normals: int = 20):
    """(indicator, mask) pairs: the network sees the grid solved from the punched cloud."""
    pairs = []
    for d in example_dirs:
        ex = load_example(d)
        r = ex.gt_mask.shape[0]
        cloud = ex.gt_cloud if source == "gt" else ex.input_cloud
        pairs.append((indicator_grid(cloud, SolverConfig(r, sigma), k_normals), ex.gt_mask))
    return pairs


def cmd_train(args) -> int:
    from .smpn import TrainConfig, UNetConfig, UNetParams, save_params, train

    pairs = training_pairs(args.examples, args.source, args.sigma, args.k_normals)
    r = pairs[0][0].shape[0]
    if any(c.shape[0] != r for c, _ in pairs):
        raise InvalidInputError("all training examples must share one resolution")
    net = UNetParams.init(UNetConfig(tuple(args.channels), resolution=r),
                          seed=stage_seed(args.seed, "init"), dtype=np.float32)
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size,
                      max_steps=args.steps, seed=stage_seed(args.seed, "batches"))
    trained, losses = train(pairs, cfg, net)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    save_params(trained, args.output)
    loss_csv = args.loss_csv or args.output.with_suffix(".loss.csv")
    loss_csv.write_text("step,loss\n" + "".join(f"{i},{l!r}\n" for i, l in enumerate(losses)))
    _write_json(args.output.with_suffix(".run.json"), _manifest(
        args, final_loss=losses[-1] if losses else None,
        weights_sha256=_sha256(args.output.with_suffix(".bin")),
    ))
    log.info("final dice loss %.5f", losses[-1] if losses else float("nan"))
    return 0


# -- metrics -----------------------------------------------------------------

def cmd_metrics(args) -> int:
    pred, gt = read_mesh(args.pred), read_mesh(args.gt)
    report = evaluate_meshes(pred, gt, args.samples, args.seed)
    text = report.to_json() + "\n"
    if args.output:
        args.output.parent.mkdir(parents=True, exist_ok=True)
        args.output.write_text(text)
        args.output.with_suffix(".csv").write_text(MetricReport.csv_header() + "\n" + report.csv_row() + "\n")
    else:
        sys.stdout.write(text)
    return 0


# -- parser ------------------------------------------------------------------

def _solver_flags(p, res=64):
    p.add_argument("--res", type=int, default=res, help="grid resolution (even)")
    p.add_argument("--sigma", type=float, default=2.0, help="spectral smoothing bandwidth in voxels")
    p.add_argument("--iso-scale", type=float, default=0.5)
    p.add_argument("--k-normals", type=int, default=20, help="neighbors for PCA normals")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="npsr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--threads", type=int, default=1, help="worker cap for FFTs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataprep", help="generate a training/evaluation example")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--mesh", type=Path, help="watertight OBJ/OFF mesh")
    src.add_argument("--generate", choices=sorted(GENERATORS))
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--sigma", type=float, default=2.0)
    p.add_argument("--samples", type=int, default=20_000, help="surface samples per mesh")
    p.add_argument("--holes", type=int, default=4)
    p.add_argument("--hole-radius", type=float, nargs=2, default=(0.08, 0.15), metavar=("MIN", "MAX"))
    p.add_argument("--noise", choices=sorted(NOISE_KINDS), default="low")
    p.add_argument("--mask-width", type=int, default=5)
    p.add_argument("--no-rotate", action="store_true")
    p.add_argument("--mesh-id", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.set_defaults(func=cmd_dataprep)

    p = sub.add_parser("reconstruct", help="reconstruct a (masked) mesh from a point cloud")
    p.add_argument("cloud", type=Path, help="XYZ/PLY cloud or an example directory")
    _solver_flags(p)
    p.add_argument("--iso", type=float, default=0.0)
    p.add_argument("--mask", choices=MASK_MODES, default="none")
    p.add_argument("--threshold", type=float, default=0.05)
    p.add_argument("--mask-width", type=int, default=None, help="dilation width (gt: 5, laplacian: 7)")
    p.add_argument("--cell-rule", choices=("all", "any"), default="all")
    p.add_argument("--weights", type=Path)
    p.add_argument("--binarize", type=float, default=0.5)
    p.add_argument("--gt", type=Path, help="ground-truth cloud for --mask gt and metrics")
    p.add_argument("--source", choices=("input", "gt"), default="input", help="which cloud of an example to use")
    p.add_argument("--samples", type=int, default=20_000, help="mesh samples; smaller gt clouds are used whole")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("sweep", help="evaluate mask modes x thresholds over examples")
    p.add_argument("examples", type=Path, nargs="*")
    _solver_flags(p)
    p.add_argument("--modes", nargs="+", choices=MASK_MODES, default=["none", "lap2d", "lap3d"])
    p.add_argument("--thresholds", type=float, nargs="+", default=list(DEFAULT_THRESHOLDS))
    p.add_argument("--mask-width", type=int, default=None)
    p.add_argument("--weights", type=Path)
    p.add_argument("--source", choices=("input", "gt"), default="input")
    p.add_argument("--samples", type=int, default=20_000, help="mesh samples; smaller gt clouds are used whole")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="train the mask network on example directories")
    p.add_argument("examples", type=Path, nargs="+")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--batch-size", type=int, default=2)
    p.add_argument("--channels", type=int, nargs="+", default=[4, 8, 16])
    p.add_argument("--sigma", type=float, default=2.0)
    p.add_argument("--k-normals", type=int, default=20)
    p.add_argument("--source", choices=("input", "gt"), default="gt", help="cloud the network input is solved from")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--loss-csv", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True, help="weights manifest (.json); blob goes to .bin")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("metrics", help="Chamfer/Hausdorff between two meshes")
    p.add_argument("pred", type=Path)
    p.add_argument("gt", type=Path)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", type=Path)
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        with scipy.fft.set_workers(args.threads):
            return args.func(args)
    except (InvalidInputError, FileNotFoundError, KeyError) as exc:
        log.error("%s", exc)
        return 1
    except TrainingDivergedError as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
