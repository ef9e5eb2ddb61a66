import csv
import hashlib
import json

import numpy as np
import pytest

from npsr.cli import main
from npsr.io import read_obj, read_xyz
from npsr.meshing import watertight_check


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def examples(tmp_path_factory):
    root = tmp_path_factory.mktemp("examples")
    assert run("dataprep", "--generate", "sphere", "--res", 32, "--samples", 6000, "--holes", 3,
               "--hole-radius", 0.15, 0.2, "--noise", "none", "--seed", 1, "-o", root / "sphere") == 0
    assert run("dataprep", "--generate", "torus", "--res", 32, "--samples", 6000, "--seed", 2,
               "-o", root / "torus") == 0
    assert run("dataprep", "--generate", "sphere", "--res", 32, "--samples", 6000, "--holes", 0,
               "--noise", "none", "-o", root / "closed") == 0
    return root


def test_dataprep_writes_example(examples):
    names = sorted(p.name for p in (examples / "sphere").iterdir())
    assert names == ["chi.vgrd", "gt.xyz", "input.xyz", "mask.vmsk", "meta.json"]
    meta = json.loads((examples / "sphere" / "meta.json").read_text())
    assert meta["run"]["flags"]["seed"] == 1 and "numpy" in meta["run"]["versions"]


def test_dataprep_is_reproducible(examples, tmp_path):
    run("dataprep", "--generate", "sphere", "--res", 32, "--samples", 6000, "--holes", 3,
        "--hole-radius", 0.15, 0.2, "--noise", "none", "--seed", 1, "-o", tmp_path / "again")
    for name in ("input.xyz", "gt.xyz", "chi.vgrd", "mask.vmsk"):
        assert digest(tmp_path / "again" / name) == digest(examples / "sphere" / name)


def test_no_holes_no_noise_input_is_gt_positions(examples):
    inp, gt = read_xyz(examples / "closed" / "input.xyz"), read_xyz(examples / "closed" / "gt.xyz")
    assert not inp.oriented and gt.oriented
    assert np.array_equal(inp.positions, gt.positions)


def test_reconstruct_closed_sphere_is_watertight(examples, tmp_path):
    assert run("reconstruct", examples / "closed", "--res", 32, "-o", tmp_path / "m.obj") == 0
    assert watertight_check(read_obj(tmp_path / "m.obj")) == (True, 0)
    manifest = json.loads((tmp_path / "m.json").read_text())
    assert manifest["result"]["boundary_edge_count"] == 0


def test_reconstruct_gt_mask_is_open(examples, tmp_path):
    assert run("reconstruct", examples / "sphere", "--res", 32, "--mask", "gt", "-o", tmp_path / "m.obj") == 0
    assert watertight_check(read_obj(tmp_path / "m.obj"))[1] > 0


def test_reconstruct_lap3d_baseline(examples, tmp_path):
    assert run("reconstruct", examples / "torus", "--res", 32, "--mask", "lap3d", "--threshold", 0.05,
               "-o", tmp_path / "m.obj") == 0
    flags = json.loads((tmp_path / "m.json").read_text())["flags"]
    assert flags["mask"] == "lap3d" and flags["threshold"] == 0.05


def test_reconstruct_errors(examples, tmp_path):
    assert run("reconstruct", tmp_path / "missing.xyz", "-o", tmp_path / "m.obj") == 1
    assert run("reconstruct", examples / "sphere", "--mask", "smpn", "-o", tmp_path / "m.obj") == 1
    assert run("reconstruct", examples / "sphere", "--res", 31, "-o", tmp_path / "m.obj") == 1


def test_sweep_shape_and_degeneracy(examples, tmp_path):
    out = tmp_path / "sweep.csv"
    assert run("sweep", examples / "sphere", examples / "torus", "--res", 32, "-o", out) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 2 * (1 + 5 + 5)
    for ex in ("sphere", "torus"):
        base = next(r for r in rows if r["example"] == ex and r["mode"] == "none")
        for mode in ("lap2d", "lap3d"):
            mine = [r for r in rows if r["example"] == ex and r["mode"] == mode]
            assert [r["threshold"] for r in mine] == ["0.00", "0.05", "0.10", "0.20", "0.40"]
            assert (mine[0]["chamfer"], mine[0]["hausdorff"]) == (base["chamfer"], base["hausdorff"])


def test_sweep_empty_list(tmp_path):
    assert run("sweep", "-o", tmp_path / "e.csv") == 0
    assert (tmp_path / "e.csv").read_text().splitlines() == [
        "example,mode,threshold,chamfer,hausdorff,boundary_edges,triangles,mask_voxels"
    ]


def train_args(examples, out, *extra):
    return ("train", examples / "sphere", examples / "torus", "--steps", 3, "--channels", 2, 4,
            "--batch-size", 2, "-o", out, *extra)


def test_train_outputs_and_reproducibility(examples, tmp_path):
    names = ("w.json", "w.bin", "w.loss.csv", "w.run.json")
    assert run(*train_args(examples, tmp_path / "w.json")) == 0
    first = {n: digest(tmp_path / n) for n in names}
    assert run(*train_args(examples, tmp_path / "w.json")) == 0
    assert {n: digest(tmp_path / n) for n in names} == first
    lines = (tmp_path / "w.loss.csv").read_text().splitlines()
    assert lines[0] == "step,loss" and len(lines) == 4


def test_train_zero_lr_is_flat(examples, tmp_path):
    out = tmp_path / "w.json"
    assert run(*train_args(examples, out, "--lr", 0, "--batch-size", 2)) == 0
    losses = [float(l.split(",")[1]) for l in (tmp_path / "w.loss.csv").read_text().splitlines()[1:]]
    assert len(set(losses)) == 1


def test_reconstruct_with_trained_weights(examples, tmp_path):
    run(*train_args(examples, tmp_path / "w.json"))
    assert run("reconstruct", examples / "sphere", "--res", 32, "--mask", "smpn",
               "--weights", tmp_path / "w.json", "-o", tmp_path / "m.obj") == 0


def test_metrics_command(examples, tmp_path, capsys):
    run("reconstruct", examples / "closed", "--res", 32, "-o", tmp_path / "a.obj")
    run("reconstruct", examples / "sphere", "--res", 32, "--mask", "gt", "-o", tmp_path / "b.obj")
    assert run("metrics", tmp_path / "a.obj", tmp_path / "a.obj") == 0
    same = json.loads(capsys.readouterr().out)
    assert same["chamfer"] == 0 and same["hausdorff"] == 0
    assert run("metrics", tmp_path / "b.obj", tmp_path / "a.obj", "--seed", 4, "-o", tmp_path / "r1.json") == 0
    assert run("metrics", tmp_path / "b.obj", tmp_path / "a.obj", "--seed", 4, "-o", tmp_path / "r2.json") == 0
    assert digest(tmp_path / "r1.json") == digest(tmp_path / "r2.json")
    rep = json.loads((tmp_path / "r1.json").read_text())
    assert rep["boundary_edges_source"] > 0 and rep["boundary_edges_target"] == 0


def test_metrics_unreadable_mesh(tmp_path):
    (tmp_path / "bad.obj").write_text("v 0 0\n")
    assert run("metrics", tmp_path / "bad.obj", tmp_path / "bad.obj") == 1
