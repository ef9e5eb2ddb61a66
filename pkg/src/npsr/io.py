"""Mesh (OBJ/OFF) and point-cloud (XYZ/PLY) file formats."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .grid import PointCloud
from .meshing import TriangleMesh

_FLOAT_FMT = "%.9g"


def _fan(face):
    return [(face[0], face[i], face[i + 1]) for i in range(1, len(face) - 1)]


def read_obj(path) -> TriangleMesh:
    verts, tris = [], []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts or parts[0] not in ("v", "f"):
                continue
            try:
                if parts[0] == "v":
                    if len(parts) < 4:
                        raise ValueError("vertex needs 3 coordinates")
                    verts.append([float(x) for x in parts[1:4]])
                else:
                    idx = []
                    for tok in parts[1:]:
                        i = int(tok.split("/")[0])
                        idx.append(i - 1 if i > 0 else len(verts) + i)
                    tris.extend(_fan(idx))
            except ValueError as exc:
                raise InvalidInputError(f"{path}:{lineno}: {exc}") from exc
    return TriangleMesh(np.array(verts).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3))


def write_obj(path, mesh: TriangleMesh) -> None:
    with open(path, "w") as f:
        np.savetxt(f, mesh.vertices, fmt="v " + " ".join([_FLOAT_FMT] * 3))
        if mesh.normals is not None:
            np.savetxt(f, mesh.normals, fmt="vn " + " ".join([_FLOAT_FMT] * 3))
            t = np.repeat(mesh.triangles + 1, 2, axis=1)
            np.savetxt(f, t, fmt="f %d//%d %d//%d %d//%d")
        else:
            np.savetxt(f, mesh.triangles + 1, fmt="f %d %d %d")


def read_off(path) -> TriangleMesh:
    tokens = []
    with open(path) as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if line:
                tokens.append(line)
    if not tokens or not tokens[0].startswith("OFF"):
        raise InvalidInputError(f"{path}: missing OFF header")
    head = tokens[0][3:].split()
    body = tokens[1:]
    if not head:
        head, body = body[0].split(), body[1:]
    try:
        nv, nf = int(head[0]), int(head[1])
        verts = np.array([[float(x) for x in body[i].split()[:3]] for i in range(nv)]).reshape(-1, 3)
        tris = []
        for line in body[nv : nv + nf]:
            vals = [int(x) for x in line.split()]
            tris.extend(_fan(vals[1 : 1 + vals[0]]))
    except (ValueError, IndexError) as exc:
        raise InvalidInputError(f"{path}: malformed OFF body ({exc})") from exc
    return TriangleMesh(verts, np.array(tris, dtype=np.int64).reshape(-1, 3))


def read_mesh(path) -> TriangleMesh:
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        return read_obj(path)
    if suffix == ".off":
        return read_off(path)
    raise InvalidInputError(f"unsupported mesh format: {path}")


def read_xyz(path) -> PointCloud:
    try:
        data = np.loadtxt(path, ndmin=2)
    except ValueError as exc:
        raise InvalidInputError(f"{path}: {exc}") from exc
    if data.size == 0:
        return PointCloud(np.zeros((0, 3)))
    if data.shape[1] == 3:
        return PointCloud(data)
    if data.shape[1] == 6:
        return PointCloud(data[:, :3], data[:, 3:])
    raise InvalidInputError(f"{path}: expected 3 or 6 columns, got {data.shape[1]}")


def write_xyz(path, cloud: PointCloud) -> None:
    data = cloud.positions if cloud.normals is None else np.hstack([cloud.positions, cloud.normals])
    np.savetxt(path, data, fmt=_FLOAT_FMT)


_PLY_TYPES = {
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
    "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
}


def write_ply(path, cloud: PointCloud) -> None:
    """Binary little-endian PLY with float32 x/y/z (and nx/ny/nz when oriented)."""
    names = ["x", "y", "z"] + (["nx", "ny", "nz"] if cloud.oriented else [])
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(cloud)}"]
    header += [f"property float {n}" for n in names] + ["end_header"]
    data = cloud.positions if not cloud.oriented else np.hstack([cloud.positions, cloud.normals])
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_ply(path) -> PointCloud:
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or end < 0:
        raise InvalidInputError(f"{path}: not a PLY file")
    body_start = raw.index(b"\n", end) + 1
    lines = raw[:end].decode("ascii").splitlines()
    if "format binary_little_endian" not in raw[:end].decode("ascii"):
        raise InvalidInputError(f"{path}: only binary little-endian PLY is supported")
    count, props, in_vertex = 0, [], False
    for line in lines:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            count, in_vertex = int(parts[2]), True
        elif parts and parts[0] == "element":
            in_vertex = False
        elif parts and parts[0] == "property" and in_vertex:
            if parts[1] == "list":
                raise InvalidInputError(f"{path}: list properties on vertices are not supported")
            props.append((parts[2], _PLY_TYPES[parts[1]]))
    arr = np.frombuffer(raw[body_start:], dtype=np.dtype(props), count=count)
    pos = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(np.float64)
    names = arr.dtype.names
    if all(n in names for n in ("nx", "ny", "nz")):
        return PointCloud(pos, np.stack([arr["nx"], arr["ny"], arr["nz"]], axis=1).astype(np.float64))
    return PointCloud(pos)


def read_cloud(path) -> PointCloud:
    return read_ply(path) if Path(path).suffix.lower() == ".ply" else read_xyz(path)
