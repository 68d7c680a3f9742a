"""Minimal PLY reader/writer for point clouds (ASCII and binary little-endian)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import FormatError
from .cloud import PointCloud

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def write_ply(path: str | Path, cloud: PointCloud, binary: bool = True) -> None:
    names = ["x", "y", "z"]
    data = cloud.points
    if cloud.normals is not None:
        names += ["nx", "ny", "nz"]
        data = np.hstack([cloud.points, cloud.normals])
    data = data.astype("<f4")
    fmt = "binary_little_endian" if binary else "ascii"
    header = [
        "ply",
        f"format {fmt} 1.0",
        f"element vertex {len(data)}",
        *(f"property float {n}" for n in names),
        "end_header",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(data.tobytes())
        else:
            for row in data:
                fh.write((" ".join(repr(float(v)) for v in row) + "\n").encode("ascii"))


def read_ply(path: str | Path) -> PointCloud:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    marker = b"end_header"
    pos = raw.find(marker)
    if not raw.startswith(b"ply") or pos < 0:
        raise FormatError(f"{path}: not a PLY file")
    body_start = raw.index(b"\n", pos) + 1
    header = raw[:body_start].decode("ascii", errors="replace").splitlines()

    fmt = None
    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    for line in header:
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if tok[1] == "list":
                raise FormatError(f"{path}: list properties are not supported before vertices")
            if not elements or tok[1] not in _PLY_TYPES:
                raise FormatError(f"{path}: bad property line {line!r}")
            elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise FormatError(f"{path}: unsupported PLY format {fmt!r}")
    if not elements or elements[0][0] != "vertex":
        raise FormatError(f"{path}: first element must be 'vertex'")

    _, count, props = elements[0]
    names = [n for n, _ in props]
    if not {"x", "y", "z"} <= set(names):
        raise FormatError(f"{path}: vertex element lacks x/y/z")
    try:
        if fmt == "ascii":
            text = raw[body_start:].decode("ascii").split("\n")
            table = np.array([text[i].split()[: len(props)] for i in range(count)], dtype=float)
            cols = {n: table[:, k] for k, n in enumerate(names)}
        else:
            dtype = np.dtype([(n, "<" + t) for n, t in props])
            arr = np.frombuffer(raw, dtype=dtype, count=count, offset=body_start)
            cols = {n: arr[n].astype(float) for n in names}
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: truncated or malformed vertex data") from exc

    points = np.column_stack([cols["x"], cols["y"], cols["z"]])
    normals = None
    if {"nx", "ny", "nz"} <= set(names):
        normals = np.column_stack([cols["nx"], cols["ny"], cols["nz"]])
        norm = np.linalg.norm(normals, axis=1, keepdims=True)
        norm[norm == 0] = 1.0
        normals = normals / norm  # float32 storage loses unit length beyond 1e-6
    return PointCloud(points, normals)
