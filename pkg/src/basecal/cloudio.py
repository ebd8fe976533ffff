"""File I/O: PLY and XYZ point clouds, OBJ triangle meshes (v/f subset)."""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .cloud import PointCloud, TriangleMesh

PathLike = Union[str, Path]


class ParseError(ValueError):
    """Malformed input file; the message names the offending line."""


def _fmt(value: float) -> str:
    return f"{value:.9g}"


def save_xyz(cloud: PointCloud, path: PathLike) -> None:
    with open(path, "w") as f:
        for p in cloud.points:
            f.write(f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}\n")


def load_xyz(path: PathLike) -> PointCloud:
    points = []
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise ParseError(f"{path}: line {line_no}: expected 'x y z', got {len(parts)} fields")
            try:
                points.append([float(v) for v in parts])
            except ValueError:
                raise ParseError(f"{path}: line {line_no}: malformed coordinate") from None
    return PointCloud(np.asarray(points, dtype=float).reshape(-1, 3))


def save_ply(cloud: PointCloud, path: PathLike, binary: bool = True) -> None:
    """Write x,y,z[,nx,ny,nz] as 32-bit floats, ASCII or binary-little-endian."""
    has_normals = cloud.normals is not None
    header = ["ply"]
    header.append("format binary_little_endian 1.0" if binary else "format ascii 1.0")
    header.append(f"element vertex {len(cloud)}")
    header += ["property float x", "property float y", "property float z"]
    if has_normals:
        header += ["property float nx", "property float ny", "property float nz"]
    header.append("end_header")
    data = cloud.points if not has_normals else np.hstack([cloud.points, cloud.normals])
    data32 = data.astype("<f4")
    if binary:
        with open(path, "wb") as f:
            f.write(("\n".join(header) + "\n").encode("ascii"))
            f.write(data32.tobytes())
    else:
        with open(path, "w") as f:
            f.write("\n".join(header) + "\n")
            for row in data32:
                f.write(" ".join(_fmt(float(v)) for v in row) + "\n")


def load_ply(path: PathLike) -> PointCloud:
    with open(path, "rb") as f:
        raw = f.read()

    # header is ASCII text terminated by an end_header line
    end_token = b"end_header\n"
    end = raw.find(end_token)
    if end < 0:
        raise ParseError(f"{path}: line 1: missing end_header")
    header_lines = raw[:end].decode("ascii", errors="replace").splitlines()
    if not header_lines or header_lines[0].strip() != "ply":
        raise ParseError(f"{path}: line 1: not a PLY file (missing 'ply' magic)")

    fmt = None
    vertex_count = None
    properties = []
    in_vertex_element = False
    for line_no, line in enumerate(header_lines[1:], start=2):
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(f"{path}: line {line_no}: unsupported format '{line.strip()}'")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3:
                raise ParseError(f"{path}: line {line_no}: malformed element declaration")
            if parts[1] == "vertex":
                try:
                    vertex_count = int(parts[2])
                except ValueError:
                    raise ParseError(f"{path}: line {line_no}: bad vertex count") from None
                in_vertex_element = True
            else:
                if int(parts[2]) != 0:
                    raise ParseError(f"{path}: line {line_no}: unsupported element '{parts[1]}'")
                in_vertex_element = False
        elif parts[0] == "property":
            if not in_vertex_element:
                continue
            if len(parts) != 3 or parts[1] not in ("float", "float32"):
                raise ParseError(f"{path}: line {line_no}: only 32-bit float properties supported")
            properties.append(parts[2])
    if fmt is None:
        raise ParseError(f"{path}: line 2: missing format declaration")
    if vertex_count is None:
        raise ParseError(f"{path}: line 2: missing vertex element")
    if properties[:3] != ["x", "y", "z"] or properties not in (
        ["x", "y", "z"],
        ["x", "y", "z", "nx", "ny", "nz"],
    ):
        raise ParseError(f"{path}: line 2: vertex properties must be x,y,z[,nx,ny,nz], got {properties}")

    n_props = len(properties)
    body = raw[end + len(end_token):]
    if fmt == "binary_little_endian":
        expected = vertex_count * n_props * 4
        if len(body) < expected:
            raise ParseError(f"{path}: line {len(header_lines) + 1}: truncated binary payload")
        data = np.frombuffer(body[:expected], dtype="<f4").reshape(vertex_count, n_props).astype(float)
    else:
        text_lines = body.decode("ascii", errors="replace").splitlines()
        rows = []
        data_line_offset = len(header_lines) + 2  # first body line number
        filled = 0
        for i, line in enumerate(text_lines):
            parts = line.split()
            if not parts:
                continue
            if filled >= vertex_count:
                break
            if len(parts) != n_props:
                raise ParseError(
                    f"{path}: line {data_line_offset + i}: expected {n_props} values, got {len(parts)}"
                )
            try:
                rows.append([float(v) for v in parts])
            except ValueError:
                raise ParseError(f"{path}: line {data_line_offset + i}: malformed float") from None
            filled += 1
        if filled != vertex_count:
            raise ParseError(f"{path}: line {data_line_offset + len(text_lines)}: expected {vertex_count} vertices, got {filled}")
        data = np.asarray(rows, dtype=float).reshape(vertex_count, n_props)

    points = data[:, :3]
    normals = data[:, 3:6] if n_props == 6 else None
    if normals is not None and len(normals):
        # re-normalize: float32 quantization can push unit normals past tolerance
        lengths = np.linalg.norm(normals, axis=1)
        safe = np.where(lengths > 1e-12, lengths, 1.0)
        normals = normals / safe[:, None]
    return PointCloud(points, normals)


def load_obj(path: PathLike) -> TriangleMesh:
    """Read v and triangular f records; vt/vn/materials are ignored."""
    vertices = []
    faces = []  # (line_no, i, j, k) with 1-based indices
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise ParseError(f"{path}: line {line_no}: vertex needs 3 coordinates")
                try:
                    vertices.append([float(v) for v in parts[1:4]])
                except ValueError:
                    raise ParseError(f"{path}: line {line_no}: malformed vertex coordinate") from None
            elif tag == "f":
                refs = parts[1:]
                if len(refs) != 3:
                    raise ParseError(f"{path}: line {line_no}: only triangular faces supported, got {len(refs)} vertices")
                idx = []
                for ref in refs:
                    head = ref.split("/")[0]
                    try:
                        value = int(head)
                    except ValueError:
                        raise ParseError(f"{path}: line {line_no}: malformed face index '{ref}'") from None
                    if value < 1:
                        raise ParseError(f"{path}: line {line_no}: face index {value} (OBJ indices are 1-based)")
                    idx.append(value)
                faces.append((line_no, idx[0], idx[1], idx[2]))
            # vt, vn, o, g, s, usemtl, mtllib: ignored
    n_vertices = len(vertices)
    triangles = []
    for line_no, i, j, k in faces:
        for value in (i, j, k):
            if value > n_vertices:
                raise ParseError(f"{path}: line {line_no}: face index {value} out of range ({n_vertices} vertices)")
        triangles.append([i - 1, j - 1, k - 1])
    mesh = TriangleMesh(
        np.asarray(vertices, dtype=float).reshape(-1, 3),
        np.asarray(triangles, dtype=np.int64).reshape(-1, 3),
    )
    return mesh.drop_degenerate()


def save_obj(mesh: TriangleMesh, path: PathLike) -> None:
    with open(path, "w") as f:
        for v in mesh.vertices:
            f.write(f"v {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}\n")
        for t in mesh.triangles:
            f.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")
