"""Procedural triangle-mesh primitives used by the scan simulator and fixtures."""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from .cloud import TriangleMesh
from .geom import RigidTransform


def merge_meshes(meshes: Iterable[TriangleMesh]) -> TriangleMesh:
    vertices = []
    triangles = []
    offset = 0
    for mesh in meshes:
        vertices.append(mesh.vertices)
        triangles.append(mesh.triangles + offset)
        offset += len(mesh.vertices)
    if not vertices:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return TriangleMesh(np.vstack(vertices), np.vstack(triangles))


def box(size: Sequence[float], center: Sequence[float] = (0.0, 0.0, 0.0)) -> TriangleMesh:
    """Axis-aligned box with outward winding."""
    sx, sy, sz = [s / 2.0 for s in size]
    cx, cy, cz = center
    v = np.array(
        [
            [-sx, -sy, -sz], [sx, -sy, -sz], [sx, sy, -sz], [-sx, sy, -sz],
            [-sx, -sy, sz], [sx, -sy, sz], [sx, sy, sz], [-sx, sy, sz],
        ]
    ) + np.array([cx, cy, cz])
    t = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # bottom (-z)
            [4, 5, 6], [4, 6, 7],  # top (+z)
            [0, 1, 5], [0, 5, 4],  # -y
            [2, 3, 7], [2, 7, 6],  # +y
            [1, 2, 6], [1, 6, 5],  # +x
            [3, 0, 4], [3, 4, 7],  # -x
        ],
        dtype=np.int64,
    )
    return TriangleMesh(v, t)


def cylinder(radius: float, height: float, segments: int = 48,
             center: Sequence[float] = (0.0, 0.0, 0.0), capped: bool = True) -> TriangleMesh:
    """Z-aligned cylinder with outward winding, height centered on `center`."""
    cx, cy, cz = center
    angles = np.linspace(0.0, 2.0 * math.pi, segments, endpoint=False)
    ring = np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1)
    bottom = np.hstack([ring, np.full((segments, 1), -height / 2.0)])
    top = np.hstack([ring, np.full((segments, 1), height / 2.0)])
    vertices = [bottom, top]
    tris = []
    for i in range(segments):
        j = (i + 1) % segments
        tris += [[i, j, segments + j], [i, segments + j, segments + i]]
    if capped:
        base = 2 * segments
        vertices.append(np.array([[0.0, 0.0, -height / 2.0], [0.0, 0.0, height / 2.0]]))
        for i in range(segments):
            j = (i + 1) % segments
            tris.append([base, j, i])              # bottom cap faces -z
            tris.append([base + 1, segments + i, segments + j])  # top cap faces +z
    v = np.vstack(vertices) + np.array([cx, cy, cz])
    return TriangleMesh(v, np.asarray(tris, dtype=np.int64))


def uv_sphere(radius: float, center: Sequence[float] = (0.0, 0.0, 0.0),
              rings: int = 16, segments: int = 32) -> TriangleMesh:
    """Latitude-longitude sphere with outward winding."""
    cx, cy, cz = center
    vertices = [[0.0, 0.0, radius]]
    for r in range(1, rings):
        phi = math.pi * r / rings
        for s in range(segments):
            theta = 2.0 * math.pi * s / segments
            vertices.append(
                [
                    radius * math.sin(phi) * math.cos(theta),
                    radius * math.sin(phi) * math.sin(theta),
                    radius * math.cos(phi),
                ]
            )
    vertices.append([0.0, 0.0, -radius])
    south = len(vertices) - 1

    def ring_index(r: int, s: int) -> int:
        return 1 + (r - 1) * segments + (s % segments)

    tris = []
    for s in range(segments):
        tris.append([0, ring_index(1, s), ring_index(1, s + 1)])
    for r in range(1, rings - 1):
        for s in range(segments):
            a = ring_index(r, s)
            b = ring_index(r, s + 1)
            c = ring_index(r + 1, s)
            d = ring_index(r + 1, s + 1)
            tris += [[a, c, d], [a, d, b]]
    for s in range(segments):
        tris.append([south, ring_index(rings - 1, s + 1), ring_index(rings - 1, s)])
    v = np.asarray(vertices) + np.array([cx, cy, cz])
    return TriangleMesh(v, np.asarray(tris, dtype=np.int64))


def quad(size: Sequence[float], center: Sequence[float] = (0.0, 0.0, 0.0)) -> TriangleMesh:
    """Flat rectangle in the XY plane, normal along +Z."""
    sx, sy = size[0] / 2.0, size[1] / 2.0
    v = np.array([[-sx, -sy, 0.0], [sx, -sy, 0.0], [sx, sy, 0.0], [-sx, sy, 0.0]]) + np.asarray(center, float)
    t = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int64)
    return TriangleMesh(v, t)


def pedestal_base(radius: float = 0.12, height: float = 0.09, segments: int = 40) -> TriangleMesh:
    """Robot-base-like pedestal: cylinder body with asymmetric bosses.

    The side connector box and off-center top fin break the cylindrical
    symmetry so scan registration has a unique global optimum. The frame
    origin sits at the bottom center, z up, mimicking a mounting plate.
    """
    body = cylinder(radius, height, segments=segments, center=(0, 0, height / 2.0))
    connector = box((0.07, 0.05, 0.045), center=(radius + 0.02, 0.0, 0.032))
    fin = box((0.016, 0.09, 0.05), center=(-0.045, 0.035, height + 0.024))
    lug = box((0.04, 0.04, 0.03), center=(0.0, -radius - 0.008, 0.02))
    neck = cylinder(radius * 0.55, 0.035, segments=segments, center=(0, 0, height + 0.0175))
    return merge_meshes([body, connector, fin, lug, neck])


def link_segment(start: np.ndarray, end: np.ndarray, radius: float, segments: int = 16) -> TriangleMesh:
    """Capped cylinder between two points; a crude arm-link visual."""
    start = np.asarray(start, float)
    end = np.asarray(end, float)
    axis = end - start
    length = float(np.linalg.norm(axis))
    if length < 1e-9:
        return uv_sphere(radius, center=start, rings=6, segments=12)
    mesh = cylinder(radius, length, segments=segments, center=(0, 0, 0))
    z = axis / length
    # build an orthonormal frame with +z along the segment
    helper = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = np.cross(helper, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    rot = np.column_stack([x, y, z])
    pose = RigidTransform.from_rotation_matrix(rot, (start + end) / 2.0)
    return mesh.transformed(pose)
