"""Exact ray-triangle intersection against a BVH, for depth-scan synthesis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import TriangleMesh

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return wrap

_LEAF_SIZE = 8
_EDGE_EPS = 1e-10  # inclusive barycentric bounds so shared edges are watertight


@dataclass(eq=False)
class Bvh:
    """Flat-array bounding volume hierarchy over triangle AABBs."""

    v0: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    node_min: np.ndarray
    node_max: np.ndarray
    node_left: np.ndarray   # -1 for leaves
    node_right: np.ndarray
    node_start: np.ndarray  # leaf range into tri_order
    node_count: np.ndarray
    tri_order: np.ndarray


def build_bvh(mesh: TriangleMesh) -> Bvh:
    """Median-split BVH on triangle centroids."""
    v = mesh.vertices
    t = mesh.triangles
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    tri_min = np.minimum(np.minimum(a, b), c)
    tri_max = np.maximum(np.maximum(a, b), c)
    centroids = (a + b + c) / 3.0

    node_min, node_max = [], []
    node_left, node_right = [], []
    node_start, node_count = [], []
    order = np.arange(len(t), dtype=np.int64)

    def new_node():
        node_min.append(np.zeros(3))
        node_max.append(np.zeros(3))
        node_left.append(-1)
        node_right.append(-1)
        node_start.append(0)
        node_count.append(0)
        return len(node_min) - 1

    def build(lo: int, hi: int) -> int:
        idx = new_node()
        tris = order[lo:hi]
        node_min[idx] = tri_min[tris].min(axis=0)
        node_max[idx] = tri_max[tris].max(axis=0)
        if hi - lo <= _LEAF_SIZE:
            node_start[idx] = lo
            node_count[idx] = hi - lo
            return idx
        cen = centroids[tris]
        extent = cen.max(axis=0) - cen.min(axis=0)
        axis = int(np.argmax(extent))
        mid = (hi - lo) // 2
        part = np.argpartition(cen[:, axis], mid)
        order[lo:hi] = tris[part]
        left = build(lo, lo + mid)
        right = build(lo + mid, hi)
        node_left[idx] = left
        node_right[idx] = right
        return idx

    if len(t):
        build(0, len(t))
    else:
        idx = new_node()
        node_min[idx] = np.zeros(3)
        node_max[idx] = np.full(3, -1.0)  # empty box: never hit

    return Bvh(
        v0=np.ascontiguousarray(a),
        e1=np.ascontiguousarray(b - a),
        e2=np.ascontiguousarray(c - a),
        node_min=np.asarray(node_min),
        node_max=np.asarray(node_max),
        node_left=np.asarray(node_left, dtype=np.int64),
        node_right=np.asarray(node_right, dtype=np.int64),
        node_start=np.asarray(node_start, dtype=np.int64),
        node_count=np.asarray(node_count, dtype=np.int64),
        tri_order=order,
    )


@njit(cache=True, error_model="numpy")
def _raycast_bvh_kernel(origins, dirs, v0, e1, e2, node_min, node_max,
                        node_left, node_right, node_start, node_count,
                        tri_order, t_near, t_far):  # pragma: no cover - jitted
    n = origins.shape[0]
    t_hit = np.full(n, np.inf)
    tri_hit = np.full(n, -1, np.int64)
    stack = np.empty(128, np.int64)
    for r in range(n):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        ix = 1.0 / dx if abs(dx) > 1e-300 else (1e300 if dx >= 0 else -1e300)
        iy = 1.0 / dy if abs(dy) > 1e-300 else (1e300 if dy >= 0 else -1e300)
        iz = 1.0 / dz if abs(dz) > 1e-300 else (1e300 if dz >= 0 else -1e300)
        best_t = t_far
        best_tri = -1
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]
            tx1 = (node_min[node, 0] - ox) * ix
            tx2 = (node_max[node, 0] - ox) * ix
            ty1 = (node_min[node, 1] - oy) * iy
            ty2 = (node_max[node, 1] - oy) * iy
            tz1 = (node_min[node, 2] - oz) * iz
            tz2 = (node_max[node, 2] - oz) * iz
            t_enter = max(min(tx1, tx2), min(ty1, ty2), min(tz1, tz2))
            t_exit = min(max(tx1, tx2), max(ty1, ty2), max(tz1, tz2))
            if t_enter > t_exit or t_exit < t_near or t_enter > best_t:
                continue
            left = node_left[node]
            if left >= 0:
                stack[top] = left
                top += 1
                stack[top] = node_right[node]
                top += 1
                continue
            start = node_start[node]
            for k in range(start, start + node_count[node]):
                tri = tri_order[k]
                e1x, e1y, e1z = e1[tri, 0], e1[tri, 1], e1[tri, 2]
                e2x, e2y, e2z = e2[tri, 0], e2[tri, 1], e2[tri, 2]
                px = dy * e2z - dz * e2y
                py = dz * e2x - dx * e2z
                pz = dx * e2y - dy * e2x
                det = e1x * px + e1y * py + e1z * pz
                if abs(det) < 1e-14:
                    continue
                inv = 1.0 / det
                tvx = ox - v0[tri, 0]
                tvy = oy - v0[tri, 1]
                tvz = oz - v0[tri, 2]
                u = (tvx * px + tvy * py + tvz * pz) * inv
                if u < -_EDGE_EPS or u > 1.0 + _EDGE_EPS:
                    continue
                qx = tvy * e1z - tvz * e1y
                qy = tvz * e1x - tvx * e1z
                qz = tvx * e1y - tvy * e1x
                v = (dx * qx + dy * qy + dz * qz) * inv
                if v < -_EDGE_EPS or u + v > 1.0 + _EDGE_EPS:
                    continue
                t = (e2x * qx + e2y * qy + e2z * qz) * inv
                if t_near <= t < best_t:
                    best_t = t
                    best_tri = tri
        if best_tri >= 0:
            t_hit[r] = best_t
            tri_hit[r] = best_tri
    return t_hit, tri_hit


def _raycast_numpy(origins, dirs, v0, e1, e2, t_near, t_far, chunk=4096):
    """Brute-force Moller-Trumbore over all triangles, chunked over rays."""
    n = origins.shape[0]
    t_hit = np.full(n, np.inf)
    tri_hit = np.full(n, -1, np.int64)
    if len(v0) == 0:
        return t_hit, tri_hit
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        o = origins[lo:hi, None, :]
        d = dirs[lo:hi, None, :]
        p = np.cross(d, e2[None, :, :])  # (R, T, 3)
        det = np.einsum("tk,rtk->rt", e1, p)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(np.abs(det) < 1e-14, np.nan, 1.0 / det)
            tv = o - v0[None, :, :]
            u = np.einsum("rtk,rtk->rt", tv, p) * inv
            q = np.cross(tv, e1[None, :, :])
            v = np.einsum("rk,rtk->rt", dirs[lo:hi], q) * inv
            t = np.einsum("tk,rtk->rt", e2, q) * inv
        ok = (
            np.isfinite(t)
            & (u >= -_EDGE_EPS)
            & (u <= 1.0 + _EDGE_EPS)
            & (v >= -_EDGE_EPS)
            & (u + v <= 1.0 + _EDGE_EPS)
            & (t >= t_near)
            & (t < t_far)
        )
        t_masked = np.where(ok, t, np.inf)
        best = np.argmin(t_masked, axis=1)
        rows = np.arange(hi - lo)
        best_t = t_masked[rows, best]
        has_hit = np.isfinite(best_t)
        t_hit[lo:hi][has_hit] = best_t[has_hit]
        tri_hit[lo:hi][has_hit] = best[has_hit]
    return t_hit, tri_hit


def raycast(bvh: Bvh, origins: np.ndarray, directions: np.ndarray,
            t_near: float = 0.0, t_far: float = np.inf):
    """Nearest intersection per ray: (t, triangle_index), inf/-1 when none."""
    origins = np.ascontiguousarray(origins, dtype=float).reshape(-1, 3)
    directions = np.ascontiguousarray(directions, dtype=float).reshape(-1, 3)
    if _HAVE_NUMBA:
        return _raycast_bvh_kernel(
            origins, directions, bvh.v0, bvh.e1, bvh.e2,
            bvh.node_min, bvh.node_max, bvh.node_left, bvh.node_right,
            bvh.node_start, bvh.node_count, bvh.tri_order,
            float(t_near), float(t_far),
        )
    return _raycast_numpy(origins, directions, bvh.v0, bvh.e1, bvh.e2, float(t_near), float(t_far))
