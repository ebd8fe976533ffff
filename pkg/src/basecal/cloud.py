"""Point-cloud and triangle-mesh containers with spatial queries and resampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .geom import RigidTransform


@dataclass(eq=False)
class PointCloud:
    """Points in meters, (N, 3), with optional per-point unit normals."""

    points: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains NaN/Inf coordinates")
        self.points = pts
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=float).reshape(-1, 3)
            if nrm.shape[0] != pts.shape[0]:
                raise ValueError("normal count does not match point count")
            lengths = np.linalg.norm(nrm, axis=1)
            if nrm.shape[0] and np.max(np.abs(lengths - 1.0)) > 1e-6:
                raise ValueError("normals must be unit length")
            self.normals = nrm

    def __len__(self) -> int:
        return self.points.shape[0]

    def transformed(self, transform: RigidTransform) -> "PointCloud":
        pts = transform.apply(self.points) if len(self) else self.points.copy()
        nrm = None
        if self.normals is not None:
            nrm = self.normals @ transform.rotation_matrix().T if len(self) else self.normals.copy()
        return PointCloud(pts, nrm)


@dataclass(eq=False)
class TriangleMesh:
    """Vertices in meters and triangle index triples."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles) and self.triangles.max() >= len(self.vertices):
            raise ValueError("triangle index out of range")
        if len(self.triangles) and self.triangles.min() < 0:
            raise ValueError("negative triangle index")

    def triangle_normals(self) -> np.ndarray:
        """Unit normals from the winding order (zero rows stay zero)."""
        v = self.vertices
        t = self.triangles
        n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        lengths = np.linalg.norm(n, axis=1)
        safe = np.where(lengths > 0.0, lengths, 1.0)
        return n / safe[:, None]

    def triangle_areas(self) -> np.ndarray:
        v = self.vertices
        t = self.triangles
        n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        return 0.5 * np.linalg.norm(n, axis=1)

    def drop_degenerate(self, min_area: float = 1e-14) -> "TriangleMesh":
        keep = self.triangle_areas() > min_area
        return TriangleMesh(self.vertices, self.triangles[keep])

    def transformed(self, transform: RigidTransform) -> "TriangleMesh":
        return TriangleMesh(transform.apply(self.vertices), self.triangles.copy())


def voxel_downsample(cloud: PointCloud, voxel_size: float) -> PointCloud:
    """One centroid per occupied voxel; grid anchored at the cloud's min corner."""
    if voxel_size <= 0.0:
        raise ValueError("voxel size must be positive")
    if len(cloud) == 0:
        return PointCloud(np.zeros((0, 3)))
    keys = np.floor((cloud.points - cloud.points.min(axis=0)) / voxel_size).astype(np.int64)
    unique_keys, inverse = np.unique(keys, axis=0, return_inverse=True)
    counts = np.bincount(inverse, minlength=len(unique_keys)).astype(float)
    centroids = np.zeros((len(unique_keys), 3))
    np.add.at(centroids, inverse, cloud.points)
    centroids /= counts[:, None]
    normals = None
    if cloud.normals is not None:
        acc = np.zeros((len(unique_keys), 3))
        np.add.at(acc, inverse, cloud.normals)
        lengths = np.linalg.norm(acc, axis=1)
        safe = np.where(lengths > 1e-12, lengths, 1.0)
        acc = acc / safe[:, None]
        # voxels whose member normals cancel out keep an arbitrary unit normal
        acc[lengths <= 1e-12] = np.array([0.0, 0.0, 1.0])
        normals = acc
    return PointCloud(centroids, normals)


class NearestNeighborIndex:
    """Exact nearest-neighbor index over a fixed cloud (kd-tree backed)."""

    def __init__(self, cloud: PointCloud):
        if len(cloud) == 0:
            raise ValueError("cannot index an empty cloud")
        self.points = cloud.points
        self._tree = cKDTree(cloud.points)

    def query(self, points: np.ndarray, workers: int = -1):
        """Vectorized exact NN for an (N, 3) query array: (distances, indices)."""
        d, j = self._tree.query(np.asarray(points, dtype=float), workers=workers)
        return d, j

    def query_one(self, point) -> tuple:
        """Single query with deterministic tie-breaking (lowest index wins)."""
        q = np.asarray(point, dtype=float).reshape(3)
        d, j = self._tree.query(q)
        radius = np.nextafter(d, np.inf) if d > 0 else 1e-300
        candidates = self._tree.query_ball_point(q, radius)
        if candidates:
            dists = np.linalg.norm(self.points[candidates] - q, axis=1)
            best = dists.min()
            ties = [c for c, dc in zip(candidates, dists) if dc == best]
            return int(min(ties)), float(best)
        return int(j), float(d)


def nearest_neighbor(index: NearestNeighborIndex, query) -> tuple:
    """Exact nearest point in the indexed cloud: (index, distance)."""
    return index.query_one(query)


def estimate_normals(cloud: PointCloud, k: int, viewpoint) -> PointCloud:
    """Per-point normals from k-NN covariance, oriented toward the viewpoint."""
    if k < 3:
        raise ValueError("normal estimation needs k >= 3")
    if len(cloud) < k:
        raise ValueError(f"normal estimation needs at least k={k} points, got {len(cloud)}")
    viewpoint = np.asarray(viewpoint, dtype=float).reshape(3)
    tree = cKDTree(cloud.points)
    _, idx = tree.query(cloud.points, k=k, workers=-1)
    neighborhoods = cloud.points[idx]  # (N, k, 3)
    centered = neighborhoods - neighborhoods.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    _, eigenvectors = np.linalg.eigh(cov)
    normals = eigenvectors[:, :, 0]  # smallest-eigenvalue direction
    to_view = viewpoint[None, :] - cloud.points
    flip = np.einsum("ni,ni->n", normals, to_view) < 0.0
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(cloud.points.copy(), normals)


def sample_mesh_surface(mesh: TriangleMesh, n_points: int, seed: int = 0) -> PointCloud:
    """Uniform area-weighted surface sampling; normals taken from the faces."""
    if len(mesh.triangles) == 0:
        raise ValueError("cannot sample an empty mesh")
    if n_points <= 0:
        raise ValueError("n_points must be positive")
    rng = np.random.default_rng(seed)
    areas = mesh.triangle_areas()
    total = areas.sum()
    if total <= 0.0:
        raise ValueError("mesh has zero surface area")
    tri_idx = rng.choice(len(mesh.triangles), size=n_points, p=areas / total)
    u = rng.random(n_points)
    v = rng.random(n_points)
    su = np.sqrt(u)
    b0 = 1.0 - su
    b1 = su * (1.0 - v)
    b2 = su * v
    tris = mesh.triangles[tri_idx]
    pts = (
        b0[:, None] * mesh.vertices[tris[:, 0]]
        + b1[:, None] * mesh.vertices[tris[:, 1]]
        + b2[:, None] * mesh.vertices[tris[:, 2]]
    )
    normals = mesh.triangle_normals()[tri_idx]
    return PointCloud(pts, normals)
