"""Rigid scan-to-model registration: unit pre-transform, descriptor RANSAC, ICP."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud, estimate_normals, voxel_downsample
from .features import fpfh_features
from .geom import RigidTransform, UnitQuaternion, compose

MM_BBOX_THRESHOLD = 10.0  # bounding-box diagonal above this means millimeter units


class DivergenceError(RuntimeError):
    """ICP lost its correspondence set; the initial alignment was too far off."""


@dataclass(eq=False)
class PreTransform:
    """Scaling plus rigid move applied to the reference model before alignment."""

    scale: float
    transform: RigidTransform

    def __post_init__(self):
        if self.scale <= 0.0:
            raise ValueError("pre-transform scale must be positive")


@dataclass(eq=False)
class RegistrationResult:
    """Alignment outcome; `transform` maps the reference-model frame to the camera frame."""

    transform: RigidTransform
    fitness: float
    inlier_rmse: float
    iterations: int
    converged: bool
    ambiguous: bool = False

    def to_dict(self) -> dict:
        return {
            "matrix_rowmajor": self.transform.matrix_rowmajor(),
            "transform": self.transform.to_dict(),
            "fitness": self.fitness,
            "inlier_rmse_m": self.inlier_rmse,
            "iterations": self.iterations,
            "converged": self.converged,
            "ambiguous": self.ambiguous,
        }


@dataclass
class RegistrationConfig:
    """Pipeline knobs; defaults follow the 2 mm working voxel."""

    voxel: float = 0.002
    coarse_voxel: float = 0.005
    feature_radius: Optional[float] = None      # default: 5 x coarse voxel
    ransac_iterations: int = 2048
    ransac_distance: Optional[float] = None     # default: 1.5 x coarse voxel
    edge_similarity: float = 0.9
    min_fitness: float = 0.2
    mutual_matches: bool = True
    score_subsample: int = 600
    icp_max_distance: Optional[float] = None    # default: 3 x voxel
    icp_max_iterations: int = 100
    icp_update_eps: float = 1e-8
    min_correspondences: int = 10
    normal_k: int = 20
    ambiguity_fitness_window: float = 0.05
    ambiguity_angle_deg: float = 5.0
    source_viewpoint: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    @property
    def feature_radius_(self) -> float:
        return self.feature_radius if self.feature_radius is not None else 5.0 * self.coarse_voxel

    @property
    def ransac_distance_(self) -> float:
        return self.ransac_distance if self.ransac_distance is not None else 1.5 * self.coarse_voxel

    @property
    def icp_max_distance_(self) -> float:
        return self.icp_max_distance if self.icp_max_distance is not None else 3.0 * self.voxel


def pre_transform_reference(model: PointCloud, unit_hint: str = "auto") -> Tuple[PointCloud, PreTransform]:
    """Rescale the reference model to meters about its own frame origin.

    The model frame is the robot base frame, so scaling happens about the
    origin, never the centroid; `auto` reads the bounding-box diagonal
    (> 10 implies millimeter units).
    """
    if len(model) == 0:
        raise ValueError("empty reference model")
    if unit_hint not in ("m", "mm", "auto"):
        raise ValueError(f"unknown unit hint '{unit_hint}'")
    if unit_hint == "auto":
        diagonal = float(np.linalg.norm(model.points.max(axis=0) - model.points.min(axis=0)))
        unit_hint = "mm" if diagonal > MM_BBOX_THRESHOLD else "m"
    scale = 0.001 if unit_hint == "mm" else 1.0
    scaled = PointCloud(model.points * scale, model.normals.copy() if model.normals is not None else None)
    return scaled, PreTransform(scale=scale, transform=RigidTransform.identity())


def _with_normals(cloud: PointCloud, k: int, viewpoint=None) -> PointCloud:
    """Keep existing normals; otherwise estimate, oriented outward from the centroid
    when no viewpoint is known (sign consistency is what matters downstream)."""
    if cloud.normals is not None:
        return cloud
    if viewpoint is not None:
        return estimate_normals(cloud, k, viewpoint)
    centroid = cloud.points.mean(axis=0)
    inward = estimate_normals(cloud, k, centroid)
    return PointCloud(inward.points, -inward.normals)


def _kabsch(src: np.ndarray, tgt: np.ndarray) -> RigidTransform:
    """Least-squares rigid transform mapping src onto tgt."""
    sc = src.mean(axis=0)
    tc = tgt.mean(axis=0)
    h = (src - sc).T @ (tgt - tc)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    flip = np.diag([1.0, 1.0, d])
    r = vt.T @ flip @ u.T
    return RigidTransform.from_rotation_matrix(r, tc - r @ sc)


def _batched_kabsch(src: np.ndarray, tgt: np.ndarray):
    """Rigid fits for (H, 3, 3) point triplets; returns (H, 3, 3) R and (H, 3) t."""
    sc = src.mean(axis=1, keepdims=True)
    tc = tgt.mean(axis=1, keepdims=True)
    h = np.einsum("hpk,hpl->hkl", src - sc, tgt - tc)
    u, _, vt = np.linalg.svd(h)
    det = np.linalg.det(np.einsum("hkl,hlm->hkm", np.transpose(vt, (0, 2, 1)), np.transpose(u, (0, 2, 1))))
    vt = vt.copy()
    vt[det < 0, 2, :] *= -1.0
    r = np.einsum("hkl,hlm->hkm", np.transpose(vt, (0, 2, 1)), np.transpose(u, (0, 2, 1)))
    t = tc[:, 0, :] - np.einsum("hkl,hl->hk", r, sc[:, 0, :])
    return r, t


def _rotation_angles_deg(rotations: np.ndarray, reference: np.ndarray) -> np.ndarray:
    rel_trace = np.einsum("hkl,kl->h", rotations, reference)
    cos = np.clip((rel_trace - 1.0) / 2.0, -1.0, 1.0)
    return np.degrees(np.arccos(cos))


def coarse_align(source: PointCloud, target: PointCloud, config: Optional[RegistrationConfig] = None,
                 seed: int = 0) -> RegistrationResult:
    """Global alignment by descriptor matching and 3-point RANSAC.

    The returned transform maps the source frame onto the target frame.
    Fails soft (converged=False) when the best hypothesis explains less than
    `min_fitness` of the source.
    """
    config = config or RegistrationConfig()
    if len(source) < 100 or len(target) < 100:
        raise ValueError("coarse alignment needs at least 100 points per cloud")
    rng = np.random.default_rng(seed)

    src = voxel_downsample(source, config.coarse_voxel)
    tgt = voxel_downsample(target, config.coarse_voxel)
    src = _with_normals(src, config.normal_k, viewpoint=np.asarray(config.source_viewpoint, float))
    tgt = _with_normals(tgt, config.normal_k)

    f_src = fpfh_features(src.points, src.normals, config.feature_radius_)
    f_tgt = fpfh_features(tgt.points, tgt.normals, config.feature_radius_)
    tgt_feature_tree = cKDTree(f_tgt)
    _, fwd = tgt_feature_tree.query(f_src, workers=-1)
    matches = np.stack([np.arange(len(src)), fwd], axis=1)
    if config.mutual_matches:
        src_feature_tree = cKDTree(f_src)
        _, back = src_feature_tree.query(f_tgt, workers=-1)
        keep = back[fwd] == np.arange(len(src))
        if keep.sum() >= 25:
            matches = matches[keep]

    failure = RegistrationResult(RigidTransform.identity(), 0.0, math.inf, 0, False)
    if len(matches) < 3:
        return failure

    sel = rng.integers(0, len(matches), size=(config.ransac_iterations, 3))
    distinct = (sel[:, 0] != sel[:, 1]) & (sel[:, 1] != sel[:, 2]) & (sel[:, 0] != sel[:, 2])
    sel = sel[distinct]
    s_tri = src.points[matches[sel, 0]]
    t_tri = tgt.points[matches[sel, 1]]

    def edge_ok(a, b):
        la = np.linalg.norm(a, axis=1)
        lb = np.linalg.norm(b, axis=1)
        return (lb > config.edge_similarity * la) & (la > config.edge_similarity * lb)

    compatible = (
        edge_ok(s_tri[:, 0] - s_tri[:, 1], t_tri[:, 0] - t_tri[:, 1])
        & edge_ok(s_tri[:, 1] - s_tri[:, 2], t_tri[:, 1] - t_tri[:, 2])
        & edge_ok(s_tri[:, 0] - s_tri[:, 2], t_tri[:, 0] - t_tri[:, 2])
    )
    s_tri = s_tri[compatible]
    t_tri = t_tri[compatible]
    if len(s_tri) == 0:
        return failure

    rotations, translations = _batched_kabsch(s_tri, t_tri)

    tgt_tree = cKDTree(tgt.points)
    n_sub = min(config.score_subsample, len(src))
    sub_idx = rng.choice(len(src), size=n_sub, replace=False)
    sub = src.points[sub_idx]
    moved = np.einsum("hkl,sl->hsk", rotations, sub) + translations[:, None, :]
    d, _ = tgt_tree.query(moved.reshape(-1, 3), workers=-1)
    d = d.reshape(len(rotations), n_sub)
    inlier = d < config.ransac_distance_
    fitness = inlier.mean(axis=1)
    best = int(np.argmax(fitness))  # ties resolve to the lowest hypothesis index

    ambiguous = False
    if fitness[best] > 0:
        rivals = fitness >= fitness[best] * (1.0 - config.ambiguity_fitness_window)
        if rivals.sum() > 1:
            angles = _rotation_angles_deg(rotations[rivals], rotations[best])
            ambiguous = bool(np.any(angles > config.ambiguity_angle_deg))

    transform = RigidTransform.from_rotation_matrix(rotations[best], translations[best])

    # polish the winning hypothesis with a few point-to-point rounds on the full coarse cloud
    for _ in range(3):
        moved_full = transform.apply(src.points)
        d_full, j_full = tgt_tree.query(moved_full, workers=-1)
        gate = d_full < config.ransac_distance_
        if gate.sum() < 3:
            break
        transform = _kabsch(src.points[gate], tgt.points[j_full[gate]])

    moved_full = transform.apply(src.points)
    d_full, _ = tgt_tree.query(moved_full, workers=-1)
    gate = d_full < config.ransac_distance_
    final_fitness = float(gate.mean())
    rmse = float(np.sqrt(np.mean(d_full[gate] ** 2))) if gate.any() else math.inf
    converged = final_fitness >= config.min_fitness
    return RegistrationResult(transform, final_fitness, rmse, 1, converged, ambiguous)


def _gated_correspondences(points: np.ndarray, tree: cKDTree, target: PointCloud, max_dist: float):
    d, j = tree.query(points, workers=-1)
    gate = d < max_dist
    return d, j, gate


def refine_icp(source: PointCloud, target: PointCloud, init: RigidTransform,
               config: Optional[RegistrationConfig] = None) -> RegistrationResult:
    """Point-to-plane ICP from a rough initial guess.

    The returned transform maps the source frame onto the target frame. The
    reported inlier RMSE is the point-to-point residual over gated
    correspondences and never increases across accepted iterations.
    """
    config = config or RegistrationConfig()
    target = _with_normals(target, config.normal_k)
    tree = cKDTree(target.points)
    max_dist = config.icp_max_distance_

    transform = init
    d, j, gate = _gated_correspondences(transform.apply(source.points), tree, target, max_dist)
    if gate.sum() < config.min_correspondences:
        raise DivergenceError(
            f"only {int(gate.sum())} correspondences within {max_dist:.4f} m at the initial alignment"
        )
    rmse = float(np.sqrt(np.mean(d[gate] ** 2)))
    iterations = 0
    converged = False

    for _ in range(config.icp_max_iterations):
        moved = transform.apply(source.points)
        p = moved[gate]
        q = target.points[j[gate]]
        n = target.normals[j[gate]]
        residual = np.einsum("ij,ij->i", p - q, n)
        jac = np.hstack([np.cross(p, n), n])  # d(residual)/d[rotvec, translation]
        h = jac.T @ jac
        g = jac.T @ residual
        try:
            delta = np.linalg.solve(h, -g)
        except np.linalg.LinAlgError:
            delta = np.linalg.solve(h + 1e-9 * np.trace(h) / 6.0 * np.eye(6), -g)

        accepted = False
        for _ in range(6):  # backtrack while the point-to-point objective worsens
            step = RigidTransform(UnitQuaternion.from_rotvec(delta[:3]), delta[3:])
            candidate = compose(step, transform)
            d_new, j_new, gate_new = _gated_correspondences(candidate.apply(source.points), tree, target, max_dist)
            if gate_new.sum() < config.min_correspondences:
                raise DivergenceError(
                    f"correspondences collapsed to {int(gate_new.sum())} during refinement"
                )
            rmse_new = float(np.sqrt(np.mean(d_new[gate_new] ** 2)))
            if rmse_new <= rmse + 1e-12:
                accepted = True
                break
            delta = delta / 2.0
        if not accepted:
            converged = True  # no improving step exists at this resolution
            break
        transform = candidate
        d, j, gate = d_new, j_new, gate_new
        rmse = rmse_new
        iterations += 1
        if np.linalg.norm(delta) < config.icp_update_eps:
            converged = True
            break

    fitness = float(gate.mean())
    return RegistrationResult(transform, fitness, rmse, iterations, converged)


def register(scan: PointCloud, reference: PointCloud, unit_hint: str = "auto", seed: int = 0,
             config: Optional[RegistrationConfig] = None) -> Tuple[RigidTransform, RegistrationResult]:
    """Full pipeline: unit normalization, 2 mm voxelization, coarse RANSAC, ICP.

    Returns the transform that maps the original reference frame (the robot
    base frame) into the camera frame, composed with the unit pre-transform.
    """
    config = config or RegistrationConfig()
    reference_scaled, pre = pre_transform_reference(reference, unit_hint)
    src = voxel_downsample(scan, config.voxel)
    tgt = voxel_downsample(reference_scaled, config.voxel)
    tgt = _with_normals(tgt, config.normal_k)

    coarse = coarse_align(src, tgt, config, seed=seed)
    if not coarse.converged:
        result = RegistrationResult(
            compose(coarse.transform.inverse(), pre.transform),
            coarse.fitness, coarse.inlier_rmse, coarse.iterations, False, coarse.ambiguous,
        )
        return result.transform, result
    fine = refine_icp(src, tgt, coarse.transform, config)

    camera_from_reference = compose(fine.transform.inverse(), pre.transform)
    result = RegistrationResult(
        camera_from_reference,
        fine.fitness,
        fine.inlier_rmse,
        fine.iterations,
        fine.converged,
        coarse.ambiguous,
    )
    return camera_from_reference, result
