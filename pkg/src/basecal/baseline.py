"""Classical AX=XB hand-eye solving from relative motion pairs (separable solution)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .geom import RigidTransform, UnitQuaternion, compose, random_transform

WEAK_ROTATION_DEG = 5.0  # pairs below this barely constrain the rotation
MIN_AXIS_SPREAD_DEG = 1.0


class UnobservableError(RuntimeError):
    """Motion set cannot determine the hand-eye transform (axes too parallel)."""


@dataclass(eq=False)
class MotionPair:
    """Relative flange motion A and relative target observation motion B."""

    a: RigidTransform
    b: RigidTransform
    weak: bool = False


def make_pairs(flange_poses: Sequence[RigidTransform], target_obs: Sequence[RigidTransform],
               all_pairs: bool = False) -> List[MotionPair]:
    """Build motion pairs A_ij = T_i^-1 T_j, B_ij = O_i O_j^-1.

    Consecutive pairing by default; `all_pairs` uses every (i, j) combination
    for noise studies. Pairs whose flange rotation is below 5 degrees are
    flagged weak but kept.
    """
    if len(flange_poses) != len(target_obs):
        raise ValueError(f"pose/observation count mismatch: {len(flange_poses)} vs {len(target_obs)}")
    if len(flange_poses) < 2:
        raise ValueError("need at least two poses")
    if all_pairs:
        index_pairs = [(i, j) for i in range(len(flange_poses)) for j in range(i + 1, len(flange_poses))]
    else:
        index_pairs = [(i, i + 1) for i in range(len(flange_poses) - 1)]
    pairs = []
    for i, j in index_pairs:
        a = compose(flange_poses[i].inverse(), flange_poses[j])
        b = compose(target_obs[i], target_obs[j].inverse())
        weak = math.degrees(a.rotation.angle()) < WEAK_ROTATION_DEG
        pairs.append(MotionPair(a, b, weak))
    return pairs


def _axis_spread_deg(axes: np.ndarray) -> float:
    best = 0.0
    for i in range(len(axes)):
        for j in range(i + 1, len(axes)):
            cos = abs(float(np.dot(axes[i], axes[j])))  # parallel and anti-parallel both degenerate
            best = max(best, math.degrees(math.acos(min(1.0, cos))))
    return best


def solve_ax_xb(pairs: Sequence[MotionPair]) -> RigidTransform:
    """Separable solution: Procrustes over rotation-vector pairs, then linear translation.

    Raises UnobservableError when fewer than two usable pairs exist or all
    rotation axes are parallel within 1 degree.
    """
    usable = [p for p in pairs if not p.weak]
    if len(usable) < 2:
        raise UnobservableError(f"need at least 2 pairs with meaningful rotation, got {len(usable)}")

    alphas = np.array([p.a.rotation.to_rotvec() for p in usable])
    betas = np.array([p.b.rotation.to_rotvec() for p in usable])
    axes = alphas / np.linalg.norm(alphas, axis=1, keepdims=True)
    if _axis_spread_deg(axes) <= MIN_AXIS_SPREAD_DEG:
        raise UnobservableError("rotation axes are parallel; hand-eye rotation is unobservable")

    # rotation: R_X minimizing sum ||R_X beta - alpha||^2
    h = betas.T @ alphas
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r_x = vt.T @ np.diag([1.0, 1.0, d]) @ u.T

    # translation: (R_A - I) t_X = R_X t_B - t_A, stacked over pairs
    rows = []
    rhs = []
    for p in usable:
        rows.append(p.a.rotation_matrix() - np.eye(3))
        rhs.append(r_x @ p.b.translation - p.a.translation)
    t_x, *_ = np.linalg.lstsq(np.vstack(rows), np.concatenate(rhs), rcond=None)
    return RigidTransform.from_rotation_matrix(r_x, t_x)


def synthesize_motions(true_x: RigidTransform, n_poses: int, rng: np.random.Generator,
                       rot_noise_deg: float = 0.0, trans_noise_mm: float = 0.0,
                       object_in_base: Optional[RigidTransform] = None,
                       ) -> Tuple[List[RigidTransform], List[RigidTransform]]:
    """Random flange poses with consistent target observations for a known X.

    Observations satisfy O_i = X^-1 T_i^-1 W with W the fixed object pose in
    the base frame; optional zero-mean perturbations model detection noise.
    """
    if n_poses < 2:
        raise ValueError("need at least two poses")
    world_object = object_in_base if object_in_base is not None else random_transform(rng, 0.5)
    flange_poses = [random_transform(rng, 0.6) for _ in range(n_poses)]
    observations = []
    for pose in flange_poses:
        obs = compose(true_x.inverse(), compose(pose.inverse(), world_object))
        if rot_noise_deg > 0.0 or trans_noise_mm > 0.0:
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            angle = math.radians(rot_noise_deg) * rng.standard_normal()
            jitter = RigidTransform(
                UnitQuaternion.from_axis_angle(axis, angle),
                rng.standard_normal(3) * trans_noise_mm / 1000.0,
            )
            obs = compose(jitter, obs)
        observations.append(obs)
    return flange_poses, observations
