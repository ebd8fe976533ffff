"""Hand-eye solving by kinematic-chain closure, plus multi-scan fusion.

Transforms are named `a_from_b`: they map coordinates in frame b to frame a.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .geom import (
    RigidTransform,
    average_transforms,
    compose,
    euler_xyz,
    rre,
)

CLOSURE_TOL = 1e-10


def solve_eye_in_hand(camera_from_base: RigidTransform, base_from_flange: RigidTransform) -> RigidTransform:
    """Camera pose on the flange from one base registration and one FK pose.

    Closes the loop flange->base->camera and returns flange_from_camera; the
    closure of the three transforms back to identity is asserted.
    """
    flange_from_camera = compose(base_from_flange.inverse(), camera_from_base.inverse())
    closure = compose(base_from_flange, compose(flange_from_camera, camera_from_base))
    assert closure.rotation.angle() < CLOSURE_TOL, "kinematic loop failed to close in rotation"
    assert float(np.linalg.norm(closure.translation)) < CLOSURE_TOL, "kinematic loop failed to close in translation"
    return flange_from_camera


def solve_eye_to_hand(camera_from_base: RigidTransform) -> RigidTransform:
    """Fixed-camera case: the registration result inverted is the answer."""
    return camera_from_base.inverse()


@dataclass(eq=False)
class CalibrationSample:
    """One scan's contribution: registration input, FK input, solved estimate."""

    scan_id: str
    camera_from_base: RigidTransform
    base_from_flange: Optional[RigidTransform]
    estimate: RigidTransform
    fitness: float = 1.0
    inlier_rmse: float = 0.0


def eye_in_hand_sample(scan_id: str, camera_from_base: RigidTransform,
                       base_from_flange: RigidTransform,
                       fitness: float = 1.0, inlier_rmse: float = 0.0) -> CalibrationSample:
    return CalibrationSample(
        scan_id=scan_id,
        camera_from_base=camera_from_base,
        base_from_flange=base_from_flange,
        estimate=solve_eye_in_hand(camera_from_base, base_from_flange),
        fitness=fitness,
        inlier_rmse=inlier_rmse,
    )


def eye_to_hand_sample(scan_id: str, camera_from_base: RigidTransform,
                       fitness: float = 1.0, inlier_rmse: float = 0.0) -> CalibrationSample:
    return CalibrationSample(
        scan_id=scan_id,
        camera_from_base=camera_from_base,
        base_from_flange=None,
        estimate=solve_eye_to_hand(camera_from_base),
        fitness=fitness,
        inlier_rmse=inlier_rmse,
    )


@dataclass(eq=False)
class CalibrationReport:
    """All per-scan estimates, their unweighted fusion, and spread statistics."""

    samples: List[CalibrationSample]
    fused: RigidTransform
    translation_std_mm: np.ndarray  # per axis
    rotation_std_deg: float         # geodesic spread about the fused rotation
    mode: str

    def to_dict(self) -> dict:
        ex, ey, ez = euler_xyz(self.fused.rotation)
        return {
            "mode": self.mode,
            "fused": {
                "transform": self.fused.to_dict(),
                "matrix_rowmajor": self.fused.matrix_rowmajor(),
                "translation_m": self.fused.translation.tolist(),
                "euler_xyz_rad": [ex, ey, ez],
            },
            "spread": {
                "translation_std_mm": self.translation_std_mm.tolist(),
                "rotation_std_deg": self.rotation_std_deg,
            },
            "samples": [
                {
                    "scan_id": s.scan_id,
                    "matrix_rowmajor": s.estimate.matrix_rowmajor(),
                    "fitness": s.fitness,
                    "inlier_rmse_m": s.inlier_rmse,
                }
                for s in self.samples
            ],
        }


def fuse(samples: Sequence[CalibrationSample], mode: str = "eye_in_hand") -> CalibrationReport:
    """Plain unweighted fusion of per-scan estimates; every input is kept in the report."""
    samples = list(samples)
    if not samples:
        raise ValueError("no samples")
    estimates = [s.estimate for s in samples]
    fused = average_transforms(estimates)
    translations = np.array([e.translation for e in estimates])
    translation_std_mm = translations.std(axis=0) * 1000.0
    angles = np.array([rre(e, fused) for e in estimates])
    rotation_std_deg = float(np.sqrt(np.mean(angles**2)))
    return CalibrationReport(
        samples=samples,
        fused=fused,
        translation_std_mm=translation_std_mm,
        rotation_std_deg=rotation_std_deg,
        mode=mode,
    )
