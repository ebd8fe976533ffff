"""Rigid-body math: unit quaternions, SE(3) transforms, pose metrics, averaging."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class UnitQuaternion:
    """Rotation as a unit quaternion (w, x, y, z), normalized on construction."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        norm = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if norm < 1e-12:
            raise ValueError("zero-norm quaternion")
        object.__setattr__(self, "w", self.w / norm)
        object.__setattr__(self, "x", self.x / norm)
        object.__setattr__(self, "y", self.y / norm)
        object.__setattr__(self, "z", self.z / norm)

    @classmethod
    def identity(cls) -> "UnitQuaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_axis_angle(cls, axis: Sequence[float], angle: float) -> "UnitQuaternion":
        a = np.asarray(axis, dtype=float)
        n = np.linalg.norm(a)
        if n < 1e-12:
            raise ValueError("zero-norm rotation axis")
        a = a / n
        half = 0.5 * angle
        s = math.sin(half)
        return cls(math.cos(half), a[0] * s, a[1] * s, a[2] * s)

    @classmethod
    def from_rotvec(cls, rotvec: Sequence[float]) -> "UnitQuaternion":
        """Rotation vector (axis * angle, radians) to quaternion."""
        v = np.asarray(rotvec, dtype=float).reshape(3)
        angle = float(np.linalg.norm(v))
        if angle < 1e-12:
            return cls.identity()
        return cls.from_axis_angle(v / angle, angle)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "UnitQuaternion":
        """Convert a 3x3 rotation matrix, branching on the largest diagonal term."""
        m = np.asarray(matrix, dtype=float)
        t = m[0, 0] + m[1, 1] + m[2, 2]
        if t > 0.0:
            s = math.sqrt(t + 1.0) * 2.0
            w = 0.25 * s
            x = (m[2, 1] - m[1, 2]) / s
            y = (m[0, 2] - m[2, 0]) / s
            z = (m[1, 0] - m[0, 1]) / s
        elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            w = (m[2, 1] - m[1, 2]) / s
            x = 0.25 * s
            y = (m[0, 1] + m[1, 0]) / s
            z = (m[0, 2] + m[2, 0]) / s
        elif m[1, 1] >= m[2, 2]:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
            w = (m[0, 2] - m[2, 0]) / s
            x = (m[0, 1] + m[1, 0]) / s
            y = 0.25 * s
            z = (m[1, 2] + m[2, 1]) / s
        else:
            s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
            w = (m[1, 0] - m[0, 1]) / s
            x = (m[0, 2] + m[2, 0]) / s
            y = (m[1, 2] + m[2, 1]) / s
            z = 0.25 * s
        return cls(w, x, y, z)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def conjugate(self) -> "UnitQuaternion":
        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    def __mul__(self, other: "UnitQuaternion") -> "UnitQuaternion":
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return UnitQuaternion(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
            ]
        )

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        """Rotate a (3,) vector or (N, 3) array of vectors."""
        v = np.asarray(vectors, dtype=float)
        return v @ self.to_matrix().T

    def angle(self) -> float:
        """Rotation angle in radians, in [0, pi]."""
        return 2.0 * math.acos(min(1.0, abs(self.w)))

    def to_rotvec(self) -> np.ndarray:
        """Rotation vector (axis * angle); the shortest representative is returned."""
        w, xyz = self.w, np.array([self.x, self.y, self.z])
        if w < 0.0:
            w, xyz = -w, -xyz
        s = np.linalg.norm(xyz)
        if s < 1e-12:
            return 2.0 * xyz  # small-angle limit: q ~ (1, v/2)
        angle = 2.0 * math.atan2(s, w)
        return xyz / s * angle


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Element of SE(3): rotation plus translation in meters.

    Maps points from the child frame into the parent frame:
    p_parent = R @ p_child + t.
    """

    rotation: UnitQuaternion
    translation: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("non-finite translation")
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(UnitQuaternion.identity(), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "RigidTransform":
        m = np.asarray(matrix, dtype=float)
        if m.shape != (4, 4):
            raise ValueError("expected a 4x4 homogeneous matrix")
        return cls(UnitQuaternion.from_matrix(m[:3, :3]), m[:3, 3])

    @classmethod
    def from_rotation_matrix(cls, rotation: np.ndarray, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(UnitQuaternion.from_matrix(rotation), np.asarray(translation, dtype=float))

    def rotation_matrix(self) -> np.ndarray:
        return self.rotation.to_matrix()

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.to_matrix()
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Apply to a (3,) point or (N, 3) array of points."""
        return self.rotation.rotate(points) + self.translation

    def inverse(self) -> "RigidTransform":
        q_inv = self.rotation.conjugate()
        return RigidTransform(q_inv, -q_inv.rotate(self.translation))

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def to_dict(self) -> dict:
        return {
            "quaternion": [self.rotation.w, self.rotation.x, self.rotation.y, self.rotation.z],
            "translation_m": self.translation.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RigidTransform":
        w, x, y, z = data["quaternion"]
        return cls(UnitQuaternion(w, x, y, z), np.asarray(data["translation_m"], dtype=float))

    def matrix_rowmajor(self) -> list:
        """Flattened 4x4 row-major list, the CSV export form."""
        return [float(v) for v in self.matrix().reshape(-1)]


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Composition a . b: applies b first, then a."""
    return RigidTransform(a.rotation * b.rotation, a.rotation.rotate(b.translation) + a.translation)


def inverse(t: RigidTransform) -> RigidTransform:
    return t.inverse()


def rot_x(angle: float, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
    return RigidTransform(UnitQuaternion.from_axis_angle((1, 0, 0), angle), np.asarray(translation, float))


def rot_y(angle: float, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
    return RigidTransform(UnitQuaternion.from_axis_angle((0, 1, 0), angle), np.asarray(translation, float))


def rot_z(angle: float, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
    return RigidTransform(UnitQuaternion.from_axis_angle((0, 0, 1), angle), np.asarray(translation, float))


def translation(xyz) -> RigidTransform:
    return RigidTransform(UnitQuaternion.identity(), np.asarray(xyz, dtype=float))


@dataclass(frozen=True)
class PoseError:
    """Translation error in millimeters, rotation error in degrees."""

    rte_mm: float
    rre_deg: float


def rte(estimate: RigidTransform, truth: RigidTransform) -> float:
    """Euclidean translation error in millimeters."""
    return float(np.linalg.norm(estimate.translation - truth.translation)) * 1000.0


def rre(estimate: RigidTransform, truth: RigidTransform) -> float:
    """Geodesic rotation error in degrees, arccos argument clamped to [-1, 1]."""
    r = estimate.rotation_matrix()
    r_bar = truth.rotation_matrix()
    cos_angle = (np.trace(r.T @ r_bar) - 1.0) / 2.0
    cos_angle = min(1.0, max(-1.0, cos_angle))
    return math.degrees(math.acos(cos_angle))


def pose_error(estimate: RigidTransform, truth: RigidTransform) -> PoseError:
    return PoseError(rte(estimate, truth), rre(estimate, truth))


def average_transforms(transforms: Iterable[RigidTransform]) -> RigidTransform:
    """Average translations in Euclidean space and rotations in quaternion space.

    The rotation mean is the largest eigenvector of the accumulated quaternion
    outer-product matrix, with every quaternion sign-aligned to the first so the
    double cover cannot cancel contributions.
    """
    items = list(transforms)
    if not items:
        raise ValueError("no samples")
    t_mean = np.mean([t.translation for t in items], axis=0)
    q0 = items[0].rotation.as_array()
    acc = np.zeros((4, 4))
    for t in items:
        q = t.rotation.as_array()
        if np.dot(q, q0) < 0.0:
            q = -q
        acc += np.outer(q, q)
    eigenvalues, eigenvectors = np.linalg.eigh(acc)
    q_mean = eigenvectors[:, np.argmax(eigenvalues)]
    return RigidTransform(UnitQuaternion(*q_mean), t_mean)


def euler_xyz(rotation: UnitQuaternion) -> tuple:
    """Euler angles (rx, ry, rz) in radians with R = Rx(rx) @ Ry(ry) @ Rz(rz)."""
    m = rotation.to_matrix()
    sy = min(1.0, max(-1.0, m[0, 2]))
    ry = math.asin(sy)
    if abs(sy) < 1.0 - 1e-9:
        rx = math.atan2(-m[1, 2], m[2, 2])
        rz = math.atan2(-m[0, 1], m[0, 0])
    else:
        # gimbal lock: rz is unobservable, fold it into rx
        rx = math.atan2(m[1, 0], m[1, 1])
        rz = 0.0
    return rx, ry, rz


def random_rotation(rng: np.random.Generator) -> UnitQuaternion:
    """Rotation drawn uniformly over SO(3)."""
    q = rng.normal(size=4)
    while np.linalg.norm(q) < 1e-9:
        q = rng.normal(size=4)
    return UnitQuaternion(*q)


def random_transform(rng: np.random.Generator, translation_scale: float = 1.0) -> RigidTransform:
    """Uniform random rotation with translation uniform in a centered cube."""
    t = rng.uniform(-translation_scale, translation_scale, size=3)
    return RigidTransform(random_rotation(rng), t)
