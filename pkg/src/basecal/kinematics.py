"""Serial kinematic chains: URDF-subset loading, forward kinematics, pose sampling."""

from __future__ import annotations

import json
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .geom import RigidTransform, UnitQuaternion, compose

PathLike = Union[str, Path]


class ChainLoadError(ValueError):
    """Chain document outside the supported single-chain fixed/revolute subset."""


class SamplingError(RuntimeError):
    """Pose rejection sampling exhausted its attempt budget."""


def rpy_to_rotation(roll: float, pitch: float, yaw: float) -> UnitQuaternion:
    """URDF fixed-axis convention: R = Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    qz = UnitQuaternion.from_axis_angle((0, 0, 1), yaw)
    qy = UnitQuaternion.from_axis_angle((0, 1, 0), pitch)
    qx = UnitQuaternion.from_axis_angle((1, 0, 0), roll)
    return qz * qy * qx


@dataclass(frozen=True, eq=False)
class Joint:
    """Fixed or revolute joint; origin maps child frame to parent at zero angle."""

    name: str
    kind: str  # "fixed" | "revolute"
    origin: RigidTransform
    axis: Optional[np.ndarray] = None  # unit vector in the child frame
    limits: Optional[Tuple[float, float]] = None  # radians, revolute only

    def __post_init__(self):
        if self.kind not in ("fixed", "revolute"):
            raise ChainLoadError(f"joint '{self.name}': unsupported kind '{self.kind}'")
        if self.kind == "revolute":
            if self.axis is None:
                raise ChainLoadError(f"joint '{self.name}': revolute joint missing axis")
            axis = np.asarray(self.axis, dtype=float).reshape(3)
            n = np.linalg.norm(axis)
            if abs(n - 1.0) > 1e-9:
                if n < 1e-12:
                    raise ChainLoadError(f"joint '{self.name}': zero-norm axis")
                axis = axis / n
            object.__setattr__(self, "axis", axis)
            if self.limits is None:
                raise ChainLoadError(f"joint '{self.name}': revolute joint missing limits")
            lo, hi = self.limits
            if lo > hi:
                raise ChainLoadError(f"joint '{self.name}': limit lower bound exceeds upper bound")


@dataclass(eq=False)
class KinematicChain:
    """Ordered joints, base to flange."""

    name: str
    joints: List[Joint]
    base_mesh: Optional[str] = None

    def __post_init__(self):
        if not self.joints:
            raise ChainLoadError("chain has no joints")

    @property
    def dof(self) -> int:
        return sum(1 for j in self.joints if j.kind == "revolute")

    @property
    def revolute_joints(self) -> List[Joint]:
        return [j for j in self.joints if j.kind == "revolute"]

    def limits_array(self) -> np.ndarray:
        """(dof, 2) array of [lower, upper] in radians."""
        return np.array([j.limits for j in self.revolute_joints], dtype=float).reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class JointConfig:
    """One angle per revolute joint, radians."""

    angles: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "angles", np.asarray(self.angles, dtype=float).reshape(-1))


def forward_kinematics(chain: KinematicChain, config: JointConfig) -> RigidTransform:
    """Flange pose in the base frame: product of origin . rotation(axis, angle)."""
    angles = config.angles
    if len(angles) != chain.dof:
        raise ValueError(f"config has {len(angles)} angles, chain has {chain.dof} revolute joints")
    pose = RigidTransform.identity()
    k = 0
    for joint in chain.joints:
        pose = compose(pose, joint.origin)
        if joint.kind == "revolute":
            angle = angles[k]
            lo, hi = joint.limits
            if angle < lo - 1e-12 or angle > hi + 1e-12:
                raise ValueError(
                    f"joint '{joint.name}': angle {angle:.6f} rad outside limits [{lo:.6f}, {hi:.6f}]"
                )
            spin = RigidTransform(UnitQuaternion.from_axis_angle(joint.axis, angle), np.zeros(3))
            pose = compose(pose, spin)
            k += 1
    return pose


def _float_list(text: Optional[str], n: int, context: str) -> List[float]:
    if text is None:
        return [0.0] * n
    parts = text.split()
    if len(parts) != n:
        raise ChainLoadError(f"{context}: expected {n} numbers, got '{text}'")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise ChainLoadError(f"{context}: malformed number in '{text}'") from None


def _origin_from_xml(elem: Optional[ET.Element], context: str) -> RigidTransform:
    if elem is None:
        return RigidTransform.identity()
    xyz = _float_list(elem.get("xyz"), 3, f"{context}/origin xyz")
    rpy = _float_list(elem.get("rpy"), 3, f"{context}/origin rpy")
    return RigidTransform(rpy_to_rotation(*rpy), np.asarray(xyz))


def _load_urdf(path: PathLike) -> KinematicChain:
    try:
        tree = ET.parse(path)
    except ET.ParseError as exc:
        raise ChainLoadError(f"{path}: invalid XML: {exc}") from None
    robot = tree.getroot()
    if robot.tag != "robot":
        raise ChainLoadError(f"{path}: root element is <{robot.tag}>, expected <robot>")
    name = robot.get("name", Path(path).stem)

    links = {}
    for link in robot.findall("link"):
        link_name = link.get("name")
        if link_name is None:
            raise ChainLoadError(f"{path}: robot/link: missing name")
        mesh_path = None
        mesh = link.find("./visual/geometry/mesh")
        if mesh is not None:
            mesh_path = mesh.get("filename")
        links[link_name] = mesh_path

    parent_to_joint = {}
    child_links = set()
    joint_elems = robot.findall("joint")
    if not joint_elems:
        raise ChainLoadError(f"{path}: robot: no joints")
    for elem in joint_elems:
        joint_name = elem.get("name", "?")
        context = f"{path}: robot/joint[@name='{joint_name}']"
        kind = elem.get("type")
        if kind not in ("fixed", "revolute"):
            raise ChainLoadError(f"{context}: unsupported joint type '{kind}'")
        parent = elem.find("parent")
        child = elem.find("child")
        if parent is None or child is None:
            raise ChainLoadError(f"{context}: missing parent/child element")
        parent_link = parent.get("link")
        child_link = child.get("link")
        if parent_link in parent_to_joint:
            raise ChainLoadError(f"{context}: link '{parent_link}' has multiple child joints (branched tree)")
        origin = _origin_from_xml(elem.find("origin"), context)
        axis = None
        limits = None
        if kind == "revolute":
            axis_elem = elem.find("axis")
            if axis_elem is None:
                raise ChainLoadError(f"{context}: revolute joint missing axis")
            axis = np.asarray(_float_list(axis_elem.get("xyz"), 3, f"{context}/axis"), dtype=float)
            limit_elem = elem.find("limit")
            if limit_elem is None or limit_elem.get("lower") is None or limit_elem.get("upper") is None:
                raise ChainLoadError(f"{context}: revolute joint missing limit lower/upper")
            limits = (float(limit_elem.get("lower")), float(limit_elem.get("upper")))
        parent_to_joint[parent_link] = (joint_name, kind, origin, axis, limits, child_link)
        child_links.add(child_link)

    roots = [l for l in parent_to_joint if l not in child_links]
    if len(roots) != 1:
        raise ChainLoadError(f"{path}: robot: expected one root link, found {roots}")
    root = roots[0]

    joints = []
    link = root
    while link in parent_to_joint:
        joint_name, kind, origin, axis, limits, child_link = parent_to_joint[link]
        joints.append(Joint(joint_name, kind, origin, axis, limits))
        link = child_link
    return KinematicChain(name=name, joints=joints, base_mesh=links.get(root))


def _load_json_chain(path: PathLike) -> KinematicChain:
    with open(path) as f:
        doc = json.load(f)
    if "joints" not in doc or not isinstance(doc["joints"], list):
        raise ChainLoadError(f"{path}: joints: missing or not a list")
    joints = []
    for i, entry in enumerate(doc["joints"]):
        context = f"{path}: joints[{i}]"
        kind = entry.get("kind")
        if kind not in ("fixed", "revolute"):
            raise ChainLoadError(f"{context}: unsupported kind '{kind}'")
        origin_doc = entry.get("origin", {})
        xyz = origin_doc.get("xyz", [0.0, 0.0, 0.0])
        rpy = origin_doc.get("rpy", [0.0, 0.0, 0.0])
        if len(xyz) != 3 or len(rpy) != 3:
            raise ChainLoadError(f"{context}/origin: xyz and rpy must have 3 entries")
        origin = RigidTransform(rpy_to_rotation(*rpy), np.asarray(xyz, dtype=float))
        axis = entry.get("axis")
        limits = entry.get("limits")
        if kind == "revolute":
            if axis is None:
                raise ChainLoadError(f"{context}: revolute joint missing axis")
            if limits is None or len(limits) != 2:
                raise ChainLoadError(f"{context}: revolute joint missing limits [lo, hi]")
            limits = (float(limits[0]), float(limits[1]))
        joints.append(Joint(entry.get("name", f"joint{i}"), kind, origin,
                            None if axis is None else np.asarray(axis, dtype=float), limits))
    return KinematicChain(
        name=doc.get("name", Path(path).stem),
        joints=joints,
        base_mesh=doc.get("base_mesh"),
    )


def load_chain(path: PathLike) -> KinematicChain:
    """Load a .urdf (XML subset) or .json chain document."""
    suffix = Path(path).suffix.lower()
    if suffix in (".urdf", ".xml"):
        return _load_urdf(path)
    if suffix == ".json":
        return _load_json_chain(path)
    raise ChainLoadError(f"{path}: unsupported chain file extension '{suffix}'")


@dataclass
class PoseConstraints:
    """Acceptance rules for base-looking pose sampling.

    A candidate is accepted when the base origin falls inside the camera's
    viewing cone and range, and at least one joint differs from every
    previously accepted pose by `min_joint_diff` radians.
    """

    cone_half_angle_deg: float = 30.0
    distance_range: Tuple[float, float] = (0.25, 1.2)
    min_joint_diff: float = math.radians(20.0)
    previous: Sequence[JointConfig] = field(default_factory=list)
    max_attempts: int = 5000


def base_visible(chain: KinematicChain, config: JointConfig, camera_offset: RigidTransform,
                 cone_half_angle_deg: float, distance_range: Tuple[float, float]) -> bool:
    """Geometric test: base origin inside the flange camera's viewing cone."""
    camera_pose = compose(forward_kinematics(chain, config), camera_offset)
    base_in_camera = camera_pose.inverse().apply(np.zeros(3))
    distance = float(np.linalg.norm(base_in_camera))
    if distance < distance_range[0] or distance > distance_range[1]:
        return False
    if base_in_camera[2] <= 0.0:
        return cone_half_angle_deg >= 180.0
    angle = math.degrees(math.atan2(math.hypot(base_in_camera[0], base_in_camera[1]), base_in_camera[2]))
    return angle <= cone_half_angle_deg


def _differs_enough(angles: np.ndarray, previous: Sequence[JointConfig], threshold: float) -> bool:
    for prev in previous:
        if np.max(np.abs(angles - prev.angles)) < threshold:
            return False
    return True


def sample_base_looking_pose(chain: KinematicChain, camera_offset: RigidTransform,
                             constraints: PoseConstraints, rng: np.random.Generator) -> JointConfig:
    """Rejection-sample a joint config whose flange camera sees the base origin."""
    limits = chain.limits_array()
    half_angle = constraints.cone_half_angle_deg
    for attempt in range(constraints.max_attempts):
        angles = rng.uniform(limits[:, 0], limits[:, 1])
        if not _differs_enough(angles, constraints.previous, constraints.min_joint_diff):
            continue
        config = JointConfig(angles)
        if half_angle >= 180.0 and constraints.distance_range[1] == math.inf:
            return config
        if base_visible(chain, config, camera_offset, half_angle, constraints.distance_range):
            return config
    raise SamplingError(
        f"no base-looking pose found within {constraints.max_attempts} attempts "
        f"(cone {constraints.cone_half_angle_deg} deg, range {constraints.distance_range})"
    )


def sample_base_looking_poses(chain: KinematicChain, camera_offset: RigidTransform, n: int,
                              constraints: PoseConstraints, rng: np.random.Generator) -> List[JointConfig]:
    """Accumulate n poses, each respecting the joint-difference rule vs. all earlier ones."""
    accepted: List[JointConfig] = list(constraints.previous)
    out: List[JointConfig] = []
    for _ in range(n):
        c = PoseConstraints(
            cone_half_angle_deg=constraints.cone_half_angle_deg,
            distance_range=constraints.distance_range,
            min_joint_diff=constraints.min_joint_diff,
            previous=accepted,
            max_attempts=constraints.max_attempts,
        )
        config = sample_base_looking_pose(chain, camera_offset, c, rng)
        accepted.append(config)
        out.append(config)
    return out
