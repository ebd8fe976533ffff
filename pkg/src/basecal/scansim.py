"""Virtual 3D scanner: hemisphere viewpoints, pinhole ray casting, dataset emission."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from .cloud import PointCloud, TriangleMesh, sample_mesh_surface, voxel_downsample
from .cloudio import load_ply, save_ply
from .geom import RigidTransform, UnitQuaternion, compose, random_transform, rre, rte
from .kinematics import JointConfig, KinematicChain, forward_kinematics
from .raycast import build_bvh, raycast
from .shapes import link_segment, merge_meshes

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))

DEFAULT_H_FOV = 60.0
DEFAULT_V_FOV = 45.0
DEFAULT_WIDTH = 320
DEFAULT_HEIGHT = 240
DEFAULT_RANGE = (0.05, 5.0)
STORAGE_VOXEL = 0.002  # clouds are stored at 2 mm density
AUGMENT_TRANSLATION = 0.1  # augmentation translation bound, meters per axis


@dataclass(eq=False)
class VirtualCamera:
    """Pinhole camera posed in the world/base frame; +Z is the viewing direction."""

    pose: RigidTransform
    h_fov_deg: float = DEFAULT_H_FOV
    v_fov_deg: float = DEFAULT_V_FOV
    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT
    near: float = DEFAULT_RANGE[0]
    far: float = DEFAULT_RANGE[1]

    def __post_init__(self):
        if not (0.0 < self.h_fov_deg < 180.0 and 0.0 < self.v_fov_deg < 180.0):
            raise ValueError("field of view must be in (0, 180) degrees")
        if self.width < 2 or self.height < 2:
            raise ValueError("resolution must be at least 2x2")
        if not self.near < self.far:
            raise ValueError("near plane must be closer than far plane")

    def ray_directions(self) -> np.ndarray:
        """Unit ray directions through every pixel center, camera frame, (H*W, 3)."""
        tan_h = math.tan(math.radians(self.h_fov_deg) / 2.0)
        tan_v = math.tan(math.radians(self.v_fov_deg) / 2.0)
        u = (2.0 * (np.arange(self.width) + 0.5) / self.width - 1.0) * tan_h
        v = (2.0 * (np.arange(self.height) + 0.5) / self.height - 1.0) * tan_v
        xs, ys = np.meshgrid(u, v)
        dirs = np.stack([xs.ravel(), ys.ravel(), np.ones(xs.size)], axis=1)
        return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)

    def to_dict(self) -> dict:
        return {
            "pose": self.pose.to_dict(),
            "h_fov_deg": self.h_fov_deg,
            "v_fov_deg": self.v_fov_deg,
            "width": self.width,
            "height": self.height,
            "near": self.near,
            "far": self.far,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "VirtualCamera":
        return cls(
            pose=RigidTransform.from_dict(data["pose"]),
            h_fov_deg=data["h_fov_deg"],
            v_fov_deg=data["v_fov_deg"],
            width=data["width"],
            height=data["height"],
            near=data["near"],
            far=data["far"],
        )


@dataclass(eq=False)
class NoiseSpec:
    """Zero-mean Gaussian depth noise along the viewing ray."""

    sigma_mm: float = 0.3


@dataclass(eq=False)
class ScanSample:
    """One registration evaluation record."""

    source: PointCloud            # simulated scan, camera frame
    target: PointCloud            # reference base model, base frame
    truth: RigidTransform         # maps base frame into camera frame
    camera: VirtualCamera
    robot: str
    config: Optional[JointConfig] = None


def look_at(position, target, up_hint=(0.0, 0.0, 1.0)) -> RigidTransform:
    """Camera pose with +Z pointing from `position` toward `target`."""
    position = np.asarray(position, dtype=float)
    forward = np.asarray(target, dtype=float) - position
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("camera position coincides with the look-at target")
    forward = forward / norm
    up = np.asarray(up_hint, dtype=float)
    side = np.cross(forward, up)
    if np.linalg.norm(side) < 1e-9:
        side = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    side /= np.linalg.norm(side)
    true_up = np.cross(forward, side)
    rot = np.column_stack([side, true_up, forward])
    return RigidTransform.from_rotation_matrix(rot, position)


def hemisphere_viewpoints(radius: float, n: int, center=(0.0, 0.0, 0.0), **camera_kwargs) -> List[VirtualCamera]:
    """Cameras on the upper hemisphere, Fibonacci-spiral spaced, all aimed at center."""
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    if n < 1:
        raise ValueError("need at least one viewpoint")
    center = np.asarray(center, dtype=float)
    cameras = []
    for i in range(n):
        if n == 1:
            z = 1.0
        else:
            z = 1.0 - (i + 0.5) / n
        phi = i * GOLDEN_ANGLE
        s = math.sqrt(max(0.0, 1.0 - z * z))
        position = center + radius * np.array([s * math.cos(phi), s * math.sin(phi), z])
        cameras.append(VirtualCamera(pose=look_at(position, center), **camera_kwargs))
    return cameras


def scan_geometry(mesh: TriangleMesh, camera: VirtualCamera):
    """Noise-free hit depths for every pixel ray.

    Returns (dirs, t, front) where `front` marks rays whose nearest hit is a
    camera-facing triangle inside [near, far]; occluded and back-facing
    surfaces never appear.
    """
    world_to_camera = camera.pose.inverse()
    mesh_c = mesh.transformed(world_to_camera)
    bvh = build_bvh(mesh_c)
    dirs = camera.ray_directions()
    origins = np.zeros_like(dirs)
    t, tri = raycast(bvh, origins, dirs, t_near=camera.near, t_far=camera.far)
    hit = tri >= 0
    front = hit.copy()
    if hit.any():
        normals = mesh_c.triangle_normals()[tri[hit]]
        facing = np.einsum("ij,ij->i", normals, dirs[hit]) < 0.0
        front[hit] = facing
    return dirs, t, front


def render_scan(mesh: TriangleMesh, camera: VirtualCamera, noise: NoiseSpec,
                rng: Optional[np.random.Generator] = None) -> PointCloud:
    """Simulate one depth capture; points are returned in the camera frame."""
    if len(mesh.triangles) == 0:
        raise ValueError("cannot scan an empty mesh")
    dirs, t, front = scan_geometry(mesh, camera)
    return cloud_from_depths(dirs, t, front, noise, rng)


def cloud_from_depths(dirs: np.ndarray, t: np.ndarray, front: np.ndarray,
                      noise: NoiseSpec, rng: Optional[np.random.Generator] = None) -> PointCloud:
    """Depth-to-cloud with Gaussian noise applied along each ray."""
    depth = t[front]
    if noise.sigma_mm > 0.0:
        if rng is None:
            raise ValueError("noisy rendering needs a random generator")
        depth = depth + rng.normal(0.0, noise.sigma_mm / 1000.0, size=depth.shape)
    return PointCloud(dirs[front] * depth[:, None])


def arm_clutter_mesh(chain: KinematicChain, config: JointConfig, link_radius: float = 0.045) -> TriangleMesh:
    """Crude arm geometry at a given config: capped cylinders between joint frames."""
    frames = []
    pose = RigidTransform.identity()
    k = 0
    for joint in chain.joints:
        pose = compose(pose, joint.origin)
        if joint.kind == "revolute":
            spin = RigidTransform(UnitQuaternion.from_axis_angle(joint.axis, config.angles[k]), np.zeros(3))
            pose = compose(pose, spin)
            k += 1
        frames.append(pose.translation.copy())
    pieces = []
    last = np.zeros(3)
    for origin in frames:
        if np.linalg.norm(origin - last) > 0.01:
            pieces.append(link_segment(last, origin, link_radius))
        last = origin
    if not pieces:
        pieces.append(link_segment(np.zeros(3), np.array([0.0, 0.0, 0.05]), link_radius))
    return merge_meshes(pieces)


def _emit_sample(source_raw: PointCloud, target: PointCloud, camera: VirtualCamera,
                 robot: str, config: Optional[JointConfig], min_points: int,
                 label: str) -> Optional[ScanSample]:
    if len(source_raw) < min_points:
        logger.warning("skipping %s: only %d points rendered (min %d)", label, len(source_raw), min_points)
        return None
    source = voxel_downsample(source_raw, STORAGE_VOXEL)
    truth = camera.pose.inverse()
    derived = camera.pose.inverse()
    assert rte(truth, derived) == 0.0 and rre(truth, derived) == 0.0
    return ScanSample(source=source, target=target, truth=truth, camera=camera, robot=robot, config=config)


def _augment(sample: ScanSample, n_augment: int, rng: np.random.Generator) -> List[ScanSample]:
    out = []
    for _ in range(n_augment):
        t_aug = random_transform(rng, AUGMENT_TRANSLATION)
        truth = compose(t_aug, sample.truth)
        camera = VirtualCamera(
            pose=truth.inverse(),
            h_fov_deg=sample.camera.h_fov_deg,
            v_fov_deg=sample.camera.v_fov_deg,
            width=sample.camera.width,
            height=sample.camera.height,
            near=sample.camera.near,
            far=sample.camera.far,
        )
        out.append(
            ScanSample(
                source=sample.source.transformed(t_aug),
                target=sample.target,
                truth=truth,
                camera=camera,
                robot=sample.robot,
                config=sample.config,
            )
        )
    return out


def generate_dataset(chain: KinematicChain, base_mesh: TriangleMesh, radii: Sequence[float],
                     n_views: int, n_configs: int, noise: NoiseSpec, seed: int,
                     n_augment: int = 0, min_points: int = 200,
                     reference_points: int = 60000, **camera_kwargs) -> List[ScanSample]:
    """Hemisphere scans of the base plus optional arm-clutter scans.

    Every source/target cloud is voxel-downsampled at 2 mm before it is stored
    in the returned samples; `n_augment` extra rigidly-displaced copies of each
    scan are appended when augmentation is enabled.
    """
    if not radii:
        raise ValueError("need at least one hemisphere radius")
    target = voxel_downsample(sample_mesh_surface(base_mesh, reference_points, seed=seed), STORAGE_VOXEL)
    samples: List[ScanSample] = []
    for r_idx, radius in enumerate(radii):
        cameras = hemisphere_viewpoints(radius, n_views, **camera_kwargs)
        for v_idx, camera in enumerate(cameras):
            rng = np.random.default_rng([seed, r_idx, v_idx])
            raw = render_scan(base_mesh, camera, noise, rng)
            sample = _emit_sample(raw, target, camera, chain.name, None, min_points,
                                  f"radius {radius} view {v_idx}")
            if sample is None:
                continue
            samples.append(sample)
            samples.extend(_augment(sample, n_augment, rng))
    limits = chain.limits_array()
    for c_idx in range(n_configs):
        rng = np.random.default_rng([seed, 7919, c_idx])
        config = JointConfig(rng.uniform(limits[:, 0], limits[:, 1]))
        scene = merge_meshes([base_mesh, arm_clutter_mesh(chain, config)])
        radius = float(rng.choice(np.asarray(radii, dtype=float)))
        z = rng.uniform(0.15, 1.0)
        phi = rng.uniform(0.0, 2.0 * math.pi)
        s = math.sqrt(1.0 - z * z)
        position = radius * np.array([s * math.cos(phi), s * math.sin(phi), z])
        camera = VirtualCamera(pose=look_at(position, (0.0, 0.0, 0.0)), **camera_kwargs)
        raw = render_scan(scene, camera, noise, rng)
        sample = _emit_sample(raw, target, camera, chain.name, config, min_points,
                              f"arm config {c_idx}")
        if sample is None:
            continue
        samples.append(sample)
        samples.extend(_augment(sample, n_augment, rng))
    return samples


def _json_dump(data: dict, path: Path) -> None:
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n")


def write_dataset(samples: Sequence[ScanSample], out_dir: PathLike, manifest_extra: Optional[dict] = None) -> None:
    """Directory layout: manifest.json plus per-sample source/target/truth/camera files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, sample in enumerate(samples):
        name = f"sample_{i:04d}"
        names.append(name)
        sample_dir = out / name
        sample_dir.mkdir(exist_ok=True)
        save_ply(sample.source, sample_dir / "source.ply", binary=True)
        save_ply(sample.target, sample_dir / "target.ply", binary=True)
        _json_dump(
            {"transform": sample.truth.to_dict(), "matrix_rowmajor": sample.truth.matrix_rowmajor()},
            sample_dir / "truth.json",
        )
        _json_dump(sample.camera.to_dict(), sample_dir / "camera.json")
        if sample.config is not None:
            _json_dump({"joint_angles": sample.config.angles.tolist()}, sample_dir / "config.json")
    manifest = {
        "samples": names,
        "robot": samples[0].robot if samples else None,
        "augmentation": {
            "rotation": "uniform over SO(3)",
            "translation_m": [-AUGMENT_TRANSLATION, AUGMENT_TRANSLATION],
        },
        "storage_voxel_m": STORAGE_VOXEL,
    }
    if manifest_extra:
        manifest.update(manifest_extra)
    _json_dump(manifest, out / "manifest.json")


def load_dataset(dataset_dir: PathLike) -> List[ScanSample]:
    root = Path(dataset_dir)
    with open(root / "manifest.json") as f:
        manifest = json.load(f)
    samples = []
    for name in manifest["samples"]:
        sample_dir = root / name
        with open(sample_dir / "truth.json") as f:
            truth = RigidTransform.from_dict(json.load(f)["transform"])
        with open(sample_dir / "camera.json") as f:
            camera = VirtualCamera.from_dict(json.load(f))
        config = None
        config_path = sample_dir / "config.json"
        if config_path.exists():
            with open(config_path) as f:
                config = JointConfig(np.asarray(json.load(f)["joint_angles"], dtype=float))
        samples.append(
            ScanSample(
                source=load_ply(sample_dir / "source.ply"),
                target=load_ply(sample_dir / "target.ply"),
                truth=truth,
                camera=camera,
                robot=manifest.get("robot") or "unknown",
                config=config,
            )
        )
    return samples
