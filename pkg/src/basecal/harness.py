"""Experiment runner: poses x scans studies, error statistics, CSV/JSON artifacts."""

from __future__ import annotations

import json
import logging
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .calibrate import CalibrationReport, eye_in_hand_sample, eye_to_hand_sample, fuse
from .cloud import PointCloud, TriangleMesh, sample_mesh_surface, voxel_downsample
from .cloudio import load_obj, load_ply, save_ply
from .geom import PoseError, RigidTransform, compose, euler_xyz, pose_error
from .kinematics import (
    JointConfig,
    KinematicChain,
    PoseConstraints,
    forward_kinematics,
    load_chain,
    sample_base_looking_poses,
)
from .registration import DivergenceError, RegistrationConfig, register
from .baseline import make_pairs, solve_ax_xb, synthesize_motions
from .scansim import NoiseSpec, VirtualCamera, cloud_from_depths, scan_geometry

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CSV_HEADER = "robot,pose_idx,scan_idx,rte_mm,rre_deg,fitness,rmse_m,runtime_s"


@dataclass(eq=False)
class ExperimentSpec:
    """One simulation study: a robot, its base mesh, and the protocol scale."""

    chain: Union[KinematicChain, str, Path]
    base_mesh: Union[TriangleMesh, str, Path]
    camera_offset: RigidTransform            # true flange->camera mount used by the simulator
    n_poses: int = 30
    n_scans_per_pose: int = 30
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 0
    radii: Tuple[float, ...] = (0.5, 0.7)
    camera_width: int = 160
    camera_height: int = 120
    h_fov_deg: float = 60.0
    v_fov_deg: float = 45.0
    cone_half_angle_deg: float = 35.0
    min_joint_diff_deg: float = 20.0
    reference_points: int = 60000
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    record_runtime: bool = True

    def __post_init__(self):
        if self.n_poses < 1 or self.n_scans_per_pose < 1:
            raise ValueError("n_poses and n_scans_per_pose must be at least 1")


@dataclass(eq=False)
class ScanRecord:
    robot: str
    pose_idx: int
    scan_idx: int
    rte_mm: float
    rre_deg: float
    fitness: float
    rmse_m: float
    runtime_s: float
    estimate: RigidTransform


@dataclass(eq=False)
class PoseAggregate:
    pose_idx: int
    n: int
    mean_rte_mm: float
    median_rte_mm: float
    std_rte_mm: float
    mean_rre_deg: float
    median_rre_deg: float
    std_rre_deg: float


@dataclass(eq=False)
class ExperimentResult:
    robot: str
    records: List[ScanRecord]
    per_pose: List[PoseAggregate]
    mean_rte_mm: float
    mean_rre_deg: float
    mean_runtime_s: float
    skipped: int


def _resolve_chain(chain) -> KinematicChain:
    return chain if isinstance(chain, KinematicChain) else load_chain(chain)


def _resolve_mesh(mesh) -> TriangleMesh:
    if isinstance(mesh, TriangleMesh):
        return mesh
    return load_obj(mesh)


def load_reference_cloud(source: Union[TriangleMesh, PointCloud, str, Path],
                         n_points: int = 60000, seed: int = 0) -> PointCloud:
    """Reference model cloud from a mesh (sampled with face normals) or cloud file."""
    if isinstance(source, PointCloud):
        return source
    if isinstance(source, TriangleMesh):
        return sample_mesh_surface(source, n_points, seed=seed)
    path = Path(source)
    if path.suffix.lower() == ".obj":
        return sample_mesh_surface(load_obj(path), n_points, seed=seed)
    return load_ply(path)


def _aggregate(pose_idx: int, errors: List[PoseError]) -> PoseAggregate:
    rtes = [e.rte_mm for e in errors]
    rres = [e.rre_deg for e in errors]
    return PoseAggregate(
        pose_idx=pose_idx,
        n=len(errors),
        mean_rte_mm=statistics.fmean(rtes),
        median_rte_mm=statistics.median(rtes),
        std_rte_mm=statistics.pstdev(rtes) if len(rtes) > 1 else 0.0,
        mean_rre_deg=statistics.fmean(rres),
        median_rre_deg=statistics.median(rres),
        std_rre_deg=statistics.pstdev(rres) if len(rres) > 1 else 0.0,
    )


def _study_poses(spec: ExperimentSpec, chain: KinematicChain, rng: np.random.Generator) -> List[JointConfig]:
    constraints = PoseConstraints(
        cone_half_angle_deg=spec.cone_half_angle_deg,
        distance_range=(0.6 * min(spec.radii), 1.5 * max(spec.radii)),
        min_joint_diff=math.radians(spec.min_joint_diff_deg),
    )
    return sample_base_looking_poses(chain, spec.camera_offset, spec.n_poses, constraints, rng)


def run_simulation_study(spec: ExperimentSpec, threads: int = 1) -> ExperimentResult:
    """Full protocol: sample base-looking poses, scan, register, solve, score.

    Each scan is registered independently and closed through the kinematic
    chain; errors are measured against the spec's true camera mount. Aborts
    when more than half of all scans fail to register.
    """
    chain = _resolve_chain(spec.chain)
    mesh = _resolve_mesh(spec.base_mesh)
    reference = voxel_downsample(
        load_reference_cloud(mesh, spec.reference_points, seed=spec.seed), spec.registration.voxel
    )
    pose_rng = np.random.default_rng([spec.seed, 101])
    configs = _study_poses(spec, chain, pose_rng)

    records: List[ScanRecord] = []
    skipped = 0

    def run_scan(pose_idx: int, scan_idx: int, base_from_flange: RigidTransform,
                 camera: VirtualCamera, dirs, t, front) -> Optional[ScanRecord]:
        rng = np.random.default_rng([spec.seed, pose_idx, scan_idx])
        scan = cloud_from_depths(dirs, t, front, spec.noise, rng)
        started = time.perf_counter()
        try:
            camera_from_base, result = register(
                scan, reference, unit_hint="m", seed=spec.seed + 7 * pose_idx + scan_idx,
                config=spec.registration,
            )
        except DivergenceError as exc:
            logger.warning("pose %d scan %d: registration diverged: %s", pose_idx, scan_idx, exc)
            return None
        if not result.converged:
            logger.warning("pose %d scan %d: registration failed (fitness %.3f)", pose_idx, scan_idx, result.fitness)
            return None
        estimate = eye_in_hand_sample(
            f"pose{pose_idx:03d}_scan{scan_idx:03d}", camera_from_base, base_from_flange,
            fitness=result.fitness, inlier_rmse=result.inlier_rmse,
        ).estimate
        elapsed = time.perf_counter() - started
        err = pose_error(estimate, spec.camera_offset)
        return ScanRecord(
            robot=chain.name,
            pose_idx=pose_idx,
            scan_idx=scan_idx,
            rte_mm=err.rte_mm,
            rre_deg=err.rre_deg,
            fitness=result.fitness,
            rmse_m=result.inlier_rmse,
            runtime_s=elapsed if spec.record_runtime else 0.0,
            estimate=estimate,
        )

    per_pose: List[PoseAggregate] = []
    for pose_idx, config in enumerate(configs):
        base_from_flange = forward_kinematics(chain, config)
        camera_pose = compose(base_from_flange, spec.camera_offset)
        camera = VirtualCamera(
            pose=camera_pose, h_fov_deg=spec.h_fov_deg, v_fov_deg=spec.v_fov_deg,
            width=spec.camera_width, height=spec.camera_height,
        )
        dirs, t, front = scan_geometry(mesh, camera)
        jobs = [(pose_idx, s, base_from_flange, camera, dirs, t, front) for s in range(spec.n_scans_per_pose)]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                outcomes = list(pool.map(lambda args: run_scan(*args), jobs))
        else:
            outcomes = [run_scan(*args) for args in jobs]
        pose_errors = []
        for outcome in outcomes:
            if outcome is None:
                skipped += 1
                continue
            records.append(outcome)
            pose_errors.append(PoseError(outcome.rte_mm, outcome.rre_deg))
        if pose_errors:
            per_pose.append(_aggregate(pose_idx, pose_errors))

    total = spec.n_poses * spec.n_scans_per_pose
    if skipped > total / 2:
        raise RuntimeError(
            f"registration failed on {skipped}/{total} scans; "
            "check the mesh scale, camera mount, and noise settings"
        )
    mean_rte = statistics.fmean(r.rte_mm for r in records)
    mean_rre = statistics.fmean(r.rre_deg for r in records)
    mean_runtime = statistics.fmean(r.runtime_s for r in records)
    return ExperimentResult(
        robot=chain.name,
        records=records,
        per_pose=per_pose,
        mean_rte_mm=mean_rte,
        mean_rre_deg=mean_rre,
        mean_runtime_s=mean_runtime,
        skipped=skipped,
    )


def single_pose_repeat_study(spec: ExperimentSpec, n_scans: int, sequence_seeds: Sequence[int] = (0,),
                             threads: int = 1) -> List[CalibrationReport]:
    """Repeated scans at one fixed base-looking pose, one report per noise sequence.

    The scan geometry is cast once; each sequence draws its own noise streams,
    registers every frame, and fuses the per-frame solutions.
    """
    chain = _resolve_chain(spec.chain)
    mesh = _resolve_mesh(spec.base_mesh)
    reference = voxel_downsample(
        load_reference_cloud(mesh, spec.reference_points, seed=spec.seed), spec.registration.voxel
    )
    pose_rng = np.random.default_rng([spec.seed, 101])
    config = _study_poses(replace(spec, n_poses=1), chain, pose_rng)[0]
    base_from_flange = forward_kinematics(chain, config)
    camera = VirtualCamera(
        pose=compose(base_from_flange, spec.camera_offset),
        h_fov_deg=spec.h_fov_deg, v_fov_deg=spec.v_fov_deg,
        width=spec.camera_width, height=spec.camera_height,
    )
    dirs, t, front = scan_geometry(mesh, camera)

    reports = []
    for seq in sequence_seeds:
        samples = []
        for scan_idx in range(n_scans):
            rng = np.random.default_rng([spec.seed, 31337, seq, scan_idx])
            scan = cloud_from_depths(dirs, t, front, spec.noise, rng)
            camera_from_base, result = register(
                scan, reference, unit_hint="m",
                seed=spec.seed + 1000 * seq + scan_idx, config=spec.registration,
            )
            if not result.converged:
                logger.warning("sequence %d scan %d failed to register; skipping", seq, scan_idx)
                continue
            samples.append(
                eye_in_hand_sample(
                    f"seq{seq:02d}_scan{scan_idx:03d}", camera_from_base, base_from_flange,
                    fitness=result.fitness, inlier_rmse=result.inlier_rmse,
                )
            )
        reports.append(fuse(samples, mode="eye_in_hand"))
    return reports


def first_n_convergence(report: CalibrationReport, ns: Sequence[int]) -> List[dict]:
    """Fusion over the first N samples for each N, with drift vs. the full fusion."""
    if max(ns) > len(report.samples):
        raise ValueError(f"report has {len(report.samples)} samples, need {max(ns)}")
    full = fuse(report.samples, report.mode)
    rows = []
    for n in ns:
        partial = fuse(report.samples[:n], report.mode)
        ex, ey, ez = euler_xyz(partial.fused.rotation)
        err = pose_error(partial.fused, full.fused)
        rows.append(
            {
                "n": n,
                "tx_m": float(partial.fused.translation[0]),
                "ty_m": float(partial.fused.translation[1]),
                "tz_m": float(partial.fused.translation[2]),
                "rx_rad": ex,
                "ry_rad": ey,
                "rz_rad": ez,
                "deviation_mm": err.rte_mm,
                "deviation_deg": err.rre_deg,
            }
        )
    return rows


def compare_with_baseline(spec: ExperimentSpec, baseline_poses: int = 14,
                          baseline_rot_noise_deg: float = 0.1,
                          baseline_trans_noise_mm: float = 0.5) -> List[dict]:
    """Single-scan chain-closure calibration vs. the multi-pose AX=XB baseline.

    Both methods estimate the same flange->camera mount; rows report the
    translation, XYZ Euler angles, and wall-clock per calibration.
    """
    def row(method: str, transform: RigidTransform, seconds: float) -> dict:
        ex, ey, ez = euler_xyz(transform.rotation)
        return {
            "method": method,
            "tx_m": float(transform.translation[0]),
            "ty_m": float(transform.translation[1]),
            "tz_m": float(transform.translation[2]),
            "rx_rad": ex, "ry_rad": ey, "rz_rad": ez,
            "time_s": seconds,
        }

    study = run_simulation_study(replace(spec, n_poses=1, n_scans_per_pose=1))
    scan_record = study.records[0]

    rng = np.random.default_rng([spec.seed, 4242])
    flange_poses, observations = synthesize_motions(
        spec.camera_offset, baseline_poses, rng,
        rot_noise_deg=baseline_rot_noise_deg, trans_noise_mm=baseline_trans_noise_mm,
    )
    started = time.perf_counter()
    x_baseline = solve_ax_xb(make_pairs(flange_poses, observations))
    baseline_elapsed = time.perf_counter() - started

    return [
        row("ground_truth", spec.camera_offset, 0.0),
        row("base_scan_single_pose", scan_record.estimate, scan_record.runtime_s),
        row(f"ax_xb_{baseline_poses}_poses", x_baseline, baseline_elapsed),
    ]


def write_scan_set(spec: ExperimentSpec, out_dir: PathLike) -> None:
    """Dump per-scan directories (source.ply + flange pose) for offline calibration.

    Layout: manifest.json plus sample_NNNN/{source.ply, flange.json,
    camera.json, config.json}; the manifest records the true camera mount so
    reports can be checked against it.
    """
    chain = _resolve_chain(spec.chain)
    mesh = _resolve_mesh(spec.base_mesh)
    pose_rng = np.random.default_rng([spec.seed, 101])
    configs = _study_poses(spec, chain, pose_rng)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    counter = 0
    for pose_idx, config in enumerate(configs):
        base_from_flange = forward_kinematics(chain, config)
        camera = VirtualCamera(
            pose=compose(base_from_flange, spec.camera_offset),
            h_fov_deg=spec.h_fov_deg, v_fov_deg=spec.v_fov_deg,
            width=spec.camera_width, height=spec.camera_height,
        )
        dirs, t, front = scan_geometry(mesh, camera)
        for scan_idx in range(spec.n_scans_per_pose):
            rng = np.random.default_rng([spec.seed, pose_idx, scan_idx])
            scan = cloud_from_depths(dirs, t, front, spec.noise, rng)
            name = f"sample_{counter:04d}"
            counter += 1
            names.append(name)
            sample_dir = out / name
            sample_dir.mkdir(exist_ok=True)
            save_ply(voxel_downsample(scan, spec.registration.voxel), sample_dir / "source.ply")
            (sample_dir / "flange.json").write_text(json.dumps(
                {"transform": base_from_flange.to_dict(), "matrix_rowmajor": base_from_flange.matrix_rowmajor()},
                sort_keys=True, indent=2) + "\n")
            (sample_dir / "camera.json").write_text(json.dumps(camera.to_dict(), sort_keys=True, indent=2) + "\n")
            (sample_dir / "config.json").write_text(json.dumps(
                {"joint_angles": config.angles.tolist()}, sort_keys=True, indent=2) + "\n")
    manifest = {
        "samples": names,
        "robot": chain.name,
        "seed": spec.seed,
        "noise_sigma_mm": spec.noise.sigma_mm,
        "true_camera_offset": spec.camera_offset.to_dict(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def calibrate_directory(scans_dir: PathLike, model: Union[TriangleMesh, PointCloud, str, Path],
                        mode: str = "eye-in-hand", chain: Optional[Union[KinematicChain, str, Path]] = None,
                        unit_hint: str = "auto", seed: int = 0,
                        config: Optional[RegistrationConfig] = None,
                        reference_points: int = 60000) -> CalibrationReport:
    """Register every stored scan against the base model and fuse the solutions.

    Eye-in-hand needs a flange pose per sample, either a flange.json transform
    or a config.json joint vector resolved through `chain`.
    """
    if mode not in ("eye-in-hand", "eye-to-hand"):
        raise ValueError(f"unknown mode '{mode}'")
    config = config or RegistrationConfig()
    root = Path(scans_dir)
    with open(root / "manifest.json") as f:
        manifest = json.load(f)
    resolved_chain = _resolve_chain(chain) if chain is not None else None
    reference = load_reference_cloud(model, reference_points, seed=seed)

    samples = []
    for name in manifest["samples"]:
        sample_dir = root / name
        scan = load_ply(sample_dir / "source.ply")
        camera_from_base, result = register(scan, reference, unit_hint=unit_hint, seed=seed, config=config)
        if not result.converged:
            logger.warning("%s: registration failed (fitness %.3f); skipping", name, result.fitness)
            continue
        if mode == "eye-to-hand":
            samples.append(eye_to_hand_sample(name, camera_from_base, result.fitness, result.inlier_rmse))
            continue
        flange_path = sample_dir / "flange.json"
        config_path = sample_dir / "config.json"
        if flange_path.exists():
            with open(flange_path) as f:
                base_from_flange = RigidTransform.from_dict(json.load(f)["transform"])
        elif config_path.exists() and resolved_chain is not None:
            with open(config_path) as f:
                joint_config = JointConfig(np.asarray(json.load(f)["joint_angles"], dtype=float))
            base_from_flange = forward_kinematics(resolved_chain, joint_config)
        else:
            raise ValueError(
                f"{name}: eye-in-hand needs flange.json, or config.json plus a --robot chain"
            )
        samples.append(
            eye_in_hand_sample(name, camera_from_base, base_from_flange,
                               fitness=result.fitness, inlier_rmse=result.inlier_rmse)
        )
    if not samples:
        raise RuntimeError("no scan registered successfully; nothing to fuse")
    return fuse(samples, mode=mode.replace("-", "_"))


def _csv_float(value: float) -> str:
    return repr(float(value))


def write_records_csv(result: ExperimentResult, path: PathLike, include_runtime: bool = True) -> None:
    """Per-scan rows; runtimes can be zeroed for byte-reproducible output."""
    lines = [CSV_HEADER]
    for r in result.records:
        runtime = r.runtime_s if include_runtime else 0.0
        lines.append(
            f"{r.robot},{r.pose_idx},{r.scan_idx},{_csv_float(r.rte_mm)},{_csv_float(r.rre_deg)},"
            f"{_csv_float(r.fitness)},{_csv_float(r.rmse_m)},{_csv_float(runtime)}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_pose_summary_csv(result: ExperimentResult, path: PathLike) -> None:
    lines = ["pose_idx,n,mean_rte_mm,median_rte_mm,std_rte_mm,mean_rre_deg,median_rre_deg,std_rre_deg"]
    for p in result.per_pose:
        lines.append(
            f"{p.pose_idx},{p.n},{_csv_float(p.mean_rte_mm)},{_csv_float(p.median_rte_mm)},"
            f"{_csv_float(p.std_rte_mm)},{_csv_float(p.mean_rre_deg)},{_csv_float(p.median_rre_deg)},"
            f"{_csv_float(p.std_rre_deg)}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_table_csv(rows: Sequence[dict], path: PathLike) -> None:
    if not rows:
        raise ValueError("no rows to write")
    keys = list(rows[0].keys())
    lines = [",".join(keys)]
    for r in rows:
        lines.append(",".join(_csv_float(r[k]) if isinstance(r[k], float) else str(r[k]) for k in keys))
    Path(path).write_text("\n".join(lines) + "\n")


def emit_gnuplot_data(result: ExperimentResult, out_dir: PathLike) -> None:
    """Whitespace-separated .dat files ready for external plotting."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "per_scan.dat", "w") as f:
        f.write("# pose_idx scan_idx rte_mm rre_deg\n")
        for r in result.records:
            f.write(f"{r.pose_idx} {r.scan_idx} {_csv_float(r.rte_mm)} {_csv_float(r.rre_deg)}\n")
    with open(out / "per_pose.dat", "w") as f:
        f.write("# pose_idx mean_rte_mm median_rte_mm std_rte_mm mean_rre_deg median_rre_deg std_rre_deg\n")
        for p in result.per_pose:
            f.write(
                f"{p.pose_idx} {_csv_float(p.mean_rte_mm)} {_csv_float(p.median_rte_mm)} "
                f"{_csv_float(p.std_rte_mm)} {_csv_float(p.mean_rre_deg)} {_csv_float(p.median_rre_deg)} "
                f"{_csv_float(p.std_rre_deg)}\n"
            )


def result_summary_dict(result: ExperimentResult) -> dict:
    return {
        "robot": result.robot,
        "n_records": len(result.records),
        "skipped": result.skipped,
        "mean_rte_mm": result.mean_rte_mm,
        "mean_rre_deg": result.mean_rre_deg,
        "mean_runtime_s": result.mean_runtime_s,
        "per_pose": [
            {
                "pose_idx": p.pose_idx,
                "n": p.n,
                "mean_rte_mm": p.mean_rte_mm,
                "median_rte_mm": p.median_rte_mm,
                "std_rte_mm": p.std_rte_mm,
                "mean_rre_deg": p.mean_rre_deg,
                "median_rre_deg": p.median_rre_deg,
                "std_rre_deg": p.std_rre_deg,
            }
            for p in result.per_pose
        ],
    }


def write_result_json(result: ExperimentResult, path: PathLike) -> None:
    Path(path).write_text(json.dumps(result_summary_dict(result), sort_keys=True, indent=2) + "\n")
