"""Command-line interface: dataset generation, registration, calibration, studies."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .baseline import make_pairs, solve_ax_xb
from .cloudio import load_ply, load_xyz
from .geom import RigidTransform
from .harness import (
    ExperimentSpec,
    calibrate_directory,
    compare_with_baseline,
    emit_gnuplot_data,
    load_reference_cloud,
    run_simulation_study,
    write_records_csv,
    write_pose_summary_csv,
    write_result_json,
    write_scan_set,
    write_table_csv,
)
from .kinematics import load_chain
from .registration import RegistrationConfig, register
from .scansim import NoiseSpec, generate_dataset, write_dataset
from .cloudio import load_obj


DEFAULT_CAMERA_OFFSET = RigidTransform.identity().to_dict() | {"translation_m": [0.0, 0.0, 0.04]}


def _load_transform_arg(path: str | None) -> RigidTransform:
    if path is None:
        return RigidTransform.from_dict(DEFAULT_CAMERA_OFFSET)
    with open(path) as f:
        doc = json.load(f)
    return RigidTransform.from_dict(doc.get("transform", doc))


def _load_scan(path: str):
    return load_xyz(path) if Path(path).suffix.lower() == ".xyz" else load_ply(path)


def _parse_radii(text: str):
    return tuple(float(v) for v in text.split(","))


def _load_pose_list(path: str):
    with open(path) as f:
        doc = json.load(f)
    entries = doc["poses"] if isinstance(doc, dict) else doc
    return [RigidTransform.from_dict(e.get("transform", e) if isinstance(e, dict) else e) for e in entries]


def cmd_gen_dataset(args) -> int:
    chain = load_chain(args.robot)
    mesh = load_obj(args.mesh)
    samples = generate_dataset(
        chain, mesh, radii=_parse_radii(args.radii), n_views=args.views, n_configs=args.configs,
        noise=NoiseSpec(sigma_mm=args.noise_mm), seed=args.seed, n_augment=args.augment,
    )
    write_dataset(samples, args.out, manifest_extra={
        "radii": list(_parse_radii(args.radii)),
        "seed": args.seed,
        "noise_sigma_mm": args.noise_mm,
        "n_views": args.views,
        "n_configs": args.configs,
        "n_augment": args.augment,
    })
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_register(args) -> int:
    scan = _load_scan(args.scan)
    reference = load_reference_cloud(args.model, seed=args.seed)
    transform, result = register(scan, reference, unit_hint=args.unit, seed=args.seed)
    out = Path(args.out)
    out.write_text(json.dumps(result.to_dict(), sort_keys=True, indent=2) + "\n")
    status = "converged" if result.converged else "FAILED"
    print(f"{status}: fitness {result.fitness:.3f}, rmse {result.inlier_rmse * 1000:.3f} mm -> {out}")
    return 0 if result.converged else 1


def cmd_calibrate(args) -> int:
    report = calibrate_directory(
        args.scans, args.model, mode=args.mode, chain=args.robot,
        unit_hint=args.unit, seed=args.seed,
    )
    Path(args.out).write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    t = report.fused.translation
    print(
        f"{args.mode} over {len(report.samples)} scans: "
        f"t = ({t[0]:.4f}, {t[1]:.4f}, {t[2]:.4f}) m, "
        f"spread {np.max(report.translation_std_mm):.3f} mm / {report.rotation_std_deg:.4f} deg -> {args.out}"
    )
    return 0


def cmd_baseline(args) -> int:
    poses = _load_pose_list(args.poses)
    observations = _load_pose_list(args.observations)
    x = solve_ax_xb(make_pairs(poses, observations, all_pairs=args.all_pairs))
    Path(args.out).write_text(json.dumps(
        {"transform": x.to_dict(), "matrix_rowmajor": x.matrix_rowmajor()}, sort_keys=True, indent=2) + "\n")
    print(f"solved hand-eye transform -> {args.out}")
    return 0


def _spec_from_args(args) -> ExperimentSpec:
    return ExperimentSpec(
        chain=args.robot,
        base_mesh=args.mesh,
        camera_offset=_load_transform_arg(args.offset),
        n_poses=args.poses,
        n_scans_per_pose=args.scans,
        noise=NoiseSpec(sigma_mm=args.noise_mm),
        seed=args.seed,
        radii=_parse_radii(args.radii),
        record_runtime=not args.no_timing,
    )


def cmd_simulate(args) -> int:
    spec = _spec_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.dump_scans:
        write_scan_set(spec, out / "scans")
    result = run_simulation_study(spec, threads=args.threads)
    write_records_csv(result, out / "records.csv", include_runtime=not args.no_timing)
    write_pose_summary_csv(result, out / "per_pose.csv")
    write_result_json(result, out / "summary.json")
    if args.emit_gnuplot:
        emit_gnuplot_data(result, out / "plots")
    print(
        f"{result.robot}: {len(result.records)} calibrations "
        f"(skipped {result.skipped}), mean RTE {result.mean_rte_mm:.3f} mm, "
        f"mean RRE {result.mean_rre_deg:.4f} deg, mean runtime {result.mean_runtime_s:.2f} s -> {out}"
    )
    return 0


def cmd_compare(args) -> int:
    spec = _spec_from_args(args)
    rows = compare_with_baseline(spec, baseline_poses=args.baseline_poses)
    write_table_csv(rows, args.out)
    for r in rows:
        print(
            f"{r['method']:>24}: t=({r['tx_m']:+.4f}, {r['ty_m']:+.4f}, {r['tz_m']:+.4f}) m  "
            f"r=({r['rx_rad']:+.4f}, {r['ry_rad']:+.4f}, {r['rz_rad']:+.4f}) rad  {r['time_s']:.2f} s"
        )
    print(f"wrote {args.out}")
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="master random seed")
    parser.add_argument("--threads", type=int, default=1, help="worker pool size")


def _add_sim_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--robot", required=True, help="chain file (.urdf or .json)")
    parser.add_argument("--mesh", required=True, help="base mesh (.obj)")
    parser.add_argument("--offset", default=None, help="JSON file with the true flange->camera transform")
    parser.add_argument("--noise-mm", type=float, default=0.3, help="depth noise sigma in mm")
    parser.add_argument("--radii", default="0.5,0.7", help="hemisphere radii, comma separated")
    parser.add_argument("--no-timing", action="store_true", help="zero runtime columns for reproducible bytes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="basecal",
                                     description="Hand-eye calibration by scanning the robot base")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", help="synthesize a registration dataset around the base")
    p.add_argument("--robot", required=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--radii", default="0.5,0.7")
    p.add_argument("--views", type=int, default=10)
    p.add_argument("--configs", type=int, default=0)
    p.add_argument("--noise-mm", type=float, default=0.3)
    p.add_argument("--augment", type=int, default=0, help="augmented copies per sample (paper protocol: 5)")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("register", help="register one scan against the base model")
    p.add_argument("--scan", required=True, help="scan cloud (.ply or .xyz)")
    p.add_argument("--model", required=True, help="reference base model (.obj or .ply)")
    p.add_argument("--unit", default="auto", choices=["m", "mm", "auto"])
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("calibrate", help="calibrate from a directory of stored scans")
    p.add_argument("--mode", default="eye-in-hand", choices=["eye-in-hand", "eye-to-hand"])
    p.add_argument("--scans", required=True, help="scan directory with manifest.json")
    p.add_argument("--robot", default=None, help="chain file, needed when samples carry joint configs")
    p.add_argument("--model", required=True)
    p.add_argument("--unit", default="auto", choices=["m", "mm", "auto"])
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("baseline", help="solve AX=XB from pose/observation lists")
    p.add_argument("--poses", required=True, help="JSON list of flange poses")
    p.add_argument("--observations", required=True, help="JSON list of target observations")
    p.add_argument("--all-pairs", action="store_true")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("simulate", help="run the poses x scans simulation study")
    _add_sim_args(p)
    p.add_argument("--poses", type=int, default=30)
    p.add_argument("--scans", type=int, default=30)
    p.add_argument("--emit-gnuplot", action="store_true")
    p.add_argument("--dump-scans", action="store_true", help="also write the raw per-scan directories")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="single-scan calibration vs. the AX=XB baseline")
    _add_sim_args(p)
    p.add_argument("--poses", type=int, default=1)
    p.add_argument("--scans", type=int, default=1)
    p.add_argument("--baseline-poses", type=int, default=14)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
