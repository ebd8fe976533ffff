"""Calibration-object-free 3D hand-eye calibration by scanning the robot base."""

from .geom import (
    PoseError,
    RigidTransform,
    UnitQuaternion,
    average_transforms,
    compose,
    inverse,
    pose_error,
    rre,
    rte,
)
from .cloud import (
    NearestNeighborIndex,
    PointCloud,
    TriangleMesh,
    estimate_normals,
    nearest_neighbor,
    sample_mesh_surface,
    voxel_downsample,
)
from .cloudio import ParseError, load_obj, load_ply, load_xyz, save_obj, save_ply, save_xyz
from .kinematics import (
    ChainLoadError,
    Joint,
    JointConfig,
    KinematicChain,
    PoseConstraints,
    SamplingError,
    forward_kinematics,
    load_chain,
    sample_base_looking_pose,
    sample_base_looking_poses,
)
from .scansim import (
    NoiseSpec,
    ScanSample,
    VirtualCamera,
    generate_dataset,
    hemisphere_viewpoints,
    load_dataset,
    render_scan,
    write_dataset,
)
from .registration import (
    DivergenceError,
    PreTransform,
    RegistrationConfig,
    RegistrationResult,
    coarse_align,
    pre_transform_reference,
    refine_icp,
    register,
)
from .calibrate import (
    CalibrationReport,
    CalibrationSample,
    fuse,
    solve_eye_in_hand,
    solve_eye_to_hand,
)
from .baseline import MotionPair, UnobservableError, make_pairs, solve_ax_xb, synthesize_motions
from .harness import (
    ExperimentResult,
    ExperimentSpec,
    compare_with_baseline,
    first_n_convergence,
    run_simulation_study,
)

__version__ = "0.1.0"
