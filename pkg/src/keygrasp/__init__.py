"""Primitive-shape grasp dataset synthesis and keypoint-based pose recovery."""

from .codec import (
    DecodeConfig,
    DecodeResult,
    GraspCandidate,
    LabelMaps,
    LossConfig,
    decode,
    encode,
    loss,
    rank,
    scale_refine,
)
from .config import RunConfig, config_from_dict, config_hash, load_config
from .families import (
    GraspAnnotation,
    GraspFamily,
    GripperModel,
    collision_filter,
    covering_sample,
    families_of,
    sample_grid,
)
from .geometry import (
    CameraModel,
    KeypointTemplate,
    OrientationBinning,
    Pose,
    canonical_flip,
    image_orientation,
    keypoint_template,
    pose_apply,
    project,
    rotation_distance,
    translation_distance,
    unproject,
)
from .metrics import (
    EvalFrame,
    MatchThresholds,
    MetricsReport,
    NoiseModel,
    ObjectTruth,
    ablate,
    compute_metrics,
    grasp_similar,
    oracle_detect,
)
from .pnp import (
    Correspondences,
    PnPSolution,
    recover_grasp,
    reprojection_error,
    solve_epnp,
    solve_ippe,
    solve_p3p,
)
from .scene import (
    CameraSample,
    RenderedFrame,
    Scene,
    camera_frame_annotations,
    generate_scene,
    render,
    sample_cameras,
)
from .shapes import (
    Cuboid,
    Cylinder,
    Ring,
    SemiSphere,
    Sphere,
    Stick,
    ray_intersect,
    signed_distance,
    surface_points,
)

__version__ = "0.1.0"
