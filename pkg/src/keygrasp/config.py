"""Declarative run configuration: one document holding every tunable default.

Configs load from JSON, validate against CONFIG_SCHEMA (unknown keys are
rejected), and hash canonically so dataset manifests can pin the exact
settings that produced them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import jsonschema

from .geometry import CameraModel, OrientationBinning
from .families import GripperModel


@dataclass(frozen=True)
class CameraConfig:
    width: int = 640
    height: int = 480
    fx: float = 600.0
    fy: float = 600.0
    cx: float = 320.0
    cy: float = 240.0

    def model(self) -> CameraModel:
        return CameraModel(self.fx, self.fy, self.cx, self.cy, self.width, self.height)


@dataclass(frozen=True)
class CameraSamplingConfig:
    radius_range: tuple = (0.6, 1.2)
    elevation_range_deg: tuple = (25.0, 70.0)
    lookat_jitter: float = 0.05
    roll_jitter_deg: float = 5.0


@dataclass(frozen=True)
class SizeConfig:
    cylinder_radius: tuple = (0.025, 0.045)
    cylinder_height: tuple = (0.08, 0.16)
    stick_radius: tuple = (0.004, 0.008)
    stick_length: tuple = (0.10, 0.20)
    sphere_radius: tuple = (0.02, 0.04)
    semisphere_radius: tuple = (0.03, 0.06)
    cuboid_half_extent: tuple = (0.02, 0.06)
    ring_major_radius: tuple = (0.03, 0.05)
    ring_minor_radius: tuple = (0.006, 0.012)


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 2.0
    beta: float = 4.0
    gamma_y: float = 1.0
    gamma_o: float = 1.0
    gamma_j: float = 1.0
    gamma_s: float = 10.0
    log_clamp: float = 1e-6


@dataclass(frozen=True)
class DatasetConfig:
    single_scenes: int = 1000
    multi_scenes: int = 200
    cameras_per_scene: int = 5
    train_fraction: float = 0.8
    train_grid: tuple = (5, 11)
    test_grid: tuple = (10, 30)

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train fraction must lie in (0, 1)")


@dataclass(frozen=True)
class RunConfig:
    canonical_distance: float = 0.06
    template: str = "box"
    pnp_method: str = "ippe"
    orientation_bins: int = 9
    stride: int = 4
    splat_sigma: float = 2.0
    heatmap_threshold: float = 0.3
    top_k: int = 100
    score_reprojection_weight: float = 0.1
    scale_refine: bool = False
    scale_refine_variant: str = "projective_z"
    include_cylinder_top: bool = True
    max_width: float = 0.085
    workspace_radius: float = 0.4
    table_checker: float = 0.02
    light_direction: tuple = (-0.3, 0.2, -1.0)
    visibility_slack: float = 0.25
    thresholds: tuple = ((0.01, 20.0), (0.02, 30.0), (0.03, 45.0))
    camera: CameraConfig = field(default_factory=CameraConfig)
    camera_sampling: CameraSamplingConfig = field(default_factory=CameraSamplingConfig)
    sizes: SizeConfig = field(default_factory=SizeConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    gripper_max_width: float = 0.085
    gripper_finger_length: float = 0.04
    gripper_finger_thickness: float = 0.01
    gripper_finger_height: float = 0.02
    gripper_palm_depth: float = 0.02
    gripper_palm_width: float = 0.10
    gripper_palm_height: float = 0.04
    gripper_sample_spacing: float = 0.002

    def camera_model(self) -> CameraModel:
        return self.camera.model()

    def binning(self) -> OrientationBinning:
        return OrientationBinning(self.orientation_bins)

    def gripper(self) -> GripperModel:
        return GripperModel(
            max_width=self.gripper_max_width,
            finger_length=self.gripper_finger_length,
            finger_thickness=self.gripper_finger_thickness,
            finger_height=self.gripper_finger_height,
            palm_depth=self.gripper_palm_depth,
            palm_width=self.gripper_palm_width,
            palm_height=self.gripper_palm_height,
            sample_spacing=self.gripper_sample_spacing,
        )


def _pair(minimum=None):
    item = {"type": "number"}
    if minimum is not None:
        item["exclusiveMinimum"] = minimum
    return {"type": "array", "items": item, "minItems": 2, "maxItems": 2}


CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "canonical_distance": {"type": "number", "exclusiveMinimum": 0},
        "template": {"enum": ["box", "tetrahedron", "tail"]},
        "pnp_method": {"enum": ["ippe", "p3p", "epnp"]},
        "orientation_bins": {"type": "integer", "minimum": 1},
        "stride": {"type": "integer", "minimum": 1},
        "splat_sigma": {"type": "number", "exclusiveMinimum": 0},
        "heatmap_threshold": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "top_k": {"type": "integer", "minimum": 1},
        "score_reprojection_weight": {"type": "number", "minimum": 0},
        "scale_refine": {"type": "boolean"},
        "scale_refine_variant": {"enum": ["projective_z", "ray_norm"]},
        "include_cylinder_top": {"type": "boolean"},
        "max_width": {"type": "number", "exclusiveMinimum": 0},
        "workspace_radius": {"type": "number", "exclusiveMinimum": 0},
        "table_checker": {"type": "number", "exclusiveMinimum": 0},
        "light_direction": {"type": "array", "items": {"type": "number"},
                            "minItems": 3, "maxItems": 3},
        "visibility_slack": {"type": "number", "minimum": 0},
        "thresholds": {"type": "array", "items": _pair(0), "minItems": 1},
        "camera": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "width": {"type": "integer", "minimum": 8},
                "height": {"type": "integer", "minimum": 8},
                "fx": {"type": "number", "exclusiveMinimum": 0},
                "fy": {"type": "number", "exclusiveMinimum": 0},
                "cx": {"type": "number"},
                "cy": {"type": "number"},
            },
        },
        "camera_sampling": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "radius_range": _pair(0),
                "elevation_range_deg": _pair(),
                "lookat_jitter": {"type": "number", "minimum": 0},
                "roll_jitter_deg": {"type": "number", "minimum": 0},
            },
        },
        "sizes": {
            "type": "object", "additionalProperties": False,
            "properties": {name: _pair(0) for name in (
                "cylinder_radius", "cylinder_height", "stick_radius",
                "stick_length", "sphere_radius", "semisphere_radius",
                "cuboid_half_extent", "ring_major_radius", "ring_minor_radius")},
        },
        "loss": {
            "type": "object", "additionalProperties": False,
            "properties": {name: {"type": "number", "exclusiveMinimum": 0}
                           for name in ("alpha", "beta", "gamma_y", "gamma_o",
                                        "gamma_j", "gamma_s", "log_clamp")},
        },
        "dataset": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "single_scenes": {"type": "integer", "minimum": 0},
                "multi_scenes": {"type": "integer", "minimum": 0},
                "cameras_per_scene": {"type": "integer", "minimum": 1},
                "train_fraction": {"type": "number", "exclusiveMinimum": 0,
                                   "exclusiveMaximum": 1},
                "train_grid": _pair(0),
                "test_grid": _pair(0),
            },
        },
        "gripper_max_width": {"type": "number", "exclusiveMinimum": 0},
        "gripper_finger_length": {"type": "number", "exclusiveMinimum": 0},
        "gripper_finger_thickness": {"type": "number", "exclusiveMinimum": 0},
        "gripper_finger_height": {"type": "number", "exclusiveMinimum": 0},
        "gripper_palm_depth": {"type": "number", "exclusiveMinimum": 0},
        "gripper_palm_width": {"type": "number", "exclusiveMinimum": 0},
        "gripper_palm_height": {"type": "number", "exclusiveMinimum": 0},
        "gripper_sample_spacing": {"type": "number", "exclusiveMinimum": 0},
    },
}

_NESTED = {
    "camera": CameraConfig,
    "camera_sampling": CameraSamplingConfig,
    "sizes": SizeConfig,
    "loss": LossWeights,
    "dataset": DatasetConfig,
}

_TUPLE_KEYS = ("light_direction", "thresholds", "radius_range", "elevation_range_deg",
               "train_grid", "test_grid")


def _tuplify(value):
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    return value


def config_from_dict(data: dict) -> RunConfig:
    """Validate a raw mapping against the schema and build a RunConfig."""
    jsonschema.validate(data, CONFIG_SCHEMA)
    kwargs = {}
    for key, value in data.items():
        if key in _NESTED:
            sub = {k: _tuplify(v) for k, v in value.items()}
            kwargs[key] = _NESTED[key](**sub)
        else:
            kwargs[key] = _tuplify(value)
    if "dataset" in kwargs and isinstance(data["dataset"].get("train_grid"), list):
        ds = kwargs["dataset"]
        object.__setattr__(ds, "train_grid", tuple(int(v) for v in ds.train_grid))
        object.__setattr__(ds, "test_grid", tuple(int(v) for v in ds.test_grid))
    return RunConfig(**kwargs)


def config_to_dict(config: RunConfig) -> dict:
    data = asdict(config)

    def listify(value):
        if isinstance(value, tuple):
            return [listify(v) for v in value]
        if isinstance(value, dict):
            return {k: listify(v) for k, v in value.items()}
        return value

    return {k: listify(v) for k, v in data.items()}


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Config file (optional) merged with flat override values."""
    data = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    if overrides:
        data.update(overrides)
    return config_from_dict(data)


def config_hash(config: RunConfig) -> str:
    canon = json.dumps(config_to_dict(config), sort_keys=True)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
