"""SE(3) poses, pinhole projection, keypoint templates, and pose distances.

Conventions used throughout the package:
  gripper frame: x = approach axis, y = jaw closing axis, z = x cross y,
  with the origin at the fingertip midpoint;
  image frame: u right, v down, continuous pixel coordinates with integer
  values at pixel centers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TEMPLATE_KINDS = ("box", "tetrahedron", "tail")

# Default canonical keypoint spread; keeps projected keypoints well separated
# at tabletop depths without leaving small objects' neighborhoods.
DEFAULT_CANONICAL_DISTANCE = 0.06

_ORTHO_TOL = 1e-9
_MIN_DEPTH = 1e-9


class NonPositiveDepth(ValueError):
    """Point lies on or behind the camera plane."""


class DegenerateProjection(ValueError):
    """Projected axis direction vanishes (axis parallel to the viewing ray)."""


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def axis_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    axis = np.asarray(axis, dtype=float)
    k = axis / np.linalg.norm(axis)
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + math.sin(angle) * kx + (1.0 - math.cos(angle)) * (kx @ kx)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation via a uniform unit quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def orthonormalize(matrix: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (polar projection via SVD)."""
    u, _, vt = np.linalg.svd(matrix)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation (3x3, orthonormal) plus translation (meters)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-8:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-8:
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        """self applied after other: (self * other)(p) = self(other(p))."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics (pixels) plus image dimensions."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


@dataclass(frozen=True)
class KeypointTemplate:
    """Four fixed gripper-frame assistant points for one template kind."""

    kind: str
    canonical_distance: float
    points: np.ndarray  # (4, 3)

    def __post_init__(self):
        object.__setattr__(self, "points",
                           np.asarray(self.points, dtype=float).reshape(4, 3))

    @property
    def planar(self) -> bool:
        return self.kind in ("box", "tail")


@dataclass(frozen=True)
class OrientationBinning:
    """M equal bins partitioning the half-open angle range [-pi/2, pi/2)."""

    num_bins: int = 9

    def __post_init__(self):
        if self.num_bins < 1:
            raise ValueError("need at least one orientation bin")

    @property
    def bin_width(self) -> float:
        return math.pi / self.num_bins

    def bin_of(self, angle: float) -> int:
        idx = int(math.floor((angle + math.pi / 2) / self.bin_width))
        return min(max(idx, 0), self.num_bins - 1)

    def center_of(self, index: int) -> float:
        return -math.pi / 2 + (index + 0.5) * self.bin_width


def pose_apply(pose: Pose, points) -> np.ndarray:
    """Apply R p + T to one point or a stack of points."""
    pts = np.asarray(points, dtype=float)
    return pts @ pose.rotation.T + pose.translation


def project(cam: CameraModel, point_cam) -> np.ndarray:
    """Project one camera-frame point to pixel coordinates.

    Raises NonPositiveDepth when z <= 1e-9.
    """
    p = np.asarray(point_cam, dtype=float)
    if p[2] <= _MIN_DEPTH:
        raise NonPositiveDepth(f"depth {p[2]:.3g} is not positive")
    return np.array([cam.fx * p[0] / p[2] + cam.cx,
                     cam.fy * p[1] / p[2] + cam.cy])


def project_many(cam: CameraModel, points_cam: np.ndarray) -> np.ndarray:
    pts = np.asarray(points_cam, dtype=float)
    z = pts[..., 2]
    if np.any(z <= _MIN_DEPTH):
        raise NonPositiveDepth("at least one point has non-positive depth")
    return np.stack([cam.fx * pts[..., 0] / z + cam.cx,
                     cam.fy * pts[..., 1] / z + cam.cy], axis=-1)


def unproject(cam: CameraModel, pixel, depth: float) -> np.ndarray:
    """Back-project a pixel at a given projective depth (camera-frame z)."""
    u, v = float(pixel[0]), float(pixel[1])
    return np.array([(u - cam.cx) * depth / cam.fx,
                     (v - cam.cy) * depth / cam.fy,
                     depth])


def keypoint_template(kind: str, canonical_distance: float = DEFAULT_CANONICAL_DISTANCE) -> KeypointTemplate:
    """Build the fixed gripper-frame assistant points for a template kind.

    box: square of side l in the gripper x-z plane, one edge on the z axis,
    square extending behind the fingertips (-x).  tetrahedron: three box
    corners plus an off-plane apex at height l/sqrt(2).  tail: planar T shape,
    a stem hanging off the z-axis segment.
    """
    l = float(canonical_distance)
    if l <= 0:
        raise ValueError("canonical distance must be positive")
    if kind == "box":
        pts = [(0, 0, 0), (0, 0, l), (-l, 0, 0), (-l, 0, l)]
    elif kind == "tetrahedron":
        pts = [(0, 0, 0), (0, 0, l), (-l, 0, 0), (-l / 2, l / math.sqrt(2), l / 2)]
    elif kind == "tail":
        pts = [(0, 0, 0), (0, 0, l), (-l / 2, 0, l / 2), (-l, 0, l / 2)]
    else:
        raise ValueError(f"unknown template kind {kind!r}")
    return KeypointTemplate(kind, l, np.array(pts, dtype=float))


def rotation_distance(r1: np.ndarray, r2: np.ndarray) -> float:
    """Minimum rotation angle aligning r1 with r2.

    Equals arccos((tr(r1 r2^T) - 1) / 2), evaluated as atan2 of the relative
    rotation's sine and cosine parts so near-identity distances do not lose
    half their precision to arccos round-off.
    """
    m = np.asarray(r1) @ np.asarray(r2).T
    cos_val = 0.5 * (np.trace(m) - 1.0)
    sin_val = 0.5 * math.sqrt((m[2, 1] - m[1, 2]) ** 2
                              + (m[0, 2] - m[2, 0]) ** 2
                              + (m[1, 0] - m[0, 1]) ** 2)
    return math.atan2(sin_val, cos_val)


def translation_distance(t1, t2) -> float:
    return float(np.linalg.norm(np.asarray(t1, dtype=float) - np.asarray(t2, dtype=float)))


def _projected_axis_direction(cam: CameraModel, pose: Pose, axis: int) -> np.ndarray:
    """Image-plane derivative of the projection along a gripper axis.

    Exact directional derivative of the pinhole map at the gripper origin;
    units are pixels per meter of motion along the (unit) axis.
    """
    t = pose.translation
    if t[2] <= _MIN_DEPTH:
        raise NonPositiveDepth("gripper origin is behind the camera")
    d = pose.rotation[:, axis]
    z = t[2]
    du = cam.fx * (d[0] * z - t[0] * d[2]) / (z * z)
    dv = cam.fy * (d[1] * z - t[1] * d[2]) / (z * z)
    return np.array([du, dv])


def wrap_half_pi(angle: float) -> float:
    """Wrap an angle by pi into the half-open interval [-pi/2, pi/2)."""
    a = math.fmod(angle + math.pi / 2, math.pi)
    if a < 0:
        a += math.pi
    return a - math.pi / 2


def image_orientation(cam: CameraModel, pose: Pose,
                      binning: OrientationBinning) -> tuple[float, int]:
    """Angle and bin of the projected gripper z axis at the center pixel.

    The gripper's pi symmetry about its approach axis makes directions d and
    -d equivalent, hence the angle is wrapped into [-pi/2, pi/2).
    """
    direction = _projected_axis_direction(cam, pose, axis=2)
    norm = float(np.hypot(direction[0], direction[1]))
    if norm < 1e-9:
        raise DegenerateProjection("projected z axis direction vanishes")
    angle = wrap_half_pi(math.atan2(direction[1], direction[0]))
    return angle, binning.bin_of(angle)


def canonical_flip(cam: CameraModel, pose: Pose) -> Pose:
    """Flip the grasp by pi about its x axis if the projected y axis points right.

    Horizontal component exactly zero counts as "left" (no flip), which makes
    the operation a deterministic idempotent canonicalization.
    """
    direction = _projected_axis_direction(cam, pose, axis=1)
    if direction[0] > 0.0:
        return Pose(pose.rotation @ rot_x(math.pi), pose.translation)
    return pose
