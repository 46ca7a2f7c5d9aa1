"""Grasp label maps: encoding, decoding back to 6-DoF grasps, and losses.

The four map families live at the output stride: per-class center heatmaps, a
shared subpixel center offset, per-class center-to-keypoint offsets (four
keypoints, two channels each), and per-class open widths.  Offsets are stored
in output-stride pixel units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (
    CameraModel,
    DegenerateProjection,
    KeypointTemplate,
    NonPositiveDepth,
    OrientationBinning,
    Pose,
    image_orientation,
    pose_apply,
    project,
    project_many,
)
from .pnp import recover_grasp

_PNP_ERRORS = (ValueError, RuntimeError)


class ShapeMismatch(ValueError):
    """Prediction and truth maps disagree in shape."""


class NoDepth(ValueError):
    """No usable depth value at the grasp center pixel."""


@dataclass
class LabelMaps:
    """Output tensors at stride-s resolution with M orientation channels."""

    heatmap: np.ndarray           # (M, H/s, W/s)
    center_offset: np.ndarray     # (2, H/s, W/s), shared across classes
    keypoint_offsets: np.ndarray  # (8M, H/s, W/s)
    width: np.ndarray             # (M, H/s, W/s) meters
    stride: int

    @property
    def num_bins(self) -> int:
        return self.heatmap.shape[0]

    @property
    def grid_shape(self) -> tuple:
        return self.heatmap.shape[1:]

    def copy(self) -> "LabelMaps":
        return LabelMaps(self.heatmap.copy(), self.center_offset.copy(),
                         self.keypoint_offsets.copy(), self.width.copy(),
                         self.stride)


@dataclass
class EncodeStats:
    total: int = 0
    encoded: int = 0
    dropped_duplicate: int = 0
    dropped_offimage: int = 0
    kept_indices: tuple = ()

    @property
    def encodable_fraction(self) -> float:
        return self.encoded / self.total if self.total else 1.0


@dataclass(frozen=True)
class DecodeConfig:
    template: KeypointTemplate
    method: str = "ippe"
    threshold: float = 0.3
    top_k: int = 100
    scale_refine: bool = False
    refine_variant: str = "projective_z"
    # Orientation consistency allows this much angular slack beyond the bin
    # half width, so grasps sitting exactly on a bin edge survive round-trips.
    orientation_tolerance: float = 1e-4

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("heatmap threshold must lie in (0, 1)")
        if self.top_k < 1:
            raise ValueError("top-k must be at least 1")


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 2.0
    beta: float = 4.0
    gamma_y: float = 1.0
    gamma_o: float = 1.0
    gamma_j: float = 1.0
    gamma_s: float = 10.0
    log_clamp: float = 1e-6


@dataclass(frozen=True)
class GraspCandidate:
    pose: Pose
    width: float
    confidence: float
    reprojection_error: float
    orientation_class: int
    score: float | None = None
    refined: bool = False


@dataclass
class DecodeResult:
    candidates: list
    dropped_pnp: int = 0
    dropped_orientation: int = 0
    dropped_width: int = 0
    missing_depth: int = 0


@dataclass(frozen=True)
class LossBreakdown:
    l_y: float
    l_o: float
    l_j: float
    l_s: float
    total: float


def empty_maps(cam: CameraModel, binning: OrientationBinning, stride: int) -> LabelMaps:
    if cam.width % stride or cam.height % stride:
        raise ValueError("stride must divide the image dimensions")
    h, w = cam.height // stride, cam.width // stride
    m = binning.num_bins
    return LabelMaps(
        heatmap=np.zeros((m, h, w), dtype=np.float32),
        center_offset=np.zeros((2, h, w), dtype=np.float32),
        keypoint_offsets=np.zeros((8 * m, h, w), dtype=np.float32),
        width=np.zeros((m, h, w), dtype=np.float32),
        stride=stride,
    )


def _splat(channel: np.ndarray, cy: int, cx: int, sigma: float):
    """Max-combined Gaussian with exact peak 1 at the center cell."""
    radius = int(math.ceil(3.0 * sigma))
    h, w = channel.shape
    y0, y1 = max(cy - radius, 0), min(cy + radius + 1, h)
    x0, x1 = max(cx - radius, 0), min(cx + radius + 1, w)
    dy = np.arange(y0, y1) - cy
    dx = np.arange(x0, x1) - cx
    g = np.exp(-(dy[:, None] ** 2 + dx[None, :] ** 2) / (2.0 * sigma * sigma))
    channel[y0:y1, x0:x1] = np.maximum(channel[y0:y1, x0:x1],
                                       g.astype(np.float32))
    channel[cy, cx] = 1.0


def encode(annotations, cam: CameraModel, template: KeypointTemplate,
           binning: OrientationBinning, stride: int = 4,
           splat_sigma: float = 2.0):
    """Ground-truth maps from camera-frame grasp annotations.

    Annotations are expected canonically flipped.  The first grasp per
    (center cell, orientation class) wins; later ones are dropped and
    counted, as are grasps whose center leaves the image or sits behind the
    camera.  Returns (maps, stats).
    """
    maps = empty_maps(cam, binning, stride)
    stats = EncodeStats(total=len(annotations))
    occupied = set()
    kept = []
    for index, ann in enumerate(annotations):
        pose = ann.pose
        try:
            center_px = project(cam, pose.translation)
            _, bin_idx = image_orientation(cam, pose, binning)
            keypoints_px = project_many(cam, pose_apply(pose, template.points))
        except (NonPositiveDepth, DegenerateProjection):
            stats.dropped_offimage += 1
            continue
        u, v = center_px
        if not (0.0 <= u < cam.width and 0.0 <= v < cam.height):
            stats.dropped_offimage += 1
            continue
        cx = int(u // stride)
        cy = int(v // stride)
        key = (bin_idx, cy, cx)
        if key in occupied:
            stats.dropped_duplicate += 1
            continue
        occupied.add(key)
        _splat(maps.heatmap[bin_idx], cy, cx, splat_sigma)
        maps.center_offset[0, cy, cx] = u / stride - cx
        maps.center_offset[1, cy, cx] = v / stride - cy
        offsets = (keypoints_px - center_px) / stride
        base = 8 * bin_idx
        for j in range(4):
            maps.keypoint_offsets[base + 2 * j, cy, cx] = offsets[j, 0]
            maps.keypoint_offsets[base + 2 * j + 1, cy, cx] = offsets[j, 1]
        maps.width[bin_idx, cy, cx] = ann.width
        stats.encoded += 1
        kept.append(index)
    stats.kept_indices = tuple(kept)
    return maps, stats


def _local_peaks(heatmap: np.ndarray) -> np.ndarray:
    """Mask of cells equal to their 3x3 neighborhood maximum, per channel."""
    padded = np.pad(heatmap, ((0, 0), (1, 1), (1, 1)), constant_values=-np.inf)
    neighborhood = heatmap.copy()
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            shifted = padded[:, 1 + dy:1 + dy + heatmap.shape[1],
                             1 + dx:1 + dx + heatmap.shape[2]]
            neighborhood = np.maximum(neighborhood, shifted)
    return heatmap >= neighborhood


def _angular_offset(angle: float, center: float) -> float:
    """Absolute angular difference on the pi-periodic orientation circle."""
    diff = math.fmod(angle - center, math.pi)
    if diff > math.pi / 2:
        diff -= math.pi
    elif diff < -math.pi / 2:
        diff += math.pi
    return abs(diff)


def decode(maps: LabelMaps, cam: CameraModel, config: DecodeConfig,
           depth: np.ndarray | None = None) -> DecodeResult:
    """Raw maps back to ranked-ready grasp candidates.

    Peak cells (3x3 pooled, global top-k, threshold epsilon_c) seed PnP pose
    recovery from the reconstructed keypoints; candidates whose recovered
    orientation disagrees with their channel are discarded, and per-candidate
    solver failures drop that candidate without aborting the batch.
    """
    binning = OrientationBinning(maps.num_bins)
    stride = maps.stride
    peaks = _local_peaks(maps.heatmap)
    scores = maps.heatmap[peaks]
    coords = np.argwhere(peaks)
    valid = scores >= config.threshold
    scores, coords = scores[valid], coords[valid]
    order = np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0], -scores))
    selected = order[:config.top_k]

    result = DecodeResult(candidates=[])
    for idx in selected:
        bin_idx, cy, cx = (int(v) for v in coords[idx])
        confidence = float(scores[idx])
        center = np.array([
            (cx + maps.center_offset[0, cy, cx]) * stride,
            (cy + maps.center_offset[1, cy, cx]) * stride,
        ])
        base = 8 * bin_idx
        offsets = maps.keypoint_offsets[base:base + 8, cy, cx].astype(float)
        keypoints = center + offsets.reshape(4, 2) * stride
        width = float(maps.width[bin_idx, cy, cx])
        if width <= 0.0:
            result.dropped_width += 1
            continue
        try:
            solution = recover_grasp(keypoints, config.template, cam, config.method)
        except _PNP_ERRORS:
            result.dropped_pnp += 1
            continue
        try:
            angle, _ = image_orientation(cam, solution.pose, binning)
        except DegenerateProjection:
            result.dropped_orientation += 1
            continue
        slack = binning.bin_width / 2 + config.orientation_tolerance
        if _angular_offset(angle, binning.center_of(bin_idx)) > slack:
            result.dropped_orientation += 1
            continue
        pose = solution.pose
        refined = False
        if config.scale_refine and depth is not None:
            try:
                pose = scale_refine(pose, cam, depth, config.refine_variant)
                refined = True
            except NoDepth:
                result.missing_depth += 1
        result.candidates.append(GraspCandidate(
            pose=pose, width=width, confidence=confidence,
            reprojection_error=solution.reprojection_error,
            orientation_class=bin_idx, refined=refined))
    return result


def scale_refine(pose: Pose, cam: CameraModel, depth: np.ndarray,
                 variant: str = "projective_z") -> Pose:
    """Rescale the translation along its ray to match the observed depth.

    projective_z makes the translation's camera z equal the depth value at
    the grasp center pixel; ray_norm instead sets the translation norm.
    """
    center = project(cam, pose.translation)
    u, v = center
    if not (0.0 <= u < cam.width and 0.0 <= v < cam.height):
        raise NoDepth("grasp center projects outside the image")
    ui = min(int(round(u)), cam.width - 1)
    vi = min(int(round(v)), cam.height - 1)
    observed = float(depth[vi, ui])
    if observed <= 0.0:
        raise NoDepth("no depth at the grasp center pixel")
    t = pose.translation
    if variant == "projective_z":
        factor = observed / t[2]
    elif variant == "ray_norm":
        factor = observed / float(np.linalg.norm(t))
    else:
        raise ValueError(f"unknown refine variant {variant!r}")
    return Pose(pose.rotation, t * factor)


def rank(candidates, reprojection_weight: float = 0.1):
    """Score candidates by confidence minus weighted reprojection error.

    Sorting is stable and descending, so ties keep their decode order.
    """
    scored = [replace(c, score=c.confidence - reprojection_weight * c.reprojection_error)
              for c in candidates]
    return sorted(scored, key=lambda c: -c.score)


def truth_centers(truth: LabelMaps) -> list:
    """(class, cy, cx) of every exact ground-truth peak."""
    return [tuple(int(v) for v in pos)
            for pos in np.argwhere(truth.heatmap >= 1.0)]


def loss(pred: LabelMaps, truth: LabelMaps, cfg: LossConfig = LossConfig(),
         centers=None) -> LossBreakdown:
    """Branch losses: penalty-reduced focal on the heatmap, L1 at centers.

    The offset, keypoint, and width branches are evaluated only at the
    ground-truth center cells; the total is the weighted sum of branches.
    """
    for name in ("heatmap", "center_offset", "keypoint_offsets", "width"):
        if getattr(pred, name).shape != getattr(truth, name).shape:
            raise ShapeMismatch(f"{name} shapes differ")
    if centers is None:
        centers = truth_centers(truth)
    n = max(len(centers), 1)

    y_pred = np.clip(pred.heatmap.astype(float), cfg.log_clamp, 1.0 - cfg.log_clamp)
    y_true = truth.heatmap.astype(float)
    positive = y_true >= 1.0
    pos_term = np.where(positive, (1.0 - y_pred) ** cfg.alpha * np.log(y_pred), 0.0)
    neg_term = np.where(positive, 0.0,
                        (1.0 - y_true) ** cfg.beta * y_pred ** cfg.alpha
                        * np.log(1.0 - y_pred))
    l_y = -float(pos_term.sum() + neg_term.sum()) / n

    l_o = l_j = l_s = 0.0
    for bin_idx, cy, cx in centers:
        l_o += float(np.abs(pred.center_offset[:, cy, cx].astype(float)
                            - truth.center_offset[:, cy, cx].astype(float)).sum())
        base = 8 * bin_idx
        l_j += float(np.abs(pred.keypoint_offsets[base:base + 8, cy, cx].astype(float)
                            - truth.keypoint_offsets[base:base + 8, cy, cx].astype(float)).sum())
        l_s += float(abs(float(pred.width[bin_idx, cy, cx])
                         - float(truth.width[bin_idx, cy, cx])))
    l_o /= n
    l_j /= n
    l_s /= n

    total = (cfg.gamma_y * l_y + cfg.gamma_o * l_o
             + cfg.gamma_j * l_j + cfg.gamma_s * l_s)
    return LossBreakdown(l_y, l_o, l_j, l_s, total)
