"""Grasp-set evaluation: similarity matching, GSR/GCR/OSR, oracle, ablation.

GSR is the fraction of predictions similar to at least one ground-truth
grasp, GCR the fraction of ground-truth grasps similar to at least one
prediction, OSR the fraction of objects with at least one matched grasp.
Counts pool across frames; a frame without any ground truth is skipped and
reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .codec import EncodeStats, LabelMaps, encode, truth_centers
from .geometry import (
    CameraModel,
    KeypointTemplate,
    OrientationBinning,
    Pose,
    keypoint_template,
    pose_apply,
    project_many,
    random_rotation,
    rot_x,
    rot_z,
    rotation_distance,
    translation_distance,
    unproject,
)
from .pnp import method_compatible, recover_grasp
from .scene import scene_rng

# Strict to loose threshold levels: (meters, radians).
THRESHOLD_LEVELS = (
    (0.01, math.radians(20.0)),
    (0.02, math.radians(30.0)),
    (0.03, math.radians(45.0)),
)

_FLIP = rot_x(math.pi)


class EmptyGroundTruth(ValueError):
    """Frame carries no ground-truth grasps at all."""


@dataclass(frozen=True)
class MatchThresholds:
    eps_t: float  # meters
    eps_r: float  # radians

    def __post_init__(self):
        if self.eps_t <= 0 or self.eps_r <= 0:
            raise ValueError("match thresholds must be positive")


@dataclass(frozen=True)
class NoiseModel:
    """Detector stand-in noise: keypoint jitter, peak drops, confidence decay."""

    keypoint_sigma: float = 0.0  # pixels, iid per coordinate
    drop_prob: float = 0.0
    confidence_amplitude: float = 0.0

    def __post_init__(self):
        if self.keypoint_sigma < 0:
            raise ValueError("sigma must be nonnegative")
        for p in (self.drop_prob, self.confidence_amplitude):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")


@dataclass(frozen=True)
class ObjectTruth:
    kind: str
    grasps: tuple  # of Pose


@dataclass(frozen=True)
class EvalFrame:
    predictions: tuple  # of Pose
    objects: tuple      # of ObjectTruth


@dataclass
class KindStats:
    ground_truth: int = 0
    matched_ground_truth: int = 0
    objects: int = 0
    matched_objects: int = 0

    @property
    def gcr(self) -> float:
        return 100.0 * self.matched_ground_truth / self.ground_truth if self.ground_truth else 0.0

    @property
    def osr(self) -> float:
        return 100.0 * self.matched_objects / self.objects if self.objects else 0.0


@dataclass
class LevelMetrics:
    thresholds: MatchThresholds
    predictions: int = 0
    matched_predictions: int = 0
    ground_truth: int = 0
    matched_ground_truth: int = 0
    objects: int = 0
    matched_objects: int = 0
    per_kind: dict = field(default_factory=dict)

    @property
    def gsr(self) -> float:
        return 100.0 * self.matched_predictions / self.predictions if self.predictions else 0.0

    @property
    def gcr(self) -> float:
        return 100.0 * self.matched_ground_truth / self.ground_truth if self.ground_truth else 0.0

    @property
    def osr(self) -> float:
        return 100.0 * self.matched_objects / self.objects if self.objects else 0.0


@dataclass
class MetricsReport:
    levels: list
    frames: int = 0
    skipped_frames: int = 0


def grasp_similar(pred: Pose, truth: Pose, th: MatchThresholds) -> bool:
    """Translation and rotation both within thresholds, up to jaw symmetry.

    The pi flip about the gripper x axis is admitted because annotations are
    stored after the canonical flip; width is not compared.
    """
    if translation_distance(pred.translation, truth.translation) > th.eps_t:
        return False
    d_r = min(rotation_distance(pred.rotation, truth.rotation),
              rotation_distance(pred.rotation, truth.rotation @ _FLIP))
    return d_r <= th.eps_r


def _similarity_matrix(preds, truths, th: MatchThresholds) -> np.ndarray:
    """(n_pred, n_truth) boolean table of grasp_similar outcomes."""
    if not preds or not truths:
        return np.zeros((len(preds), len(truths)), dtype=bool)
    pt = np.stack([p.translation for p in preds])
    tt = np.stack([t.translation for t in truths])
    ok_t = np.linalg.norm(pt[:, None] - tt[None, :], axis=2) <= th.eps_t
    pr = np.stack([p.rotation for p in preds])
    tr = np.stack([t.rotation for t in truths])
    tr_flip = tr @ _FLIP
    cos_a = 0.5 * (np.einsum("pij,tij->pt", pr, tr) - 1.0)
    cos_b = 0.5 * (np.einsum("pij,tij->pt", pr, tr_flip) - 1.0)
    ang = np.minimum(np.arccos(np.clip(cos_a, -1.0, 1.0)),
                     np.arccos(np.clip(cos_b, -1.0, 1.0)))
    return ok_t & (ang <= th.eps_r)


def compute_metrics(frames, thresholds=None) -> MetricsReport:
    """Pooled GSR/GCR/OSR per threshold level over a batch of frames.

    frames is an iterable of EvalFrame.  Frames whose total ground truth is
    empty are skipped and reported; objects without any annotated grasp are
    excluded from the object denominator.
    """
    if thresholds is None:
        thresholds = [MatchThresholds(t, r) for t, r in THRESHOLD_LEVELS]
    report = MetricsReport(levels=[LevelMetrics(th) for th in thresholds])
    for frame in frames:
        total_gt = sum(len(obj.grasps) for obj in frame.objects)
        if total_gt == 0:
            report.skipped_frames += 1
            continue
        report.frames += 1
        preds = list(frame.predictions)
        all_truths = []
        owners = []
        for obj_idx, obj in enumerate(frame.objects):
            for g in obj.grasps:
                all_truths.append(g)
                owners.append(obj_idx)
        owners = np.array(owners)
        for level in report.levels:
            sim = _similarity_matrix(preds, all_truths, level.thresholds)
            matched_pred = sim.any(axis=1)
            matched_gt = sim.any(axis=0)
            level.predictions += len(preds)
            level.matched_predictions += int(matched_pred.sum())
            level.ground_truth += len(all_truths)
            level.matched_ground_truth += int(matched_gt.sum())
            for obj_idx, obj in enumerate(frame.objects):
                if not obj.grasps:
                    continue
                level.objects += 1
                success = bool(matched_gt[owners == obj_idx].any())
                level.matched_objects += int(success)
                ks = level.per_kind.setdefault(obj.kind, KindStats())
                ks.ground_truth += len(obj.grasps)
                ks.matched_ground_truth += int(matched_gt[owners == obj_idx].sum())
                ks.objects += 1
                ks.matched_objects += int(success)
    return report


def oracle_detect(annotations, cam: CameraModel, template: KeypointTemplate,
                  binning: OrientationBinning, noise: NoiseModel, seed: int,
                  stride: int = 4, splat_sigma: float = 2.0):
    """Encode ground truth, then perturb it like an imperfect detector.

    Per encoded peak: jitter the stored keypoint offsets by N(0, sigma^2/s^2)
    per coordinate, zero the peak with the drop probability, and scale the
    peak confidence by (1 - U[0, amplitude]).  Deterministic under seed.
    Returns (maps, encode stats).
    """
    maps, stats = encode(annotations, cam, template, binning, stride, splat_sigma)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    sigma_map = noise.keypoint_sigma / maps.stride
    for bin_idx, cy, cx in truth_centers(maps):
        jitter = rng.normal(0.0, 1.0, size=8) * sigma_map
        drop_draw = float(rng.uniform())
        conf_draw = float(rng.uniform())
        base = 8 * bin_idx
        maps.keypoint_offsets[base:base + 8, cy, cx] += jitter.astype(np.float32)
        if drop_draw < noise.drop_prob:
            maps.heatmap[bin_idx, cy, cx] = 0.0
            continue
        maps.heatmap[bin_idx, cy, cx] *= 1.0 - conf_draw * noise.confidence_amplitude
    return maps, stats


# ---------------------------------------------------------------------------
# keypoint-type / solver ablation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AblationCell:
    template: str
    method: str
    sigma: float
    trials: int
    failures: int
    mean_dt: float
    median_dt: float
    mean_dr: float
    median_dr: float


@dataclass
class AblationTable:
    cells: list
    seed: int
    depth_range: tuple

    def cell(self, template: str, method: str, sigma: float) -> AblationCell:
        for c in self.cells:
            if (c.template, c.method, c.sigma) == (template, method, sigma):
                return c
        raise KeyError((template, method, sigma))

    def to_text(self) -> str:
        lines = [f"{'template':<12} {'method':<6} {'sigma':>5} "
                 f"{'med dT (mm)':>12} {'med dR (deg)':>13} {'fail':>5}"]
        for c in self.cells:
            lines.append(f"{c.template:<12} {c.method:<6} {c.sigma:>5.1f} "
                         f"{1e3 * c.median_dt:>12.3f} "
                         f"{math.degrees(c.median_dr):>13.3f} {c.failures:>5d}")
        return "\n".join(lines)


def _sample_trial_poses(cam: CameraModel, templates: dict, depth_range,
                        trials: int, seed: int):
    """Shared random poses (keypoints of every template inside the image)."""
    poses = []
    noises = []
    for trial in range(trials):
        rng = scene_rng(seed, 3, trial)
        while True:
            rotation = random_rotation(rng)
            z = float(rng.uniform(*depth_range))
            u = float(rng.uniform(0.15 * cam.width, 0.85 * cam.width))
            v = float(rng.uniform(0.15 * cam.height, 0.85 * cam.height))
            pose = Pose(rotation, unproject(cam, (u, v), z))
            if _all_templates_visible(cam, pose, templates):
                break
        poses.append(pose)
        noises.append(rng.normal(0.0, 1.0, size=(4, 2)))
    return poses, noises


def _all_templates_visible(cam, pose, templates) -> bool:
    for template in templates.values():
        pts = pose_apply(pose, template.points)
        if np.any(pts[:, 2] <= 1e-6):
            return False
        px = project_many(cam, pts)
        if np.any((px[:, 0] < 0) | (px[:, 0] >= cam.width)
                  | (px[:, 1] < 0) | (px[:, 1] >= cam.height)):
            return False
    return True


def ablate(cam: CameraModel, sigmas=(2.0,), trials: int = 2000,
           depth_range=(0.5, 1.5), seed: int = 0,
           canonical_distance: float = 0.06,
           template_kinds=("box", "tetrahedron", "tail"),
           methods=("ippe", "p3p", "epnp"),
           image_rotation: float = 0.0) -> AblationTable:
    """Pose-recovery error per (template, method, sigma) cell, paired seeds.

    Every cell sees the same random poses and the same raw noise draws; only
    incompatible combinations (planar solver with the non-planar template)
    are skipped.  image_rotation composes an in-plane camera roll onto each
    sampled pose, used by statistical invariance checks.
    """
    templates = {kind: keypoint_template(kind, canonical_distance)
                 for kind in template_kinds}
    poses, noises = _sample_trial_poses(cam, templates, depth_range, trials, seed)
    if image_rotation:
        roll = Pose(rot_z(image_rotation), np.zeros(3))
        poses = [roll.compose(p) for p in poses]

    cells = []
    for kind in template_kinds:
        template = templates[kind]
        clean_px = [project_many(cam, pose_apply(p, template.points)) for p in poses]
        for method in methods:
            if not method_compatible(method, kind):
                continue
            for sigma in sigmas:
                dts, drs = [], []
                failures = 0
                for pose, px, raw in zip(poses, clean_px, noises):
                    observed = px + sigma * raw
                    try:
                        sol = recover_grasp(observed, template, cam, method)
                    except (ValueError, RuntimeError):
                        failures += 1
                        continue
                    dts.append(translation_distance(sol.pose.translation,
                                                    pose.translation))
                    drs.append(rotation_distance(sol.pose.rotation, pose.rotation))
                dts = np.array(dts) if dts else np.array([np.inf])
                drs = np.array(drs) if drs else np.array([np.inf])
                cells.append(AblationCell(
                    template=kind, method=method, sigma=float(sigma),
                    trials=trials, failures=failures,
                    mean_dt=float(dts.mean()), median_dt=float(np.median(dts)),
                    mean_dr=float(drs.mean()), median_dr=float(np.median(drs))))
    return AblationTable(cells, seed, tuple(depth_range))
