import math
from dataclasses import replace

import numpy as np
import pytest

from keygrasp.codec import (
    DecodeConfig,
    GraspCandidate,
    LossConfig,
    NoDepth,
    ShapeMismatch,
    decode,
    empty_maps,
    encode,
    loss,
    rank,
    scale_refine,
    truth_centers,
)
from keygrasp.config import RunConfig
from keygrasp.families import GraspAnnotation
from keygrasp.geometry import (
    OrientationBinning,
    Pose,
    canonical_flip,
    keypoint_template,
    rot_x,
    rot_z,
    rotation_distance,
    translation_distance,
    unproject,
)
from keygrasp.scene import camera_frame_annotations, generate_scene, render, sample_cameras

BOX = keypoint_template("box", 0.06)
BINNING = OrientationBinning(9)
CFG = RunConfig()


def _annotation(pose, width=0.04):
    return GraspAnnotation(pose, width, "test", 0.0, 0.0)


def _pose_at_pixel(cam, u, v, z=1.0, yaw=0.0):
    """Grasp whose center projects exactly to (u, v), canonically flipped."""
    rotation = np.array([[0.0, -1.0, 0.0],
                         [0.0, 0.0, -1.0],
                         [1.0, 0.0, 0.0]]) @ rot_x(yaw)
    return canonical_flip(cam, Pose(rotation, unproject(cam, (u, v), z)))


def test_encode_offset_arithmetic(cam):
    pose = _pose_at_pixel(cam, 100.5, 60.25)
    maps, stats = encode([_annotation(pose)], cam, BOX, BINNING, stride=4)
    assert stats.encoded == 1
    centers = truth_centers(maps)
    assert centers == [(centers[0][0], 15, 25)]
    m, cy, cx = centers[0]
    assert maps.center_offset[0, cy, cx] == pytest.approx(0.125)
    assert maps.center_offset[1, cy, cx] == pytest.approx(0.0625)
    assert maps.width[m, cy, cx] == pytest.approx(0.04)
    assert maps.heatmap[m, cy, cx] == 1.0


def test_encode_same_center_different_class(cam):
    a = _pose_at_pixel(cam, 200.0, 200.0, yaw=0.0)
    b = _pose_at_pixel(cam, 200.0, 200.0, yaw=math.radians(40))
    maps, stats = encode([_annotation(a), _annotation(b)], cam, BOX, BINNING, 4)
    assert stats.encoded == 2 and stats.dropped_duplicate == 0
    assert len(truth_centers(maps)) == 2


def test_encode_duplicate_dropped(cam):
    a = _pose_at_pixel(cam, 200.0, 200.0)
    b = _pose_at_pixel(cam, 201.0, 201.0)  # same stride-4 cell, same class
    maps, stats = encode([_annotation(a), _annotation(b)], cam, BOX, BINNING, 4)
    assert stats.encoded == 1 and stats.dropped_duplicate == 1
    assert stats.kept_indices == (0,)


def test_encode_off_image_counted(cam):
    inside = _pose_at_pixel(cam, 100.0, 100.0)
    outside = _pose_at_pixel(cam, 2000.0, 100.0)
    behind = _annotation(Pose(np.eye(3), [0.0, 0.0, -1.0]))
    maps, stats = encode([_annotation(inside), _annotation(outside), behind],
                         cam, BOX, BINNING, 4)
    assert stats.encoded == 1 and stats.dropped_offimage == 2


def test_encode_requires_divisible_stride(cam):
    with pytest.raises(ValueError):
        empty_maps(cam, BINNING, 7)


def _roundtrip_frames(seed, n_scenes=20):
    frames = []
    cam = CFG.camera_model()
    for i in range(n_scenes):
        scene = generate_scene(seed + i, "single", CFG, grid=(5, 11))
        camera = sample_cameras(seed + 100 + i, 1, CFG)[0]
        per_obj = camera_frame_annotations(scene, camera)
        flat = [a for obj in per_obj for a in obj]
        if flat:
            frames.append((flat, cam))
    return frames


def test_decode_roundtrip_recovers_encoded(cam):
    config = DecodeConfig(template=BOX, method="ippe", top_k=4096)
    recovered = total = 0
    for flat, _ in _roundtrip_frames(0):
        maps, stats = encode(flat, cam, BOX, BINNING, 4)
        result = decode(maps, cam, config)
        assert result.dropped_orientation == 0
        total += stats.encoded
        for idx in stats.kept_indices:
            ann = flat[idx]
            hit = any(
                translation_distance(c.pose.translation, ann.pose.translation) <= 1e-3
                and rotation_distance(c.pose.rotation, ann.pose.rotation)
                <= math.radians(0.5)
                for c in result.candidates)
            recovered += hit
    assert total > 100
    assert recovered / total >= 0.99


def test_decode_threshold_empty(cam):
    maps = empty_maps(cam, BINNING, 4)
    maps.heatmap[:] = 0.2
    result = decode(maps, cam, DecodeConfig(template=BOX, threshold=0.3))
    assert result.candidates == []


def test_decode_top_k(cam):
    rng = np.random.default_rng(1)
    anns = [_annotation(_pose_at_pixel(cam, u, v))
            for u, v in rng.uniform((50, 50), (600, 430), size=(10, 2))]
    maps, stats = encode(anns, cam, BOX, BINNING, 4)
    assert stats.encoded == 10
    result = decode(maps, cam, DecodeConfig(template=BOX, top_k=1))
    assert len(result.candidates) == 1
    assert result.candidates[0].confidence == 1.0


def test_decode_monotone_in_threshold_and_k(cam):
    flat, _ = _roundtrip_frames(3, n_scenes=6)[0]
    maps, _ = encode(flat, cam, BOX, BINNING, 4)
    # perturb confidences so thresholds bite
    rng = np.random.default_rng(2)
    for m, cy, cx in truth_centers(maps):
        maps.heatmap[m, cy, cx] *= rng.uniform(0.2, 1.0)

    def keys(result):
        return {(c.orientation_class, round(c.pose.translation[0], 6),
                 round(c.pose.translation[2], 6)) for c in result.candidates}

    base = decode(maps, cam, DecodeConfig(template=BOX, threshold=0.25, top_k=50))
    higher = decode(maps, cam, DecodeConfig(template=BOX, threshold=0.6, top_k=50))
    assert keys(higher) <= keys(base)
    fewer = decode(maps, cam, DecodeConfig(template=BOX, threshold=0.25, top_k=3))
    assert keys(fewer) <= keys(base)


def test_scale_refine_fixed_point_and_axis(cam):
    depth = np.full((cam.height, cam.width), 0.8)
    pose = Pose(np.eye(3), [0.0, 0.0, 0.8])
    out = scale_refine(pose, cam, depth)
    assert np.allclose(out.translation, pose.translation)
    pose = Pose(np.eye(3), [0.0, 0.0, 1.2])
    out = scale_refine(pose, cam, depth)
    assert np.allclose(out.translation, [0.0, 0.0, 0.8])


def test_scale_refine_restores_scalar_corruption(cam):
    rng = np.random.default_rng(3)
    pose = _pose_at_pixel(cam, 300.0, 200.0, z=0.9)
    depth = np.zeros((cam.height, cam.width))
    u, v = 300, 200
    depth[v, u] = pose.translation[2]
    corrupted = Pose(pose.rotation, pose.translation * 1.3)
    refined = scale_refine(corrupted, cam, depth)
    assert translation_distance(refined.translation, pose.translation) < 1e-9


def test_scale_refine_reduces_error_on_rendered_depth(cam):
    improved = tested = 0
    for seed in range(14):
        scene = generate_scene(seed, "single", CFG, grid=(3, 5))
        camera = sample_cameras(60 + seed, 1, CFG)[0]
        frame = render(scene, camera, CFG)
        for obj_anns in camera_frame_annotations(scene, camera):
            for ann in obj_anns:
                corrupted = Pose(ann.pose.rotation, ann.pose.translation * 1.3)
                before = translation_distance(corrupted.translation,
                                              ann.pose.translation)
                try:
                    refined = scale_refine(corrupted, cam, frame.depth)
                except NoDepth:
                    continue
                after = translation_distance(refined.translation,
                                             ann.pose.translation)
                tested += 1
                improved += after <= before / 5.0
    assert tested > 20
    assert improved / tested > 0.8


def test_scale_refine_no_depth(cam):
    depth = np.zeros((cam.height, cam.width))
    with pytest.raises(NoDepth):
        scale_refine(Pose(np.eye(3), [0.0, 0.0, 1.0]), cam, depth)


def test_scale_refine_ray_norm_variant(cam):
    depth = np.full((cam.height, cam.width), 0.5)
    pose = Pose(np.eye(3), unproject(cam, (400.0, 300.0), 1.0))
    out = scale_refine(pose, cam, depth, variant="ray_norm")
    assert math.isclose(float(np.linalg.norm(out.translation)), 0.5)


def _candidate(conf, re_px):
    return GraspCandidate(Pose.identity(), 0.04, conf, re_px, 0)


def test_rank_prefers_confidence_then_low_error():
    ranked = rank([_candidate(0.5, 1.0), _candidate(0.9, 1.0)])
    assert ranked[0].confidence == 0.9
    ranked = rank([_candidate(0.8, 5.0), _candidate(0.8, 0.1)])
    assert ranked[0].reprojection_error == 0.1
    assert ranked[0].score == pytest.approx(0.8 - 0.01)


def test_rank_stable_for_ties():
    first = _candidate(1.0, 0.0)
    second = _candidate(1.0, 0.0)
    ranked = rank([first, second])
    assert ranked[0].pose is first.pose and ranked[1].pose is second.pose


def _loss_oracle(pred, truth, cfg):
    """Direct elementwise reimplementation of the branch losses."""
    centers = truth_centers(truth)
    n = max(len(centers), 1)
    y = np.clip(pred.heatmap.astype(float), cfg.log_clamp, 1 - cfg.log_clamp)
    t = truth.heatmap.astype(float)
    l_y = 0.0
    for m in range(t.shape[0]):
        for i in range(t.shape[1]):
            for j in range(t.shape[2]):
                if t[m, i, j] >= 1.0:
                    l_y -= (1 - y[m, i, j]) ** cfg.alpha * math.log(y[m, i, j])
                else:
                    l_y -= ((1 - t[m, i, j]) ** cfg.beta * y[m, i, j] ** cfg.alpha
                            * math.log(1 - y[m, i, j]))
    l_o = l_j = l_s = 0.0
    for m, cy, cx in centers:
        for ch in range(2):
            l_o += abs(float(pred.center_offset[ch, cy, cx])
                       - float(truth.center_offset[ch, cy, cx]))
        for ch in range(8 * m, 8 * m + 8):
            l_j += abs(float(pred.keypoint_offsets[ch, cy, cx])
                       - float(truth.keypoint_offsets[ch, cy, cx]))
        l_s += abs(float(pred.width[m, cy, cx]) - float(truth.width[m, cy, cx]))
    return l_y / n, l_o / n, l_j / n, l_s / n


def _small_truth_maps(cam, rng, n=5):
    anns = [_annotation(_pose_at_pixel(cam, u, v), width=rng.uniform(0.02, 0.08))
            for u, v in rng.uniform((50, 50), (600, 430), size=(n, 2))]
    maps, _ = encode(anns, cam, BOX, BINNING, 4)
    return maps


def test_loss_zero_at_truth(cam):
    rng = np.random.default_rng(4)
    truth = _small_truth_maps(cam, rng)
    # regression branches vanish at pred = truth
    literal = loss(truth.copy(), truth, LossConfig())
    assert literal.l_o == 0.0 and literal.l_j == 0.0 and literal.l_s == 0.0
    # the focal heatmap term vanishes for the ideal peak prediction (ones at
    # ground-truth peaks, zero elsewhere); the truth's own Gaussian tails
    # would be penalized as non-peak predictions
    pred = truth.copy()
    pred.heatmap = (truth.heatmap >= 1.0).astype(np.float32)
    ideal = loss(pred, truth, LossConfig())
    assert ideal.l_o == 0.0 and ideal.l_j == 0.0 and ideal.l_s == 0.0
    assert 0.0 <= ideal.l_y <= 1e-4


def test_loss_matches_elementwise_oracle(cam):
    # use a tiny camera so the triple loop oracle stays fast
    from keygrasp.geometry import CameraModel
    small = CameraModel(60.0, 60.0, 32.0, 24.0, 64, 48)
    rng = np.random.default_rng(5)
    cfg = LossConfig()
    for _ in range(20):
        anns = [_annotation(_pose_at_pixel(small, u, v), width=rng.uniform(0.02, 0.08))
                for u, v in rng.uniform((5, 5), (58, 42), size=(4, 2))]
        truth, _ = encode(anns, small, BOX, BINNING, 4)
        pred = truth.copy()
        pred.heatmap = np.clip(
            pred.heatmap + rng.normal(0, 0.1, pred.heatmap.shape), 0, 1
        ).astype(np.float32)
        pred.center_offset += rng.normal(0, 0.2, pred.center_offset.shape).astype(np.float32)
        pred.keypoint_offsets += rng.normal(0, 0.2, pred.keypoint_offsets.shape).astype(np.float32)
        pred.width += rng.normal(0, 0.01, pred.width.shape).astype(np.float32)
        out = loss(pred, truth, cfg)
        oy, oo, oj, os_ = _loss_oracle(pred, truth, cfg)
        assert math.isclose(out.l_y, oy, rel_tol=0, abs_tol=1e-9)
        assert math.isclose(out.l_o, oo, abs_tol=1e-9)
        assert math.isclose(out.l_j, oj, abs_tol=1e-9)
        assert math.isclose(out.l_s, os_, abs_tol=1e-9)
        expected_total = (cfg.gamma_y * oy + cfg.gamma_o * oo
                          + cfg.gamma_j * oj + cfg.gamma_s * os_)
        assert math.isclose(out.total, expected_total, abs_tol=1e-9)


def test_loss_weight_linearity(cam):
    rng = np.random.default_rng(6)
    truth = _small_truth_maps(cam, rng)
    pred = truth.copy()
    pred.width = (pred.width + 0.01).astype(np.float32)
    ten = loss(pred, truth, LossConfig(gamma_s=10.0))
    five = loss(pred, truth, LossConfig(gamma_s=5.0))
    assert math.isclose(ten.total - five.total, 5.0 * ten.l_s, abs_tol=1e-12)


def test_loss_increases_under_peak_corruption(cam):
    rng = np.random.default_rng(7)
    truth = _small_truth_maps(cam, rng)
    base = loss(truth.copy(), truth, LossConfig())
    for m, cy, cx in truth_centers(truth)[:3]:
        pred = truth.copy()
        pred.heatmap[m, cy, cx] = 0.5
        corrupted = loss(pred, truth, LossConfig())
        assert corrupted.l_y > base.l_y
        assert corrupted.total > base.total


def test_loss_shape_mismatch(cam):
    truth = empty_maps(cam, BINNING, 4)
    pred = empty_maps(cam, OrientationBinning(5), 4)
    with pytest.raises(ShapeMismatch):
        loss(pred, truth, LossConfig())
