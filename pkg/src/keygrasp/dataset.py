"""Dataset pipeline: generation, batch decoding, evaluation, noise sweeps.

Output tree layout:

    out/
      manifest.json                  written last, atomically
      config.json
      scenes/<scene>/scene.json
      scenes/<scene>/frames/cam<j>/{color.png, depth.png, y|o|j|s.kgnt}

The manifest indexes every emitted file and records per-frame encoder
statistics (annotation, encoded, and drop counts).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import formats
from .codec import DecodeConfig, decode, rank
from .config import RunConfig, config_hash, config_to_dict
from .geometry import keypoint_template
from .metrics import (
    EvalFrame,
    MatchThresholds,
    MetricsReport,
    NoiseModel,
    ObjectTruth,
    compute_metrics,
    oracle_detect,
)
from .scene import PlacementFailure, camera_frame_annotations, generate_scene, render, sample_cameras
from .codec import encode

_RETRIES = 10


def derived_seed(master_seed: int, *key: int) -> int:
    """Stable, well-mixed integer seed for one stream of the pipeline."""
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(key))
    return int(seq.generate_state(1, np.uint64)[0])


def plan_counts(config: RunConfig) -> dict:
    """Frame counts implied by the dataset protocol, before any generation."""
    ds = config.dataset
    train_scenes = int(round(ds.single_scenes * ds.train_fraction))
    test_scenes = ds.single_scenes - train_scenes
    return {
        "train_scenes": train_scenes,
        "test_single_scenes": test_scenes,
        "multi_scenes": ds.multi_scenes,
        "train_frames": train_scenes * ds.cameras_per_scene,
        "test_single_frames": test_scenes * ds.cameras_per_scene,
        "test_multi_frames": ds.multi_scenes * ds.cameras_per_scene,
    }


def _generate_scene_with_retries(master_seed: int, stream: int, index: int,
                                 mode: str, config: RunConfig, grid):
    scene_name = f"{mode}_{index:06d}"
    for retry in range(_RETRIES):
        seed = derived_seed(master_seed, stream, index, retry)
        try:
            return generate_scene(seed, mode, config, grid=grid, scene_id=index)
        except PlacementFailure:
            continue
    raise PlacementFailure(f"scene {scene_name} failed after {_RETRIES} retries")


def generate_dataset(config: RunConfig, out_dir: str, master_seed: int,
                     render_images: bool = True) -> dict:
    """Generate the full dataset tree and return the manifest mapping."""
    os.makedirs(out_dir, exist_ok=True)
    cam = config.camera_model()
    binning = config.binning()
    template = keypoint_template(config.template, config.canonical_distance)
    ds = config.dataset
    plan = plan_counts(config)

    files: list[str] = []
    frame_entries: list[dict] = []

    formats.write_json_atomic(os.path.join(out_dir, "config.json"),
                              config_to_dict(config))
    files.append("config.json")

    jobs = ([("single", i) for i in range(ds.single_scenes)]
            + [("multi", i) for i in range(ds.multi_scenes)])
    for mode, index in jobs:
        if mode == "single":
            train = index < plan["train_scenes"]
            split = "train" if train else "test_single"
            grid = ds.train_grid if train else ds.test_grid
            stream = 0
        else:
            split = "test_multi"
            grid = ds.test_grid
            stream = 1
        scene_name = f"{mode}_{index:06d}"
        scene = _generate_scene_with_retries(master_seed, stream, index,
                                             mode, config, grid)
        cameras = sample_cameras(derived_seed(master_seed, 2 + stream, index),
                                 ds.cameras_per_scene, config)

        scene_dir = os.path.join(out_dir, "scenes", scene_name)
        os.makedirs(scene_dir, exist_ok=True)
        rel_scene_json = os.path.join("scenes", scene_name, "scene.json")
        formats.write_scene_json(os.path.join(out_dir, rel_scene_json),
                                 scene, cam, cameras)
        files.append(rel_scene_json)

        for cam_idx, camera in enumerate(cameras):
            frame_id = f"{scene_name}_cam{cam_idx}"
            rel_frame_dir = os.path.join("scenes", scene_name, "frames",
                                         f"cam{cam_idx}")
            frame_dir = os.path.join(out_dir, rel_frame_dir)
            os.makedirs(frame_dir, exist_ok=True)

            per_object = camera_frame_annotations(scene, camera)
            flat = [ann for obj_anns in per_object for ann in obj_anns]
            maps, stats = encode(flat, cam, template, binning,
                                 config.stride, config.splat_sigma)
            formats.write_label_maps(frame_dir, maps)
            frame_files = {name: os.path.join(rel_frame_dir, fname)
                           for name, fname in (("heatmap", "y.kgnt"),
                                               ("center_offset", "o.kgnt"),
                                               ("keypoint_offsets", "j.kgnt"),
                                               ("width", "s.kgnt"))}
            if render_images:
                frame = render(scene, camera, config, frame_id=cam_idx)
                formats.write_color_png(os.path.join(frame_dir, "color.png"),
                                        frame.color)
                formats.write_depth_png(os.path.join(frame_dir, "depth.png"),
                                        frame.depth)
                frame_files["color"] = os.path.join(rel_frame_dir, "color.png")
                frame_files["depth"] = os.path.join(rel_frame_dir, "depth.png")
            files.extend(sorted(frame_files.values()))
            frame_entries.append({
                "frame_id": frame_id,
                "scene": scene_name,
                "scene_json": rel_scene_json,
                "camera_index": cam_idx,
                "split": split,
                "files": frame_files,
                "annotations": stats.total,
                "encoded": stats.encoded,
                "dropped_duplicate": stats.dropped_duplicate,
                "dropped_offimage": stats.dropped_offimage,
            })

    split_counts = {"train": 0, "test_single": 0, "test_multi": 0}
    for entry in frame_entries:
        split_counts[entry["split"]] += 1
    manifest = {
        "master_seed": master_seed,
        "config_hash": config_hash(config),
        "split_fraction": ds.train_fraction,
        "densities": {"train": list(ds.train_grid), "test": list(ds.test_grid)},
        "counts": {
            "single_scenes": ds.single_scenes,
            "multi_scenes": ds.multi_scenes,
            "cameras_per_scene": ds.cameras_per_scene,
            "train_frames": split_counts["train"],
            "test_single_frames": split_counts["test_single"],
            "test_multi_frames": split_counts["test_multi"],
        },
        "frames": frame_entries,
        "files": sorted(files),
    }
    formats.write_json_atomic(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest


# ---------------------------------------------------------------------------
# decoding
# ---------------------------------------------------------------------------

def decode_config_from_run(config: RunConfig) -> DecodeConfig:
    return DecodeConfig(
        template=keypoint_template(config.template, config.canonical_distance),
        method=config.pnp_method,
        threshold=config.heatmap_threshold,
        top_k=config.top_k,
        scale_refine=config.scale_refine,
        refine_variant=config.scale_refine_variant,
    )


def decode_frame_dir(frame_dir: str, config: RunConfig):
    """Decode one frame directory of KGNT maps into ranked candidates."""
    maps = formats.read_label_maps(frame_dir, config.stride)
    depth = None
    depth_path = os.path.join(frame_dir, "depth.png")
    if config.scale_refine and os.path.exists(depth_path):
        depth = formats.read_depth_png(depth_path)
    result = decode(maps, config.camera_model(), decode_config_from_run(config),
                    depth=depth)
    return rank(result.candidates, config.score_reprojection_weight)


def decode_dataset(dataset_dir: str, out_dir: str, config: RunConfig,
                   overlay: bool = False) -> list:
    """Decode every frame in a dataset tree; returns the frame id list."""
    manifest = formats.read_json(os.path.join(dataset_dir, "manifest.json"))
    os.makedirs(out_dir, exist_ok=True)
    frame_ids = []
    for entry in manifest["frames"]:
        frame_dir = os.path.dirname(
            os.path.join(dataset_dir, entry["files"]["heatmap"]))
        candidates = decode_frame_dir(frame_dir, config)
        pred_dir = os.path.join(out_dir, entry["frame_id"])
        os.makedirs(pred_dir, exist_ok=True)
        formats.candidates_to_json(os.path.join(pred_dir, "grasps.json"),
                                   candidates)
        if overlay and "color" in entry["files"]:
            _write_overlay(os.path.join(dataset_dir, entry["files"]["color"]),
                           os.path.join(pred_dir, "overlay.png"),
                           candidates, config)
        frame_ids.append(entry["frame_id"])
    return frame_ids


def _write_overlay(color_path: str, out_path: str, candidates, config: RunConfig):
    from PIL import Image, ImageDraw

    from .geometry import pose_apply, project_many

    template = keypoint_template(config.template, config.canonical_distance)
    cam = config.camera_model()
    image = Image.open(color_path).convert("RGB")
    draw = ImageDraw.Draw(image)
    for c in candidates:
        pts = pose_apply(c.pose, template.points)
        if np.any(pts[:, 2] <= 1e-9):
            continue
        px = project_many(cam, pts)
        center = project_many(cam, c.pose.translation[None])[0]
        for p in px:
            draw.line([tuple(center), tuple(p)], fill=(0, 200, 255), width=1)
            draw.ellipse([p[0] - 2, p[1] - 2, p[0] + 2, p[1] + 2],
                         outline=(255, 0, 255))
        draw.ellipse([center[0] - 3, center[1] - 3, center[0] + 3, center[1] + 3],
                     outline=(0, 255, 0))
    image.save(out_path)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def ground_truth_frames(dataset_dir: str, manifest: dict) -> dict:
    """frame_id -> list[ObjectTruth] with camera-frame ground-truth poses."""
    scene_cache: dict[str, dict] = {}
    out = {}
    for entry in manifest["frames"]:
        scene_path = os.path.join(dataset_dir, entry["scene_json"])
        if scene_path not in scene_cache:
            scene_cache[scene_path] = formats.read_scene_json(scene_path)
        record = scene_cache[scene_path]
        world_to_cam = record["frames"][entry["camera_index"]]["world_to_camera"]
        objects = []
        for obj in record["objects"]:
            obj_to_cam = world_to_cam.compose(obj["pose"])
            poses = tuple(obj_to_cam.compose(g["pose"]) for g in obj["grasps"])
            objects.append(ObjectTruth(obj["kind"], poses))
        out[entry["frame_id"]] = objects
    return out


def evaluate_predictions(pred_dir: str, dataset_dir: str,
                         thresholds=None) -> MetricsReport:
    """Match prediction files against dataset ground truth, pooled counts."""
    manifest = formats.read_json(os.path.join(dataset_dir, "manifest.json"))
    truth = ground_truth_frames(dataset_dir, manifest)
    missing = [fid for fid in truth
               if not os.path.exists(os.path.join(pred_dir, fid, "grasps.json"))]
    if missing:
        raise formats.MissingFrame(f"no predictions for: {', '.join(missing)}")
    frames = []
    for frame_id, objects in truth.items():
        candidates = formats.candidates_from_json(
            os.path.join(pred_dir, frame_id, "grasps.json"))
        frames.append(EvalFrame(tuple(c.pose for c in candidates),
                                tuple(objects)))
    return compute_metrics(frames, thresholds)


def encodable_fraction(manifest: dict) -> float:
    """Dataset-wide fraction of annotations that survived encoding."""
    total = sum(e["annotations"] for e in manifest["frames"])
    encoded = sum(e["encoded"] for e in manifest["frames"])
    return encoded / total if total else 1.0


def report_to_dict(report: MetricsReport) -> dict:
    levels = []
    for level in report.levels:
        levels.append({
            "eps_t_m": level.thresholds.eps_t,
            "eps_r_deg": math.degrees(level.thresholds.eps_r),
            "gsr": level.gsr,
            "gcr": level.gcr,
            "osr": level.osr,
            "counts": {
                "predictions": level.predictions,
                "matched_predictions": level.matched_predictions,
                "ground_truth": level.ground_truth,
                "matched_ground_truth": level.matched_ground_truth,
                "objects": level.objects,
                "matched_objects": level.matched_objects,
            },
            "per_kind": {kind: {"gcr": ks.gcr, "osr": ks.osr,
                                "ground_truth": ks.ground_truth,
                                "objects": ks.objects}
                         for kind, ks in sorted(level.per_kind.items())},
        })
    return {"frames": report.frames, "skipped_frames": report.skipped_frames,
            "levels": levels}


def report_to_text(report: MetricsReport) -> str:
    header = f"{'threshold':<16} {'GSR% / GCR% / OSR%':>24}"
    lines = [header, "-" * len(header)]
    for level in report.levels:
        label = (f"{100 * level.thresholds.eps_t:.0f}cm + "
                 f"{math.degrees(level.thresholds.eps_r):.0f}deg")
        lines.append(f"{label:<16} {level.gsr:7.2f} / {level.gcr:6.2f} / "
                     f"{level.osr:6.2f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# oracle noise sweep
# ---------------------------------------------------------------------------

def noise_sweep(config: RunConfig, sigmas, num_scenes: int, master_seed: int,
                cameras_per_scene: int = 1, drop_prob: float = 0.0,
                confidence_amplitude: float = 0.0,
                grid=(5, 11), top_k: int | None = None) -> dict:
    """GSR/GCR/OSR across oracle noise levels with paired scenes and seeds."""
    cam = config.camera_model()
    binning = config.binning()
    template = keypoint_template(config.template, config.canonical_distance)
    decode_cfg = decode_config_from_run(config)
    if top_k is not None:
        from dataclasses import replace
        decode_cfg = replace(decode_cfg, top_k=top_k)

    prepared = []
    for i in range(num_scenes):
        scene = _generate_scene_with_retries(master_seed, 4, i, "single",
                                             config, grid)
        cameras = sample_cameras(derived_seed(master_seed, 5, i),
                                 cameras_per_scene, config)
        for camera in cameras:
            per_object = camera_frame_annotations(scene, camera)
            kinds = [p.shape.kind for p in scene.objects]
            prepared.append((per_object, kinds, camera))

    rows = []
    for sigma in sigmas:
        noise = NoiseModel(sigma, drop_prob, confidence_amplitude)
        frames = []
        for frame_idx, (per_object, kinds, camera) in enumerate(prepared):
            flat = [ann for obj in per_object for ann in obj]
            maps, _ = oracle_detect(flat, cam, template, binning, noise,
                                    seed=derived_seed(master_seed, 6, frame_idx))
            result = decode(maps, cam, decode_cfg)
            objects = tuple(
                ObjectTruth(kind, tuple(a.pose for a in obj_anns))
                for kind, obj_anns in zip(kinds, per_object))
            frames.append(EvalFrame(tuple(c.pose for c in result.candidates),
                                    objects))
        report = compute_metrics(frames)
        rows.append({"sigma": float(sigma), "report": report_to_dict(report)})
    return {"master_seed": master_seed, "num_scenes": num_scenes, "rows": rows}
