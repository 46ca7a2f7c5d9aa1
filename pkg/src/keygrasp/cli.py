"""Command-line entry points for dataset generation, decoding, and evaluation.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 internal error.
Flags override values from the config file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import jsonschema

from . import dataset as ds
from . import formats
from .config import RunConfig, config_from_dict, config_to_dict, load_config
from .metrics import MatchThresholds, THRESHOLD_LEVELS, ablate
from .scene import CameraSample, PlacementFailure, Scene, PlacedObject, render


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1 for usage problems
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_config_arg(parser):
    parser.add_argument("--config", help="JSON config file; flags override it")


def _build_parser() -> _Parser:
    parser = _Parser(prog="keygrasp",
                     description="Primitive-shape grasp dataset tooling")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", parents=[], help="generate a dataset tree")
    _add_config_arg(gen)
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--mode", choices=("paper", "single", "multi"),
                     default="paper",
                     help="paper runs the full protocol counts from config")
    gen.add_argument("--count", type=int,
                     help="scene count for --mode single/multi")
    gen.add_argument("--cameras", type=int, help="cameras per scene override")
    gen.add_argument("--no-images", action="store_true",
                     help="skip PNG rendering, labels only")

    dec = sub.add_parser("decode", help="decode label maps to grasp sets")
    _add_config_arg(dec)
    dec.add_argument("--maps", required=True,
                     help="dataset directory (with manifest.json) or one frame directory")
    dec.add_argument("--out", required=True)
    dec.add_argument("--template", choices=("box", "tetrahedron", "tail"))
    dec.add_argument("--pnp-method", choices=("ippe", "p3p", "epnp"))
    dec.add_argument("--threshold", type=float, help="heatmap threshold")
    dec.add_argument("--top-k", type=int)
    dec.add_argument("--scale-refine", action="store_true")
    dec.add_argument("--overlay", action="store_true",
                     help="draw keypoints over the color image")

    ev = sub.add_parser("evaluate", help="score predictions against a dataset")
    _add_config_arg(ev)
    ev.add_argument("--predictions", required=True)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--threshold-level", choices=("0", "1", "2", "all"),
                    default="all")

    ab = sub.add_parser("ablate", help="keypoint/solver ablation table")
    _add_config_arg(ab)
    ab.add_argument("--out", required=True)
    ab.add_argument("--seed", type=int, required=True)
    ab.add_argument("--sigmas", default="2.0",
                    help="comma-separated pixel noise levels")
    ab.add_argument("--trials", type=int, default=2000)
    ab.add_argument("--depth-range", default="0.5,1.5")

    rd = sub.add_parser("render", help="re-render one frame from a scene file")
    _add_config_arg(rd)
    rd.add_argument("--scene", required=True, help="scene.json path")
    rd.add_argument("--camera-index", type=int, default=0)
    rd.add_argument("--out", required=True, help="output directory")
    return parser


def _load_run_config(args, overrides: dict | None = None) -> RunConfig:
    overrides = dict(overrides or {})
    return load_config(getattr(args, "config", None), overrides)


def _cmd_generate(args) -> int:
    config = _load_run_config(args)
    data = config_to_dict(config)
    dataset_cfg = data.setdefault("dataset", {})
    if args.mode == "single":
        dataset_cfg["single_scenes"] = args.count if args.count is not None else 20
        dataset_cfg["multi_scenes"] = 0
    elif args.mode == "multi":
        dataset_cfg["multi_scenes"] = args.count if args.count is not None else 20
        dataset_cfg["single_scenes"] = 0
    elif args.count is not None:
        dataset_cfg["single_scenes"] = args.count
    if args.cameras is not None:
        dataset_cfg["cameras_per_scene"] = args.cameras
    config = config_from_dict(data)
    manifest = ds.generate_dataset(config, args.out, args.seed,
                                   render_images=not args.no_images)
    counts = manifest["counts"]
    print(f"wrote {counts['train_frames']} train / "
          f"{counts['test_single_frames']} single-test / "
          f"{counts['test_multi_frames']} multi-test frames to {args.out}")
    return 0


def _cmd_decode(args) -> int:
    overrides = {}
    if args.template:
        overrides["template"] = args.template
    if args.pnp_method:
        overrides["pnp_method"] = args.pnp_method
    if args.threshold is not None:
        overrides["heatmap_threshold"] = args.threshold
    if args.top_k is not None:
        overrides["top_k"] = args.top_k
    if args.scale_refine:
        overrides["scale_refine"] = True
    config = _load_run_config(args, overrides)
    if os.path.exists(os.path.join(args.maps, "manifest.json")):
        frame_ids = ds.decode_dataset(args.maps, args.out, config,
                                      overlay=args.overlay)
        print(f"decoded {len(frame_ids)} frames into {args.out}")
    else:
        candidates = ds.decode_frame_dir(args.maps, config)
        os.makedirs(args.out, exist_ok=True)
        formats.candidates_to_json(os.path.join(args.out, "grasps.json"),
                                   candidates)
        print(f"decoded {len(candidates)} grasps into {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    _load_run_config(args)  # validates the config file if given
    if args.threshold_level == "all":
        thresholds = [MatchThresholds(t, r) for t, r in THRESHOLD_LEVELS]
    else:
        t, r = THRESHOLD_LEVELS[int(args.threshold_level)]
        thresholds = [MatchThresholds(t, r)]
    report = ds.evaluate_predictions(args.predictions, args.dataset, thresholds)
    os.makedirs(args.out, exist_ok=True)
    formats.write_json_atomic(os.path.join(args.out, "metrics.json"),
                              ds.report_to_dict(report))
    text = ds.report_to_text(report)
    with open(os.path.join(args.out, "metrics.txt"), "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    print(text)
    return 0


def _cmd_ablate(args) -> int:
    config = _load_run_config(args)
    sigmas = tuple(float(s) for s in args.sigmas.split(","))
    depth_range = tuple(float(s) for s in args.depth_range.split(","))
    table = ablate(config.camera_model(), sigmas=sigmas, trials=args.trials,
                   depth_range=depth_range, seed=args.seed,
                   canonical_distance=config.canonical_distance)
    os.makedirs(args.out, exist_ok=True)
    payload = [{
        "template": c.template, "method": c.method, "sigma": c.sigma,
        "trials": c.trials, "failures": c.failures,
        "mean_dt": c.mean_dt, "median_dt": c.median_dt,
        "mean_dr": c.mean_dr, "median_dr": c.median_dr,
    } for c in table.cells]
    formats.write_json_atomic(os.path.join(args.out, "ablation.json"), payload)
    text = table.to_text()
    with open(os.path.join(args.out, "ablation.txt"), "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    print(text)
    return 0


def _cmd_render(args) -> int:
    config = _load_run_config(args)
    record = formats.read_scene_json(args.scene)
    objects = tuple(PlacedObject(obj["shape"], obj["pose"])
                    for obj in record["objects"])
    scene = Scene(objects, tuple(() for _ in objects), record["scene_id"],
                  record["seed"], record["mode"])
    frames = record["frames"]
    if not 0 <= args.camera_index < len(frames):
        raise formats.FormatError(
            f"camera index {args.camera_index} out of range 0..{len(frames) - 1}")
    camera = CameraSample(frames[args.camera_index]["world_to_camera"],
                          record["camera"])
    frame = render(scene, camera, config, frame_id=args.camera_index)
    os.makedirs(args.out, exist_ok=True)
    formats.write_color_png(os.path.join(args.out, "color.png"), frame.color)
    formats.write_depth_png(os.path.join(args.out, "depth.png"), frame.depth)
    print(f"rendered camera {args.camera_index} of {args.scene} into {args.out}")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "decode": _cmd_decode,
    "evaluate": _cmd_evaluate,
    "ablate": _cmd_ablate,
    "render": _cmd_render,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (formats.FormatError, formats.MissingFrame,
            json.JSONDecodeError, jsonschema.ValidationError,
            FileNotFoundError) as exc:
        print(f"keygrasp: data error: {exc}", file=sys.stderr)
        return 2
    except (PlacementFailure, AssertionError) as exc:
        print(f"keygrasp: internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
