"""Persistent file formats: KGNT tensors, PNG images, scene and grasp JSON.

All contracts are bit-exact: tensors are little-endian f32 binaries, depth
PNGs store millimeters in 16 bits (0 = no hit), and JSON floats rely on
Python's shortest round-trip repr, so write-then-read reproduces in-memory
values exactly (depth excepted by its documented 1 mm quantization floor).
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np
from PIL import Image

from .codec import GraspCandidate, LabelMaps
from .geometry import CameraModel, Pose
from .shapes import shape_dims, shape_from_dims

KGNT_MAGIC = b"KGNT"
KGNT_VERSION = 1

_HEADER = struct.Struct("<4sBIII")


class FormatError(ValueError):
    """Malformed file; byte_offset points at the offending location."""

    def __init__(self, message: str, byte_offset: int = 0):
        super().__init__(f"{message} (byte offset {byte_offset})")
        self.byte_offset = byte_offset


class MissingFrame(ValueError):
    """Frame ids present on one side of an evaluation but not the other."""


# ---------------------------------------------------------------------------
# KGNT tensor container
# ---------------------------------------------------------------------------

def write_kgnt(path, array: np.ndarray):
    """Channel-major f32 tensor with a 17-byte header."""
    data = np.ascontiguousarray(array, dtype="<f4")
    if data.ndim != 3:
        raise ValueError("KGNT stores (channels, height, width) tensors")
    c, h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(KGNT_MAGIC, KGNT_VERSION, c, h, w))
        fh.write(data.tobytes())


def read_kgnt(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise FormatError("truncated header", len(header))
        magic, version, c, h, w = _HEADER.unpack(header)
        if magic != KGNT_MAGIC:
            raise FormatError(f"bad magic {magic!r}", 0)
        if version != KGNT_VERSION:
            raise FormatError(f"unsupported version {version}", 4)
        payload = fh.read()
    expected = 4 * c * h * w
    if len(payload) != expected:
        raise FormatError(
            f"payload is {len(payload)} bytes, expected {expected}",
            _HEADER.size + min(len(payload), expected))
    return np.frombuffer(payload, dtype="<f4").reshape(c, h, w).copy()


_MAP_FILES = {"heatmap": "y.kgnt", "center_offset": "o.kgnt",
              "keypoint_offsets": "j.kgnt", "width": "s.kgnt"}


def write_label_maps(directory, maps: LabelMaps):
    os.makedirs(directory, exist_ok=True)
    for attr, name in _MAP_FILES.items():
        write_kgnt(os.path.join(directory, name), getattr(maps, attr))


def read_label_maps(directory, stride: int) -> LabelMaps:
    arrays = {attr: read_kgnt(os.path.join(directory, name))
              for attr, name in _MAP_FILES.items()}
    return LabelMaps(stride=stride, **arrays)


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------

def write_color_png(path, color: np.ndarray):
    Image.fromarray(np.asarray(color, dtype=np.uint8), mode="RGB").save(path)


def read_color_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def write_depth_png(path, depth_m: np.ndarray):
    """Depth in meters to 16-bit millimeters; zero stays exactly zero."""
    mm = np.clip(np.round(np.asarray(depth_m, dtype=float) * 1000.0), 0, 65535)
    Image.fromarray(mm.astype(np.uint16)).save(path)


def read_depth_png(path) -> np.ndarray:
    raw = np.asarray(Image.open(path), dtype=np.uint16)
    return raw.astype(float) / 1000.0


# ---------------------------------------------------------------------------
# JSON formats
# ---------------------------------------------------------------------------

def pose_to_list(pose: Pose) -> list:
    return [float(v) for v in pose.rotation.reshape(-1)] + \
           [float(v) for v in pose.translation]


def pose_from_list(values) -> Pose:
    if len(values) != 12:
        raise FormatError("pose needs 12 numbers")
    arr = np.asarray(values, dtype=float)
    return Pose(arr[:9].reshape(3, 3), arr[9:])


def camera_to_dict(cam: CameraModel) -> dict:
    return {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "width": cam.width, "height": cam.height}


def camera_from_dict(data: dict) -> CameraModel:
    return CameraModel(data["fx"], data["fy"], data["cx"], data["cy"],
                       data["width"], data["height"])


def scene_to_dict(scene, cam: CameraModel, camera_samples) -> dict:
    objects = []
    for placed, anns in zip(scene.objects, scene.annotations):
        objects.append({
            "kind": placed.shape.kind,
            "dims": shape_dims(placed.shape),
            "color": [float(c) for c in placed.shape.color],
            "pose": pose_to_list(placed.pose),
            "grasps": [{
                "pose": pose_to_list(a.pose),
                "width": float(a.width),
                "family": a.family_id,
                "u": float(a.u),
                "v": float(a.v),
            } for a in anns],
        })
    return {
        "scene_id": scene.scene_id,
        "seed": scene.seed,
        "mode": scene.mode,
        "objects": objects,
        "camera": camera_to_dict(cam),
        "frames": [{"camera_index": i, "world_to_camera": pose_to_list(cs.pose)}
                   for i, cs in enumerate(camera_samples)],
    }


def write_scene_json(path, scene, cam, camera_samples):
    _write_json(path, scene_to_dict(scene, cam, camera_samples))


def read_scene_json(path) -> dict:
    """Scene record with poses decoded; shapes rebuilt from their dims."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    for obj in data["objects"]:
        obj["shape"] = shape_from_dims(obj["kind"], obj["dims"],
                                       tuple(obj["color"]))
        obj["pose"] = pose_from_list(obj["pose"])
        for g in obj["grasps"]:
            g["pose"] = pose_from_list(g["pose"])
    data["camera"] = camera_from_dict(data["camera"])
    for frame in data["frames"]:
        frame["world_to_camera"] = pose_from_list(frame["world_to_camera"])
    return data


def candidates_to_json(path, candidates):
    _write_json(path, [{
        "pose": pose_to_list(c.pose),
        "width": float(c.width),
        "score": None if c.score is None else float(c.score),
        "confidence": float(c.confidence),
        "reprojection_error": float(c.reprojection_error),
        "orientation_class": int(c.orientation_class),
    } for c in candidates])


def candidates_from_json(path) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    out = []
    for entry in data:
        out.append(GraspCandidate(
            pose=pose_from_list(entry["pose"]),
            width=entry["width"],
            confidence=entry["confidence"],
            reprojection_error=entry["reprojection_error"],
            orientation_class=entry["orientation_class"],
            score=entry.get("score")))
    return out


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def write_json_atomic(path, payload):
    """Write-temp-then-rename, for files that must never be seen half done."""
    tmp = f"{path}.tmp"
    _write_json(tmp, payload)
    os.replace(tmp, path)


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
