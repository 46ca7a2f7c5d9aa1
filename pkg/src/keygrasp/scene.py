"""Randomized tabletop scenes and analytic RGB-D rendering.

Scenes place primitive shapes on the z=0 table plane in stable poses, attach
collision-filtered grasp annotations, and render by casting one pinhole ray
per pixel against the table and every primitive.  Everything is a pure
function of (seed, config).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .families import GraspAnnotation, collision_filter, families_of, sample_grid
from .geometry import (
    CameraModel,
    NonPositiveDepth,
    Pose,
    canonical_flip,
    rot_x,
    rot_y,
    rot_z,
)
from .shapes import (
    SHAPE_KINDS,
    Cuboid,
    Cylinder,
    PrimitiveShape,
    Ring,
    SemiSphere,
    Sphere,
    Stick,
    ray_intersect_batch,
    surface_points,
)

MODES = ("single", "multi")

_PLACEMENT_ATTEMPTS = 200
_OBJECT_SAMPLE_SPACING = 0.004


class PlacementFailure(RuntimeError):
    """Rejection sampling could not place an object without penetration."""


@dataclass(frozen=True)
class PlacedObject:
    shape: PrimitiveShape
    pose: Pose  # object-to-world


@dataclass(frozen=True)
class Scene:
    objects: tuple  # of PlacedObject
    annotations: tuple  # per object, tuple of GraspAnnotation (object frame)
    scene_id: int
    seed: int
    mode: str


@dataclass(frozen=True)
class CameraSample:
    pose: Pose  # world-to-camera
    cam: CameraModel


@dataclass(frozen=True)
class RenderedFrame:
    color: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) float meters, 0 where nothing was hit
    frame_id: int


def scene_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Deterministic per-stream generator derived from a master seed."""
    return np.random.default_rng(np.random.SeedSequence(entropy=master_seed,
                                                        spawn_key=tuple(key)))


def _uniform(rng, lo_hi) -> float:
    return float(rng.uniform(lo_hi[0], lo_hi[1]))


def sample_shape(rng: np.random.Generator, kind: str, config: RunConfig) -> PrimitiveShape:
    sizes = config.sizes
    color = tuple(rng.uniform(0.1, 0.9, size=3))
    if kind == "cylinder":
        return Cylinder(_uniform(rng, sizes.cylinder_radius),
                        _uniform(rng, sizes.cylinder_height), color)
    if kind == "ring":
        return Ring(_uniform(rng, sizes.ring_major_radius),
                    _uniform(rng, sizes.ring_minor_radius), color)
    if kind == "stick":
        return Stick(_uniform(rng, sizes.stick_radius),
                     _uniform(rng, sizes.stick_length), color)
    if kind == "sphere":
        return Sphere(_uniform(rng, sizes.sphere_radius), color)
    if kind == "semisphere":
        return SemiSphere(_uniform(rng, sizes.semisphere_radius), color)
    if kind == "cuboid":
        return Cuboid(tuple(rng.uniform(*sizes.cuboid_half_extent, size=3)), color)
    raise ValueError(f"unknown shape kind {kind!r}")


def stable_orientation(rng: np.random.Generator, shape: PrimitiveShape):
    """Uniform pick from the kind's stable resting set, then uniform yaw.

    Returns (rotation, rest height of the object origin above the table).
    """
    yaw = rot_z(float(rng.uniform(0.0, 2 * math.pi)))
    match shape:
        case Cylinder(radius=r, height=h):
            if rng.integers(2) == 0:
                return yaw, h / 2  # upright
            return yaw @ rot_y(math.pi / 2), r  # lying, axis horizontal
        case Stick(radius=r):
            return yaw @ rot_y(math.pi / 2), r
        case Sphere(radius=r):
            return yaw, r
        case SemiSphere():
            return yaw, 0.0  # flat face down, origin at the face center
        case Cuboid(half_extents=he):
            axis = int(rng.integers(3))
            base = (rot_y(math.pi / 2), rot_x(math.pi / 2), np.eye(3))[axis]
            return yaw @ base, he[axis]
        case Ring(minor_radius=rt):
            return yaw, rt
    raise TypeError(f"unknown shape {shape!r}")


def _annotate(objects: list[PlacedObject], grid: tuple, config: RunConfig):
    gripper = config.gripper()
    per_object = []
    for idx, placed in enumerate(objects):
        anns = []
        for family in families_of(placed.shape, config.gripper_max_width,
                                  config.include_cylinder_top):
            anns.extend(sample_grid(family, grid[0], grid[1]))
        kept = collision_filter(anns, [(p.shape, p.pose) for p in objects],
                                idx, gripper, table_z=0.0)
        per_object.append(tuple(kept))
    return tuple(per_object)


def generate_scene(seed: int, mode: str, config: RunConfig,
                   grid: tuple = (5, 11), scene_id: int = 0) -> Scene:
    """Build one scene: shapes, stable placement, filtered grasp annotations.

    Single mode draws one shape kind uniformly; multi mode places one object
    of every kind with rejection sampling against interpenetration.  Raises
    PlacementFailure after 200 rejected placements for one object.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    rng = scene_rng(seed)
    if mode == "single":
        kinds = [SHAPE_KINDS[int(rng.integers(len(SHAPE_KINDS)))]]
        place_radius = 0.35 * config.workspace_radius
    else:
        kinds = list(SHAPE_KINDS)
        place_radius = 0.6 * config.workspace_radius

    objects: list[PlacedObject] = []
    samples_world: list[np.ndarray] = []
    for kind in kinds:
        shape = sample_shape(rng, kind, config)
        rotation, rest_z = stable_orientation(rng, shape)
        local_pts = surface_points(shape, _OBJECT_SAMPLE_SPACING)
        placed = False
        for _ in range(_PLACEMENT_ATTEMPTS):
            radius = place_radius * math.sqrt(float(rng.uniform()))
            theta = float(rng.uniform(0.0, 2 * math.pi))
            pose = Pose(rotation, [radius * math.cos(theta),
                                   radius * math.sin(theta), rest_z])
            pts_w = local_pts @ pose.rotation.T + pose.translation
            if _penetrates(pts_w, objects, samples_world, pose, shape):
                continue
            objects.append(PlacedObject(shape, pose))
            samples_world.append(pts_w)
            placed = True
            break
        if not placed:
            raise PlacementFailure(f"could not place {kind} in scene seed {seed}")

    annotations = _annotate(objects, grid, config)
    return Scene(tuple(objects), annotations, scene_id, seed, mode)


def _penetrates(new_pts_w, objects, samples_world, new_pose, new_shape) -> bool:
    from .shapes import signed_distance

    for placed, pts_w in zip(objects, samples_world):
        inv = placed.pose.inverse()
        local = new_pts_w @ inv.rotation.T + inv.translation
        if np.any(signed_distance(placed.shape, local) < -1e-6):
            return True
        inv_new = new_pose.inverse()
        other_local = pts_w @ inv_new.rotation.T + inv_new.translation
        if np.any(signed_distance(new_shape, other_local) < -1e-6):
            return True
    return False


def sample_cameras(seed: int, n: int, config: RunConfig) -> list[CameraSample]:
    """Upper-hemisphere camera poses looking at the jittered workspace center."""
    if n < 1:
        raise ValueError("need at least one camera")
    rng = scene_rng(seed, 1)
    cs = config.camera_sampling
    cam = config.camera_model()
    out = []
    for _ in range(n):
        radius = _uniform(rng, cs.radius_range)
        elev = math.radians(_uniform(rng, cs.elevation_range_deg))
        azim = float(rng.uniform(0.0, 2 * math.pi))
        position = radius * np.array([math.cos(elev) * math.cos(azim),
                                      math.cos(elev) * math.sin(azim),
                                      math.sin(elev)])
        offset = rng.uniform(-1.0, 1.0, size=3)
        while np.linalg.norm(offset) > 1.0:
            offset = rng.uniform(-1.0, 1.0, size=3)
        look_at = cs.lookat_jitter * offset
        forward = look_at - position
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.array([0.0, 0.0, 1.0]))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        roll = math.radians(float(rng.uniform(-cs.roll_jitter_deg, cs.roll_jitter_deg)))
        cr, sr = math.cos(roll), math.sin(roll)
        x_cam = cr * right + sr * down
        y_cam = -sr * right + cr * down
        r_wc = np.stack([x_cam, y_cam, forward], axis=0)
        out.append(CameraSample(Pose(r_wc, -r_wc @ position), cam))
    return out


def _pixel_rays(cam: CameraModel):
    u = np.arange(cam.width, dtype=float)
    v = np.arange(cam.height, dtype=float)
    uu, vv = np.meshgrid(u, v, indexing="xy")
    xn = (uu - cam.cx) / cam.fx
    yn = (vv - cam.cy) / cam.fy
    dirs = np.stack([xn, yn, np.ones_like(xn)], axis=-1)
    norms = np.linalg.norm(dirs, axis=-1, keepdims=True)
    return (dirs / norms).reshape(-1, 3), (1.0 / norms).reshape(-1)


def render(scene: Scene, camera: CameraSample, config: RunConfig,
           frame_id: int = 0) -> RenderedFrame:
    """Nearest-hit ray cast over the table plane and all scene objects.

    Depth stores the camera-frame z of the hit (projective depth); color is
    the surface albedo shaded by a single directional light.
    """
    cam = camera.cam
    cam_to_world = camera.pose.inverse()
    origin_w = cam_to_world.translation
    dirs_cam, z_factors = _pixel_rays(cam)
    dirs_w = dirs_cam @ cam_to_world.rotation.T

    n_rays = len(dirs_w)
    best_t = np.full(n_rays, np.inf)
    normals_w = np.zeros((n_rays, 3))
    albedo = np.zeros((n_rays, 3))

    # Table plane z = 0 with a checker albedo.
    dz = dirs_w[:, 2]
    t_table = np.where(dz < -1e-12, -origin_w[2] / np.where(dz < -1e-12, dz, 1.0), np.inf)
    table_hit = np.isfinite(t_table) & (t_table > 1e-9)
    best_t = np.where(table_hit, t_table, np.inf)
    normals_w[table_hit] = (0.0, 0.0, 1.0)
    pts = origin_w + t_table[table_hit, None] * dirs_w[table_hit]
    checker = (np.floor(pts[:, 0] / config.table_checker)
               + np.floor(pts[:, 1] / config.table_checker)).astype(int) % 2
    table_albedo = np.where(checker[:, None] == 0, 0.75, 0.35)
    albedo[table_hit] = table_albedo

    for placed in scene.objects:
        inv = placed.pose.inverse()
        origins_o = np.broadcast_to(inv.rotation @ origin_w + inv.translation,
                                    (n_rays, 3))
        dirs_o = dirs_w @ inv.rotation.T
        t, normals_o = ray_intersect_batch(placed.shape, origins_o, dirs_o)
        closer = t < best_t
        if not np.any(closer):
            continue
        best_t = np.where(closer, t, best_t)
        normals_w[closer] = normals_o[closer] @ placed.pose.rotation.T
        albedo[closer] = placed.shape.color

    hit = np.isfinite(best_t)
    depth = np.where(hit, best_t * z_factors, 0.0)

    light = np.asarray(config.light_direction, dtype=float)
    light = light / np.linalg.norm(light)
    lambert = np.clip(normals_w @ (-light), 0.0, 1.0)
    color = np.clip(albedo * lambert[:, None] * 255.0, 0.0, 255.0)
    color = np.where(hit[:, None], color, 0.0).astype(np.uint8)

    h, w = cam.height, cam.width
    return RenderedFrame(color.reshape(h, w, 3), depth.reshape(h, w), frame_id)


def camera_frame_annotations(scene: Scene, camera: CameraSample,
                             flip: bool = True):
    """Per-object grasp annotations transformed into the camera frame.

    Poses are conditionally flipped so the projected jaw axis points left,
    matching the label encoder's expectations.  Grasps whose origin falls
    behind the camera are kept unflipped; the encoder drops them later.
    """
    out = []
    for placed, anns in zip(scene.objects, scene.annotations):
        obj_to_cam = camera.pose.compose(placed.pose)
        cam_anns = []
        for ann in anns:
            pose_cam = obj_to_cam.compose(ann.pose)
            if flip:
                try:
                    pose_cam = canonical_flip(camera.cam, pose_cam)
                except NonPositiveDepth:
                    pass
            cam_anns.append(GraspAnnotation(pose_cam, ann.width, ann.family_id,
                                            ann.u, ann.v))
        out.append(cam_anns)
    return out
