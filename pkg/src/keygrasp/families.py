"""Parametric grasp families for the six primitive shapes.

Each family exposes one translational scalar u and one rotational scalar v
and maps (u, v) to an object-frame gripper pose plus an open width.  Families
whose location parameter is an angle (ring, semi-sphere) still occupy the
translational slot: it indexes where on the object the grasp sits, while v
always changes orientation at a fixed location.

Conservative Lipschitz rates of each family map (meters respectively radians
of pose motion per unit parameter) drive the covering sampler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import Pose, axis_rotation, rot_z
from .shapes import (
    Cuboid,
    Cylinder,
    PrimitiveShape,
    Ring,
    SemiSphere,
    Sphere,
    Stick,
    signed_distance,
)

# Interval margin keeping fingertips away from shape edges.
EDGE_MARGIN = 0.01

# Semi-sphere pinch line sits this fraction of the radius above the base.
SEMISPHERE_PINCH_HEIGHT = 0.05

_TWO_PI = 2 * math.pi


@dataclass(frozen=True)
class GraspAnnotation:
    """Object-frame grasp pose with open width and sampling provenance."""

    pose: Pose
    width: float
    family_id: str
    u: float
    v: float


@dataclass(frozen=True)
class GraspFamily:
    """Continuous two-parameter grasp space attached to one shape instance."""

    shape: PrimitiveShape
    family_id: str
    u_range: tuple  # (lo, hi); lo == hi marks a degenerate parameter
    v_range: tuple
    u_periodic: bool
    v_periodic: bool
    width: float
    pose_at: Callable[[float, float], Pose]
    # Lipschitz rates: translation (m) and rotation (rad) per unit u and v.
    rate_t_u: float
    rate_r_u: float
    rate_t_v: float
    rate_r_v: float
    # A periodic grid convention does not imply the pose map wraps: domains
    # folded by the jaw symmetry (span pi) sample half-open but their raw
    # rotation distance does not wrap around the fold.
    v_wraps: bool = True

    @property
    def u_degenerate(self) -> bool:
        return self.u_range[0] == self.u_range[1]

    @property
    def v_degenerate(self) -> bool:
        return self.v_range[0] == self.v_range[1]

    def annotation(self, u: float, v: float) -> GraspAnnotation:
        return GraspAnnotation(self.pose_at(u, v), self.width, self.family_id, u, v)


@dataclass(frozen=True)
class GripperModel:
    """Box model of a parallel-jaw gripper for collision checks.

    The frame origin sits at the fingertip midpoint; fingers extend backward
    along -x with inner faces at +-width/2 along y; the palm closes the back.
    """

    max_width: float = 0.085
    finger_length: float = 0.04
    finger_thickness: float = 0.01
    finger_height: float = 0.02
    palm_depth: float = 0.02
    palm_width: float = 0.10
    palm_height: float = 0.04
    sample_spacing: float = 0.002  # one point per spacing^2 of box surface

    def surface_points(self, width: float) -> np.ndarray:
        """Deterministic surface samples of both fingers and the palm."""
        boxes = [
            # (x0, x1, y0, y1, z0, z1)
            (-self.finger_length, 0.0, width / 2, width / 2 + self.finger_thickness,
             -self.finger_height / 2, self.finger_height / 2),
            (-self.finger_length, 0.0, -width / 2 - self.finger_thickness, -width / 2,
             -self.finger_height / 2, self.finger_height / 2),
            (-self.finger_length - self.palm_depth, -self.finger_length,
             -self.palm_width / 2, self.palm_width / 2,
             -self.palm_height / 2, self.palm_height / 2),
        ]
        return np.vstack([self._box_surface(b) for b in boxes])

    def _box_surface(self, bounds) -> np.ndarray:
        x0, x1, y0, y1, z0, z1 = bounds
        lo = np.array([x0, y0, z0])
        hi = np.array([x1, y1, z1])
        pts = []
        for axis in range(3):
            rest = [k for k in range(3) if k != axis]
            n0 = max(2, int(round((hi[rest[0]] - lo[rest[0]]) / self.sample_spacing)) + 1)
            n1 = max(2, int(round((hi[rest[1]] - lo[rest[1]]) / self.sample_spacing)) + 1)
            g0 = np.linspace(lo[rest[0]], hi[rest[0]], n0)
            g1 = np.linspace(lo[rest[1]], hi[rest[1]], n1)
            u, v = np.meshgrid(g0, g1, indexing="ij")
            for bound in (lo[axis], hi[axis]):
                face = np.empty((u.size, 3))
                face[:, axis] = bound
                face[:, rest[0]] = u.ravel()
                face[:, rest[1]] = v.ravel()
                pts.append(face)
        return np.vstack(pts)

    def closure_mask(self, gripper_points: np.ndarray, width: float) -> np.ndarray:
        """True for points inside the closure region between the fingers."""
        x, y, z = gripper_points[:, 0], gripper_points[:, 1], gripper_points[:, 2]
        return ((x >= -self.finger_length - 1e-9) & (x <= 1e-9)
                & (np.abs(y) <= width / 2 + 1e-9)
                & (np.abs(z) <= self.finger_height / 2 + 1e-9))


def _frame(x, y, z, origin) -> Pose:
    return Pose(np.stack([x, y, z], axis=1), np.asarray(origin, dtype=float))


def _rho(v: float) -> np.ndarray:
    return np.array([math.cos(v), math.sin(v), 0.0])


def _tangent(v: float) -> np.ndarray:
    return np.array([-math.sin(v), math.cos(v), 0.0])


_Z = np.array([0.0, 0.0, 1.0])


def families_of(shape: PrimitiveShape, max_width: float = 0.085,
                include_cylinder_top: bool = True) -> list[GraspFamily]:
    """Fixed family list for a shape; families exceeding max_width are omitted."""
    out: list[GraspFamily] = []
    match shape:
        case Cylinder(radius=r, height=h):
            if 2 * r <= max_width:
                lo, hi = -h / 2 + EDGE_MARGIN, h / 2 - EDGE_MARGIN
                if lo <= hi:
                    def side(u, v):
                        # z gripper = cylinder axis, y = closing diameter at
                        # azimuth v, x = y cross z (horizontal approach).
                        y = _rho(v)
                        x = np.cross(y, _Z)
                        return _frame(x, y, _Z.copy(), [0.0, 0.0, u])

                    out.append(GraspFamily(shape, "cylinder:side", (lo, hi),
                                           (0.0, _TWO_PI), False, True, 2 * r,
                                           side, 1.0, 0.0, 0.0, 1.0))
                if include_cylinder_top:
                    def top(u, v):
                        x = -_Z
                        y = _rho(v)
                        return _frame(x, y, np.cross(x, y), [0.0, 0.0, h / 2])

                    out.append(GraspFamily(shape, "cylinder:top_rim", (0.0, 0.0),
                                           (0.0, math.pi), False, True, 2 * r,
                                           top, 0.0, 0.0, 0.0, 1.0,
                                           v_wraps=False))
        case Stick(radius=r, length=h):
            if 2 * r <= max_width:
                lo, hi = -h / 2 + EDGE_MARGIN, h / 2 - EDGE_MARGIN
                if lo <= hi:
                    def side(u, v):
                        x = -_rho(v)
                        y = _tangent(v)
                        return _frame(x, y, np.cross(x, y), [0.0, 0.0, u])

                    out.append(GraspFamily(shape, "stick:side", (lo, hi),
                                           (0.0, _TWO_PI), False, True, 2 * r,
                                           side, 1.0, 0.0, 0.0, 1.0))
        case Sphere(radius=r):
            if 2 * r <= max_width:
                for elev_deg in (30, 60, 90):
                    elev = math.radians(elev_deg)

                    def pinch(u, v, elev=elev):
                        d = np.array([math.cos(elev) * math.cos(v),
                                      math.cos(elev) * math.sin(v),
                                      math.sin(elev)])
                        x = -d
                        y = _tangent(v)
                        return _frame(x, y, np.cross(x, y), [0.0, 0.0, 0.0])

                    out.append(GraspFamily(shape, f"sphere:elev{elev_deg}",
                                           (0.0, 0.0), (0.0, _TWO_PI), False, True,
                                           2 * r, pinch, 0.0, 0.0, 0.0, 1.0))
        case SemiSphere(radius=r):
            # Dome pinch across a horizontal chord just above the base; the
            # contact azimuth u moves the grasp around the dome and v tilts
            # the approach about the closing line, which leaves the contact
            # geometry invariant.
            z0 = SEMISPHERE_PINCH_HEIGHT * r
            width = 2 * math.sqrt(r * r - z0 * z0)
            if width <= max_width:
                def pinch(u, v, z0=z0):
                    y = _rho(u)
                    base_x = np.array([0.0, 0.0, -1.0])
                    x = axis_rotation(y, v) @ base_x
                    return _frame(x, y, np.cross(x, y), [0.0, 0.0, z0])

                out.append(GraspFamily(shape, "semisphere:dome", (0.0, _TWO_PI),
                                       (-math.pi / 6, math.pi / 6), True, False,
                                       width, pinch, 0.0, 1.0, 0.0, 1.0))
        case Cuboid(half_extents=he):
            axes = np.eye(3)
            for k in range(3):
                gap = 2 * he[k]
                if gap > max_width:
                    continue
                inplane = [i for i in range(3) if i != k]
                # Longer in-plane extent carries the slide; ties break by index.
                if he[inplane[1]] > he[inplane[0]]:
                    long_ax, short_ax = inplane[1], inplane[0]
                else:
                    long_ax, short_ax = inplane[0], inplane[1]
                e_long = he[long_ax]
                lo, hi = -e_long + EDGE_MARGIN, e_long - EDGE_MARGIN
                if lo > hi:
                    lo = hi = 0.0

                def slide(u, v, k=k, long_ax=long_ax, short_ax=short_ax):
                    y = axes[k].copy()
                    x = -(math.cos(v) * axes[short_ax] + math.sin(v) * axes[long_ax])
                    return _frame(x, y, np.cross(x, y), axes[long_ax] * u)

                out.append(GraspFamily(shape, f"cuboid:faces{'xyz'[k]}", (lo, hi),
                                       (-math.pi / 2, math.pi / 2), False, False,
                                       gap, slide, 1.0, 0.0, 0.0, 1.0))
        case Ring(major_radius=rm, minor_radius=rt):
            if 2 * rt <= max_width:
                def tube(u, v, rm=rm):
                    rho = _rho(u)
                    x = -(math.sin(v) * rho + math.cos(v) * _Z)
                    y = math.cos(v) * rho - math.sin(v) * _Z
                    return _frame(x, y, np.cross(x, y), rm * rho)

                out.append(GraspFamily(shape, "ring:tube", (0.0, _TWO_PI),
                                       (0.0, math.pi / 3), True, False, 2 * rt,
                                       tube, rm, 1.0, 0.0, 1.0))
        case _:
            raise TypeError(f"unknown shape {shape!r}")
    return out


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _param_values(lo: float, hi: float, n: int, periodic: bool) -> np.ndarray:
    if lo == hi:
        return np.array([lo])
    if periodic:
        return lo + (hi - lo) * np.arange(n) / n
    if n == 1:
        return np.array([(lo + hi) / 2])
    return np.linspace(lo, hi, n)


def sample_grid(family: GraspFamily, n_u: int, n_v: int) -> list[GraspAnnotation]:
    """Cartesian (u, v) grid; periodic domains drop the duplicate endpoint."""
    if n_u < 1 or n_v < 1:
        raise ValueError("grid counts must be at least 1")
    us = _param_values(*family.u_range, n_u, family.u_periodic)
    vs = _param_values(*family.v_range, n_v, family.v_periodic)
    return [family.annotation(float(u), float(v)) for u in us for v in vs]


def _covering_count(span: float, periodic: bool, gap: float,
                    wraps: bool = True) -> int:
    """Smallest sample count keeping parameter distance to a sample <= gap."""
    if span == 0.0 or math.isinf(gap):
        return 1
    if periodic:
        if wraps:
            return max(1, math.ceil(span / (2.0 * gap)))
        # half-open grid, but probes past the last sample cannot wrap back
        return max(1, math.ceil(span / gap))
    return max(2, math.ceil(span / (2.0 * gap)) + 1)


# Shrink coverage budgets slightly so boundary-exact probes cannot tip over
# the threshold on float round-off.
_BUDGET_SAFETY = 1.0 - 1e-6


def _gap_budget(rate_t: float, rate_r: float, other_rate_t: float,
                other_rate_r: float, eps_t: float, eps_r: float) -> float:
    """Largest admissible parameter gap under both distance thresholds.

    Each metric budget is split evenly between the two parameters unless the
    other parameter does not move that metric at all.
    """
    gap = math.inf
    if rate_t > 0:
        share = eps_t if other_rate_t == 0 else eps_t / 2
        gap = min(gap, _BUDGET_SAFETY * share / rate_t)
    if rate_r > 0:
        share = eps_r if other_rate_r == 0 else eps_r / 2
        gap = min(gap, _BUDGET_SAFETY * share / rate_r)
    return gap


def covering_counts(family: GraspFamily, eps_t: float, eps_r: float) -> tuple[int, int]:
    gap_u = _gap_budget(family.rate_t_u, family.rate_r_u,
                        family.rate_t_v, family.rate_r_v, eps_t, eps_r)
    gap_v = _gap_budget(family.rate_t_v, family.rate_r_v,
                        family.rate_t_u, family.rate_r_u, eps_t, eps_r)
    n_u = _covering_count(family.u_range[1] - family.u_range[0],
                          family.u_periodic, gap_u)
    n_v = _covering_count(family.v_range[1] - family.v_range[0],
                          family.v_periodic, gap_v, family.v_wraps)
    return n_u, n_v


def covering_sample(family: GraspFamily, eps_t: float,
                    eps_r: float) -> list[GraspAnnotation]:
    """Grid sample guaranteed to cover the family within (eps_t, eps_r).

    Counts follow the per-family Lipschitz rates, so every point of the
    continuous domain has a sample within both thresholds simultaneously.
    """
    if eps_t <= 0 or eps_r <= 0:
        raise ValueError("covering thresholds must be positive")
    n_u, n_v = covering_counts(family, eps_t, eps_r)
    return sample_grid(family, n_u, n_v)


# ---------------------------------------------------------------------------
# collision filtering
# ---------------------------------------------------------------------------

def collision_filter(annotations: list[GraspAnnotation],
                     scene_objects: list,
                     target_index: int,
                     gripper: GripperModel,
                     table_z: float = 0.0) -> list[GraspAnnotation]:
    """Keep grasps whose gripper body stays above the table and out of objects.

    scene_objects is a list of (shape, object-to-world Pose); annotations are
    object-frame grasps on scene_objects[target_index].  Penetration into the
    target inside the closure region between the fingers is not a collision.
    """
    if not annotations:
        return []
    target_shape, target_pose = scene_objects[target_index]
    kept = []
    point_cache: dict[float, np.ndarray] = {}
    for ann in annotations:
        pts_g = point_cache.get(ann.width)
        if pts_g is None:
            pts_g = gripper.surface_points(ann.width)
            point_cache[ann.width] = pts_g
        grasp_world = target_pose.compose(ann.pose)
        pts_w = pts_g @ grasp_world.rotation.T + grasp_world.translation
        if np.any(pts_w[:, 2] < table_z - 1e-9):
            continue
        closure = gripper.closure_mask(pts_g, ann.width)
        collided = False
        for idx, (shape, pose) in enumerate(scene_objects):
            inv = pose.inverse()
            pts_obj = pts_w @ inv.rotation.T + inv.translation
            sd = signed_distance(shape, pts_obj)
            if idx == target_index:
                sd = np.where(closure, np.inf, sd)
            if np.any(sd < -1e-6):
                collided = True
                break
        if not collided:
            kept.append(ann)
    return kept
