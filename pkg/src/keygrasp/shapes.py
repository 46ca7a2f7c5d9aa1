"""Primitive shape types with signed distances, surface samples, and ray casts.

Object frames: cylinders, sticks, and rings are centered at the origin with
the symmetry axis along +z (rings lie in the x-y plane); spheres and cuboids
are centered at the origin; semi-spheres have the flat face in the z=0 plane
with the dome toward +z and the face center at the origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SHAPE_KINDS = ("cylinder", "ring", "stick", "sphere", "semisphere", "cuboid")

_GRAY = (0.5, 0.5, 0.5)

# Sticks are thin by definition.
STICK_MAX_RADIUS = 0.012


def _check_positive(**dims):
    for name, value in dims.items():
        if value <= 0:
            raise ValueError(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class Cylinder:
    radius: float
    height: float
    color: tuple = _GRAY
    kind: str = field(default="cylinder", init=False)

    def __post_init__(self):
        _check_positive(radius=self.radius, height=self.height)


@dataclass(frozen=True)
class Ring:
    """Torus: major radius of the ring circle, minor radius of the tube."""

    major_radius: float
    minor_radius: float
    color: tuple = _GRAY
    kind: str = field(default="ring", init=False)

    def __post_init__(self):
        _check_positive(major_radius=self.major_radius, minor_radius=self.minor_radius)
        if self.minor_radius >= self.major_radius:
            raise ValueError("ring tube radius must be smaller than the major radius")


@dataclass(frozen=True)
class Stick:
    radius: float
    length: float
    color: tuple = _GRAY
    kind: str = field(default="stick", init=False)

    def __post_init__(self):
        _check_positive(radius=self.radius, length=self.length)
        if self.radius > STICK_MAX_RADIUS:
            raise ValueError(f"stick radius above {STICK_MAX_RADIUS} m")


@dataclass(frozen=True)
class Sphere:
    radius: float
    color: tuple = _GRAY
    kind: str = field(default="sphere", init=False)

    def __post_init__(self):
        _check_positive(radius=self.radius)


@dataclass(frozen=True)
class SemiSphere:
    radius: float
    color: tuple = _GRAY
    kind: str = field(default="semisphere", init=False)

    def __post_init__(self):
        _check_positive(radius=self.radius)


@dataclass(frozen=True)
class Cuboid:
    half_extents: tuple  # (a, b, c) meters
    color: tuple = _GRAY
    kind: str = field(default="cuboid", init=False)

    def __post_init__(self):
        he = tuple(float(v) for v in self.half_extents)
        if len(he) != 3 or min(he) <= 0:
            raise ValueError("cuboid needs three positive half extents")
        object.__setattr__(self, "half_extents", he)


PrimitiveShape = Cylinder | Ring | Stick | Sphere | SemiSphere | Cuboid


def shape_dims(shape: PrimitiveShape) -> dict:
    """Kind-specific dimensions as a plain dict (for serialization)."""
    match shape:
        case Cylinder():
            return {"radius": shape.radius, "height": shape.height}
        case Ring():
            return {"major_radius": shape.major_radius, "minor_radius": shape.minor_radius}
        case Stick():
            return {"radius": shape.radius, "length": shape.length}
        case Sphere() | SemiSphere():
            return {"radius": shape.radius}
        case Cuboid():
            a, b, c = shape.half_extents
            return {"half_extents": [a, b, c]}
    raise TypeError(f"unknown shape {shape!r}")


def shape_from_dims(kind: str, dims: dict, color=_GRAY) -> PrimitiveShape:
    color = tuple(color)
    if kind == "cylinder":
        return Cylinder(dims["radius"], dims["height"], color)
    if kind == "ring":
        return Ring(dims["major_radius"], dims["minor_radius"], color)
    if kind == "stick":
        return Stick(dims["radius"], dims["length"], color)
    if kind == "sphere":
        return Sphere(dims["radius"], color)
    if kind == "semisphere":
        return SemiSphere(dims["radius"], color)
    if kind == "cuboid":
        return Cuboid(tuple(dims["half_extents"]), color)
    raise ValueError(f"unknown shape kind {kind!r}")


def bounding_radius(shape: PrimitiveShape) -> float:
    match shape:
        case Cylinder() | Stick():
            h = shape.height if isinstance(shape, Cylinder) else shape.length
            return math.hypot(shape.radius, h / 2)
        case Ring():
            return shape.major_radius + shape.minor_radius
        case Sphere() | SemiSphere():
            return shape.radius
        case Cuboid():
            return float(np.linalg.norm(shape.half_extents))
    raise TypeError(f"unknown shape {shape!r}")


# ---------------------------------------------------------------------------
# signed distance
# ---------------------------------------------------------------------------

def signed_distance(shape: PrimitiveShape, points) -> np.ndarray:
    """Exact signed distance: negative inside, zero on the surface.

    Accepts a single point or an (..., 3) stack; returns matching shape.
    """
    p = np.asarray(points, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    match shape:
        case Sphere():
            d = np.linalg.norm(p, axis=-1) - shape.radius
        case Cuboid():
            q = np.abs(p) - np.asarray(shape.half_extents)
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
            inside = np.minimum(np.max(q, axis=-1), 0.0)
            d = outside + inside
        case Cylinder() | Stick():
            h = shape.height if isinstance(shape, Cylinder) else shape.length
            qr = np.hypot(x, y) - shape.radius
            qz = np.abs(z) - h / 2
            q = np.stack([qr, qz], axis=-1)
            d = (np.minimum(np.max(q, axis=-1), 0.0)
                 + np.linalg.norm(np.maximum(q, 0.0), axis=-1))
        case Ring():
            d = np.hypot(np.hypot(x, y) - shape.major_radius, z) - shape.minor_radius
        case SemiSphere():
            r = shape.radius
            s = np.hypot(x, y)
            norm = np.linalg.norm(p, axis=-1)
            # Upper half space: dome when outside the ball, else the nearer of
            # dome and base plane.  Below the base: flat face or rim edge.
            upper = np.where(norm >= r, norm - r, -np.minimum(r - norm, z))
            lower = np.where(s <= r, -z, np.hypot(s - r, z))
            d = np.where(z >= 0.0, upper, lower)
        case _:
            raise TypeError(f"unknown shape {shape!r}")
    return float(d[0]) if single else d


def sdf_gradient(shape: PrimitiveShape, point, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of the signed distance (approximate normal)."""
    p = np.asarray(point, dtype=float)
    offsets = np.eye(3) * eps
    grad = np.array([
        signed_distance(shape, p + offsets[i]) - signed_distance(shape, p - offsets[i])
        for i in range(3)
    ]) / (2 * eps)
    n = np.linalg.norm(grad)
    return grad / n if n > 0 else grad


# ---------------------------------------------------------------------------
# surface sampling
# ---------------------------------------------------------------------------

def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    z = 1.0 - 2.0 * i / n
    s = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)


def _disk_points(radius: float, spacing: float, z: float) -> np.ndarray:
    pts = [(0.0, 0.0, z)]
    n_rings = max(1, int(round(radius / spacing)))
    for k in range(1, n_rings + 1):
        rad = radius * k / n_rings
        n = max(6, int(round(2 * math.pi * rad / spacing)))
        ang = 2 * math.pi * np.arange(n) / n
        pts.extend(zip(rad * np.cos(ang), rad * np.sin(ang), np.full(n, z)))
    return np.array(pts)


def _tube_points(radius: float, z0: float, z1: float, spacing: float) -> np.ndarray:
    n_z = max(2, int(round((z1 - z0) / spacing)) + 1)
    n_t = max(8, int(round(2 * math.pi * radius / spacing)))
    zs = np.linspace(z0, z1, n_z)
    ang = 2 * math.pi * np.arange(n_t) / n_t
    zz, aa = np.meshgrid(zs, ang, indexing="ij")
    return np.stack([radius * np.cos(aa).ravel(),
                     radius * np.sin(aa).ravel(),
                     zz.ravel()], axis=1)


def surface_points(shape: PrimitiveShape, spacing: float = 0.004) -> np.ndarray:
    """Deterministic surface sample at roughly one point per spacing^2 patch."""
    match shape:
        case Sphere():
            n = max(32, int(round(4 * math.pi * shape.radius ** 2 / spacing ** 2)))
            return shape.radius * _fibonacci_sphere(n)
        case SemiSphere():
            n = max(64, int(round(4 * math.pi * shape.radius ** 2 / spacing ** 2)))
            dome = shape.radius * _fibonacci_sphere(n)
            dome = dome[dome[:, 2] >= 0.0]
            return np.vstack([dome, _disk_points(shape.radius, spacing, 0.0)])
        case Cylinder() | Stick():
            h = shape.height if isinstance(shape, Cylinder) else shape.length
            wall = _tube_points(shape.radius, -h / 2, h / 2, spacing)
            top = _disk_points(shape.radius, spacing, h / 2)
            bottom = _disk_points(shape.radius, spacing, -h / 2)
            return np.vstack([wall, top, bottom])
        case Cuboid():
            a, b, c = shape.half_extents
            faces = []
            for axis, extent in enumerate((a, b, c)):
                others = [(a, b, c)[k] for k in range(3) if k != axis]
                n0 = max(2, int(round(2 * others[0] / spacing)) + 1)
                n1 = max(2, int(round(2 * others[1] / spacing)) + 1)
                g0 = np.linspace(-others[0], others[0], n0)
                g1 = np.linspace(-others[1], others[1], n1)
                u, v = np.meshgrid(g0, g1, indexing="ij")
                for sign in (-1.0, 1.0):
                    pts = np.zeros((u.size, 3))
                    pts[:, axis] = sign * extent
                    rest = [k for k in range(3) if k != axis]
                    pts[:, rest[0]] = u.ravel()
                    pts[:, rest[1]] = v.ravel()
                    faces.append(pts)
            return np.vstack(faces)
        case Ring():
            rm, rt = shape.major_radius, shape.minor_radius
            n_u = max(12, int(round(2 * math.pi * rm / spacing)))
            n_v = max(8, int(round(2 * math.pi * rt / spacing)))
            uu = 2 * math.pi * np.arange(n_u) / n_u
            vv = 2 * math.pi * np.arange(n_v) / n_v
            u, v = np.meshgrid(uu, vv, indexing="ij")
            rad = rm + rt * np.cos(v)
            return np.stack([rad * np.cos(u), rad * np.sin(u),
                             rt * np.sin(v)], axis=-1).reshape(-1, 3)
    raise TypeError(f"unknown shape {shape!r}")


# ---------------------------------------------------------------------------
# ray casting
# ---------------------------------------------------------------------------

def _smallest_positive(*candidates):
    """Elementwise min over (t, normal) candidate arrays, inf for misses."""
    best_t = None
    best_n = None
    for t, n in candidates:
        if best_t is None:
            best_t, best_n = t.copy(), n.copy()
            continue
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_n = np.where(closer[:, None], n, best_n)
    return best_t, best_n


def _ray_sphere(origins, dirs, radius, center_z=0.0, min_z=None):
    o = origins.copy()
    o[:, 2] -= center_z
    b = np.sum(o * dirs, axis=1)
    c = np.sum(o * o, axis=1) - radius * radius
    disc = b * b - c
    t = np.full(len(o), np.inf)
    ok = disc >= 0
    sq = np.sqrt(np.maximum(disc, 0.0))
    for root in (-b - sq, -b + sq):
        cand = np.where(ok & (root > 1e-9), root, np.inf)
        if min_z is not None:
            z = o[:, 2] + cand * dirs[:, 2]
            cand = np.where(np.isfinite(cand) & (z >= min_z - 1e-12), cand, np.inf)
        t = np.minimum(t, cand)
    finite = np.isfinite(t)
    hit_pts = o + np.where(finite, t, 0.0)[:, None] * dirs
    normals = np.where(finite[:, None], hit_pts / max(radius, 1e-30), 0.0)
    return t, normals


def _ray_disk(origins, dirs, radius, z_plane, normal_sign):
    dz = dirs[:, 2]
    safe_dz = np.where(np.abs(dz) > 1e-15, dz, 1.0)
    t = np.where(np.abs(dz) > 1e-15, (z_plane - origins[:, 2]) / safe_dz, np.inf)
    pts = origins + t[:, None] * dirs
    inside = (t > 1e-9) & (np.hypot(pts[:, 0], pts[:, 1]) <= radius)
    t = np.where(inside, t, np.inf)
    normals = np.zeros_like(origins)
    normals[:, 2] = normal_sign
    return t, normals


def _ray_cylinder_wall(origins, dirs, radius, half_height):
    a = dirs[:, 0] ** 2 + dirs[:, 1] ** 2
    b = origins[:, 0] * dirs[:, 0] + origins[:, 1] * dirs[:, 1]
    c = origins[:, 0] ** 2 + origins[:, 1] ** 2 - radius * radius
    safe_a = np.where(a > 1e-15, a, 1.0)
    disc = b * b - safe_a * c
    sq = np.sqrt(np.maximum(disc, 0.0))
    t = np.full(len(origins), np.inf)
    for root in ((-b - sq) / safe_a, (-b + sq) / safe_a):
        z = origins[:, 2] + root * dirs[:, 2]
        good = (a > 1e-15) & (disc >= 0) & (root > 1e-9) & (np.abs(z) <= half_height)
        t = np.minimum(t, np.where(good, root, np.inf))
    pts = origins + t[:, None] * dirs
    normals = np.zeros_like(origins)
    finite = np.isfinite(t)
    normals[finite, 0] = pts[finite, 0] / radius
    normals[finite, 1] = pts[finite, 1] / radius
    return t, normals


def _solve_quartic_batch(coeffs: np.ndarray) -> np.ndarray:
    """Roots of monic quartics via companion eigenvalues plus Newton polish.

    coeffs has shape (n, 5) ordered highest power first with coeffs[:, 0] == 1.
    """
    n = len(coeffs)
    comp = np.zeros((n, 4, 4))
    comp[:, 1, 0] = comp[:, 2, 1] = comp[:, 3, 2] = 1.0
    comp[:, 0, 3] = -coeffs[:, 4]
    comp[:, 1, 3] = -coeffs[:, 3]
    comp[:, 2, 3] = -coeffs[:, 2]
    comp[:, 3, 3] = -coeffs[:, 1]
    roots = np.linalg.eigvals(comp)  # (n, 4) complex
    c = coeffs[:, :, None]
    for _ in range(2):
        val = ((((c[:, 0] * roots) + c[:, 1]) * roots + c[:, 2]) * roots + c[:, 3]) * roots + c[:, 4]
        dval = ((4 * c[:, 0] * roots + 3 * c[:, 1]) * roots + 2 * c[:, 2]) * roots + c[:, 3]
        step = np.where(np.abs(dval) > 1e-30, val / np.where(np.abs(dval) > 1e-30, dval, 1.0), 0.0)
        roots = roots - step
    return roots


def _ray_torus(origins, dirs, major, minor):
    t_out = np.full(len(origins), np.inf)
    normals = np.zeros_like(origins)

    # Bounding-sphere prefilter keeps the quartic batch small.
    b = np.sum(origins * dirs, axis=1)
    closest = origins - np.minimum(b, 0.0)[:, None] * dirs
    reach = (major + minor) * 1.0001
    mask = np.linalg.norm(closest, axis=1) <= reach
    mask |= np.linalg.norm(origins, axis=1) <= reach
    if not np.any(mask):
        return t_out, normals

    o = origins[mask]
    d = dirs[mask]
    od = np.sum(o * d, axis=1)
    oo = np.sum(o * o, axis=1)
    k = oo + major * major - minor * minor
    dxy = d[:, 0] ** 2 + d[:, 1] ** 2
    oxy = o[:, 0] ** 2 + o[:, 1] ** 2
    odxy = o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1]
    coeffs = np.stack([
        np.ones(len(o)),
        4.0 * od,
        4.0 * od ** 2 + 2.0 * k - 4.0 * major ** 2 * dxy,
        4.0 * od * k - 8.0 * major ** 2 * odxy,
        k ** 2 - 4.0 * major ** 2 * oxy,
    ], axis=1)
    roots = _solve_quartic_batch(coeffs)
    real = np.abs(roots.imag) <= 1e-7 * (1.0 + np.abs(roots.real))
    positive = roots.real > 1e-9
    cand = np.where(real & positive, roots.real, np.inf)
    t_local = cand.min(axis=1)

    pts = o + t_local[:, None] * d
    finite = np.isfinite(t_local)
    grad = np.zeros_like(o)
    if np.any(finite):
        p = pts[finite]
        kk = np.sum(p * p, axis=1) + major * major - minor * minor
        g = 4.0 * kk[:, None] * p
        g[:, 0] -= 8.0 * major * major * p[:, 0]
        g[:, 1] -= 8.0 * major * major * p[:, 1]
        norm = np.linalg.norm(g, axis=1, keepdims=True)
        grad[finite] = g / np.where(norm > 0, norm, 1.0)

    t_out[mask] = t_local
    normals[mask] = grad
    return t_out, normals


def ray_intersect_batch(shape: PrimitiveShape, origins: np.ndarray,
                        dirs: np.ndarray):
    """Nearest-hit distances (inf for misses) and outward unit normals.

    Rays are given in the object frame; directions must be unit length.
    """
    origins = np.asarray(origins, dtype=float).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
    match shape:
        case Sphere():
            return _ray_sphere(origins, dirs, shape.radius)
        case SemiSphere():
            dome = _ray_sphere(origins, dirs, shape.radius, min_z=0.0)
            base = _ray_disk(origins, dirs, shape.radius, 0.0, -1.0)
            return _smallest_positive(dome, base)
        case Cylinder() | Stick():
            h = shape.height if isinstance(shape, Cylinder) else shape.length
            wall = _ray_cylinder_wall(origins, dirs, shape.radius, h / 2)
            top = _ray_disk(origins, dirs, shape.radius, h / 2, 1.0)
            bottom = _ray_disk(origins, dirs, shape.radius, -h / 2, -1.0)
            return _smallest_positive(wall, top, bottom)
        case Cuboid():
            he = np.asarray(shape.half_extents)
            safe_d = np.where(np.abs(dirs) > 1e-15, dirs, 1e-15)
            t1 = (-he - origins) / safe_d
            t2 = (he - origins) / safe_d
            tmin_axes = np.minimum(t1, t2)
            tmax_axes = np.maximum(t1, t2)
            tmin = tmin_axes.max(axis=1)
            tmax = tmax_axes.min(axis=1)
            enter_axis = tmin_axes.argmax(axis=1)
            hit = (tmax >= tmin) & (tmax > 1e-9)
            t = np.where(hit & (tmin > 1e-9), tmin, np.where(hit, tmax, np.inf))
            idx = np.arange(len(origins))
            pts = origins + t[:, None] * dirs
            normals = np.zeros_like(origins)
            finite = np.isfinite(t)
            axis = np.where(tmin > 1e-9, enter_axis, tmax_axes.argmin(axis=1))
            sign = np.sign(pts[idx, axis])
            normals[idx[finite], axis[finite]] = sign[finite]
            return t, normals
        case Ring():
            return _ray_torus(origins, dirs, shape.major_radius, shape.minor_radius)
    raise TypeError(f"unknown shape {shape!r}")


def ray_intersect(shape: PrimitiveShape, origin, direction):
    """Nearest hit of a single object-frame ray: (distance, normal) or None."""
    t, n = ray_intersect_batch(shape, np.asarray(origin, dtype=float)[None],
                               np.asarray(direction, dtype=float)[None])
    if not np.isfinite(t[0]):
        return None
    return float(t[0]), n[0]
