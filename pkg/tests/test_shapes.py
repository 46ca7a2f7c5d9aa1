import math

import numpy as np
import pytest

from keygrasp.shapes import (
    Cuboid,
    Cylinder,
    Ring,
    SemiSphere,
    Sphere,
    Stick,
    bounding_radius,
    ray_intersect,
    ray_intersect_batch,
    sdf_gradient,
    shape_dims,
    shape_from_dims,
    signed_distance,
    surface_points,
)

ALL_SHAPES = [
    Cylinder(0.04, 0.12),
    Ring(0.05, 0.01),
    Stick(0.006, 0.15),
    Sphere(0.05),
    SemiSphere(0.05),
    Cuboid((0.05, 0.04, 0.03)),
]


def test_shape_validation():
    with pytest.raises(ValueError):
        Sphere(-0.1)
    with pytest.raises(ValueError):
        Ring(0.01, 0.05)
    with pytest.raises(ValueError):
        Stick(0.02, 0.1)  # sticks are thin by definition
    with pytest.raises(ValueError):
        Cuboid((0.1, -0.1, 0.1))


def test_signed_distance_examples():
    assert signed_distance(Sphere(0.05), [0, 0, 0]) == -0.05
    assert math.isclose(signed_distance(Cuboid((0.05, 0.05, 0.05)), [0.1, 0, 0]),
                        0.05)
    assert math.isclose(signed_distance(Ring(0.05, 0.01), [0.05, 0, 0]), -0.01)


@pytest.mark.parametrize("shape", ALL_SHAPES, ids=lambda s: s.kind)
def test_sdf_magnitude_matches_surface_distance(shape):
    # |sd(p)| equals the distance to a dense surface sampling, up to spacing
    surf = surface_points(shape, 0.002)
    rng = np.random.default_rng(0)
    pts = rng.uniform(-0.1, 0.1, size=(200, 3))
    sd = signed_distance(shape, pts)
    nearest = np.min(np.linalg.norm(pts[:, None] - surf[None], axis=2), axis=1)
    assert np.abs(np.abs(sd) - nearest).max() < 3e-3


def test_semisphere_sign():
    shape = SemiSphere(0.05)
    assert signed_distance(shape, [0, 0, 0.02]) < 0       # inside the dome
    assert signed_distance(shape, [0, 0, -0.01]) > 0      # below the base
    assert signed_distance(shape, [0.06, 0, 0.0]) > 0     # outside the rim
    assert abs(signed_distance(shape, [0, 0, 0.05])) < 1e-12  # apex
    assert math.isclose(signed_distance(shape, [0, 0, -0.02]), 0.02)


def test_surface_points_on_surface():
    for shape in ALL_SHAPES:
        pts = surface_points(shape, 0.004)
        assert np.abs(signed_distance(shape, pts)).max() < 1e-9


def test_ray_sphere_axial():
    hit = ray_intersect(Sphere(0.05), [0, 0, -1.0], [0, 0, 1.0])
    assert hit is not None
    t, normal = hit
    assert math.isclose(t, 0.95, abs_tol=1e-12)
    assert np.allclose(normal, [0, 0, -1])


def test_ray_cuboid_axial():
    hit = ray_intersect(Cuboid((0.05, 0.05, 0.05)), [1.0, 0, 0], [-1.0, 0, 0])
    t, normal = hit
    assert math.isclose(t, 0.95, abs_tol=1e-12)
    assert np.allclose(normal, [1, 0, 0])


def test_ray_miss_returns_none():
    assert ray_intersect(Sphere(0.05), [0, 1.0, 0], [0, 0, 1.0]) is None


def _sphere_trace(shape, origin, direction, max_dist=4.0):
    """Adaptive ray march on the signed distance; marching oracle for hits."""
    t = 0.0
    for _ in range(4000):
        p = origin + t * direction
        d = signed_distance(shape, p)
        if d < 1e-7:
            # polish with bisection for an accurate distance
            lo, hi = max(t - 1e-3, 0.0), t + 1e-7
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if signed_distance(shape, origin + mid * direction) > 0:
                    lo = mid
                else:
                    hi = mid
            return 0.5 * (lo + hi)
        t += max(d, 1e-5)
        if t > max_dist:
            return None
    return None


def test_torus_matches_ray_march_oracle():
    shape = Ring(0.05, 0.012)
    rng = np.random.default_rng(1)
    n = 10000
    origins = rng.uniform(-0.15, 0.15, size=(n, 3))
    origins[:, 2] = rng.uniform(0.05, 0.2, size=n)  # start outside, above
    targets = rng.uniform(-0.07, 0.07, size=(n, 3))
    targets[:, 2] = rng.uniform(-0.02, 0.02, size=n)
    dirs = targets - origins
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    t_batch, normals = ray_intersect_batch(shape, origins, dirs)
    agree = 0
    dist_ok = 0
    hits = 0
    for i in range(n):
        oracle = _sphere_trace(shape, origins[i], dirs[i])
        mine = t_batch[i] if np.isfinite(t_batch[i]) else None
        if (oracle is None) == (mine is None):
            agree += 1
            if mine is not None:
                hits += 1
                if abs(mine - oracle) < 1e-4:
                    dist_ok += 1
    assert agree / n >= 0.999
    assert hits > 1000 and dist_ok == hits


@pytest.mark.parametrize("shape", ALL_SHAPES, ids=lambda s: s.kind)
def test_ray_hits_consistent_with_sdf(shape):
    rng = np.random.default_rng(2)
    n = 400
    radius = bounding_radius(shape)
    origins = rng.normal(size=(n, 3))
    origins *= (radius + 0.3) / np.linalg.norm(origins, axis=1, keepdims=True)
    targets = rng.uniform(-0.5, 0.5, size=(n, 3)) * radius
    dirs = targets - origins
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    t, normals = ray_intersect_batch(shape, origins, dirs)
    hit = np.isfinite(t)
    assert hit.sum() > 50
    pts = origins[hit] + t[hit, None] * dirs[hit]
    assert np.abs(signed_distance(shape, pts)).max() < 1e-7
    # outward normals agree with the local SDF gradient
    for p, nrm in zip(pts[:40], normals[hit][:40]):
        grad = sdf_gradient(shape, p + 1e-5 * nrm)
        assert grad @ nrm > 0.95


def test_shape_dims_roundtrip():
    for shape in ALL_SHAPES:
        rebuilt = shape_from_dims(shape.kind, shape_dims(shape), shape.color)
        assert rebuilt == shape
