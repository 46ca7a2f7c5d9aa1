import math

import numpy as np
import pytest

from keygrasp.families import (
    EDGE_MARGIN,
    GraspAnnotation,
    GripperModel,
    collision_filter,
    covering_counts,
    covering_sample,
    families_of,
    sample_grid,
)
from keygrasp.geometry import Pose, rotation_distance, translation_distance
from keygrasp.shapes import (
    Cuboid,
    Cylinder,
    Ring,
    SemiSphere,
    Sphere,
    Stick,
    sdf_gradient,
    signed_distance,
)

W_MAX = 0.085


def _random_shapes(rng):
    return [
        Cylinder(rng.uniform(0.025, 0.042), rng.uniform(0.08, 0.16)),
        Ring(rng.uniform(0.03, 0.05), rng.uniform(0.006, 0.012)),
        Stick(rng.uniform(0.004, 0.008), rng.uniform(0.10, 0.20)),
        Sphere(rng.uniform(0.02, 0.04)),
        SemiSphere(rng.uniform(0.03, 0.042)),
        Cuboid(tuple(rng.uniform(0.02, 0.042, size=3))),
    ]


def test_cylinder_families():
    fams = families_of(Cylinder(0.04, 0.12), W_MAX)
    assert [f.family_id for f in fams] == ["cylinder:side", "cylinder:top_rim"]
    side, top = fams
    assert side.width == pytest.approx(0.08)
    assert side.u_range == (-0.06 + EDGE_MARGIN, 0.06 - EDGE_MARGIN)
    assert top.u_degenerate and top.width == pytest.approx(0.08)
    # too wide for the gripper: no families at all
    assert families_of(Cylinder(0.05, 0.12), W_MAX) == []
    # the top family is an optional addition
    assert len(families_of(Cylinder(0.04, 0.12), W_MAX,
                           include_cylinder_top=False)) == 1


def test_sphere_families():
    fams = families_of(Sphere(0.03), W_MAX)
    assert len(fams) == 3
    for fam in fams:
        assert fam.u_degenerate
        assert fam.v_range == (0.0, 2 * math.pi) and fam.v_periodic
        assert fam.width == pytest.approx(0.06)


def test_stick_family():
    fams = families_of(Stick(0.008, 0.15), W_MAX)
    assert len(fams) == 1
    assert fams[0].width == pytest.approx(0.016)


def test_semisphere_family_width_gate():
    fams = families_of(SemiSphere(0.03), W_MAX)
    assert len(fams) == 1
    assert fams[0].width <= W_MAX
    # large semi-spheres cannot be antipodally pinched within the jaw span
    assert families_of(SemiSphere(0.06), W_MAX) == []


def test_cuboid_families_respect_gap():
    fams = families_of(Cuboid((0.03, 0.02, 0.06)), W_MAX)
    # gaps 0.06 and 0.04 fit, 0.12 does not
    assert len(fams) == 2
    widths = sorted(f.width for f in fams)
    assert widths == pytest.approx([0.04, 0.06])


def test_sample_grid_counts():
    side = families_of(Cylinder(0.04, 0.12), W_MAX)[0]
    assert len(sample_grid(side, 5, 11)) == 55
    sphere_fam = families_of(Sphere(0.03), W_MAX)[0]
    assert len(sample_grid(sphere_fam, 5, 11)) == 11  # degenerate u collapses
    stick_fam = families_of(Stick(0.006, 0.15), W_MAX)[0]
    assert len(sample_grid(stick_fam, 10, 30)) == 300
    with pytest.raises(ValueError):
        sample_grid(side, 0, 5)


def test_periodic_grid_has_no_duplicate_endpoint():
    fam = families_of(Sphere(0.03), W_MAX)[0]
    vs = [a.v for a in sample_grid(fam, 1, 8)]
    assert len(set(vs)) == 8
    assert max(vs) < 2 * math.pi


def test_family_poses_orthonormal():
    rng = np.random.default_rng(0)
    for shape in _random_shapes(rng):
        for fam in families_of(shape, W_MAX):
            for _ in range(40):
                u = rng.uniform(*fam.u_range) if not fam.u_degenerate else fam.u_range[0]
                v = rng.uniform(*fam.v_range)
                pose = fam.pose_at(u, v)  # Pose validates orthonormality
                assert abs(np.linalg.det(pose.rotation) - 1) < 1e-9


def _contact_along(shape, origin, direction, limit):
    """Last on-surface point along a ray leaving the solid (bisection)."""
    lo, hi = 0.0, limit
    assert signed_distance(shape, origin + hi * direction) > 0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if signed_distance(shape, origin + mid * direction) <= 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_antipodality():
    # Finger contact rays along +-y hit the surface one half width apart and
    # the surface normals there oppose the closing direction.
    rng = np.random.default_rng(1)
    for shape in _random_shapes(rng):
        for fam in families_of(shape, W_MAX):
            for _ in range(8):
                u = rng.uniform(*fam.u_range) if not fam.u_degenerate else fam.u_range[0]
                v = rng.uniform(*fam.v_range)
                ann = fam.annotation(u, v)
                origin = ann.pose.translation
                y_axis = ann.pose.rotation[:, 1]
                # stay just beyond the expected contact; a longer probe could
                # cross a ring's hole and re-enter the solid
                limit = ann.width / 2 + 0.003
                t_pos = _contact_along(shape, origin, y_axis, limit)
                t_neg = _contact_along(shape, origin, -y_axis, limit)
                assert abs((t_pos + t_neg) - ann.width) < 1e-6, fam.family_id
                for sign, t in ((1.0, t_pos), (-1.0, t_neg)):
                    contact = origin + sign * t * y_axis
                    normal = sdf_gradient(shape, contact + sign * 1e-4 * y_axis)
                    angle = math.acos(np.clip(normal @ (sign * y_axis), -1, 1))
                    assert angle < math.radians(15.0), fam.family_id


def test_covering_single_sample_for_infinite_thresholds():
    fam = families_of(Cylinder(0.04, 0.12), W_MAX)[0]
    assert len(covering_sample(fam, math.inf, math.inf)) == 1


def test_covering_counts_monotone():
    fam = families_of(Ring(0.05, 0.01), W_MAX)[0]
    base = covering_counts(fam, 0.02, math.radians(30))
    finer = covering_counts(fam, 0.01, math.radians(15))
    assert finer[0] >= base[0] and finer[1] >= base[1]
    with pytest.raises(ValueError):
        covering_sample(fam, -1.0, 0.1)


def _covering_violations(fam, eps_t, eps_r):
    samples = covering_sample(fam, eps_t, eps_r)
    n_u, n_v = covering_counts(fam, eps_t, eps_r)
    probes = sample_grid(fam, max(10 * n_u, 1) if not fam.u_degenerate else 1,
                         10 * n_v)
    sample_r = np.stack([a.pose.rotation for a in samples])
    sample_t = np.stack([a.pose.translation for a in samples])
    bad = 0
    for probe in probes:
        dt = np.linalg.norm(sample_t - probe.pose.translation, axis=1)
        tr = np.einsum("nij,ij->n", sample_r, probe.pose.rotation)
        dr = np.arccos(np.clip(0.5 * (tr - 1.0), -1.0, 1.0))
        if not np.any((dt <= eps_t) & (dr <= eps_r)):
            bad += 1
    return bad, len(probes)


def test_covering_guarantee_probe_grid():
    rng = np.random.default_rng(2)
    eps_t, eps_r = 0.02, math.radians(30)
    for shape in (Cylinder(0.04, 0.12), Ring(0.045, 0.01), SemiSphere(0.035)):
        for fam in families_of(shape, W_MAX):
            bad, total = _covering_violations(fam, eps_t, eps_r)
            assert bad == 0, (fam.family_id, bad, total)


def test_gripper_surface_points_deterministic():
    gripper = GripperModel()
    a = gripper.surface_points(0.06)
    b = gripper.surface_points(0.06)
    assert np.array_equal(a, b)
    assert len(a) > 1000


def _tabletop_scene(shape, z_offset):
    pose = Pose(np.eye(3), [0.0, 0.0, z_offset])
    return [(shape, pose)]


def test_collision_filter_table():
    gripper = GripperModel()
    cyl = Cylinder(0.03, 0.16)
    scene = _tabletop_scene(cyl, 0.08)  # upright, resting on the table
    fams = families_of(cyl, W_MAX)
    side = [f for f in fams if f.family_id == "cylinder:side"][0]
    # top-down-ish grasp near the top of a tall cylinder: kept
    high = side.annotation(side.u_range[1], 0.0)
    kept = collision_filter([high], scene, 0, gripper, table_z=0.0)
    assert kept == [high]
    # grasp at the very base: palm dips below the table plane, removed
    low = side.annotation(side.u_range[0], 0.0)
    kept = collision_filter([low], scene, 0, gripper, table_z=0.0)
    assert kept == []


def test_collision_filter_neighbor_object():
    gripper = GripperModel()
    cyl = Cylinder(0.03, 0.16)
    fams = families_of(cyl, W_MAX)
    side = [f for f in fams if f.family_id == "cylinder:side"][0]
    ann = side.annotation(side.u_range[1], 0.0)
    alone = _tabletop_scene(cyl, 0.08)
    assert collision_filter([ann], alone, 0, gripper) == [ann]
    # park a cuboid right where the gripper body must go
    grasp_world = alone[0][1].compose(ann.pose)
    blocker_center = grasp_world.translation - 0.05 * grasp_world.rotation[:, 0]
    crowded = alone + [(Cuboid((0.04, 0.04, 0.04)), Pose(np.eye(3), blocker_center))]
    assert collision_filter([ann], crowded, 0, gripper) == []


def test_collision_filter_monotone_in_scene():
    rng = np.random.default_rng(3)
    gripper = GripperModel()
    cyl = Cylinder(0.035, 0.14)
    scene = _tabletop_scene(cyl, 0.07)
    fams = families_of(cyl, W_MAX)
    anns = [a for f in fams for a in sample_grid(f, 4, 8)]
    kept_alone = collision_filter(anns, scene, 0, gripper)
    for _ in range(5):
        extra = (Sphere(0.03), Pose(np.eye(3), rng.uniform(-0.15, 0.15, size=3)
                                    * np.array([1, 1, 0]) + [0, 0, 0.03]))
        kept_crowded = collision_filter(anns, scene + [extra], 0, gripper)
        assert set(id(a) for a in kept_crowded) <= set(id(a) for a in kept_alone)


def test_annotation_width_within_gripper():
    rng = np.random.default_rng(4)
    for shape in _random_shapes(rng):
        for fam in families_of(shape, W_MAX):
            assert 0 < fam.width <= W_MAX
