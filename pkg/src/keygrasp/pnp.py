"""Pose recovery from four 3D/2D point correspondences.

Three solvers are provided: a planar-target solver (IPPE) returning both
ambiguity candidates, a three-point polynomial solver (P3P) disambiguated by
the fourth point, and a control-point linearization (EPnP) with Gauss-Newton
refinement.  All work in normalized image coordinates internally and report a
root-mean-square pixel reprojection error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    CameraModel,
    KeypointTemplate,
    NonPositiveDepth,
    Pose,
    orthonormalize,
    pose_apply,
    project_many,
)

METHODS = ("ippe", "p3p", "epnp")

# Solutions placing any keypoint closer than this are rejected outright.
_MIN_SOLUTION_DEPTH = 1e-6

_PLANAR_TOL = 1e-9


class NonPlanarInput(ValueError):
    """Planar solver fed non-coplanar object points."""


class DegenerateConfiguration(ValueError):
    """Collinear or otherwise rank-deficient correspondence geometry."""


class NoRealSolution(RuntimeError):
    """All polynomial roots are complex or yield negative depths."""


class SingularSystem(RuntimeError):
    """Rank-deficient linear system inside the solver."""


class IncompatibleMethodTemplate(ValueError):
    """Requested method cannot handle the template's planarity."""


@dataclass(frozen=True)
class Correspondences:
    """Exactly four gripper-frame points with their pixel observations."""

    object_points: np.ndarray  # (4, 3) meters
    image_points: np.ndarray   # (4, 2) pixels
    cam: CameraModel

    def __post_init__(self):
        obj = np.asarray(self.object_points, dtype=float).reshape(4, 3)
        img = np.asarray(self.image_points, dtype=float).reshape(4, 2)
        object.__setattr__(self, "object_points", obj)
        object.__setattr__(self, "image_points", img)


@dataclass(frozen=True)
class PnPSolution:
    pose: Pose
    reprojection_error: float  # RMS pixels over the 4 points
    method: str


def reprojection_error(pose: Pose, corr: Correspondences) -> float:
    """RMS pixel distance between observed and reprojected points."""
    projected = project_many(corr.cam, pose_apply(pose, corr.object_points))
    sq = np.sum((projected - corr.image_points) ** 2, axis=1)
    return float(math.sqrt(np.mean(sq)))


def _normalized_image(corr: Correspondences) -> np.ndarray:
    cam = corr.cam
    uv = corr.image_points
    return np.stack([(uv[:, 0] - cam.cx) / cam.fx,
                     (uv[:, 1] - cam.cy) / cam.fy], axis=1)


def _min_pairwise_distance(points: np.ndarray) -> float:
    diffs = points[:, None, :] - points[None, :, :]
    dists = np.linalg.norm(diffs, axis=2)
    return float(dists[np.triu_indices(len(points), k=1)].min())


def _kabsch(src: np.ndarray, dst: np.ndarray) -> Pose:
    """Rigid transform mapping src points onto dst points (least squares)."""
    src_c = src.mean(axis=0)
    dst_c = dst.mean(axis=0)
    h = (src - src_c).T @ (dst - dst_c)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return Pose(r, dst_c - r @ src_c)


def _depths_valid(pose: Pose, object_points: np.ndarray) -> bool:
    z = pose_apply(pose, object_points)[:, 2]
    return bool(np.all(z > _MIN_SOLUTION_DEPTH))


# ---------------------------------------------------------------------------
# IPPE
# ---------------------------------------------------------------------------

def _canonical_plane(object_points: np.ndarray):
    """Rotate/translate coplanar points into the z=0 plane, centroid at origin.

    Returns canonical 2D coordinates, the basis rotation (columns b1, b2, n),
    and the centroid, so that P = centroid + basis @ (q_x, q_y, 0).
    """
    centroid = object_points.mean(axis=0)
    centered = object_points - centroid
    _, svals, vt = np.linalg.svd(centered, full_matrices=True)
    if svals[2] > _PLANAR_TOL:
        raise NonPlanarInput(f"plane-fit residual {svals[2]:.3g}")
    if svals[1] < 1e-10 * max(svals[0], 1e-30):
        raise DegenerateConfiguration("object points are collinear")
    b1, b2 = vt[0], vt[1]
    n = np.cross(b1, b2)
    basis = np.stack([b1, b2, n], axis=1)
    coords2d = centered @ basis[:, :2]
    return coords2d, basis, centroid


def _hartley_normalize(points: np.ndarray):
    """Similarity transform sending points to zero mean, sqrt(2) RMS radius."""
    mean = points.mean(axis=0)
    rms = math.sqrt(np.mean(np.sum((points - mean) ** 2, axis=1)))
    scale = math.sqrt(2.0) / max(rms, 1e-30)
    t = np.array([[scale, 0.0, -scale * mean[0]],
                  [0.0, scale, -scale * mean[1]],
                  [0.0, 0.0, 1.0]])
    return (points - mean) * scale, t


def _homography_4pt(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """DLT homography from 4 planar correspondences with Hartley normalization."""
    src_n, t_src = _hartley_normalize(src)
    dst_n, t_dst = _hartley_normalize(dst)
    rows = []
    for (x, y), (u, v) in zip(src_n, dst_n):
        rows.append([-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u])
        rows.append([0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v])
    a = np.array(rows)
    _, svals, vt = np.linalg.svd(a)
    if svals[-2] < 1e-12 * max(svals[0], 1e-30):
        raise DegenerateConfiguration("homography system is rank deficient")
    h = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ h @ t_src
    if abs(h[2, 2]) < 1e-30:
        raise DegenerateConfiguration("degenerate homography normalization")
    return h / h[2, 2]


def _rotate_vec_to_z(v: np.ndarray) -> np.ndarray:
    """Rotation taking unit vector v to the +z axis."""
    v = v / np.linalg.norm(v)
    axis = np.cross(v, np.array([0.0, 0.0, 1.0]))
    s = np.linalg.norm(axis)
    c = v[2]
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        return np.diag([1.0, -1.0, -1.0])
    axis = axis / s
    kx = np.array([[0.0, -axis[2], axis[1]],
                   [axis[2], 0.0, -axis[0]],
                   [-axis[1], axis[0], 0.0]])
    return np.eye(3) + s * kx + (1.0 - c) * (kx @ kx)


def _ippe_rotations(jac: np.ndarray, v: np.ndarray):
    """Two rotation candidates from the homography Jacobian at the plane origin.

    v is the normalized image point of the plane origin.  Following the
    infinitesimal-plane construction: with Rv mapping the z axis onto the
    viewing ray, the top 2x2 block of Rv^T R equals C / gamma where
    C = B^-1 J and gamma is the largest singular value of C; the remaining
    entries follow from orthonormality with a two-fold sign ambiguity.
    """
    rv = _rotate_vec_to_z(np.array([v[0], v[1], 1.0])).T  # maps +z to the ray
    # B = rows of the projection differential at v applied to Rv's first two columns.
    b = np.array([
        [rv[0, 0] - v[0] * rv[2, 0], rv[0, 1] - v[0] * rv[2, 1]],
        [rv[1, 0] - v[1] * rv[2, 0], rv[1, 1] - v[1] * rv[2, 1]],
    ])
    det = b[0, 0] * b[1, 1] - b[0, 1] * b[1, 0]
    if abs(det) < 1e-15:
        raise DegenerateConfiguration("singular viewing geometry in planar solver")
    binv = np.array([[b[1, 1], -b[0, 1]], [-b[1, 0], b[0, 0]]]) / det
    c = binv @ jac
    ata = c.T @ c
    tr = ata[0, 0] + ata[1, 1]
    disc = math.sqrt(max((ata[0, 0] - ata[1, 1]) ** 2 + 4.0 * ata[0, 1] ** 2, 0.0))
    gamma = math.sqrt(max(0.5 * (tr + disc), 1e-30))
    rtilde = c / gamma
    b0_sq = max(1.0 - rtilde[0, 0] ** 2 - rtilde[1, 0] ** 2, 0.0)
    b1_sq = max(1.0 - rtilde[0, 1] ** 2 - rtilde[1, 1] ** 2, 0.0)
    b0 = math.sqrt(b0_sq)
    b1 = math.sqrt(b1_sq)
    if -(rtilde[0, 0] * rtilde[0, 1] + rtilde[1, 0] * rtilde[1, 1]) < 0:
        b1 = -b1
    rotations = []
    for sign in (1.0, -1.0):
        col0 = np.array([rtilde[0, 0], rtilde[1, 0], sign * b0])
        col1 = np.array([rtilde[0, 1], rtilde[1, 1], sign * b1])
        col2 = np.cross(col0, col1)
        rotations.append(orthonormalize(rv @ np.stack([col0, col1, col2], axis=1)))
    return rotations


def _translation_ls(rotation: np.ndarray, object_points: np.ndarray,
                    normalized: np.ndarray) -> np.ndarray:
    """Least-squares translation given a rotation and normalized image points."""
    rows = []
    rhs = []
    for p, m in zip(object_points, normalized):
        rp = rotation @ p
        rows.append([-1.0, 0.0, m[0]])
        rhs.append(rp[0] - m[0] * rp[2])
        rows.append([0.0, -1.0, m[1]])
        rhs.append(rp[1] - m[1] * rp[2])
    t, *_ = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)
    return t


def solve_ippe(corr: Correspondences):
    """Planar-target pose with both ambiguity candidates.

    Returns (best, alternate) sorted by reprojection error; alternate is None
    when the mirror candidate places a point behind the camera.  Raises
    NonPlanarInput for non-coplanar object points and DegenerateConfiguration
    for collinear object or image points.
    """
    coords2d, basis, centroid = _canonical_plane(corr.object_points)
    normalized = _normalized_image(corr)
    img_centered = normalized - normalized.mean(axis=0)
    svals = np.linalg.svd(img_centered, compute_uv=False)
    if svals[1] < 1e-10 * max(svals[0], 1e-30):
        raise DegenerateConfiguration("image points are collinear")

    h = _homography_4pt(coords2d, normalized)
    v = np.array([h[0, 2], h[1, 2]]) / h[2, 2]
    jac = np.array([
        [h[0, 0] - h[2, 0] * v[0], h[0, 1] - h[2, 1] * v[0]],
        [h[1, 0] - h[2, 0] * v[1], h[1, 1] - h[2, 1] * v[1]],
    ]) / h[2, 2]

    solutions = []
    for r_canon in _ippe_rotations(jac, v):
        t_canon = _translation_ls(r_canon, np.column_stack([coords2d, np.zeros(4)]),
                                  normalized)
        # Compose the canonicalizing transform back into the output pose.
        rotation = orthonormalize(r_canon @ basis.T)
        translation = t_canon - rotation @ centroid
        pose = Pose(rotation, translation)
        if not _depths_valid(pose, corr.object_points):
            continue
        solutions.append(PnPSolution(pose, reprojection_error(pose, corr), "ippe"))
    if not solutions:
        raise DegenerateConfiguration("no positive-depth planar pose")
    solutions.sort(key=lambda s: s.reprojection_error)
    best = solutions[0]
    alternate = solutions[1] if len(solutions) > 1 else None
    return best, alternate


# ---------------------------------------------------------------------------
# P3P
# ---------------------------------------------------------------------------

def _polish_quartic_root(coeffs, root: complex) -> complex:
    """Newton-polish a companion-matrix root until the step stalls."""
    c0, c1, c2, c3, c4 = (complex(c) for c in coeffs)
    for _ in range(3):
        dpoly = ((4.0 * c0 * root + 3.0 * c1) * root + 2.0 * c2) * root + c3
        if abs(dpoly) < 1e-30:
            break
        poly = (((c0 * root + c1) * root + c2) * root + c3) * root + c4
        step = poly / dpoly
        root = root - step
        if abs(step) < 1e-15 * (1.0 + abs(root)):
            break
    return root


_PAIR_I = np.array([0, 0, 1])
_PAIR_J = np.array([1, 2, 2])
_ROWS = np.arange(3)


def _triple_system(s: np.ndarray, cosines: np.ndarray, d_sq: np.ndarray):
    si, sj = s[_PAIR_I], s[_PAIR_J]
    r = si * si - 2.0 * si * sj * cosines + sj * sj - d_sq
    jac = np.zeros((3, 3))
    jac[_ROWS, _PAIR_I] = 2.0 * si - 2.0 * sj * cosines
    jac[_ROWS, _PAIR_J] += 2.0 * sj - 2.0 * si * cosines
    return r, jac


def _refine_depth_triple(depths: np.ndarray, cosines: np.ndarray,
                         d_sq: np.ndarray, iterations: int = 25) -> np.ndarray:
    """Backtracked Newton on the three law-of-cosines equations in the depths.

    Recovers the precision lost by companion-matrix roots near double roots.
    cosines and d_sq are ordered by pairs (1,2), (1,3), (2,3).
    """
    s = depths.copy()
    r, jac = _triple_system(s, cosines, d_sq)
    best_norm = float(np.abs(r).max())
    # Residuals are O(depth^2); a few float epsilons of that is convergence.
    tol = 2e-15 * max(1.0, float(s @ s))
    for _ in range(iterations):
        if best_norm < tol:
            break
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            step, *_ = np.linalg.lstsq(jac, -r, rcond=1e-12)
        improved = False
        for _ in range(8):
            trial = s + step
            if trial.min() > 0:
                trial_r, trial_jac = _triple_system(trial, cosines, d_sq)
                trial_norm = float(np.abs(trial_r).max())
                if trial_norm < best_norm:
                    s, r, jac, best_norm = trial, trial_r, trial_jac, trial_norm
                    improved = True
                    break
            step = 0.5 * step
        if not improved:
            break
    return s


def _p3p_depth_candidates(obj3: np.ndarray, bearings3: np.ndarray) -> list:
    """Positive depth triples solving the three-point distance system.

    Classical reduction: with u = s2/s1 and v = s3/s1, eliminating v yields a
    quartic in u solved via companion-matrix eigenvalues with Newton polish;
    each admissible root is converted to depths and refined on the original
    law-of-cosines system.
    """
    c2 = float(np.sum((obj3[0] - obj3[1]) ** 2))
    b2 = float(np.sum((obj3[0] - obj3[2]) ** 2))
    a2 = float(np.sum((obj3[1] - obj3[2]) ** 2))
    cos_a = float(bearings3[1] @ bearings3[2])
    cos_b = float(bearings3[0] @ bearings3[2])
    cos_g = float(bearings3[0] @ bearings3[1])
    k1 = a2 / c2
    k2 = b2 / c2

    # D(u) = 1 + u^2 - 2 u cos_g;  v(u) = N(u) / den(u) with
    # N = u^2 - 1 + (k2 - k1) D and den = 2 (u cos_a - cos_b); substituting
    # v back gives the quartic  N^2 - 2 cos_b N den + (1 - k2 D) den^2 = 0.
    d_poly = np.array([1.0, -2.0 * cos_g, 1.0])
    n_poly = np.polyadd(np.array([1.0, 0.0, -1.0]), (k2 - k1) * d_poly)
    den_poly = np.array([2.0 * cos_a, -2.0 * cos_b])
    quartic = np.polyadd(
        np.polymul(n_poly, n_poly),
        np.polyadd(
            -2.0 * cos_b * np.polymul(n_poly, den_poly),
            np.polymul(np.polyadd(-k2 * d_poly, np.array([1.0])),
                       np.polymul(den_poly, den_poly)),
        ),
    )

    lead = np.abs(quartic).max()
    if lead < 1e-30:
        raise NoRealSolution("degenerate distance polynomial")
    quartic = quartic / lead

    cosines = np.array([cos_g, cos_b, cos_a])
    d_sq = np.array([c2, b2, a2])
    scale_sq = max(c2, b2, a2)
    triples = []
    # A loose imaginary tolerance keeps near-double pairs that float noise
    # pushed slightly complex; the rational back-substitution for the third
    # depth is avoided (its denominator can vanish), taking instead both
    # roots of its defining quadratic and keeping whatever Newton confirms.
    for root in np.roots(quartic):
        root = _polish_quartic_root(quartic, root)
        if abs(root.imag) > 1e-4 * (1.0 + abs(root.real)):
            continue
        u = float(root.real)
        if u <= 0:
            continue
        d_val = 1.0 + u * u - 2.0 * u * cos_g
        if d_val <= 1e-15:
            continue
        s1 = math.sqrt(c2 / d_val)
        disc = s1 * s1 * (cos_b * cos_b - 1.0) + b2
        # Tangency configurations drift slightly negative in floats; clamp
        # and let the depth refinement absorb the difference.
        if disc < -1e-5 * b2:
            continue
        sq = math.sqrt(max(disc, 0.0))
        for s3 in (s1 * cos_b + sq, s1 * cos_b - sq):
            if s3 <= 0:
                continue
            seed = np.array([s1, u * s1, s3])
            candidate = _refine_depth_triple(seed, cosines, d_sq)
            residual, _ = _triple_system(candidate, cosines, d_sq)
            accept = 5e-13 * max(scale_sq, float(candidate @ candidate))
            if np.abs(residual).max() < accept and candidate.min() > 0:
                triples.append(candidate)

    unique = []
    for depths in triples:
        if np.all(depths > 0) and not any(
                np.allclose(depths, seen, atol=1e-9) for seen in unique):
            unique.append(depths)
    return unique


def _unit_bearings(corr: Correspondences) -> np.ndarray:
    normalized = _normalized_image(corr)
    bearings = np.column_stack([normalized, np.ones(4)])
    return bearings / np.linalg.norm(bearings, axis=1, keepdims=True)


def solve_p3p(corr: Correspondences) -> PnPSolution:
    """Three-point pose, fourth point used only for disambiguation.

    Each depth triple from the polynomial system yields a candidate rigid
    transform via absolute orientation on the three camera-frame points; the
    fourth correspondence picks the winner by minimum reprojection error.
    """
    obj = corr.object_points
    bearings = _unit_bearings(corr)
    area = np.linalg.norm(np.cross(obj[1] - obj[0], obj[2] - obj[0]))
    if area < 1e-12:
        raise DegenerateConfiguration("first three object points are collinear")

    best = None
    for depths in _p3p_depth_candidates(obj[:3], bearings[:3]):
        cam_pts = bearings[:3] * depths[:, None]
        pose = _kabsch(obj[:3], cam_pts)
        if not _depths_valid(pose, obj):
            continue
        err = reprojection_error(pose, corr)
        if best is None or err < best.reprojection_error:
            best = PnPSolution(pose, err, "p3p")
    if best is None:
        raise NoRealSolution("no positive-depth real root")
    return best


# ---------------------------------------------------------------------------
# EPnP
# ---------------------------------------------------------------------------

def _control_points(obj: np.ndarray):
    """Centroid plus principal directions; 3 control points for planar input."""
    centroid = obj.mean(axis=0)
    centered = obj - centroid
    cov = centered.T @ centered / len(obj)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    if evals[0] < 1e-18:
        raise SingularSystem("object points are coincident")
    planar = evals[2] < 1e-12 * evals[0]
    count = 3 if planar else 4
    ctrl = [centroid]
    for k in range(count - 1):
        ctrl.append(centroid + math.sqrt(max(evals[k], 1e-30)) * evecs[:, k])
    return np.array(ctrl), planar


def _barycentric(obj: np.ndarray, ctrl: np.ndarray) -> np.ndarray:
    """Affine coordinates of each object point in the control-point basis."""
    nc = len(ctrl)
    a = np.vstack([ctrl.T, np.ones(nc)])  # 4 x nc
    b = np.vstack([obj.T, np.ones(len(obj))])  # 4 x n
    alphas, residual, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    if rank < nc:
        raise SingularSystem("control-point basis is rank deficient")
    return alphas.T  # n x nc


def _epnp_pose_from_kernel(x: np.ndarray, alphas: np.ndarray,
                           obj: np.ndarray) -> Pose:
    nc = alphas.shape[1]
    ctrl_cam = x.reshape(nc, 3)
    cam_pts = alphas @ ctrl_cam
    if cam_pts[:, 2].sum() < 0:
        cam_pts = -cam_pts
    return _kabsch(obj, cam_pts)


def _control_distances(ctrl: np.ndarray) -> tuple[list, np.ndarray]:
    pairs = [(i, j) for i in range(len(ctrl)) for j in range(i + 1, len(ctrl))]
    dists = np.array([np.linalg.norm(ctrl[i] - ctrl[j]) for i, j in pairs])
    return pairs, dists


def _kernel_pair_diffs(kernel: np.ndarray, pairs) -> np.ndarray:
    return np.stack([kernel[3 * i:3 * i + 3, :] - kernel[3 * j:3 * j + 3, :]
                     for i, j in pairs])  # (npairs, 3, nv)


def _gauss_newton_betas(diffs: np.ndarray, dists: np.ndarray,
                        betas: np.ndarray, iterations: int = 15) -> np.ndarray:
    """Refine kernel coefficients so control-point distances are preserved.

    Backtracks on the step length, so a poorly scaled Jacobian (shallow
    perspective) cannot throw a good seed away.
    """
    target = dists ** 2
    tol = 1e-14 * max(1.0, float(target.max()))

    def residual_of(b):
        edge = np.einsum("pkv,v->pk", diffs, b)
        return np.sum(edge ** 2, axis=1) - target, edge

    residual, edge = residual_of(betas)
    best_norm = float(np.abs(residual).max())
    for _ in range(iterations):
        if best_norm < tol:
            break
        jac = 2.0 * np.einsum("pk,pkv->pv", edge, diffs)
        step, *_ = np.linalg.lstsq(jac, -residual, rcond=None)
        improved = False
        for _ in range(12):
            trial = betas + step
            trial_residual, trial_edge = residual_of(trial)
            trial_norm = float(np.abs(trial_residual).max())
            if trial_norm < best_norm:
                betas, residual, edge = trial, trial_residual, trial_edge
                best_norm = trial_norm
                improved = True
                break
            step = 0.5 * step
        if not improved:
            break
    return betas


def _planar_seed(kernel: np.ndarray, pairs, dists: np.ndarray) -> np.ndarray:
    """Scale of the single kernel vector from control-distance least squares."""
    dv = np.stack([kernel[3 * i:3 * i + 3, 0] - kernel[3 * j:3 * j + 3, 0]
                   for i, j in pairs])
    norms_sq = np.sum(dv ** 2, axis=1)
    denom = float(np.sum(norms_sq ** 2))
    if denom < 1e-30:
        raise SingularSystem("kernel vector carries no control-point spread")
    return np.array([math.sqrt(max(float(np.sum(dists ** 2 * norms_sq)) / denom, 0.0))])


def _depth_kernel(alphas: np.ndarray, bearings: np.ndarray) -> np.ndarray:
    """Exact kernel basis of the 4-point system, one vector per point depth.

    With exactly four correspondences the projection system's null space is
    spanned by configurations placing each point alone on its bearing, so the
    kernel coefficients are simply the four point depths.
    """
    alpha_inv = np.linalg.inv(alphas)  # barycentric map is square here
    nc = alphas.shape[1]
    w = np.zeros((3 * nc, 4))
    for k in range(4):
        for j in range(nc):
            w[3 * j:3 * j + 3, k] = alpha_inv[j, k] * bearings[k]
    return w


def _fourth_depth_seeds(depths3: np.ndarray, bearings: np.ndarray,
                        obj: np.ndarray) -> list:
    """Fourth depths from the (point 1, point 4) distance equation.

    Both quadratic roots are scored on the remaining two distance equations
    and the clearly worse one is dropped.
    """
    cos14 = float(bearings[0] @ bearings[3])
    d14_sq = float(np.sum((obj[0] - obj[3]) ** 2))
    s1 = depths3[0]
    disc = s1 * s1 * (cos14 * cos14 - 1.0) + d14_sq
    if disc < -1e-5 * d14_sq:
        return []
    sq = math.sqrt(max(disc, 0.0))
    roots = [s4 for s4 in (s1 * cos14 + sq, s1 * cos14 - sq) if s4 > 0]
    if len(roots) < 2:
        return roots

    def misfit(s4):
        total = 0.0
        for k in (1, 2):
            cos_k = float(bearings[k] @ bearings[3])
            d_sq = float(np.sum((obj[k] - obj[3]) ** 2))
            sk = depths3[k]
            total += abs(sk * sk - 2.0 * sk * s4 * cos_k + s4 * s4 - d_sq)
        return total

    scored = sorted(roots, key=misfit)
    if misfit(scored[1]) > 100.0 * (misfit(scored[0]) + 1e-12 * d14_sq):
        return scored[:1]
    return scored


def solve_epnp(corr: Correspondences) -> PnPSolution:
    """Control-point pose linearization with Gauss-Newton beta refinement.

    The planar case uses three control points and the one-dimensional null
    space of the projection system, scaled by distance least squares.  With
    four non-coplanar points the null space is exactly four-dimensional and
    parametrized by the point depths, so the kernel coefficients are seeded
    algebraically from the three-point distance polynomial plus the fourth
    distance equation.  Both cases finish with a Gauss-Newton pass on the
    control-point distances and absolute orientation over all four points.
    """
    obj = corr.object_points
    if _min_pairwise_distance(obj) < 1e-9:
        raise SingularSystem("object points are not pairwise distinct")
    normalized = _normalized_image(corr)
    ctrl, planar = _control_points(obj)
    alphas = _barycentric(obj, ctrl)
    nc = len(ctrl)

    m = np.zeros((8, 3 * nc))
    for i in range(4):
        for j in range(nc):
            m[2 * i, 3 * j] = alphas[i, j]
            m[2 * i, 3 * j + 2] = -alphas[i, j] * normalized[i, 0]
            m[2 * i + 1, 3 * j + 1] = alphas[i, j]
            m[2 * i + 1, 3 * j + 2] = -alphas[i, j] * normalized[i, 1]

    pairs, dists = _control_distances(ctrl)
    if planar:
        _, svals, vt = np.linalg.svd(m)
        if svals[0] < 1e-15:
            raise SingularSystem("projection system vanished")
        kernel = vt[-1:].T
        seeds = [_planar_seed(kernel, pairs, dists)]
    else:
        bearings = _unit_bearings(corr)
        kernel = _depth_kernel(alphas, bearings)
        seeds = []
        try:
            triples = _p3p_depth_candidates(obj[:3], bearings[:3])
        except NoRealSolution:
            triples = []
        for depths3 in triples:
            for s4 in _fourth_depth_seeds(depths3, bearings, obj):
                seeds.append(np.append(depths3, s4))
        if not seeds:
            raise SingularSystem("no admissible depth seed")

    diffs = _kernel_pair_diffs(kernel, pairs)
    best = None
    for betas in seeds:
        refined = _gauss_newton_betas(diffs, dists, betas)
        x = kernel @ refined
        if np.linalg.norm(x) < 1e-15:
            continue
        pose = _epnp_pose_from_kernel(x, alphas, obj)
        if not _depths_valid(pose, obj):
            continue
        err = reprojection_error(pose, corr)
        if best is None or err < best.reprojection_error:
            best = PnPSolution(pose, err, "epnp")
    if best is None:
        raise SingularSystem("no valid EPnP solution")
    return best


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def method_compatible(method: str, template_kind: str) -> bool:
    if method not in METHODS:
        raise ValueError(f"unknown PnP method {method!r}")
    return not (method == "ippe" and template_kind == "tetrahedron")


def recover_grasp(image_points, template: KeypointTemplate, cam: CameraModel,
                  method: str) -> PnPSolution:
    """Recover a grasp pose from the four projected assistant points."""
    if not method_compatible(method, template.kind):
        raise IncompatibleMethodTemplate(
            f"{method} requires coplanar points; {template.kind} is non-planar")
    corr = Correspondences(template.points, image_points, cam)
    if method == "ippe":
        best, _ = solve_ippe(corr)
        return best
    if method == "p3p":
        return solve_p3p(corr)
    return solve_epnp(corr)
