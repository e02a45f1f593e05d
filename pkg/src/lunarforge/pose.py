"""Relative-pose recovery and scoring: essential matrix, PnP, RRA/RTA, and
RANSAC similarity alignment.

Pixel matches are lifted to projective ray coordinates in each camera's own
frame; the essential matrix here satisfies h2^T E h1 = 0 for those rays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .camera import Intrinsics, Pose, orthonormalized
from .renderer import CorrespondenceSet


class InsufficientMatchesError(ValueError):
    """Fewer matches than the minimal solver requires."""


class DegenerateBaselineError(ValueError):
    """Matches are explained by a pure rotation: translation unobservable."""


class DegenerateGeometryError(ValueError):
    """Input configuration is rank-deficient (e.g. collinear 3D points)."""


class RansacError(RuntimeError):
    """No hypothesis reached consensus."""


@dataclass(frozen=True)
class RansacParams:
    iterations: int = 2000
    inlier_threshold: float = 1.0  # pixels (essential/PnP) or meters (alignment)
    seed: int = 0


@dataclass(frozen=True, eq=False)
class EssentialEstimate:
    E: np.ndarray            # 3x3, singular values (1, 1, 0) after scaling
    inliers: np.ndarray      # indices into the match list
    relative_pose: Pose      # camera 2 in camera 1's frame, unit-norm translation


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """x -> scale * rotation @ x + translation."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be > 0")
        r = np.asarray(self.rotation, dtype=np.float64)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9):
            raise ValueError("rotation is not orthonormal within 1e-9")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * (np.asarray(points, dtype=np.float64) @ self.rotation.T) + self.translation

    def to_json_dict(self) -> dict:
        return {
            "scale": float(self.scale),
            "rotation": [float(v) for v in self.rotation.reshape(-1)],
            "translation": [float(v) for v in self.translation],
        }


def _match_rays(matches: np.ndarray, intr1: Intrinsics, intr2: Intrinsics):
    """Projective ray coordinates h = ((u-cx)/f, -(v-cy)/f, -1) per view."""
    m = np.asarray(matches, dtype=np.float64).reshape(-1, 4)
    h1 = np.column_stack([
        (m[:, 0] - intr1.cx) / intr1.focal_px,
        -(m[:, 1] - intr1.cy) / intr1.focal_px,
        -np.ones(len(m)),
    ])
    h2 = np.column_stack([
        (m[:, 2] - intr2.cx) / intr2.focal_px,
        -(m[:, 3] - intr2.cy) / intr2.focal_px,
        -np.ones(len(m)),
    ])
    return h1, h2


def _eight_point(h1: np.ndarray, h2: np.ndarray) -> np.ndarray:
    """Least-squares essential matrix with the (1, 1, 0) spectrum enforced."""
    a = np.einsum("ni,nj->nij", h2, h1).reshape(len(h1), 9)
    _, _, vt = np.linalg.svd(a)
    e = vt[-1].reshape(3, 3)
    u, s, vt = np.linalg.svd(e)
    mean = (s[0] + s[1]) / 2
    return u @ np.diag([mean, mean, 0.0]) @ vt


def _sampson_px(e: np.ndarray, h1: np.ndarray, h2: np.ndarray, focal: float) -> np.ndarray:
    """First-order geometric (Sampson) distance, converted to pixels."""
    eh1 = h1 @ e.T
    eth2 = h2 @ e
    num = np.einsum("ni,ni->n", h2, eh1)
    denom = eh1[:, 0] ** 2 + eh1[:, 1] ** 2 + eth2[:, 0] ** 2 + eth2[:, 1] ** 2
    denom = np.maximum(denom, 1e-300)
    return focal * np.abs(num) / np.sqrt(denom)


def _decompose_essential(e: np.ndarray):
    u, _, vt = np.linalg.svd(e)
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    r1 = u @ w @ vt
    r2 = u @ w.T @ vt
    t = u[:, 2]
    return [(r1, t), (r1, -t), (r2, t), (r2, -t)]


def _triangulate_depths(r21: np.ndarray, t21: np.ndarray, h1: np.ndarray, h2: np.ndarray):
    """Midpoint-method ray parameters (s, w) of each match: p1 = s h1,
    p2 = w h2 with p2 = r21 p1 + t21.  Positive pair means in front of both."""
    a = h1 @ r21.T  # rotated view-1 rays, expressed in camera 2
    b = h2
    # Least squares for [s, w] in s*a - w*b = -t21, per match.
    aa = np.einsum("ni,ni->n", a, a)
    bb = np.einsum("ni,ni->n", b, b)
    ab = np.einsum("ni,ni->n", a, b)
    at = a @ t21
    bt = b @ t21
    det = aa * bb - ab * ab
    det = np.where(np.abs(det) < 1e-300, np.nan, det)
    s = (-at * bb + ab * bt) / det
    w = (-at * ab + aa * bt) / det
    return s, w


def _rotation_residual(h1: np.ndarray, h2: np.ndarray) -> float:
    """RMS angle (radians) left after the best pure rotation h1 -> h2."""
    d1 = h1 / np.linalg.norm(h1, axis=1, keepdims=True)
    d2 = h2 / np.linalg.norm(h2, axis=1, keepdims=True)
    r = orthonormalized(d2.T @ d1)
    cosang = np.clip(np.einsum("ni,ni->n", d1 @ r.T, d2), -1.0, 1.0)
    return float(np.sqrt(np.mean(np.arccos(cosang) ** 2)))


def estimate_essential(
    matches: CorrespondenceSet | np.ndarray,
    intr1: Intrinsics,
    intr2: Intrinsics,
    ransac: RansacParams = RansacParams(),
) -> EssentialEstimate:
    """Normalized 8-point solve inside RANSAC with cheirality disambiguation.

    Returns the pose of camera 2 in camera 1's frame with unit translation.
    Raises DegenerateBaselineError when a pure rotation explains the matches.
    """
    pairs = matches.pairs if isinstance(matches, CorrespondenceSet) else np.asarray(matches)
    n = len(pairs)
    if n < 8:
        raise InsufficientMatchesError(f"essential estimation needs >= 8 matches, got {n}")
    h1, h2 = _match_rays(pairs, intr1, intr2)
    if _rotation_residual(h1, h2) < 1e-5:
        raise DegenerateBaselineError(
            "matches are consistent with a pure rotation; baseline unobservable"
        )

    focal = intr1.focal_px
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(ransac.seed, 0xE55)))
    best_inliers = None
    best_count = -1
    for _ in range(ransac.iterations):
        idx = rng.choice(n, size=8, replace=False)
        try:
            e = _eight_point(h1[idx], h2[idx])
        except np.linalg.LinAlgError:
            continue
        err = _sampson_px(e, h1, h2, focal)
        inliers = err < ransac.inlier_threshold
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_inliers = inliers
        if count == n:
            break
    if best_inliers is None or best_count < 8:
        raise RansacError("essential RANSAC found no consensus set")

    e = _eight_point(h1[best_inliers], h2[best_inliers])
    err = _sampson_px(e, h1, h2, focal)
    best_inliers = err < ransac.inlier_threshold
    if best_inliers.sum() >= 8:
        e = _eight_point(h1[best_inliers], h2[best_inliers])

    # Cheirality: pick the candidate putting the most inliers in front of both.
    hi1 = h1[best_inliers]
    hi2 = h2[best_inliers]
    best_pose = None
    best_front = -1
    for r21, t21 in _decompose_essential(e):
        s, w = _triangulate_depths(r21, t21, hi1, hi2)
        front = int(np.sum((s > 0) & (w > 0)))
        if front > best_front:
            best_front = front
            best_pose = (r21, t21)
    r21, t21 = best_pose
    r_rel = r21.T
    t_rel = -r21.T @ t21
    t_rel = t_rel / np.linalg.norm(t_rel)
    rel = Pose(rotation=orthonormalized(r_rel), translation=t_rel)
    e_unit = e / np.linalg.norm(e)
    return EssentialEstimate(E=e_unit, inliers=np.flatnonzero(best_inliers), relative_pose=rel)


def essential_from_poses(pose_a: Pose, pose_b: Pose) -> np.ndarray:
    """Ground-truth essential matrix (unit Frobenius norm) for two poses."""
    b = pose_b.translation - pose_a.translation
    bx = np.array([[0, -b[2], b[1]], [b[2], 0, -b[0]], [-b[1], b[0], 0.0]])
    e = pose_b.rotation.T @ bx @ pose_a.rotation
    n = np.linalg.norm(e)
    if n == 0:
        raise DegenerateBaselineError("zero baseline has no essential matrix")
    return e / n


# ---------------------------------------------------------------------------
# PnP
# ---------------------------------------------------------------------------


def _pnp_normalized(pixels: np.ndarray, intr: Intrinsics):
    """Image points in a +z-forward normalized frame used by the DLT."""
    x = (pixels[:, 0] - intr.cx) / intr.focal_px
    y = (pixels[:, 1] - intr.cy) / intr.focal_px
    return np.column_stack([x, y])


def _dlt_pose(xy: np.ndarray, pts: np.ndarray):
    """DLT estimate of [R|t] mapping world points into the +z-forward frame."""
    n = len(xy)
    a = np.zeros((2 * n, 12))
    xh = np.column_stack([pts, np.ones(n)])
    a[0::2, 0:4] = xh
    a[0::2, 8:12] = -xy[:, 0:1] * xh
    a[1::2, 4:8] = xh
    a[1::2, 8:12] = -xy[:, 1:2] * xh
    _, s, vt = np.linalg.svd(a)
    if s[-2] < 1e-10 * s[0]:
        raise DegenerateGeometryError("PnP design matrix is rank deficient")
    p = vt[-1].reshape(3, 4)
    m = p[:, :3]
    det = np.linalg.det(m)
    if abs(det) < 1e-300:
        raise DegenerateGeometryError("degenerate projection matrix")
    # det(M) > 0 pins the free sign of the DLT solution (true M is a rotation).
    if det < 0:
        p = -p
        m = -m
    scale = np.linalg.det(m) ** (1.0 / 3.0)
    r = orthonormalized(m / scale)
    t = p[:, 3] / scale
    return r, t


def _so3_exp(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        return np.eye(3) + np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]])
    k = w / theta
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(theta) * kx + (1 - math.cos(theta)) * (kx @ kx)


def _gauss_newton_pnp(r, t, xy, pts, iterations=15):
    """Refine (R, t) by minimizing normalized reprojection error."""
    for _ in range(iterations):
        pc = pts @ r.T + t
        z = pc[:, 2]
        if np.any(z <= 0):
            break
        proj = pc[:, :2] / z[:, None]
        res = (proj - xy).reshape(-1)
        n = len(pts)
        jac = np.zeros((2 * n, 6))
        inv_z = 1.0 / z
        x, y = pc[:, 0], pc[:, 1]
        # d(proj)/d(pc)
        j_pc_u = np.column_stack([inv_z, np.zeros(n), -x * inv_z**2])
        j_pc_v = np.column_stack([np.zeros(n), inv_z, -y * inv_z**2])
        # d(pc)/d(w) = -[pc]x, d(pc)/d(t) = I
        for i in range(n):
            px = np.array([[0, -pc[i, 2], pc[i, 1]], [pc[i, 2], 0, -pc[i, 0]], [-pc[i, 1], pc[i, 0], 0]])
            jac[2 * i, 0:3] = j_pc_u[i] @ (-px)
            jac[2 * i, 3:6] = j_pc_u[i]
            jac[2 * i + 1, 0:3] = j_pc_v[i] @ (-px)
            jac[2 * i + 1, 3:6] = j_pc_v[i]
        jtj = jac.T @ jac
        jtr = jac.T @ res
        try:
            delta = np.linalg.solve(jtj + 1e-12 * np.eye(6), -jtr)
        except np.linalg.LinAlgError:
            break
        r = _so3_exp(delta[0:3]) @ r
        t = t + delta[3:6]
        if np.linalg.norm(delta) < 1e-14:
            break
    return r, t


_FLIP = np.diag([1.0, -1.0, -1.0])  # between the -z-forward camera frame and the +z DLT frame


def solve_pnp(
    matches_2d3d,
    intr: Intrinsics,
    ransac: RansacParams = RansacParams(),
) -> Pose:
    """Camera-to-world pose from (pixel, world point) matches.

    DLT initialization inside RANSAC followed by Gauss-Newton refinement on
    the inlier set.  Needs >= 6 non-degenerate matches.
    """
    if isinstance(matches_2d3d, tuple):
        pixels, pts = matches_2d3d
    else:
        pixels = np.asarray([m[0] for m in matches_2d3d], dtype=np.float64)
        pts = np.asarray([m[1] for m in matches_2d3d], dtype=np.float64)
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n < 6:
        raise InsufficientMatchesError(f"PnP needs >= 6 matches, got {n}")
    centered = pts - pts.mean(axis=0)
    svals = np.linalg.svd(centered, compute_uv=False)
    if svals[1] < 1e-9 * max(svals[0], 1.0):
        raise DegenerateGeometryError("3D points are collinear")

    xy = _pnp_normalized(pixels, intr)
    thresh_norm = ransac.inlier_threshold / intr.focal_px
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(ransac.seed, 0x9A9)))
    best = None
    best_count = -1
    for _ in range(ransac.iterations):
        idx = rng.choice(n, size=6, replace=False)
        try:
            r, t = _dlt_pose(xy[idx], pts[idx])
        except (DegenerateGeometryError, np.linalg.LinAlgError):
            continue
        pc = pts @ r.T + t
        z = pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            proj = pc[:, :2] / z[:, None]
            err = np.linalg.norm(proj - xy, axis=1)
        inliers = (z > 0) & np.isfinite(err) & (err < thresh_norm)
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best = inliers
        if count == n:
            break
    if best is None or best_count < 6:
        raise RansacError("PnP RANSAC found no consensus set")

    r, t = _dlt_pose(xy[best], pts[best])
    r, t = _gauss_newton_pnp(r, t, xy[best], pts[best])
    # Back to the -z-forward convention: R_c2w = (F R)^T, center = -R^T t.
    rotation = (_FLIP @ r).T
    center = -r.T @ t
    return Pose(rotation=orthonormalized(rotation), translation=center)


# ---------------------------------------------------------------------------
# Accuracy metrics
# ---------------------------------------------------------------------------


def rra(r_gt: np.ndarray, r_pred: np.ndarray) -> float:
    """Relative rotation angular error in degrees."""
    r_gt = np.asarray(r_gt, dtype=np.float64)
    r_pred = np.asarray(r_pred, dtype=np.float64)
    cosang = (np.trace(r_gt.T @ r_pred) - 1) / 2
    return math.degrees(math.acos(max(-1.0, min(1.0, cosang))))


def rta(t_gt, t_pred) -> float:
    """Angle between translation directions in degrees (sign-sensitive).

    atan2(|a x b|, a.b) equals the arccos of the normalized dot in exact
    arithmetic and stays accurate for near-parallel directions.
    """
    a = np.asarray(t_gt, dtype=np.float64)
    b = np.asarray(t_pred, dtype=np.float64)
    if np.linalg.norm(a) == 0 or np.linalg.norm(b) == 0:
        raise DegenerateBaselineError("zero translation has no direction")
    return math.degrees(math.atan2(np.linalg.norm(np.cross(a, b)), float(a @ b)))


def pose_accuracy_table(errors, thresholds) -> dict:
    """Fraction of errors strictly below each threshold (degrees)."""
    errors = np.asarray(list(errors), dtype=np.float64)
    if errors.size == 0:
        raise ValueError("empty error list")
    thresholds = list(thresholds)
    if sorted(thresholds) != thresholds:
        raise ValueError("thresholds must be sorted ascending")
    return {float(tau): float(np.mean(errors < tau)) for tau in thresholds}


# ---------------------------------------------------------------------------
# Similarity alignment
# ---------------------------------------------------------------------------


def umeyama(src: np.ndarray, dst: np.ndarray) -> SimilarityTransform:
    """Least-squares similarity transform: dst ~= s R src + t.

    Closed form; the rotation determinant is forced to +1 (no reflections).
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if src.shape != dst.shape or len(src) < 3:
        raise ValueError("umeyama needs >= 3 paired points")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    ds = src - mu_s
    dd = dst - mu_d
    var_s = (ds**2).sum() / len(src)
    if var_s < 1e-300:
        raise DegenerateGeometryError("source points are coincident")
    cov = dd.T @ ds / len(src)
    u, d, vt = np.linalg.svd(cov)
    if d[1] < 1e-12 * max(d[0], 1.0):
        raise DegenerateGeometryError("point configuration is collinear")
    s_diag = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s_diag[2] = -1
    r = u @ np.diag(s_diag) @ vt
    scale = float((d * s_diag).sum() / var_s)
    if scale <= 0:
        raise DegenerateGeometryError("non-positive similarity scale")
    t = mu_d - scale * r @ mu_s
    return SimilarityTransform(scale=scale, rotation=orthonormalized(r), translation=t)


def ransac_align(
    pred_cloud: np.ndarray,
    gt_cloud: np.ndarray,
    ransac: RansacParams = RansacParams(iterations=2000, inlier_threshold=1.0),
):
    """RANSAC over 3-point umeyama hypotheses aligning pred to gt by index.

    Returns (SimilarityTransform, inlier mask).  The threshold is in meters.
    """
    pred = np.asarray(pred_cloud, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt_cloud, dtype=np.float64).reshape(-1, 3)
    if pred.shape != gt.shape or len(pred) < 3:
        raise ValueError("alignment needs >= 3 index-paired points")
    n = len(pred)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(ransac.seed, 0xA116)))
    best_mask = None
    best_count = -1
    for _ in range(ransac.iterations):
        idx = rng.choice(n, size=3, replace=False)
        try:
            hyp = umeyama(pred[idx], gt[idx])
        except (DegenerateGeometryError, ValueError):
            continue
        err = np.linalg.norm(hyp.apply(pred) - gt, axis=1)
        inliers = err < ransac.inlier_threshold
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_mask = inliers
        if count == n:
            break
    if best_mask is None or best_count < 3:
        raise RansacError("similarity RANSAC found no consensus set")
    transform = umeyama(pred[best_mask], gt[best_mask])
    err = np.linalg.norm(transform.apply(pred) - gt, axis=1)
    final_mask = err < ransac.inlier_threshold
    if final_mask.sum() >= 3:
        transform = umeyama(pred[final_mask], gt[final_mask])
    else:
        final_mask = best_mask
    return transform, final_mask
