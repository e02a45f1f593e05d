"""Dense-geometry evaluation: Chamfer family, slope and profile statistics,
SSIM on depth maps, the scale-invariant pointmap loss, and the per-pair
evaluation protocol that ties them together.

Degenerate inputs (constant depth, zero-variance slopes, zero baselines) are
reported through flags; no metric silently propagates NaN.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .camera import Pose, relative_pose
from .pose import (
    DegenerateBaselineError,
    RansacParams,
    SimilarityTransform,
    ransac_align,
    rra,
    rta,
)
from .renderer import PointMap
from .terrain import slope_map


class DegenerateMetricError(ValueError):
    """Metric undefined for this input (flagged, never NaN)."""


# ---------------------------------------------------------------------------
# Point-cloud distances
# ---------------------------------------------------------------------------


def accuracy_completeness(pred_cloud: np.ndarray, gt_cloud: np.ndarray):
    """Mean nearest-neighbor distances pred->gt (accuracy) and gt->pred
    (completeness); chamfer is their average.  Clouds must be pre-aligned."""
    pred = np.asarray(pred_cloud, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt_cloud, dtype=np.float64).reshape(-1, 3)
    if len(pred) == 0 or len(gt) == 0:
        raise ValueError("point clouds must be non-empty")
    d_pred, _ = cKDTree(gt).query(pred, k=1)
    d_gt, _ = cKDTree(pred).query(gt, k=1)
    accuracy = float(np.mean(d_pred))
    completeness = float(np.mean(d_gt))
    return accuracy, completeness, (accuracy + completeness) / 2


def scene_scale(gt_cloud: np.ndarray) -> float:
    """Mean distance of ground-truth points to their centroid."""
    gt = np.asarray(gt_cloud, dtype=np.float64).reshape(-1, 3)
    if len(gt) == 0:
        raise ValueError("empty ground-truth cloud")
    return float(np.mean(np.linalg.norm(gt - gt.mean(axis=0), axis=1)))


def relative_error(metric_m: float, scale_m: float) -> float:
    """Metric normalized by the scene scale."""
    if scale_m <= 0:
        raise DegenerateMetricError("scene scale must be > 0")
    return metric_m / scale_m


# ---------------------------------------------------------------------------
# Slope metrics
# ---------------------------------------------------------------------------


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    va = float(np.sqrt((a**2).sum()))
    vb = float(np.sqrt((b**2).sum()))
    if va == 0 or vb == 0:
        raise DegenerateMetricError("zero-variance field: correlation undefined")
    # Cauchy-Schwarz bounds the true value; clamp float rounding at the edge.
    return float(np.clip((a * b).sum() / (va * vb), -1.0, 1.0))


def slope_metrics(pred_elev: np.ndarray, gt_elev: np.ndarray, spacing: float):
    """(Pearson correlation, MAE degrees) of slope maps over the shared mask."""
    pred = np.asarray(pred_elev, dtype=np.float64)
    gt = np.asarray(gt_elev, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError("elevation rasters must share a shape")
    sp = slope_map(pred, spacing).slopes
    sg = slope_map(gt, spacing).slopes
    valid = np.isfinite(sp) & np.isfinite(sg)
    if valid.sum() < 2:
        raise DegenerateMetricError("fewer than 2 valid overlapping slope cells")
    corr = _pearson(sp[valid], sg[valid])
    mae = float(np.mean(np.abs(sp[valid] - sg[valid])))
    return corr, mae


# ---------------------------------------------------------------------------
# SSIM on depth
# ---------------------------------------------------------------------------

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim_depth(pred_depth: np.ndarray, gt_depth: np.ndarray) -> float:
    """Mean windowed SSIM over windows whose full support is valid.

    11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, dynamic range
    L = max - min of the ground-truth depths.
    """
    pred = np.asarray(pred_depth, dtype=np.float64)
    gt = np.asarray(gt_depth, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError("depth rasters must share a shape")
    valid = np.isfinite(pred) & np.isfinite(gt)
    if not valid.any():
        raise ValueError("shared valid mask is empty")
    gvals = gt[valid]
    dr = float(gvals.max() - gvals.min())
    if dr == 0:
        raise DegenerateMetricError("constant ground-truth depth: L = 0")

    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    x = np.where(valid, pred, 0.0)
    y = np.where(valid, gt, 0.0)

    def win(img):
        return ndimage.correlate(img, kernel, mode="constant", cval=0.0)

    support = win(valid.astype(np.float64))
    full = support > 1 - 1e-9
    if not full.any():
        raise DegenerateMetricError("no window has full valid support")

    mu_x = win(x)
    mu_y = win(y)
    var_x = win(x * x) - mu_x**2
    var_y = win(y * y) - mu_y**2
    cov = win(x * y) - mu_x * mu_y
    c1 = (SSIM_K1 * dr) ** 2
    c2 = (SSIM_K2 * dr) ** 2
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    )
    return float(np.mean(ssim_map[full]))


# ---------------------------------------------------------------------------
# Depth profiles
# ---------------------------------------------------------------------------


def profile_rows(height: int, n_profiles: int) -> list[int]:
    """Evenly spaced row indices including the central row for odd counts."""
    if n_profiles < 1:
        raise ValueError("n_profiles must be >= 1")
    return [(i + 1) * height // (n_profiles + 1) for i in range(n_profiles)]


def profile_metrics(pred_depth: np.ndarray, gt_depth: np.ndarray, n_profiles: int = 5):
    """(MAE meters, Pearson correlation) averaged over horizontal profiles.

    Profiles with fewer than 2 shared valid pixels are skipped; correlation
    additionally requires non-constant values on both sides.
    """
    pred = np.asarray(pred_depth, dtype=np.float64)
    gt = np.asarray(gt_depth, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError("depth rasters must share a shape")
    maes = []
    corrs = []
    for row in profile_rows(pred.shape[0], n_profiles):
        p = pred[row]
        g = gt[row]
        valid = np.isfinite(p) & np.isfinite(g)
        if valid.sum() < 2:
            continue
        maes.append(float(np.mean(np.abs(p[valid] - g[valid]))))
        try:
            corrs.append(_pearson(p[valid], g[valid]))
        except DegenerateMetricError:
            pass
    if not maes:
        raise DegenerateMetricError("all profiles skipped (too few valid pixels)")
    mae = float(np.mean(maes))
    if not corrs:
        raise DegenerateMetricError("no profile had a defined correlation")
    return mae, float(np.mean(corrs))


# ---------------------------------------------------------------------------
# Scale-invariant pointmap loss
# ---------------------------------------------------------------------------


def scale_invariant_loss(pred_points, gt_points, valid_mask=None) -> float:
    """Mean per-pixel distance between pointmaps, each normalized by the mean
    distance of its own valid points to the origin; invariant to global scale."""
    if isinstance(pred_points, PointMap):
        if valid_mask is None:
            valid_mask = pred_points.valid_mask
        pred_points = pred_points.points
    if isinstance(gt_points, PointMap):
        if valid_mask is None:
            valid_mask = gt_points.valid_mask
        gt_points = gt_points.points
    pred = np.asarray(pred_points, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt_points, dtype=np.float64).reshape(-1, 3)
    if valid_mask is not None:
        flat = np.asarray(valid_mask, dtype=bool).reshape(-1)
        pred = pred[flat]
        gt = gt[flat]
    if len(pred) == 0 or pred.shape != gt.shape:
        raise ValueError("pointmaps must share >= 1 valid pixel")
    z_gt = float(np.mean(np.linalg.norm(gt, axis=1)))
    z_pred = float(np.mean(np.linalg.norm(pred, axis=1)))
    if z_gt == 0 or z_pred == 0:
        raise DegenerateMetricError("zero normalizer: all points at the origin")
    return float(np.mean(np.linalg.norm(gt / z_gt - pred / z_pred, axis=1)))


# ---------------------------------------------------------------------------
# Per-pair evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalConfig:
    seed: int = 0
    n_profiles: int = 5
    align_iterations: int = 2000
    align_threshold_m: float | None = None  # default 3 * gsd_m


@dataclass(frozen=True, eq=False)
class PairPrediction:
    """Predicted geometry for one stereo pair, pointmaps in the view-a frame."""

    pointmap_a: PointMap
    pointmap_b: PointMap
    pose_a: Pose
    pose_b: Pose


@dataclass(frozen=True, eq=False)
class PairGroundTruth:
    """Rendered ground truth for one stereo pair."""

    pointmap_a: PointMap  # world frame
    pointmap_b: PointMap  # world frame
    pose_a: Pose
    pose_b: Pose
    depth_a: np.ndarray
    depth_b: np.ndarray
    gsd_m: float


@dataclass
class MetricsReport:
    accuracy_m: float | None = None
    completeness_m: float | None = None
    chamfer_m: float | None = None
    accuracy_rel: float | None = None
    completeness_rel: float | None = None
    chamfer_rel: float | None = None
    slope_corr: float | None = None
    slope_mae_deg: float | None = None
    profile_mae_m: float | None = None
    profile_corr: float | None = None
    ssim: float | None = None
    si_loss: float | None = None
    rra_deg: float | None = None
    rta_deg: float | None = None
    alignment: SimilarityTransform | None = None
    flags: dict = field(default_factory=dict)

    _FIELDS = (
        "accuracy_m", "completeness_m", "chamfer_m",
        "accuracy_rel", "completeness_rel", "chamfer_rel",
        "slope_corr", "slope_mae_deg", "profile_mae_m", "profile_corr",
        "ssim", "si_loss", "rra_deg", "rta_deg",
    )

    def to_json_dict(self) -> dict:
        out = {}
        for name in self._FIELDS:
            value = getattr(self, name)
            if value is None:
                out[name] = self.flags.get(name, "degenerate")
            else:
                out[name] = float(value)
        out["alignment"] = self.alignment.to_json_dict() if self.alignment else "degenerate"
        out["flags"] = dict(self.flags)
        return out


def _pointmap_world(pm: PointMap) -> np.ndarray:
    if pm.frame == "world":
        return pm.points
    return pm.reference_pose.camera_to_world(pm.points.reshape(-1, 3)).reshape(pm.points.shape)


def evaluate_pair(pred: PairPrediction, gt: PairGroundTruth, config: EvalConfig = EvalConfig()) -> MetricsReport:
    """Align the predicted pointmaps to ground truth and score every metric.

    The prediction is aligned to the ground-truth world frame with a RANSAC
    similarity transform (index-paired points, threshold 3 GSD); distances,
    slope, SSIM, profile and pointmap-loss metrics are computed on the
    aligned prediction, and RRA/RTA compare relative poses.  Degeneracies
    land in report.flags instead of NaN.
    """
    report = MetricsReport()
    shared_a = pred.pointmap_a.valid_mask & gt.pointmap_a.valid_mask
    shared_b = pred.pointmap_b.valid_mask & gt.pointmap_b.valid_mask
    gt_world_a = _pointmap_world(gt.pointmap_a)
    gt_world_b = _pointmap_world(gt.pointmap_b)
    gt_cloud = np.concatenate([gt_world_a[shared_a], gt_world_b[shared_b]])
    pred_cloud = np.concatenate([pred.pointmap_a.points[shared_a], pred.pointmap_b.points[shared_b]])

    if len(gt_cloud) >= 3:
        threshold = config.align_threshold_m if config.align_threshold_m is not None else 3 * gt.gsd_m
        try:
            transform, _ = ransac_align(
                pred_cloud,
                gt_cloud,
                RansacParams(iterations=config.align_iterations, inlier_threshold=threshold, seed=config.seed),
            )
            report.alignment = transform
        except Exception as exc:
            report.flags["alignment"] = f"failed: {exc}"
    else:
        report.flags["alignment"] = "fewer than 3 shared valid points"

    if report.alignment is not None:
        transform = report.alignment
        aligned_cloud = transform.apply(pred_cloud)
        acc, compl, chamfer = accuracy_completeness(aligned_cloud, gt_cloud)
        report.accuracy_m = acc
        report.completeness_m = compl
        report.chamfer_m = chamfer
        try:
            scale = scene_scale(gt_cloud)
            report.accuracy_rel = relative_error(acc, scale)
            report.completeness_rel = relative_error(compl, scale)
            report.chamfer_rel = relative_error(chamfer, scale)
        except DegenerateMetricError as exc:
            report.flags["relative"] = str(exc)

        # Dense per-view rasters of the aligned prediction, world frame.
        slope_vals, slope_maes, ssim_vals, prof_maes, prof_corrs, si_vals = [], [], [], [], [], []
        for pred_pm, gt_world, shared, gt_depth, gt_pose in (
            (pred.pointmap_a, gt_world_a, shared_a, gt.depth_a, gt.pose_a),
            (pred.pointmap_b, gt_world_b, shared_b, gt.depth_b, gt.pose_b),
        ):
            if not shared.any():
                continue
            aligned = transform.apply(pred_pm.points.reshape(-1, 3)).reshape(pred_pm.points.shape)
            pred_z = np.where(shared, aligned[..., 2], np.nan)
            gt_z = np.where(shared, gt_world[..., 2], np.nan)
            try:
                corr, mae = slope_metrics(pred_z, gt_z, gt.gsd_m)
                slope_vals.append(corr)
                slope_maes.append(mae)
            except DegenerateMetricError as exc:
                report.flags.setdefault("slope", str(exc))
            pred_depth = np.where(
                shared, np.linalg.norm(aligned - gt_pose.translation, axis=-1), np.nan
            )
            gt_depth_m = np.where(shared, gt_depth, np.nan)
            try:
                ssim_vals.append(ssim_depth(pred_depth, gt_depth_m))
            except DegenerateMetricError as exc:
                report.flags.setdefault("ssim", str(exc))
            try:
                mae_p, corr_p = profile_metrics(pred_depth, gt_depth_m, config.n_profiles)
                prof_maes.append(mae_p)
                prof_corrs.append(corr_p)
            except DegenerateMetricError as exc:
                report.flags.setdefault("profile", str(exc))
            # Pointmap loss in the ground-truth view-a frame, aligned prediction.
            aligned_view1 = gt.pose_a.world_to_camera(aligned[shared])
            gt_view1 = gt.pose_a.world_to_camera(gt_world[shared])
            try:
                si_vals.append(scale_invariant_loss(aligned_view1, gt_view1))
            except DegenerateMetricError as exc:
                report.flags.setdefault("si_loss", str(exc))
        if slope_vals:
            report.slope_corr = float(np.mean(slope_vals))
            report.slope_mae_deg = float(np.mean(slope_maes))
        if ssim_vals:
            report.ssim = float(np.mean(ssim_vals))
        if prof_maes:
            report.profile_mae_m = float(np.mean(prof_maes))
        if prof_corrs:
            report.profile_corr = float(np.mean(prof_corrs))
        if si_vals:
            report.si_loss = float(np.mean(si_vals))

    rel_gt = relative_pose(gt.pose_a, gt.pose_b)
    rel_pred = relative_pose(pred.pose_a, pred.pose_b)
    report.rra_deg = rra(rel_gt.rotation, rel_pred.rotation)
    try:
        report.rta_deg = rta(rel_gt.translation, rel_pred.translation)
    except DegenerateBaselineError:
        report.flags["rta_deg"] = "degenerate_baseline"
    return report
