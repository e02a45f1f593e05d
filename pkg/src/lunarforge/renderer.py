"""Ray-traced images, ray-depth maps, pointmaps, and ground-truth correspondences.

Rendering is a pure function of (scene, rig, seed): PSF jitter comes from a
single pre-generated stream keyed by (seed, view id), pixels are partitioned
into row bands whose outputs land in disjoint buffer slices, and no
cross-pixel reductions occur, so results are bitwise identical for any worker
count and across runs.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from . import _heightfield
from .camera import CameraRig, Intrinsics, Pose, camera_dirs, gsd
from .radiometry import HapkeParams, SunConfig, shade_points
from .terrain import DemGrid, sample_height

DEFAULT_TILE_ROWS = 32


class CameraBelowTerrainError(ValueError):
    """Camera center is on or below the terrain surface."""


@dataclass(frozen=True, eq=False)
class RenderProduct:
    """One rendered view with its ray-depth ground truth."""

    image: np.ndarray       # (H, W) in [0, 1]
    depth: np.ndarray       # (H, W) meters along the central ray, NaN = miss
    valid_mask: np.ndarray  # (H, W) bool
    intrinsics: Intrinsics
    pose: Pose
    sun: SunConfig

    def __post_init__(self):
        finite = np.isfinite(self.depth)
        if not np.array_equal(finite, self.valid_mask):
            raise ValueError("depth must be finite exactly where valid_mask is true")
        img = self.image[np.isfinite(self.image)]
        if img.size and (img.min() < 0 or img.max() > 1):
            raise ValueError("image values must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class PointMap:
    """Per-pixel 3D coordinates in a declared reference frame."""

    points: np.ndarray      # (H, W, 3)
    valid_mask: np.ndarray  # (H, W) bool
    frame: str              # "view1" or "world"
    reference_pose: Pose

    def __post_init__(self):
        if self.frame not in ("view1", "world"):
            raise ValueError("frame must be 'view1' or 'world'")

    def valid_points(self) -> np.ndarray:
        return self.points[self.valid_mask]


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """Cross-view pixel matches (u1, v1, u2, v2)."""

    pairs: np.ndarray  # (N, 4)
    occlusion_filtered: bool = True
    source: str = "ground_truth"

    def __post_init__(self):
        p = np.asarray(self.pairs, dtype=np.float64).reshape(-1, 4)
        object.__setattr__(self, "pairs", p)

    def __len__(self) -> int:
        return self.pairs.shape[0]


@dataclass(frozen=True)
class RayHit:
    point: np.ndarray
    depth: float


def resolve_workers(workers: int | None = None) -> int:
    """Worker count for tile pools, capped by LUNARFORGE_THREADS."""
    cap = os.environ.get("LUNARFORGE_THREADS")
    cap = int(cap) if cap else None
    if workers is None:
        workers = cap if cap is not None else min(4, os.cpu_count() or 1)
    if cap is not None:
        workers = min(workers, cap)
    return max(1, workers)


def ray_intersect_dem(dem: DemGrid, origin, direction) -> RayHit | None:
    """First intersection of one ray with the bilinear heightfield, or None."""
    o = np.asarray(origin, dtype=np.float64).reshape(1, 3)
    d = np.asarray(direction, dtype=np.float64).reshape(1, 3)
    t, hit = _heightfield.intersect_rays(dem, o, d)
    if not hit[0]:
        return None
    return RayHit(point=(o[0] + t[0] * d[0]), depth=float(t[0]))


def _psf_jitter(seed: int, view_id: int, height: int, width: int, rpp: int, sigma: float) -> np.ndarray:
    """(H, W, rpp, 2) Gaussian pixel offsets; stratified when rpp is square."""
    if sigma == 0:
        return np.zeros((height, width, rpp, 2))
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), int(view_id), 0x5AF)))
    k = int(round(math.sqrt(rpp)))
    if k * k == rpp:
        base = np.stack(
            np.meshgrid(np.arange(k), np.arange(k), indexing="ij"), axis=-1
        ).reshape(rpp, 2)
        u = (base + rng.random((height, width, rpp, 2))) / k
    else:
        u = rng.random((height, width, rpp, 2))
    # Clamp away from 0/1 so ndtri stays finite.
    u = np.clip(u, 1e-9, 1 - 1e-9)
    return sigma * ndtri(u)


def _render_band(dem, intr, pose, sun, hapke, jitter, rows, compute_image, shadow_bias):
    """Render one horizontal band of rows; returns (radiance, depth) arrays."""
    h = rows.stop - rows.start
    w = intr.width
    vv, uu = np.meshgrid(np.arange(rows.start, rows.stop, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    center = pose.translation

    # Central rays define the depth channel.
    d_cam = camera_dirs(intr, uu.ravel(), vv.ravel())
    d_world = d_cam @ pose.rotation.T
    origins = np.broadcast_to(center, d_world.shape)
    t, hit = _heightfield.intersect_rays(dem, origins, d_world)
    depth = np.where(hit, t, np.nan).reshape(h, w)

    if not compute_image:
        return np.zeros((h, w)), depth

    rpp = jitter.shape[2]
    radiance = np.zeros(h * w * rpp)
    du = jitter[rows, :, :, 0].reshape(-1)
    dv = jitter[rows, :, :, 1].reshape(-1)
    us = np.repeat(uu.ravel(), rpp) + du
    vs = np.repeat(vv.ravel(), rpp) + dv
    jd_cam = camera_dirs(intr, us, vs)
    jd_world = jd_cam @ pose.rotation.T
    jorigins = np.broadcast_to(center, jd_world.shape)
    jt, jhit = _heightfield.intersect_rays(dem, jorigins, jd_world)
    if jhit.any():
        pts = jorigins[jhit] + jt[jhit, None] * jd_world[jhit]
        view_dirs = -jd_world[jhit]
        radiance[jhit] = shade_points(dem, pts, view_dirs, sun, hapke, bias=shadow_bias)
    radiance = radiance.reshape(h, w, rpp).mean(axis=2)
    return radiance, depth


def _render_arrays(
    dem: DemGrid,
    intr: Intrinsics,
    pose: Pose,
    sun: SunConfig,
    hapke: HapkeParams,
    psf_sigma: float,
    rays_per_pixel: int,
    seed: int,
    view_id: int,
    compute_image: bool,
    shadow_bias: float | None,
    workers: int | None,
):
    center = pose.translation
    if dem.x_min <= center[0] <= dem.x_max and dem.y_min <= center[1] <= dem.y_max:
        if center[2] <= sample_height(dem, center[0], center[1]):
            raise CameraBelowTerrainError("camera center is below the terrain surface")

    if psf_sigma == 0:
        rays_per_pixel = 1
    jitter = _psf_jitter(seed, view_id, intr.height, intr.width, rays_per_pixel, psf_sigma)
    radiance = np.zeros((intr.height, intr.width))
    depth = np.zeros((intr.height, intr.width))

    bands = [slice(r, min(r + DEFAULT_TILE_ROWS, intr.height)) for r in range(0, intr.height, DEFAULT_TILE_ROWS)]
    n_workers = resolve_workers(workers)

    def run(band):
        return band, _render_band(dem, intr, pose, sun, hapke, jitter, band, compute_image, shadow_bias)

    if n_workers == 1 or len(bands) == 1:
        results = [run(b) for b in bands]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(run, bands))
    for band, (rad, dep) in results:
        radiance[band] = rad
        depth[band] = dep
    return radiance, depth


def render_view(
    dem: DemGrid,
    intr: Intrinsics,
    pose: Pose,
    sun: SunConfig,
    hapke: HapkeParams,
    psf_sigma: float = 0.5,
    rays_per_pixel: int = 4,
    seed: int = 0,
    view_id: int = 0,
    gain: float | None = None,
    compute_image: bool = True,
    shadow_bias: float | None = None,
    workers: int | None = None,
) -> RenderProduct:
    """Render one view: PSF-averaged radiance image plus central-ray depth.

    gain scales radiance into [0, 1]; when None it is derived from this
    view's own 99th radiance percentile (stereo pairs share view a's gain).
    """
    radiance, depth = _render_arrays(
        dem, intr, pose, sun, hapke, psf_sigma, rays_per_pixel, seed, view_id,
        compute_image, shadow_bias, workers,
    )
    if gain is None:
        gain = exposure_gain(radiance)
    image = np.clip(radiance * gain, 0.0, 1.0)
    return RenderProduct(
        image=image,
        depth=depth,
        valid_mask=np.isfinite(depth),
        intrinsics=intr,
        pose=pose,
        sun=sun,
    )


def exposure_gain(radiance: np.ndarray) -> float:
    """Per-pair photometric gain: 1 / (99th percentile), 1.0 for black frames."""
    p99 = float(np.percentile(radiance, 99.0))
    return 1.0 / p99 if p99 > 0 else 1.0


def render_pair(
    dem: DemGrid,
    rig: CameraRig,
    sun: SunConfig,
    hapke: HapkeParams,
    seed: int = 0,
    compute_image: bool = True,
    workers: int | None = None,
):
    """Render both rig views with a shared gain taken from view a."""
    radiance_a, depth_a = _render_arrays(
        dem, rig.intrinsics, rig.pose_a, sun, hapke, rig.psf_sigma,
        rig.rays_per_pixel, seed, 0, compute_image, None, workers,
    )
    shared_gain = exposure_gain(radiance_a)
    product_a = RenderProduct(
        image=np.clip(radiance_a * shared_gain, 0.0, 1.0),
        depth=depth_a,
        valid_mask=np.isfinite(depth_a),
        intrinsics=rig.intrinsics,
        pose=rig.pose_a,
        sun=sun,
    )
    product_b = render_view(
        dem, rig.intrinsics, rig.pose_b, sun, hapke, rig.psf_sigma,
        rig.rays_per_pixel, seed, view_id=1, gain=shared_gain,
        compute_image=compute_image, workers=workers,
    )
    return product_a, product_b


def depth_to_pointmap(product: RenderProduct, frame: str = "view1", reference_pose: Pose | None = None) -> PointMap:
    """Per-pixel 3D points origin + depth * direction, in the requested frame."""
    intr = product.intrinsics
    vv, uu = np.meshgrid(np.arange(intr.height, dtype=np.float64), np.arange(intr.width, dtype=np.float64), indexing="ij")
    d_cam = camera_dirs(intr, uu, vv)
    d_world = d_cam @ product.pose.rotation.T
    pts = product.pose.translation + product.depth[..., None] * d_world
    if reference_pose is None:
        reference_pose = product.pose
    if frame == "view1":
        pts = (pts - reference_pose.translation) @ reference_pose.rotation
    elif frame != "world":
        raise ValueError("frame must be 'view1' or 'world'")
    return PointMap(points=pts, valid_mask=product.valid_mask.copy(), frame=frame, reference_pose=reference_pose)


def _bilinear_raster(raster: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear lookup of raster[v, u] in pixel units; NaN outside/invalid."""
    h, w = raster.shape
    out = np.full(u.shape, np.nan)
    eps = 1e-6
    ok = (u >= -eps) & (u <= w - 1 + eps) & (v >= -eps) & (v <= h - 1 + eps)
    if not ok.any():
        return out
    uu = u[ok]
    vv = v[ok]
    j = np.clip(np.floor(uu).astype(int), 0, w - 2)
    i = np.clip(np.floor(vv).astype(int), 0, h - 2)
    a = uu - j
    b = vv - i
    vals = (
        raster[i, j] * (1 - a) * (1 - b)
        + raster[i, j + 1] * a * (1 - b)
        + raster[i + 1, j] * (1 - a) * b
        + raster[i + 1, j + 1] * a * b
    )
    out[ok] = vals
    return out


def gt_correspondences(
    product_a: RenderProduct,
    product_b: RenderProduct,
    stride: int = 1,
    depth_tol: float | None = None,
) -> CorrespondenceSet:
    """Ground-truth matches from view a into view b with an occlusion test.

    Each strided valid pixel of a is unprojected to the world and projected
    into b; it is kept when it lands in bounds and b's ray depth there agrees
    with the point's distance to camera b within depth_tol (default 1 GSD,
    estimated from b's median depth).
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    intr = product_a.intrinsics
    vv, uu = np.meshgrid(
        np.arange(0, intr.height, stride, dtype=np.float64),
        np.arange(0, intr.width, stride, dtype=np.float64),
        indexing="ij",
    )
    depth_a = product_a.depth[::stride, ::stride]
    valid = np.isfinite(depth_a)
    if not valid.any():
        return CorrespondenceSet(pairs=np.zeros((0, 4)))
    u1 = uu[valid]
    v1 = vv[valid]
    d1 = depth_a[valid]
    d_cam = camera_dirs(intr, u1, v1)
    world = product_a.pose.translation + d1[:, None] * (d_cam @ product_a.pose.rotation.T)

    intr_b = product_b.intrinsics
    pc = product_b.pose.world_to_camera(world)
    z = pc[:, 2]
    front = z < 0
    u2 = np.full(u1.shape, np.nan)
    v2 = np.full(v1.shape, np.nan)
    f = intr_b.focal_px
    u2[front] = intr_b.cx + f * pc[front, 0] / (-z[front])
    v2[front] = intr_b.cy - f * pc[front, 1] / (-z[front])
    dist_b = np.linalg.norm(pc, axis=1)

    if depth_tol is None:
        med = float(np.nanmedian(product_b.depth)) if np.isfinite(product_b.depth).any() else 0.0
        depth_tol = gsd(med, intr_b.fov_deg, intr_b.width) if med > 0 else np.inf
    sampled = _bilinear_raster(product_b.depth, u2, v2)
    with np.errstate(invalid="ignore"):
        keep = front & np.isfinite(sampled) & (np.abs(sampled - dist_b) <= depth_tol)
    # Snap float noise at the image border back onto it.
    u2k = np.clip(u2[keep], 0.0, intr_b.width - 1)
    v2k = np.clip(v2[keep], 0.0, intr_b.height - 1)
    pairs = np.column_stack([u1[keep], v1[keep], u2k, v2k])
    return CorrespondenceSet(pairs=pairs)
