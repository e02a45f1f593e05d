import math

import numpy as np
import pytest

import oracles
from lunarforge import (
    RansacParams,
    depth_to_pointmap,
    estimate_essential,
    gt_correspondences,
    ransac_align,
    rra,
    rta,
    solve_pnp,
    umeyama,
)
from lunarforge.camera import Intrinsics, relative_pose, rot_x, rot_y, rot_z
from lunarforge.pose import (
    DegenerateBaselineError,
    DegenerateGeometryError,
    InsufficientMatchesError,
    essential_from_poses,
    pose_accuracy_table,
)


def random_rotation(rng):
    return rot_z(rng.uniform(0, 360)) @ rot_y(rng.uniform(-80, 80)) @ rot_x(rng.uniform(-80, 80))


# ---------------------------------------------------------------------------
# Essential matrix
# ---------------------------------------------------------------------------


def test_essential_recovers_rendered_pair(oblique_scene):
    rig = oblique_scene["rig"]
    corr = oblique_scene["corr"]
    est = estimate_essential(corr, rig.intrinsics, rig.intrinsics, RansacParams(seed=3))
    rel_gt = relative_pose(rig.pose_a, rig.pose_b)
    assert rra(rel_gt.rotation, est.relative_pose.rotation) < 0.1
    assert rta(rel_gt.translation, est.relative_pose.translation) < 0.1
    assert abs(np.linalg.norm(est.relative_pose.translation) - 1) < 1e-9
    s = np.linalg.svd(est.E, compute_uv=False)
    s = s / s[0]
    assert np.allclose(s, [1, 1, 0], atol=1e-6)


def test_essential_inliers_satisfy_epipolar(oblique_scene):
    rig = oblique_scene["rig"]
    corr = oblique_scene["corr"]
    est = estimate_essential(corr, rig.intrinsics, rig.intrinsics, RansacParams(seed=3))
    assert len(est.inliers) == len(corr)
    from lunarforge.pose import _match_rays

    h1, h2 = _match_rays(corr.pairs[est.inliers], rig.intrinsics, rig.intrinsics)
    res = np.abs(np.einsum("ni,ni->n", h2, h1 @ est.E.T))
    assert res.max() < 1.0 / rig.intrinsics.focal_px


def test_essential_zero_baseline_flags_degenerate(flat_dem):
    from lunarforge import HapkeParams, SunConfig, render_view
    from lunarforge.camera import Pose

    intr = Intrinsics(width=32, height=32, fov_deg=45.0)
    pose = Pose(rotation=np.eye(3), translation=np.array([0.0, 0.0, 150.0]))
    prod = render_view(flat_dem, intr, pose, SunConfig(azimuth=100, elevation=45), HapkeParams(),
                       psf_sigma=0.0, rays_per_pixel=1)
    corr = gt_correspondences(prod, prod, stride=2)
    with pytest.raises(DegenerateBaselineError):
        estimate_essential(corr, intr, intr, RansacParams(seed=1))


def test_essential_requires_eight_matches():
    intr = Intrinsics(width=32, height=32, fov_deg=45.0)
    pairs = np.tile([1.0, 2.0, 3.0, 4.0], (7, 1))
    with pytest.raises(InsufficientMatchesError):
        estimate_essential(pairs, intr, intr)


def test_essential_from_poses_zero_baseline():
    from lunarforge.camera import Pose

    p = Pose(rotation=np.eye(3), translation=np.array([1.0, 2.0, 3.0]))
    with pytest.raises(DegenerateBaselineError):
        essential_from_poses(p, p)


# ---------------------------------------------------------------------------
# PnP
# ---------------------------------------------------------------------------


def test_pnp_recovers_rendered_view(oblique_scene):
    rig = oblique_scene["rig"]
    prod_b = oblique_scene["prod_b"]
    spec = oblique_scene["spec"]
    pm = depth_to_pointmap(prod_b, frame="world")
    stride = 4
    valid = pm.valid_mask[::stride, ::stride]
    vv, uu = np.meshgrid(np.arange(0, 96, stride, dtype=float),
                         np.arange(0, 96, stride, dtype=float), indexing="ij")
    pixels = np.column_stack([uu[valid], vv[valid]])
    pts = pm.points[::stride, ::stride][valid]
    pose = solve_pnp((pixels, pts), rig.intrinsics, RansacParams(seed=4))
    rot_err_rad = math.radians(rra(rig.pose_b.rotation, pose.rotation))
    trans_err = np.linalg.norm(pose.translation - rig.pose_b.translation)
    assert rot_err_rad < 1e-4
    assert trans_err < 1e-3 * spec.altitude_m


def test_pnp_with_outliers(oblique_scene):
    rig = oblique_scene["rig"]
    prod_b = oblique_scene["prod_b"]
    pm = depth_to_pointmap(prod_b, frame="world")
    stride = 6
    valid = pm.valid_mask[::stride, ::stride]
    vv, uu = np.meshgrid(np.arange(0, 96, stride, dtype=float),
                         np.arange(0, 96, stride, dtype=float), indexing="ij")
    pixels = np.column_stack([uu[valid], vv[valid]])
    pts = pm.points[::stride, ::stride][valid].copy()
    rng = np.random.default_rng(7)
    n = len(pts)
    bad = rng.choice(n, size=int(0.3 * n), replace=False)
    pts[bad] += rng.normal(0, 0.2 * np.abs(pts).max(), (len(bad), 3))
    pose = solve_pnp((pixels, pts), rig.intrinsics, RansacParams(iterations=500, seed=8))
    assert rra(rig.pose_b.rotation, pose.rotation) < 0.1


def test_pnp_collinear_degenerate():
    intr = Intrinsics(width=64, height=64, fov_deg=45.0)
    ts = np.linspace(0, 1, 10)
    pts = np.column_stack([ts * 100, ts * 40, ts * 10])
    pixels = np.column_stack([ts * 50, ts * 30])
    with pytest.raises(DegenerateGeometryError):
        solve_pnp((pixels, pts), intr)


def test_pnp_too_few_matches():
    intr = Intrinsics(width=64, height=64, fov_deg=45.0)
    with pytest.raises(InsufficientMatchesError):
        solve_pnp((np.zeros((5, 2)), np.zeros((5, 3))), intr)


# ---------------------------------------------------------------------------
# RRA / RTA / accuracy table
# ---------------------------------------------------------------------------


def test_rra_identity():
    r = rot_z(33.0)
    assert rra(r, r) == 0.0


def test_rra_axis_angle_construction():
    rng = np.random.default_rng(12)
    for angle in (0.5, 10.0, 90.0, 179.0):
        r = random_rotation(rng)
        assert rra(r, r @ rot_z(angle)) == pytest.approx(angle, abs=1e-9)


def test_rra_matches_quaternion_oracle():
    rng = np.random.default_rng(13)
    for _ in range(50):
        r1 = random_rotation(rng)
        r2 = random_rotation(rng)
        assert rra(r1, r2) == pytest.approx(oracles.quaternion_angle_deg(r1, r2), abs=1e-9)


def test_rra_small_perturbation_to_zero():
    # Limit property: the error decays with the perturbation.  The trace
    # formula is sqrt(eps)-conditioned near zero, so only order is asserted.
    r = random_rotation(np.random.default_rng(14))
    assert rra(r, r @ rot_z(1e-3)) == pytest.approx(1e-3, rel=1e-6)
    for eps in (1e-4, 1e-5, 1e-6):
        got = rra(r, r @ rot_z(eps))
        assert 0.0 <= got < 2 * eps


def test_rta_scale_free():
    assert rta([1, 0, 0], [5, 0, 0]) == 0.0
    assert rta([0, 2, 0], [0, 0, 7]) == pytest.approx(90.0)
    assert rta([1, 1, 0], [-1, -1, 0]) == pytest.approx(180.0)


def test_rta_zero_vector_degenerate():
    with pytest.raises(DegenerateBaselineError):
        rta([0, 0, 0], [1, 0, 0])


def test_accuracy_table_counts():
    table = pose_accuracy_table([1.0, 3.0, 20.0], [2, 5, 15, 30])
    assert table == {2: pytest.approx(1 / 3), 5: pytest.approx(2 / 3),
                     15: pytest.approx(2 / 3), 30: pytest.approx(1.0)}


def test_accuracy_table_all_zero():
    table = pose_accuracy_table([0.0] * 5, [2, 5])
    assert all(v == 1.0 for v in table.values())


def test_accuracy_table_monotone_random():
    rng = np.random.default_rng(15)
    for _ in range(20):
        errors = rng.uniform(0, 40, 50)
        table = pose_accuracy_table(errors, [1, 2, 5, 10, 20, 30])
        vals = list(table.values())
        assert all(a <= b for a, b in zip(vals, vals[1:]))
        shuffled = pose_accuracy_table(rng.permutation(errors), [1, 2, 5, 10, 20, 30])
        assert shuffled == table


def test_accuracy_table_validation():
    with pytest.raises(ValueError):
        pose_accuracy_table([], [2, 5])
    with pytest.raises(ValueError):
        pose_accuracy_table([1.0], [5, 2])


# ---------------------------------------------------------------------------
# Umeyama / RANSAC alignment
# ---------------------------------------------------------------------------


def test_umeyama_identity():
    rng = np.random.default_rng(16)
    pts = rng.normal(0, 10, (40, 3))
    t = umeyama(pts, pts)
    assert t.scale == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(t.rotation, np.eye(3), atol=1e-12)
    assert np.allclose(t.translation, 0, atol=1e-11)


def test_umeyama_recovers_constructed_similarity():
    rng = np.random.default_rng(17)
    src = rng.normal(0, 5, (100, 3))
    r = rot_z(30.0)
    dst = 2.5 * src @ r.T + np.array([1.0, 2.0, 3.0])
    t = umeyama(src, dst)
    assert t.scale == pytest.approx(2.5, abs=1e-9)
    assert np.allclose(t.rotation, r, atol=1e-9)
    assert np.allclose(t.translation, [1, 2, 3], atol=1e-9)
    assert np.max(np.linalg.norm(t.apply(src) - dst, axis=1)) < 1e-9


def test_umeyama_rejects_reflection():
    rng = np.random.default_rng(18)
    src = rng.normal(0, 5, (60, 3))
    dst = src.copy()
    dst[:, 2] *= -1  # pure reflection
    t = umeyama(src, dst)
    assert np.linalg.det(t.rotation) == pytest.approx(1.0, abs=1e-9)
    residual = np.linalg.norm(t.apply(src) - dst, axis=1).max()
    assert residual > 1e-3  # proper rotations cannot explain a reflection


def test_umeyama_residual_invariant_to_common_rigid_motion():
    rng = np.random.default_rng(19)
    src = rng.normal(0, 5, (80, 3))
    dst = src + rng.normal(0, 0.5, src.shape)

    def residual(a, b):
        t = umeyama(a, b)
        return float(np.sum((t.apply(a) - b) ** 2))

    base = residual(src, dst)
    r = random_rotation(rng)
    shift = rng.normal(0, 100, 3)
    moved = residual(src @ r.T + shift, dst @ r.T + shift)
    assert moved == pytest.approx(base, rel=1e-9)


def test_umeyama_collinear_degenerate():
    ts = np.linspace(0, 1, 20)
    line = np.column_stack([ts, 2 * ts, -ts])
    with pytest.raises(DegenerateGeometryError):
        umeyama(line, line * 2)


def test_ransac_align_clean_matches_umeyama():
    rng = np.random.default_rng(20)
    src = rng.normal(0, 8, (200, 3))
    r = rot_y(40.0)
    dst = 0.7 * src @ r.T + np.array([5.0, -2.0, 1.0])
    direct = umeyama(src, dst)
    t, inliers = ransac_align(src, dst, RansacParams(iterations=100, inlier_threshold=0.1, seed=2))
    assert inliers.all()
    assert t.scale == pytest.approx(direct.scale, rel=1e-9)
    assert np.allclose(t.rotation, direct.rotation, atol=1e-9)


def test_ransac_align_rejects_gross_outliers():
    rng = np.random.default_rng(21)
    src = rng.normal(0, 8, (300, 3))
    r = rot_x(25.0)
    dst = 1.8 * src @ r.T + np.array([0.0, 4.0, -7.0])
    n_bad = int(0.4 * len(src))
    bad = rng.choice(len(src), size=n_bad, replace=False)
    dst_noisy = dst.copy()
    dst_noisy[bad] += rng.uniform(50, 200, (n_bad, 3))
    t, inliers = ransac_align(src, dst_noisy, RansacParams(iterations=500, inlier_threshold=0.5, seed=3))
    assert not inliers[bad].any()
    good = np.setdiff1d(np.arange(len(src)), bad)
    assert inliers[good].all()
    assert np.max(np.linalg.norm(t.apply(src[good]) - dst[good], axis=1)) < 1e-6


def test_ransac_align_deterministic():
    rng = np.random.default_rng(22)
    src = rng.normal(0, 8, (150, 3))
    dst = src @ rot_z(10.0).T + 3.0
    dst[:30] += rng.uniform(20, 50, (30, 3))
    params = RansacParams(iterations=300, inlier_threshold=0.2, seed=11)
    t1, m1 = ransac_align(src, dst, params)
    t2, m2 = ransac_align(src, dst, params)
    assert np.array_equal(m1, m2)
    assert t1.scale == t2.scale
    assert t1.rotation.tobytes() == t2.rotation.tobytes()
