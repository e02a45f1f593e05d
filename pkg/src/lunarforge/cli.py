"""Command-line interface: dataset generation, evaluation, single-pair
rendering, synthetic DEM creation, and visualization.

Subcommands: generate, evaluate, render-pair, synth-dem, visualize.
Exit codes: 0 success, 1 runtime failure, 2 usage error.  All artifacts are
byte-deterministic for a fixed seed, independent of worker count
(LUNARFORGE_THREADS caps workers).
"""

from __future__ import annotations

import argparse
import json
import math
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, formats
from .camera import CameraRig, Pose, gsd
from .metrics import EvalConfig, PairGroundTruth, PairPrediction, evaluate_pair
from .pose import pose_accuracy_table
from .radiometry import HapkeParams, SunConfig
from .renderer import PointMap, depth_to_pointmap, gt_correspondences, render_pair, resolve_workers
from .terrain import DemGrid, hillshade, load_dem, slope_map, synth_crater_dem, write_dem
from .trajectory import ALTITUDE_BANDS_M, KINDS, LIGHTING_PRESETS, lighting_preset, sample_pair


class UsageError(ValueError):
    """Invalid flag combination or value; maps to exit code 2."""


@dataclass
class PairRecord:
    """Manifest entry for one generated stereo pair."""

    pair_id: str
    trajectory: dict
    lighting: str
    paths: dict
    gsd_m: float
    baseline_m: float
    altitude_m: float

    def to_json_dict(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "trajectory": self.trajectory,
            "lighting": self.lighting,
            "paths": self.paths,
            "gsd_m": self.gsd_m,
            "baseline_m": self.baseline_m,
            "altitude_m": self.altitude_m,
        }


def synth_extent_m(kind: str, band_index: int, fov_deg: float, allow_disjoint: bool) -> float:
    """Tile width needed so both view frusta stay inside a synthetic DEM."""
    alt = ALTITUDE_BANDS_M[band_index] * 1.05
    if kind == "dynamic":
        alt *= 1.30
    tilt_max = 0.0 if kind == "nadir" else 35.0
    half_fov = math.radians(fov_deg) / 2
    reach = alt * math.tan(math.radians(tilt_max) + half_fov)
    half = reach + 0.25 * alt
    if allow_disjoint:
        half += 5.5 * alt * math.tan(half_fov)
    return 2.3 * half


def synth_dem_for_band(
    kind: str,
    band_index: int,
    seed: int,
    fov_deg: float = 45.0,
    size: int = 160,
    craters: int = 6,
    octaves: int = 4,
    allow_disjoint: bool = False,
) -> DemGrid:
    extent = synth_extent_m(kind, band_index, fov_deg, allow_disjoint)
    cell = extent / (size - 1)
    return synth_crater_dem(seed, size, size, cell, craters, octaves)


def _pair_artifacts(
    out_dir: Path,
    pair_id: str,
    dem: DemGrid,
    spec,
    rig: CameraRig,
    sun: SunConfig,
    hapke: HapkeParams,
    render_seed: int,
    stride: int,
    workers: int | None,
) -> PairRecord:
    """Render one pair and write every artifact; returns its manifest record."""
    pair_dir = out_dir / pair_id
    pair_dir.mkdir(parents=True, exist_ok=True)
    try:
        prod_a, prod_b = render_pair(dem, rig, sun, hapke, seed=render_seed, workers=workers)
        pm_a = depth_to_pointmap(prod_a, frame="world")
        pm_b = depth_to_pointmap(prod_b, frame="world")
        corr = gt_correspondences(prod_a, prod_b, stride=stride)

        paths = {
            "image_a": f"{pair_id}/image_a.pgm",
            "image_b": f"{pair_id}/image_b.pgm",
            "depth_a": f"{pair_id}/depth_a.f32",
            "depth_b": f"{pair_id}/depth_b.f32",
            "pointmap_a": f"{pair_id}/pointmap_a.f32",
            "pointmap_b": f"{pair_id}/pointmap_b.f32",
            "correspondences": f"{pair_id}/correspondences.csv",
            "meta": f"{pair_id}/meta.json",
        }
        formats.write_pgm16(out_dir / paths["image_a"], prod_a.image)
        formats.write_pgm16(out_dir / paths["image_b"], prod_b.image)
        for name, prod in (("depth_a", prod_a), ("depth_b", prod_b)):
            formats.write_f32_raster(
                out_dir / paths[name], prod.depth,
                {"kind": "ray_depth", "units": "m"},
            )
        for name, pm, pose in (("pointmap_a", pm_a, prod_a.pose), ("pointmap_b", pm_b, prod_b.pose)):
            formats.write_f32_raster(
                out_dir / paths[name], pm.points,
                {"kind": "pointmap", "frame": pm.frame, "reference_pose": pm.reference_pose.to_json_dict()},
            )
        formats.write_correspondences_csv(out_dir / paths["correspondences"], corr.pairs)

        baseline_3d = float(np.linalg.norm(rig.pose_b.translation - rig.pose_a.translation))
        gsd_m = gsd(spec.altitude_m, rig.intrinsics.fov_deg, rig.intrinsics.width)
        record = PairRecord(
            pair_id=pair_id,
            trajectory=spec.to_json_dict(),
            lighting=spec.lighting,
            paths=paths,
            gsd_m=gsd_m,
            baseline_m=baseline_3d,
            altitude_m=spec.altitude_m,
        )
        meta = record.to_json_dict()
        meta["intrinsics"] = rig.intrinsics.to_json_dict()
        meta["pose_a"] = rig.pose_a.to_json_dict()
        meta["pose_b"] = rig.pose_b.to_json_dict()
        meta["sun"] = sun.to_json_dict()
        meta["hapke"] = hapke.to_json_dict()
        meta["render_seed"] = render_seed
        formats.write_json(out_dir / paths["meta"], meta)
        return record
    except BaseException:
        shutil.rmtree(pair_dir, ignore_errors=True)
        raise


def _parse_int_list(text: str, what: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok != ""]
    except ValueError:
        raise UsageError(f"bad {what} list: {text!r}") from None


def _parse_float_list(text: str, what: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok != ""]
    except ValueError:
        raise UsageError(f"bad {what} list: {text!r}") from None


def _load_input_dem(args) -> DemGrid | None:
    if args.dem:
        return load_dem(args.dem, args.dem_format)
    if not args.synth:
        raise UsageError("either --dem or --synth is required")
    return None


def cmd_generate(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    bands = _parse_int_list(args.bands, "band")
    for band in bands:
        if not 0 <= band < len(ALTITUDE_BANDS_M):
            raise UsageError(f"band index {band} outside [0, {len(ALTITUDE_BANDS_M) - 1}]")
    lightings = [tok.strip() for tok in args.lighting.split(",") if tok.strip()]
    for lid in lightings:
        if lid not in LIGHTING_PRESETS:
            raise UsageError(f"unknown lighting preset {lid!r}")
    if args.trajectory not in KINDS:
        raise UsageError(f"unknown trajectory kind {args.trajectory!r}")
    if args.pairs < 1:
        raise UsageError("--pairs must be >= 1")

    res = args.full_res if args.full_res else args.res
    input_dem = _load_input_dem(args)
    hapke = HapkeParams(w=args.hapke_w, B0=args.hapke_b0, h_opp=args.hapke_h, xi=args.hapke_xi)
    psf_sigma = args.psf_sigma
    rpp = args.rays_per_pixel if psf_sigma > 0 else 1

    # Build the render task list first so records land in manifest order.
    tasks = []
    for band in bands:
        dem = input_dem or synth_dem_for_band(
            args.trajectory, band, args.seed, size=args.synth_size,
            craters=args.synth_craters, octaves=args.synth_octaves,
            allow_disjoint=args.allow_disjoint,
        )
        for idx in range(args.pairs):
            pair_seed = args.seed * 100003 + band * 101 + idx
            spec, rig = sample_pair(
                args.trajectory, pair_seed, band, dem,
                width=res, height=res, psf_sigma=psf_sigma, rays_per_pixel=rpp,
                allow_disjoint=args.allow_disjoint,
            )
            for lid in lightings:
                pair_id = f"{args.trajectory}_b{band:02d}_p{idx:03d}_{lid}"
                spec_lit = type(spec)(**{**spec.to_json_dict(), "lighting": lid})
                tasks.append((pair_id, dem, spec_lit, rig, lighting_preset(lid), pair_seed))

    def run(task):
        pair_id, dem, spec, rig, sun, pair_seed = task
        return _pair_artifacts(
            out_dir, pair_id, dem, spec, rig, sun, hapke, pair_seed,
            args.stride, workers=1,
        )

    n_workers = resolve_workers(args.workers)
    if n_workers == 1:
        records = [run(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            records = list(pool.map(run, tasks))

    manifest = out_dir / "manifest.jsonl"
    header = {
        "format": "lunarforge-manifest",
        "version": 1,
        "seed": args.seed,
        "tool": f"lunarforge {__version__}",
    }
    lines = [json.dumps(header, sort_keys=True, allow_nan=False)]
    for record in sorted(records, key=lambda r: r.pair_id):
        lines.append(json.dumps(record.to_json_dict(), sort_keys=True, allow_nan=False))
    manifest.write_text("\n".join(lines) + "\n")
    print(f"generated {len(records)} pairs into {out_dir}")
    return 0


def _read_manifest(gt_dir: Path) -> list[dict]:
    manifest = gt_dir / "manifest.jsonl"
    if not manifest.exists():
        raise UsageError(f"no manifest.jsonl in {gt_dir}")
    records = []
    for line in manifest.read_text().splitlines():
        obj = json.loads(line)
        if obj.get("format") == "lunarforge-manifest":
            continue
        records.append(obj)
    return records


def _load_pointmap(path: Path) -> PointMap:
    pts, meta = formats.read_f32_raster(path)
    ref = Pose.from_json_dict(meta["reference_pose"])
    valid = np.isfinite(pts).all(axis=-1)
    return PointMap(points=pts, valid_mask=valid, frame=meta["frame"], reference_pose=ref)


def _load_ground_truth(gt_dir: Path, record: dict) -> PairGroundTruth:
    meta = formats.read_json(gt_dir / record["paths"]["meta"])
    depth_a, _ = formats.read_f32_raster(gt_dir / record["paths"]["depth_a"])
    depth_b, _ = formats.read_f32_raster(gt_dir / record["paths"]["depth_b"])
    return PairGroundTruth(
        pointmap_a=_load_pointmap(gt_dir / record["paths"]["pointmap_a"]),
        pointmap_b=_load_pointmap(gt_dir / record["paths"]["pointmap_b"]),
        pose_a=Pose.from_json_dict(meta["pose_a"]),
        pose_b=Pose.from_json_dict(meta["pose_b"]),
        depth_a=depth_a,
        depth_b=depth_b,
        gsd_m=float(record["gsd_m"]),
    )


def _load_prediction(pred_dir: Path, pair_id: str) -> PairPrediction | None:
    pdir = pred_dir / pair_id
    pm_a = pdir / "pointmap_a.f32"
    pm_b = pdir / "pointmap_b.f32"
    if not pm_a.exists() or not pm_b.exists():
        return None
    if (pdir / "pose_a.json").exists():
        pose_a = Pose.from_json((pdir / "pose_a.json").read_text())
        pose_b = Pose.from_json((pdir / "pose_b.json").read_text())
    elif (pdir / "meta.json").exists():
        meta = formats.read_json(pdir / "meta.json")
        pose_a = Pose.from_json_dict(meta["pose_a"])
        pose_b = Pose.from_json_dict(meta["pose_b"])
    else:
        return None
    return PairPrediction(
        pointmap_a=_load_pointmap(pm_a),
        pointmap_b=_load_pointmap(pm_b),
        pose_a=pose_a,
        pose_b=pose_b,
    )


def _threshold_key(tau: float) -> str:
    return str(int(tau)) if tau == int(tau) else repr(tau)


def cmd_evaluate(args) -> int:
    gt_dir = Path(args.gt)
    pred_dir = Path(args.pred)
    if not gt_dir.is_dir():
        raise UsageError(f"ground-truth directory {gt_dir} does not exist")
    if not pred_dir.is_dir():
        raise UsageError(f"prediction directory {pred_dir} does not exist")
    thresholds = sorted(_parse_float_list(args.thresholds, "threshold"))
    records = _read_manifest(gt_dir)
    config = EvalConfig(seed=args.seed)

    mean_fields = (
        "accuracy_m", "completeness_m", "chamfer_m", "accuracy_rel",
        "completeness_rel", "chamfer_rel", "slope_corr", "slope_mae_deg",
        "profile_mae_m", "profile_corr", "ssim", "si_loss",
    )

    def score(record):
        pred = _load_prediction(pred_dir, record["pair_id"])
        if pred is None:
            return record, None
        return record, evaluate_pair(pred, _load_ground_truth(gt_dir, record), config)

    n_workers = resolve_workers(None)
    if n_workers == 1 or len(records) <= 1:
        results = [score(r) for r in records]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(score, records))  # manifest order preserved

    lines = []
    rra_errors = []
    rta_errors = []
    rta_degenerate = 0
    missing = []
    by_kind: dict[str, list] = {}
    for record, report in results:
        pair_id = record["pair_id"]
        if report is None:
            missing.append(pair_id)
            lines.append({"pair_id": pair_id, "status": "missing"})
            continue
        entry = {"pair_id": pair_id, "status": "ok", "kind": record["trajectory"]["kind"]}
        entry.update(report.to_json_dict())
        lines.append(entry)
        if report.rra_deg is not None:
            rra_errors.append(report.rra_deg)
        if report.rta_deg is not None:
            rta_errors.append(report.rta_deg)
        elif "rta_deg" in report.flags:
            rta_degenerate += 1
        by_kind.setdefault(record["trajectory"]["kind"], []).append(report)

    aggregate = {
        "type": "aggregate",
        "pairs_total": len(records),
        "pairs_evaluated": len(records) - len(missing),
        "pairs_missing": len(missing),
        "missing": sorted(missing),
        "rta_degenerate_count": rta_degenerate,
        "all_missing_warning": bool(records) and len(missing) == len(records),
    }
    if rra_errors:
        aggregate["rra_table"] = {
            _threshold_key(t): v for t, v in pose_accuracy_table(rra_errors, thresholds).items()
        }
    if rta_errors:
        aggregate["rta_table"] = {
            _threshold_key(t): v for t, v in pose_accuracy_table(rta_errors, thresholds).items()
        }
    kinds_summary = {}
    for kind, reports in sorted(by_kind.items()):
        summary = {}
        for name in mean_fields:
            vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
            summary[name] = float(np.mean(vals)) if vals else "degenerate"
        kinds_summary[kind] = summary
    aggregate["by_kind"] = kinds_summary

    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    out_lines = [json.dumps(entry, sort_keys=True, allow_nan=False) for entry in lines]
    out_lines.append(json.dumps(aggregate, sort_keys=True, allow_nan=False))
    report_path.write_text("\n".join(out_lines) + "\n")
    if aggregate["all_missing_warning"]:
        print("warning: no predictions found for any pair", file=sys.stderr)
    print(f"evaluated {aggregate['pairs_evaluated']}/{aggregate['pairs_total']} pairs -> {report_path}")
    return 0


def cmd_render_pair(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.trajectory not in KINDS:
        raise UsageError(f"unknown trajectory kind {args.trajectory!r}")
    if not 0 <= args.band < len(ALTITUDE_BANDS_M):
        raise UsageError(f"band index {args.band} outside [0, {len(ALTITUDE_BANDS_M) - 1}]")
    if args.lighting not in LIGHTING_PRESETS:
        raise UsageError(f"unknown lighting preset {args.lighting!r}")
    dem = _load_input_dem(args) or synth_dem_for_band(
        args.trajectory, args.band, args.seed, size=args.synth_size,
        craters=args.synth_craters, octaves=args.synth_octaves,
        allow_disjoint=args.allow_disjoint,
    )
    res = args.full_res if args.full_res else args.res
    psf_sigma = args.psf_sigma
    rpp = args.rays_per_pixel if psf_sigma > 0 else 1
    spec, rig = sample_pair(
        args.trajectory, args.seed, args.band, dem, lighting=args.lighting,
        width=res, height=res, psf_sigma=psf_sigma, rays_per_pixel=rpp,
        allow_disjoint=args.allow_disjoint,
    )
    if args.zero_baseline:
        rig = CameraRig(
            intrinsics=rig.intrinsics, pose_a=rig.pose_a, pose_b=rig.pose_a,
            psf_sigma=rig.psf_sigma, rays_per_pixel=rig.rays_per_pixel,
        )
    pair_id = f"{args.trajectory}_b{args.band:02d}_p000_{args.lighting}"
    hapke = HapkeParams(w=args.hapke_w, B0=args.hapke_b0, h_opp=args.hapke_h, xi=args.hapke_xi)
    record = _pair_artifacts(
        out_dir, pair_id, dem, spec, rig, lighting_preset(args.lighting), hapke,
        args.seed, args.stride, workers=args.workers,
    )
    print(f"rendered {record.pair_id} into {out_dir}")
    return 0


def cmd_synth_dem(args) -> int:
    dem = synth_crater_dem(
        args.seed, args.width, args.height, args.cell_size, args.craters, args.octaves
    )
    write_dem(dem, args.out, args.format)
    print(f"wrote {args.width}x{args.height} DEM to {args.out}")
    return 0


def cmd_visualize(args) -> int:
    if args.mode not in ("hillshade", "slope"):
        raise UsageError(f"unknown mode {args.mode!r}; expected hillshade or slope")
    raster, meta = formats.read_f32_raster(args.input)
    if raster.ndim == 3:
        raster = raster[..., 2]  # pointmap input: use the elevation channel
    elif raster.ndim != 2:
        raise UsageError("input raster must be 2D (depth) or HxWx3 (pointmap)")
    spacing = args.spacing if args.spacing is not None else float(meta.get("spacing_m", 1.0))
    if args.mode == "hillshade":
        img = hillshade(np.nan_to_num(raster, nan=float(np.nanmean(raster))), spacing,
                        args.azimuth, args.elevation)
    else:
        slopes = slope_map(np.nan_to_num(raster, nan=float(np.nanmean(raster))), spacing).slopes
        img = np.clip(slopes / 45.0, 0.0, 1.0)  # linear 0-45 degree ramp
    formats.write_pgm8(args.out, np.nan_to_num(img, nan=0.0))
    print(f"wrote {args.mode} image to {args.out}")
    return 0


def _add_scene_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dem", help="input DEM path (omit with --synth)")
    p.add_argument("--dem-format", default="raw_f32", choices=["raw_f32", "ascii_grid"])
    p.add_argument("--synth", action="store_true", help="synthesize a crater DEM per band")
    p.add_argument("--synth-size", type=int, default=160, help="synthetic DEM cells per side")
    p.add_argument("--synth-craters", type=int, default=6)
    p.add_argument("--synth-octaves", type=int, default=4)
    p.add_argument("--res", type=int, default=128, help="render resolution (desk-scale default)")
    p.add_argument("--full-res", type=int, nargs="?", const=512, default=None,
                   help="full-resolution override; bare flag means 512")
    p.add_argument("--psf-sigma", type=float, default=0.5, help="Gaussian PSF sigma in pixels")
    p.add_argument("--rays-per-pixel", type=int, default=4)
    p.add_argument("--stride", type=int, default=4, help="correspondence sampling stride")
    p.add_argument("--allow-disjoint", action="store_true",
                   help="permit non-overlapping stereo footprints (stress case)")
    p.add_argument("--workers", type=int, default=None,
                   help="worker threads (LUNARFORGE_THREADS caps this)")
    p.add_argument("--hapke-w", type=float, default=0.25)
    p.add_argument("--hapke-b0", type=float, default=1.0)
    p.add_argument("--hapke-h", type=float, default=0.05)
    p.add_argument("--hapke-xi", type=float, default=-0.25)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lunarforge", description=__doc__)
    parser.add_argument("--version", action="version", version=f"lunarforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render a batch of stereo pairs with ground truth")
    _add_scene_flags(g)
    g.add_argument("--trajectory", required=True, help="nadir | oblique | dynamic")
    g.add_argument("--bands", default="0", help="comma list of altitude band indices 0..9")
    g.add_argument("--pairs", type=int, default=1, help="pairs per band")
    g.add_argument("--lighting", default="side", help="comma list of side|overhead|back")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("evaluate", help="score predictions against a generated dataset")
    e.add_argument("--gt", required=True, help="generated dataset directory")
    e.add_argument("--pred", required=True, help="directory of per-pair predictions")
    e.add_argument("--thresholds", default="2,5,15,30", help="comma list of degrees")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--report", required=True, help="output JSON-lines report path")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("render-pair", help="render a single stereo pair")
    _add_scene_flags(r)
    r.add_argument("--trajectory", required=True)
    r.add_argument("--band", type=int, default=0)
    r.add_argument("--lighting", default="side")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--zero-baseline", action="store_true",
                   help="use the same pose for both views (stress case)")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render_pair)

    s = sub.add_parser("synth-dem", help="write a synthetic crater DEM")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--width", type=int, default=160)
    s.add_argument("--height", type=int, default=160)
    s.add_argument("--cell-size", type=float, default=5.0)
    s.add_argument("--craters", type=int, default=6)
    s.add_argument("--octaves", type=int, default=4)
    s.add_argument("--format", default="raw_f32", choices=["raw_f32", "ascii_grid"])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth_dem)

    v = sub.add_parser("visualize", help="hillshade or slope image from a raster")
    v.add_argument("--input", required=True, help="raw f32 raster (depth or pointmap)")
    v.add_argument("--mode", required=True, help="hillshade | slope")
    v.add_argument("--azimuth", type=float, default=315.0)
    v.add_argument("--elevation", type=float, default=45.0)
    v.add_argument("--spacing", type=float, default=None, help="cell spacing in meters")
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_visualize)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(json.dumps({"error": "usage", "detail": str(exc)}), file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure -> machine-readable error JSON
        print(json.dumps({"error": type(exc).__name__, "detail": str(exc)}), file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
