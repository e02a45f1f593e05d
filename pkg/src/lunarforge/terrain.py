"""Digital elevation model handling: load/save, synthesis, sampling, slope and hillshade.

The world frame is a local tangent plane: x east, y north, z up, meters.
Cell (row i, col j) of a DemGrid is centered at
(origin_x + j * cell_size, origin_y + i * cell_size); row index increases
northward internally.  Nodata cells are stored as NaN.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Site-specific plausibility bounds for lunar south-pole elevations (meters).
LUNAR_ELEVATION_RANGE = (-4350.0, 1850.0)

DEFAULT_FRAME_NOTE = "moon-fixed local tangent plane"


class DemFormatError(ValueError):
    """Malformed DEM file: bad header, dimension mismatch, or unmarked non-finite values."""


class OutOfBoundsError(ValueError):
    """Query point lies outside the grid's convex footprint."""


class NodataError(ValueError):
    """Query requires a nodata cell."""


@dataclass(frozen=True, eq=False)
class DemGrid:
    """Regular raster of terrain heights with georeferencing metadata."""

    width: int
    height: int
    cell_size: float
    origin_x: float
    origin_y: float
    elevations: np.ndarray  # (height, width) float64, NaN = nodata
    frame_note: str = DEFAULT_FRAME_NOTE

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ValueError("DemGrid must be at least 2x2")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be > 0")
        elev = np.asarray(self.elevations, dtype=np.float64)
        if elev.shape != (self.height, self.width):
            raise ValueError(
                f"elevations shape {elev.shape} does not match "
                f"(height, width)=({self.height}, {self.width})"
            )
        if np.isinf(elev).any():
            raise ValueError("elevations must be finite or NaN (nodata)")
        finite = elev[np.isfinite(elev)]
        if finite.size:
            lo, hi = LUNAR_ELEVATION_RANGE
            if finite.min() < lo or finite.max() > hi:
                warnings.warn(
                    "elevations outside the lunar range "
                    f"[{lo}, {hi}] m; site-specific bound, not fatal",
                    stacklevel=3,
                )
        elev.flags.writeable = False
        object.__setattr__(self, "elevations", elev)

    # Footprint of valid bilinear interpolation: the rectangle of cell centers.
    @property
    def x_min(self) -> float:
        return self.origin_x

    @property
    def x_max(self) -> float:
        return self.origin_x + (self.width - 1) * self.cell_size

    @property
    def y_min(self) -> float:
        return self.origin_y

    @property
    def y_max(self) -> float:
        return self.origin_y + (self.height - 1) * self.cell_size

    def x_coords(self) -> np.ndarray:
        return self.origin_x + np.arange(self.width) * self.cell_size

    def y_coords(self) -> np.ndarray:
        return self.origin_y + np.arange(self.height) * self.cell_size

    def mean_height(self, x_range=None, y_range=None) -> float:
        """Mean of non-nodata elevations, optionally restricted to a window."""
        z = self.elevations
        if x_range is not None or y_range is not None:
            xs = self.x_coords()
            ys = self.y_coords()
            cmask = np.ones(self.width, dtype=bool)
            rmask = np.ones(self.height, dtype=bool)
            if x_range is not None:
                cmask = (xs >= x_range[0]) & (xs <= x_range[1])
            if y_range is not None:
                rmask = (ys >= y_range[0]) & (ys <= y_range[1])
            if not cmask.any() or not rmask.any():
                raise OutOfBoundsError("window does not intersect the grid")
            z = z[np.ix_(rmask, cmask)]
        if not np.isfinite(z).any():
            raise NodataError("no valid cells in window")
        return float(np.nanmean(z))


def load_dem(path, format: str) -> DemGrid:
    """Read a DEM from disk.

    format "ascii_grid": 6-line header (ncols, nrows, xllcorner, yllcorner,
    cellsize, nodata_value) followed by row-major floats, north-up row order.
    format "raw_f32": little-endian float32 row-major with NaN nodata and a
    JSON sidecar at <path>.json carrying width/height/cell_size/origin.
    """
    path = Path(path)
    if format == "ascii_grid":
        return _load_ascii_grid(path)
    if format == "raw_f32":
        return _load_raw_f32(path)
    raise ValueError(f"unknown DEM format: {format!r}")


def write_dem(dem: DemGrid, path, format: str) -> None:
    """Write a DEM; inverse of load_dem for both formats."""
    path = Path(path)
    if format == "ascii_grid":
        _write_ascii_grid(dem, path)
    elif format == "raw_f32":
        _write_raw_f32(dem, path)
    else:
        raise ValueError(f"unknown DEM format: {format!r}")


_ASCII_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


def _load_ascii_grid(path: Path) -> DemGrid:
    try:
        text = path.read_text()
    except OSError as exc:
        raise DemFormatError(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    if len(lines) < 6:
        raise DemFormatError("ascii grid header requires 6 lines")
    header = {}
    for i, key in enumerate(_ASCII_HEADER_KEYS):
        parts = lines[i].split()
        if len(parts) != 2 or parts[0].lower() != key:
            raise DemFormatError(f"header line {i + 1} must be '{key} <value>'")
        try:
            header[key] = float(parts[1])
        except ValueError as exc:
            raise DemFormatError(f"bad header value for {key}: {parts[1]!r}") from exc
    ncols = int(header["ncols"])
    nrows = int(header["nrows"])
    if ncols != header["ncols"] or nrows != header["nrows"]:
        raise DemFormatError("ncols/nrows must be integers")
    tokens = " ".join(lines[6:]).split()
    if len(tokens) != ncols * nrows:
        raise DemFormatError(
            f"dimension mismatch: header declares {ncols}x{nrows}="
            f"{ncols * nrows} values, file has {len(tokens)}"
        )
    try:
        values = np.array([float(t) for t in tokens], dtype=np.float64)
    except ValueError as exc:
        raise DemFormatError(f"non-numeric elevation token: {exc}") from exc
    nodata = header["nodata_value"]
    mask = values == nodata
    if not np.isfinite(values[~mask]).all():
        raise DemFormatError("non-finite values present without nodata marking")
    values[mask] = np.nan
    grid = values.reshape(nrows, ncols)[::-1]  # north-up file order -> south-first rows
    return DemGrid(
        width=ncols,
        height=nrows,
        cell_size=header["cellsize"],
        origin_x=header["xllcorner"] + 0.5 * header["cellsize"],
        origin_y=header["yllcorner"] + 0.5 * header["cellsize"],
        elevations=grid,
    )


def _write_ascii_grid(dem: DemGrid, path: Path) -> None:
    nodata = -9999.0
    lines = [
        f"ncols {dem.width}",
        f"nrows {dem.height}",
        f"xllcorner {dem.origin_x - 0.5 * dem.cell_size:.10g}",
        f"yllcorner {dem.origin_y - 0.5 * dem.cell_size:.10g}",
        f"cellsize {dem.cell_size:.10g}",
        f"nodata_value {nodata:.10g}",
    ]
    grid = dem.elevations[::-1]  # back to north-up
    for row in grid:
        vals = [nodata if not math.isfinite(v) else v for v in row]
        lines.append(" ".join(f"{v:.10g}" for v in vals))
    path.write_text("\n".join(lines) + "\n")


def _load_raw_f32(path: Path) -> DemGrid:
    sidecar = path.with_name(path.name + ".json")
    try:
        meta = json.loads(sidecar.read_text())
    except OSError as exc:
        raise DemFormatError(f"cannot read sidecar {sidecar}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DemFormatError(f"malformed sidecar JSON: {exc}") from exc
    for key in ("width", "height", "cell_size", "origin_x", "origin_y"):
        if key not in meta:
            raise DemFormatError(f"sidecar missing key {key!r}")
    width, height = int(meta["width"]), int(meta["height"])
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != width * height:
        raise DemFormatError(
            f"dimension mismatch: sidecar declares {width}x{height}="
            f"{width * height} samples, file has {raw.size}"
        )
    return DemGrid(
        width=width,
        height=height,
        cell_size=float(meta["cell_size"]),
        origin_x=float(meta["origin_x"]),
        origin_y=float(meta["origin_y"]),
        elevations=raw.astype(np.float64).reshape(height, width),
    )


def _write_raw_f32(dem: DemGrid, path: Path) -> None:
    sidecar = path.with_name(path.name + ".json")
    meta = {
        "width": dem.width,
        "height": dem.height,
        "cell_size": dem.cell_size,
        "origin_x": dem.origin_x,
        "origin_y": dem.origin_y,
    }
    sidecar.write_text(json.dumps(meta, sort_keys=True) + "\n")
    dem.elevations.astype("<f4").tofile(path)


# ---------------------------------------------------------------------------
# Synthetic terrain
# ---------------------------------------------------------------------------


def _value_noise(rng, width: int, height: int, lattice: int) -> np.ndarray:
    """Smoothstep-interpolated value noise in [-1, 1] on a coarse lattice."""
    nodes = rng.uniform(-1.0, 1.0, size=(lattice + 1, lattice + 1))
    u = np.linspace(0.0, lattice, width)
    v = np.linspace(0.0, lattice, height)
    ui = np.minimum(u.astype(int), lattice - 1)
    vi = np.minimum(v.astype(int), lattice - 1)
    uf = u - ui
    vf = v - vi
    uf = uf * uf * (3 - 2 * uf)
    vf = vf * vf * (3 - 2 * vf)
    n00 = nodes[np.ix_(vi, ui)]
    n10 = nodes[np.ix_(vi, ui + 1)]
    n01 = nodes[np.ix_(vi + 1, ui)]
    n11 = nodes[np.ix_(vi + 1, ui + 1)]
    top = n00 * (1 - uf[None, :]) + n10 * uf[None, :]
    bot = n01 * (1 - uf[None, :]) + n11 * uf[None, :]
    return top * (1 - vf[:, None]) + bot * vf[:, None]


def add_crater(
    z: np.ndarray,
    xs: np.ndarray,
    ys: np.ndarray,
    cx: float,
    cy: float,
    radius: float,
    depth: float,
    rim_height: float,
    rim_sigma: float,
) -> None:
    """Superpose one parabolic-bowl crater with a Gaussian rim annulus, in place."""
    r = np.hypot(xs[None, :] - cx, ys[:, None] - cy)
    inside = r < radius
    z[inside] -= depth * (1.0 - (r[inside] / radius) ** 2)
    z += rim_height * np.exp(-(((r - radius) / rim_sigma) ** 2))


def synth_crater_dem(
    seed: int,
    width: int,
    height: int,
    cell_size: float,
    crater_count: int,
    fractal_octaves: int,
) -> DemGrid:
    """Deterministic synthetic DEM: cratered terrain over 1/f value noise.

    Bitwise reproducible for fixed arguments; contains no nodata.
    """
    if width < 16 or height < 16:
        raise ValueError("synthetic DEM must be at least 16x16")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), 0x1F2E3D)))
    extent = min(width, height) * cell_size
    z = np.zeros((height, width), dtype=np.float64)
    # Amplitudes scale with the tile but saturate at lunar-plausible relief.
    amp = min(0.01 * extent, 400.0)
    for octave in range(fractal_octaves):
        lattice = min(4 * 2**octave, max(width, height))
        z += amp * _value_noise(rng, width, height, lattice)
        amp *= 0.5
    xs = np.arange(width) * cell_size
    ys = np.arange(height) * cell_size
    for _ in range(crater_count):
        cx = rng.uniform(0.1, 0.9) * (width - 1) * cell_size
        cy = rng.uniform(0.1, 0.9) * (height - 1) * cell_size
        radius = rng.uniform(0.06, 0.16) * extent
        depth = min(0.25 * radius, 1200.0) * rng.uniform(0.8, 1.2)
        rim_height = min(0.06 * radius, 280.0) * rng.uniform(0.8, 1.2)
        add_crater(z, xs, ys, cx, cy, radius, depth, rim_height, 0.2 * radius)
    return DemGrid(
        width=width,
        height=height,
        cell_size=cell_size,
        origin_x=0.0,
        origin_y=0.0,
        elevations=z,
    )


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def _bilinear_indices(dem: DemGrid, x, y):
    """Cell indices and fractional offsets for bilinear interpolation."""
    fx = (np.asarray(x, dtype=np.float64) - dem.origin_x) / dem.cell_size
    fy = (np.asarray(y, dtype=np.float64) - dem.origin_y) / dem.cell_size
    eps = 1e-9
    if np.any(fx < -eps) or np.any(fx > dem.width - 1 + eps) or np.any(fy < -eps) or np.any(
        fy > dem.height - 1 + eps
    ):
        raise OutOfBoundsError("query outside the grid footprint")
    j = np.clip(np.floor(fx).astype(int), 0, dem.width - 2)
    i = np.clip(np.floor(fy).astype(int), 0, dem.height - 2)
    return i, j, fx - j, fy - i


def sample_height(dem: DemGrid, x, y):
    """Bilinear terrain height at world (x, y); accepts scalars or arrays."""
    i, j, u, v = _bilinear_indices(dem, x, y)
    e = dem.elevations
    z00 = e[i, j]
    z10 = e[i, j + 1]
    z01 = e[i + 1, j]
    z11 = e[i + 1, j + 1]
    if not (
        np.isfinite(z00).all()
        and np.isfinite(z10).all()
        and np.isfinite(z01).all()
        and np.isfinite(z11).all()
    ):
        raise NodataError("bilinear neighborhood contains nodata")
    out = (
        z00 * (1 - u) * (1 - v)
        + z10 * u * (1 - v)
        + z01 * (1 - u) * v
        + z11 * u * v
    )
    return float(out) if np.isscalar(x) and np.isscalar(y) else out


def surface_normal(dem: DemGrid, x, y):
    """Unit upward normal from central differences of sample_height, step = cell_size."""
    s = dem.cell_size
    dzdx = (sample_height(dem, np.asarray(x) + s, y) - sample_height(dem, np.asarray(x) - s, y)) / (2 * s)
    dzdy = (sample_height(dem, x, np.asarray(y) + s) - sample_height(dem, x, np.asarray(y) - s)) / (2 * s)
    n = np.stack(np.broadcast_arrays(-dzdx, -dzdy, np.ones_like(np.asarray(dzdx, dtype=np.float64))), axis=-1)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    return n[()] if n.ndim > 1 else n


# ---------------------------------------------------------------------------
# Slope and hillshade
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SlopeMap:
    """Per-cell slope angles in degrees, [0, 90)."""

    width: int
    height: int
    slopes: np.ndarray  # (height, width) degrees, NaN where input was nodata
    source_spacing: float

    def __post_init__(self):
        s = np.asarray(self.slopes, dtype=np.float64)
        finite = s[np.isfinite(s)]
        if finite.size and (finite.min() < 0 or finite.max() >= 90):
            raise ValueError("slopes must lie in [0, 90)")
        object.__setattr__(self, "slopes", s)


def _gradients(elevation: np.ndarray, spacing: float):
    """d/dx and d/dy: central differences interior, one-sided at borders."""
    z = np.asarray(elevation, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2 or z.shape[1] < 2:
        raise ValueError("elevation raster must be at least 2x2")
    if spacing <= 0:
        raise ValueError("spacing must be > 0")
    dzdy, dzdx = np.gradient(z, spacing)
    return dzdx, dzdy


def slope_map(elevation: np.ndarray, spacing: float) -> SlopeMap:
    """Slope angle arctan |grad z| per cell, degrees; nodata propagates."""
    dzdx, dzdy = _gradients(elevation, spacing)
    slopes = np.degrees(np.arctan(np.hypot(dzdx, dzdy)))
    # Central differences skip the center value: mask nodata cells explicitly.
    slopes = np.where(np.isfinite(np.asarray(elevation, dtype=np.float64)), slopes, np.nan)
    h, w = slopes.shape
    return SlopeMap(width=w, height=h, slopes=slopes, source_spacing=float(spacing))


def hillshade(
    elevation: np.ndarray,
    spacing: float,
    sun_azimuth: float,
    sun_elevation: float,
) -> np.ndarray:
    """Lambertian shade max(0, n.s) in [0, 1] from azimuth/elevation sun angles."""
    dzdx, dzdy = _gradients(elevation, spacing)
    norm = np.sqrt(dzdx**2 + dzdy**2 + 1.0)
    az = math.radians(sun_azimuth)
    el = math.radians(sun_elevation)
    sx = math.cos(el) * math.sin(az)
    sy = math.cos(el) * math.cos(az)
    sz = math.sin(el)
    shade = (-dzdx * sx - dzdy * sy + sz) / norm
    return np.clip(shade, 0.0, 1.0)
