"""Vectorized first-hit intersection of rays against a bilinear heightfield.

Traversal is a 2D DDA over the ground-plane cell grid with a per-cell
max-height early-out.  Inside a crossed cell the surface along the ray is a
quadratic in the ray parameter; a sign change of (ray_z - terrain_z) at the
segment ends or at the quadratic's vertex brackets the hit, which is then
refined by bisection to well below 1e-3 * cell_size.

All arithmetic is elementwise per ray, so results are bitwise identical
regardless of how rays are batched or tiled.
"""

from __future__ import annotations

import numpy as np

from .terrain import DemGrid

_BISECT_TOL_FRAC = 2e-7  # bracket width target, as a fraction of cell_size


def _cell_max(dem: DemGrid) -> np.ndarray:
    e = dem.elevations
    return np.fmax(np.fmax(e[:-1, :-1], e[:-1, 1:]), np.fmax(e[1:, :-1], e[1:, 1:]))


def _bilinear_at(dem: DemGrid, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Clamped bilinear sample; NaN where the neighborhood has nodata."""
    fx = (x - dem.origin_x) / dem.cell_size
    fy = (y - dem.origin_y) / dem.cell_size
    j = np.clip(np.floor(fx).astype(np.int64), 0, dem.width - 2)
    i = np.clip(np.floor(fy).astype(np.int64), 0, dem.height - 2)
    u = fx - j
    v = fy - i
    e = dem.elevations
    return (
        e[i, j] * (1 - u) * (1 - v)
        + e[i, j + 1] * u * (1 - v)
        + e[i + 1, j] * (1 - u) * v
        + e[i + 1, j + 1] * u * v
    )


def intersect_rays(dem: DemGrid, origins: np.ndarray, directions: np.ndarray):
    """First heightfield intersection for a batch of rays.

    origins, directions: (N, 3) float64, directions unit length.
    Returns (t, hit): ray parameters (NaN where miss) and a boolean hit mask.
    """
    o = np.asarray(origins, dtype=np.float64)
    d = np.asarray(directions, dtype=np.float64)
    if o.ndim == 1:
        o = o[None, :]
        d = d[None, :]
    n = o.shape[0]
    cs = dem.cell_size
    e = dem.elevations
    zmin = float(np.nanmin(e))
    zmax = float(np.nanmax(e))
    cellmax = _cell_max(dem)

    ox, oy, oz = o[:, 0], o[:, 1], o[:, 2]
    dx, dy, dz = d[:, 0], d[:, 1], d[:, 2]

    # Clip to the footprint rectangle in xy (slab method).
    with np.errstate(divide="ignore", invalid="ignore"):
        tx0 = (dem.x_min - ox) / dx
        tx1 = (dem.x_max - ox) / dx
        ty0 = (dem.y_min - oy) / dy
        ty1 = (dem.y_max - oy) / dy
    txa, txb = np.fmin(tx0, tx1), np.fmax(tx0, tx1)
    tya, tyb = np.fmin(ty0, ty1), np.fmax(ty0, ty1)
    # Rays parallel to a slab: inside -> unbounded, outside -> empty.
    x_in = (ox >= dem.x_min) & (ox <= dem.x_max)
    y_in = (oy >= dem.y_min) & (oy <= dem.y_max)
    txa = np.where(dx == 0, np.where(x_in, -np.inf, np.inf), txa)
    txb = np.where(dx == 0, np.where(x_in, np.inf, -np.inf), txb)
    tya = np.where(dy == 0, np.where(y_in, -np.inf, np.inf), tya)
    tyb = np.where(dy == 0, np.where(y_in, np.inf, -np.inf), tyb)
    t_enter = np.maximum(np.maximum(txa, tya), 0.0)
    t_exit = np.minimum(txb, tyb)

    # Vertical clipping: below the global minimum a descending ray has
    # certainly crossed; above the global maximum an ascending ray never will.
    with np.errstate(divide="ignore", invalid="ignore"):
        t_zmin = np.where(dz < 0, (zmin - oz) / dz, np.inf)
        t_zmax = np.where(dz > 0, (zmax - oz) / dz, np.inf)
    t_stop = np.minimum(t_exit, np.minimum(t_zmin, t_zmax)) + 1e-12
    alive = t_enter <= t_stop

    t_hit = np.full(n, np.nan)
    hit = np.zeros(n, dtype=bool)
    lo = np.zeros(n)
    hi = np.zeros(n)
    bracketed = np.zeros(n, dtype=bool)

    # Immediate hit when the ray already starts at/below the surface inside
    # the footprint (self-intersection guard for biased shadow rays).
    px = ox + dx * t_enter
    py = oy + dy * t_enter
    pz = oz + dz * t_enter
    with np.errstate(invalid="ignore"):
        below = alive & ((pz - _bilinear_at(dem, px, py)) < 0)
    t_hit[below] = t_enter[below]
    hit[below] = True
    alive &= ~below

    # DDA state.
    fx = (px - dem.origin_x) / cs
    fy = (py - dem.origin_y) / cs
    ix = np.clip(np.floor(fx).astype(np.int64), 0, dem.width - 2)
    iy = np.clip(np.floor(fy).astype(np.int64), 0, dem.height - 2)
    step_x = np.where(dx > 0, 1, -1).astype(np.int64)
    step_y = np.where(dy > 0, 1, -1).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_delta_x = np.abs(cs / dx)
        t_delta_y = np.abs(cs / dy)
        next_x = dem.origin_x + (ix + (step_x > 0)) * cs
        next_y = dem.origin_y + (iy + (step_y > 0)) * cs
        t_max_x = np.where(dx != 0, (next_x - ox) / dx, np.inf)
        t_max_y = np.where(dy != 0, (next_y - oy) / dy, np.inf)
    t_cur = t_enter.copy()

    while alive.any():
        a = np.flatnonzero(alive)
        t0 = t_cur[a]
        t1 = np.minimum(np.minimum(t_max_x[a], t_max_y[a]), t_stop[a])
        cx, cy = ix[a], iy[a]

        # Per-cell max-height early-out: skip the crossing test when the ray
        # segment stays above everything the cell can reach.
        seg_zmin = np.minimum(oz[a] + dz[a] * t0, oz[a] + dz[a] * t1)
        cmax = cellmax[cy, cx]
        with np.errstate(invalid="ignore"):
            consider = ~(seg_zmin > cmax)

        if consider.any():
            s = a[consider]
            ts0, ts1 = t0[consider], t1[consider]
            z00 = e[iy[s], ix[s]]
            z10 = e[iy[s], ix[s] + 1]
            z01 = e[iy[s] + 1, ix[s]]
            z11 = e[iy[s] + 1, ix[s] + 1]
            alpha = z10 - z00
            beta = z01 - z00
            gamma = z00 + z11 - z10 - z01
            au = (ox[s] - dem.origin_x) / cs - ix[s]
            av = (oy[s] - dem.origin_y) / cs - iy[s]
            bu = dx[s] / cs
            bv = dy[s] / cs
            qa = -gamma * bu * bv
            qb = dz[s] - alpha * bu - beta * bv - gamma * (au * bv + av * bu)
            qc = oz[s] - z00 - alpha * au - beta * av - gamma * au * av

            f0 = (qa * ts0 + qb) * ts0 + qc
            f1 = (qa * ts1 + qb) * ts1 + qc
            with np.errstate(invalid="ignore", divide="ignore"):
                tv = np.where(qa != 0, -qb / (2 * qa), np.nan)
                fv = (qa * tv + qb) * tv + qc
                vertex_dip = (tv > ts0) & (tv < ts1) & (fv < 0)
                end_cross = f1 < 0
            found = end_cross | vertex_dip
            if found.any():
                g = s[found]
                lo[g] = ts0[found]
                hi[g] = np.where(end_cross[found], ts1[found], tv[found])
                bracketed[g] = True
                alive[g] = False

        # Advance the survivors to the next cell boundary.
        a = np.flatnonzero(alive)
        if a.size == 0:
            break
        t1 = np.minimum(np.minimum(t_max_x[a], t_max_y[a]), t_stop[a])
        done = t1 >= t_stop[a]
        alive[a[done]] = False
        a = a[~done]
        if a.size == 0:
            break
        t_cur[a] = t1[~done]
        go_x = t_max_x[a] <= t_max_y[a]
        gx = a[go_x]
        gy = a[~go_x]
        ix[gx] += step_x[gx]
        t_max_x[gx] += t_delta_x[gx]
        iy[gy] += step_y[gy]
        t_max_y[gy] += t_delta_y[gy]
        out = (ix[a] < 0) | (ix[a] > dem.width - 2) | (iy[a] < 0) | (iy[a] > dem.height - 2)
        alive[a[out]] = False

    # Bisection refinement of bracketed crossings.
    if bracketed.any():
        b = np.flatnonzero(bracketed)
        blo = lo[b]
        bhi = hi[b]
        tol = _BISECT_TOL_FRAC * cs
        for _ in range(64):
            wide = (bhi - blo) > tol
            if not wide.any():
                break
            mid = 0.5 * (blo + bhi)
            mx = ox[b] + dx[b] * mid
            my = oy[b] + dy[b] * mid
            mz = oz[b] + dz[b] * mid
            fmid = mz - _bilinear_at(dem, mx, my)
            go_hi = wide & (fmid <= 0)
            go_lo = wide & (fmid > 0)
            bhi = np.where(go_hi, mid, bhi)
            blo = np.where(go_lo, mid, blo)
        t_hit[b] = 0.5 * (blo + bhi)
        hit[b] = True

    return t_hit, hit


def shadow_mask(dem: DemGrid, points: np.ndarray, sun_dir: np.ndarray, bias: float) -> np.ndarray:
    """True where a point is shadowed: the biased sun ray re-hits the terrain."""
    p = np.asarray(points, dtype=np.float64)
    if p.ndim == 1:
        p = p[None, :]
    s = np.asarray(sun_dir, dtype=np.float64)
    origins = p + bias * s
    dirs = np.broadcast_to(s, origins.shape)
    _, hit = intersect_rays(dem, origins, dirs)
    return hit
