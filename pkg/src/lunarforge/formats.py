"""On-disk formats for rendered products.

- images: 16-bit grayscale PGM (P5, maxval 65535, big-endian samples)
- depth / pointmap rasters: raw little-endian float32, row-major, NaN =
  invalid, with a JSON sidecar at <path>.json
- correspondences: CSV with a "u1,v1,u2,v2" header line

All writers are byte-deterministic for identical inputs.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def write_pgm16(path, image: np.ndarray) -> None:
    """Write a [0, 1] float raster as a 16-bit P5 PGM."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("image must be 2D")
    if np.nanmin(img) < 0 or np.nanmax(img) > 1:
        raise ValueError("image values must lie in [0, 1]")
    q = np.round(img * 65535).astype(">u2")
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(q.tobytes())


def read_pgm16(path) -> np.ndarray:
    """Read a P5 PGM written by write_pgm16 back into a [0, 1] float raster."""
    data = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise ValueError("not a binary PGM (P5) file")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 65535:
        raise ValueError("expected 16-bit PGM (maxval 65535)")
    pos += 1  # single whitespace after maxval
    raster = np.frombuffer(data, dtype=">u2", count=w * h, offset=pos)
    return raster.reshape(h, w).astype(np.float64) / 65535.0


def write_pgm8(path, image: np.ndarray) -> None:
    """Write a [0, 1] float raster as an 8-bit P5 PGM (visualizations)."""
    img = np.asarray(image, dtype=np.float64)
    q = np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


def write_f32_raster(path, array: np.ndarray, meta: dict) -> None:
    """Raw little-endian f32 dump plus a JSON sidecar describing it."""
    arr = np.asarray(array, dtype=np.float64)
    sidecar = dict(meta)
    sidecar["shape"] = list(arr.shape)
    Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True) + "\n")
    arr.astype("<f4").tofile(path)


def read_f32_raster(path):
    """Inverse of write_f32_raster; returns (array, sidecar dict)."""
    meta = json.loads(Path(str(path) + ".json").read_text())
    shape = tuple(meta["shape"])
    raw = np.fromfile(path, dtype="<f4")
    expected = int(np.prod(shape))
    if raw.size != expected:
        raise ValueError(f"raster size {raw.size} does not match sidecar shape {shape}")
    return raw.astype(np.float64).reshape(shape), meta


def write_correspondences_csv(path, pairs: np.ndarray) -> None:
    lines = ["u1,v1,u2,v2"]
    for u1, v1, u2, v2 in np.asarray(pairs, dtype=np.float64).reshape(-1, 4):
        lines.append(f"{u1:.6f},{v1:.6f},{u2:.6f},{v2:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_correspondences_csv(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "u1,v1,u2,v2":
        raise ValueError("correspondence CSV must start with a 'u1,v1,u2,v2' header")
    if len(lines) == 1:
        return np.zeros((0, 4))
    return np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]], dtype=np.float64)


def write_json(path, obj: dict) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())
