"""Per-sample image descriptors used by key-sample selection.

Two descriptors: a 128-bin HSV color histogram (for clustering) and the
grayscale entropy in bits (for ranking within a cluster). Both are
histogram functionals, so they are invariant to pixel position.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from matplotlib.colors import rgb_to_hsv
from PIL import Image

# Hue bin edges in degrees, chosen to follow perceptual color regions
# (reds, oranges, yellows, greens, cyans, blues, violets, magentas).
HUE_EDGES = (25.0, 45.0, 75.0, 155.0, 200.0, 270.0, 295.0)
# Saturation and value are split into quarters, upper edge inclusive.
SV_EDGES = (0.25, 0.5, 0.75)

N_BINS = 128  # 8 hue * 4 saturation * 4 value


class EmptyImageError(ValueError):
    pass


def load_rgb(path: str | Path) -> np.ndarray:
    """Decode a PNG or JPEG file to an HxWx3 uint8 RGB array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def _as_rgb_float(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected HxWx3 RGB array, got shape {arr.shape}")
    if arr.shape[0] * arr.shape[1] == 0:
        raise EmptyImageError("zero-pixel image")
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    return np.clip(arr.astype(np.float64), 0.0, 1.0)


def hsv_histogram(image: np.ndarray) -> np.ndarray:
    """128-bin L1-normalized HSV histogram of an RGB raster.

    Bin index is ``h*16 + s*4 + v`` with 8 hue bins over the perceptual
    edges above and 4 uniform bins each for saturation and value.
    The result is compatible with Euclidean distance.
    """
    rgb = _as_rgb_float(image)
    hsv = rgb_to_hsv(rgb.reshape(-1, 3))
    h_deg = hsv[:, 0] * 360.0
    h_bin = np.digitize(h_deg, HUE_EDGES)
    s_bin = np.digitize(hsv[:, 1], SV_EDGES)
    v_bin = np.digitize(hsv[:, 2], SV_EDGES)
    idx = h_bin * 16 + s_bin * 4 + v_bin
    hist = np.bincount(idx, minlength=N_BINS).astype(np.float64)
    return hist / hist.sum()


def grayscale_entropy(image: np.ndarray) -> float:
    """Entropy in bits of the 8-bit grayscale histogram.

    Gray value is the luma 0.299 R + 0.587 G + 0.114 B rounded to the
    nearest integer; empty histogram bins contribute zero. The value lies
    in [0, 8] for 256 gray levels.
    """
    rgb = _as_rgb_float(image) * 255.0
    luma = np.rint(rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114)
    luma = np.clip(luma, 0, 255).astype(np.int64)
    counts = np.bincount(luma.ravel(), minlength=256).astype(np.float64)
    p = counts / counts.sum()
    nz = p > 0
    return float(-(p[nz] * np.log2(p[nz])).sum())


def describe_image(path: str | Path) -> tuple[np.ndarray, float]:
    """Histogram and entropy for an image file in one decode."""
    rgb = load_rgb(path)
    return hsv_histogram(rgb), grayscale_entropy(rgb)


def write_descriptor_cache(path: str | Path, rows: dict[str, tuple[np.ndarray, float]]) -> None:
    """CSV cache: id, the 128 histogram bins, entropy. Rows sorted by id."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + [f"b{i}" for i in range(N_BINS)] + ["entropy"])
        for sid in sorted(rows):
            hist, ent = rows[sid]
            writer.writerow([sid] + [repr(float(x)) for x in hist] + [repr(float(ent))])


def read_descriptor_cache(path: str | Path) -> dict[str, tuple[np.ndarray, float]]:
    out: dict[str, tuple[np.ndarray, float]] = {}
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) != N_BINS + 2:
            raise ValueError(f"descriptor cache has {len(header)} columns, expected {N_BINS + 2}")
        for row in reader:
            hist = np.array([float(x) for x in row[1 : 1 + N_BINS]])
            out[row[0]] = (hist, float(row[-1]))
    return out
