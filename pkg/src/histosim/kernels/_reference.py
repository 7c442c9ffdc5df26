"""Numpy reference implementations of the hot per-pixel kernels.

These are the semantics of record; the compiled twin in ``_native.pyx`` must
agree exactly (median, joint histogram, bilinear gather) or to 1e-12 (CLAHE,
where summation order may differ).

Boundary convention everywhere is half-sample symmetric reflection
(``... b a | a b c ... | c b ...``), matching ``np.pad(mode="symmetric")``.
"""

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND_NAME = "numpy"


def _reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    """Map any integer index into [0, n) by half-sample reflection."""
    period = 2 * n
    j = np.mod(idx, period)
    return np.where(j >= n, period - 1 - j, j)


def median_filter(img: np.ndarray, k: int) -> np.ndarray:
    """k x k median with symmetric-reflection padding (k odd)."""
    if k % 2 != 1 or k < 1:
        raise ValueError("median kernel must be odd")
    h, w = img.shape
    pad = k // 2
    padded = np.pad(img, pad, mode="symmetric")
    windows = sliding_window_view(padded, (k, k)).reshape(h, w, k * k)
    return np.median(windows, axis=-1)


def joint_histogram(a: np.ndarray, b: np.ndarray, bins: int) -> np.ndarray:
    """Joint counts over a bins x bins grid covering [0,1] x [0,1].

    Bin index is min(floor(v * bins), bins - 1); values are assumed in [0,1].
    """
    ia = np.clip((a.ravel() * bins).astype(np.int64), 0, bins - 1)
    ib = np.clip((b.ravel() * bins).astype(np.int64), 0, bins - 1)
    flat = np.bincount(ia * bins + ib, minlength=bins * bins)
    return flat.reshape(bins, bins)


def bilinear_sample(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Sample a 2D image at float coordinates with reflection padding.

    Expression structure is fixed (w00*v00 + w01*v01 + w10*v10 + w11*v11,
    left to right) so the compiled twin is bit-identical.
    """
    h, w = img.shape
    r0f = np.floor(rows)
    c0f = np.floor(cols)
    fr = rows - r0f
    fc = cols - c0f
    r0 = r0f.astype(np.int64)
    c0 = c0f.astype(np.int64)
    r0r = _reflect_index(r0, h)
    r1r = _reflect_index(r0 + 1, h)
    c0r = _reflect_index(c0, w)
    c1r = _reflect_index(c0 + 1, w)
    v00 = img[r0r, c0r]
    v01 = img[r0r, c1r]
    v10 = img[r1r, c0r]
    v11 = img[r1r, c1r]
    return (
        (1.0 - fr) * (1.0 - fc) * v00
        + (1.0 - fr) * fc * v01
        + fr * (1.0 - fc) * v10
        + fr * fc * v11
    )


def clahe(
    img: np.ndarray,
    grid: tuple[int, int] = (8, 8),
    clip_limit: float = 2.0,
    nbins: int = 256,
) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization on a [0,1] image.

    Tile histograms are clipped at ``clip_limit`` times the mean bin count,
    the excess is redistributed uniformly, and per-tile CDF lookup tables are
    blended bilinearly between tile centers. The image is padded to a tile
    multiple with symmetric reflection and cropped back.
    """
    h, w = img.shape
    gh, gw = grid
    th = math.ceil(h / gh)
    tw = math.ceil(w / gw)
    hp, wp = th * gh, tw * gw
    padded = np.pad(img, ((0, hp - h), (0, wp - w)), mode="symmetric")
    bin_idx = np.clip((padded * nbins).astype(np.int64), 0, nbins - 1)

    area = th * tw
    limit = clip_limit * area / nbins
    tiles = bin_idx.reshape(gh, th, gw, tw).transpose(0, 2, 1, 3).reshape(gh, gw, area)
    luts = np.empty((gh, gw, nbins), dtype=np.float64)
    for i in range(gh):
        for j in range(gw):
            hist = np.bincount(tiles[i, j], minlength=nbins).astype(np.float64)
            excess = np.maximum(hist - limit, 0.0).sum()
            hist = np.minimum(hist, limit) + excess / nbins
            luts[i, j] = np.cumsum(hist) / area

    fy = (np.arange(hp, dtype=np.float64) + 0.5) / th - 0.5
    fx = (np.arange(wp, dtype=np.float64) + 0.5) / tw - 0.5
    i0 = np.floor(fy).astype(np.int64)
    j0 = np.floor(fx).astype(np.int64)
    wy = (fy - i0)[:, None]
    wx = (fx - j0)[None, :]
    i0c = np.clip(i0, 0, gh - 1)[:, None]
    i1c = np.clip(i0 + 1, 0, gh - 1)[:, None]
    j0c = np.clip(j0, 0, gw - 1)[None, :]
    j1c = np.clip(j0 + 1, 0, gw - 1)[None, :]

    i0b = np.broadcast_to(i0c, (hp, wp))
    i1b = np.broadcast_to(i1c, (hp, wp))
    j0b = np.broadcast_to(j0c, (hp, wp))
    j1b = np.broadcast_to(j1c, (hp, wp))
    v00 = luts[i0b, j0b, bin_idx]
    v01 = luts[i0b, j1b, bin_idx]
    v10 = luts[i1b, j0b, bin_idx]
    v11 = luts[i1b, j1b, bin_idx]
    out = (
        (1.0 - wy) * (1.0 - wx) * v00
        + (1.0 - wy) * wx * v01
        + wy * (1.0 - wx) * v10
        + wy * wx * v11
    )
    return out[:h, :w]
