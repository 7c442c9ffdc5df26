"""Statistical and structural full-reference metrics on [0,1] patches.

PSNR / zero-mean NCC / mutual information work on flattened values of any
channel count; SSIM (Wang et al. 2004), MS-SSIM (Wang et al. 2003) take
single-channel patches per the benchmark protocol. Dynamic range is 1.
"""

import numpy as np
from scipy.ndimage import correlate1d

from .. import kernels
from ..errors import MetricInputError
from ..patch import Patch

PSNR_CAP_DB = 100.0
MI_BINS = 64
SSIM_K1 = 0.01
SSIM_K2 = 0.03
MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MSSSIM_WINDOW = 11


def _check_shapes(a: Patch, b: Patch) -> None:
    if a.data.shape != b.data.shape:
        raise MetricInputError(
            f"patch shape mismatch: {a.data.shape} vs {b.data.shape}"
        )


def _single_channel(p: Patch, name: str) -> np.ndarray:
    if p.channels != 1:
        raise MetricInputError(f"{name} expects single-channel patches")
    return p.data[:, :, 0]


def psnr(a: Patch, b: Patch) -> float:
    """Peak signal-to-noise ratio in dB; identical patches return the 100 dB cap."""
    _check_shapes(a, b)
    mse = float(np.mean((a.data - b.data) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return 10.0 * float(np.log10(1.0 / mse))


def ncc(a: Patch, b: Patch) -> float:
    """Zero-mean normalized cross-correlation over all pixels and channels.

    Returns 0 when either side has zero variance (blank patch) so batch
    scoring never aborts.
    """
    _check_shapes(a, b)
    x = a.data.ravel() - a.data.mean()
    y = b.data.ravel() - b.data.mean()
    denom = float(np.sqrt(np.dot(x, x)) * np.sqrt(np.dot(y, y)))
    if denom == 0.0:
        return 0.0
    return float(np.clip(np.dot(x, y) / denom, -1.0, 1.0))


def mutual_information(a: Patch, b: Patch) -> float:
    """Mutual information in bits from a 64x64 joint histogram over [0,1]^2."""
    _check_shapes(a, b)
    counts = kernels.joint_histogram(a.data, b.data, MI_BINS).astype(np.float64)
    n = counts.sum()
    p = counts / n
    pa = p.sum(axis=1, keepdims=True)
    pb = p.sum(axis=0, keepdims=True)
    mask = p > 0
    ratio = p[mask] / (pa @ pb)[mask]
    # the sum is a KL divergence, nonnegative up to rounding of the
    # mixed-sign terms; keep the declared range exact
    return max(0.0, float(np.sum(p[mask] * np.log2(ratio))))


def _gaussian_window(width: int) -> np.ndarray:
    # kernel-size-scaled sigma, keeping the classic 11/1.5 ratio
    sigma = 1.5 * width / 11.0
    x = np.arange(width, dtype=np.float64) - (width - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    out = correlate1d(img, g, axis=0, mode="constant")
    out = correlate1d(out, g, axis=1, mode="constant")
    r = len(g) // 2
    h, w = img.shape
    return out[r : h - r, r : w - r]


def _ssim_and_cs(x: np.ndarray, y: np.ndarray, window: int) -> tuple[float, float]:
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    g = _gaussian_window(window)
    mu1 = _filter_valid(x, g)
    mu2 = _filter_valid(y, g)
    s11 = _filter_valid(x * x, g) - mu1 * mu1
    s22 = _filter_valid(y * y, g) - mu2 * mu2
    s12 = _filter_valid(x * y, g) - mu1 * mu2
    lum = (2.0 * mu1 * mu2 + c1) / (mu1 * mu1 + mu2 * mu2 + c1)
    cs = (2.0 * s12 + c2) / (s11 + s22 + c2)
    return float(np.mean(lum * cs)), float(np.mean(cs))


def ssim(a: Patch, b: Patch, window: int) -> float:
    """Mean structural similarity with a Gaussian window of the given width."""
    _check_shapes(a, b)
    x = _single_channel(a, "ssim")
    y = _single_channel(b, "ssim")
    if window % 2 != 1:
        raise MetricInputError("ssim window must be odd")
    if window > min(x.shape):
        raise MetricInputError(
            f"ssim window {window} exceeds image size {x.shape}"
        )
    return _ssim_and_cs(x, y, window)[0]


def _downsample2(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    if h % 2:
        img = np.concatenate([img, img[-1:, :]], axis=0)
    if w % 2:
        img = np.concatenate([img, img[:, -1:]], axis=1)
    h, w = img.shape
    return img.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def ms_ssim(a: Patch, b: Patch) -> float:
    """Five-scale MS-SSIM with the canonical weights and 2x average pooling.

    Contrast-structure factors are floored at 0 before exponentiation, the
    usual guard against NaN from slightly negative covariances.
    """
    _check_shapes(a, b)
    x = _single_channel(a, "ms-ssim")
    y = _single_channel(b, "ms-ssim")
    scales = len(MSSSIM_WEIGHTS)
    if min(x.shape) < MSSSIM_WINDOW * 2 ** (scales - 1):
        raise MetricInputError(
            f"ms-ssim needs min side >= {MSSSIM_WINDOW * 2 ** (scales - 1)}, got {x.shape}"
        )
    result = 1.0
    for level, weight in enumerate(MSSSIM_WEIGHTS):
        s, cs = _ssim_and_cs(x, y, MSSSIM_WINDOW)
        factor = s if level == scales - 1 else cs
        result *= max(factor, 0.0) ** weight
        if level < scales - 1:
            x, y = _downsample2(x), _downsample2(y)
    return float(result)
