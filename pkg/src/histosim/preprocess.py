"""Six-slot preprocessing pipeline for cross-stain patch comparison.

Steps run in a fixed order: min-max normalization, channel-mode conversion
(RGB / grayscale / hematoxylin), intensity inversion, histogram matching of
the IHC patch to its H&E reference, CLAHE, median smoothing. A configuration
is written as a compact ``n|mode|i|h|c|s`` code, e.g. ``0|gray|0|1|1|0``.
"""

import re
from dataclasses import dataclass
from enum import Enum
from itertools import product

import numpy as np

from . import kernels
from .errors import ConfigError, MetricInputError
from .patch import Colorspace, Patch

# BT.709 luma weights
_GRAY_W = np.array([0.2126, 0.7152, 0.0722])

# Ruifrok & Johnston H-E-DAB stain optical-density vectors, rows normalized.
_STAIN_RGB = np.array(
    [
        [0.65, 0.70, 0.29],  # hematoxylin
        [0.07, 0.99, 0.11],  # eosin
        [0.27, 0.57, 0.78],  # DAB
    ]
)
_STAIN_RGB = _STAIN_RGB / np.linalg.norm(_STAIN_RGB, axis=1, keepdims=True)
_STAIN_INV = np.linalg.inv(_STAIN_RGB)

_OD_EPS = 1e-6

CLAHE_GRID = (8, 8)
CLAHE_CLIP = 2.0
MEDIAN_KERNEL = 3
HIST_MATCH_BINS = 256


class ChannelMode(Enum):
    RGB = "rgb"
    GRAY = "gray"
    HED = "hed"


_CODE_RE = re.compile(r"^([01])\|(rgb|gray|hed)\|([01])\|([01])\|([01])\|([01])$")


@dataclass(frozen=True)
class PreprocessConfig:
    normalize: bool = False
    channel_mode: ChannelMode = ChannelMode.RGB
    invert: bool = False
    hist_match: bool = False
    clahe: bool = False
    smooth: bool = False

    def code(self) -> str:
        return format_config(self)


def parse_config(code: str) -> PreprocessConfig:
    m = _CODE_RE.match(code.strip())
    if not m:
        raise ConfigError(f"malformed preprocess code {code!r} (want n|mode|i|h|c|s)")
    n, mode, i, h, c, s = m.groups()
    return PreprocessConfig(
        normalize=n == "1",
        channel_mode=ChannelMode(mode),
        invert=i == "1",
        hist_match=h == "1",
        clahe=c == "1",
        smooth=s == "1",
    )


def format_config(cfg: PreprocessConfig) -> str:
    bits = [cfg.normalize, cfg.invert, cfg.hist_match, cfg.clahe, cfg.smooth]
    n, i, h, c, s = ("1" if b else "0" for b in bits)
    return f"{n}|{cfg.channel_mode.value}|{i}|{h}|{c}|{s}"


def enumerate_configs() -> list[PreprocessConfig]:
    """All 2*3*2*2*2*2 = 96 pipeline configurations."""
    combos = product(
        (False, True),
        (ChannelMode.RGB, ChannelMode.GRAY, ChannelMode.HED),
        (False, True),
        (False, True),
        (False, True),
        (False, True),
    )
    return [PreprocessConfig(*c) for c in combos]


def _per_channel(patch: Patch, fn) -> np.ndarray:
    return np.stack([fn(patch.data[:, :, c]) for c in range(patch.channels)], axis=2)


def minmax_normalize(p: Patch) -> Patch:
    """Channel-wise rescale so min -> 0 and max -> 1; constant channels -> 0."""
    out = np.empty_like(p.data)
    for c in range(p.channels):
        ch = p.data[:, :, c]
        lo, hi = ch.min(), ch.max()
        out[:, :, c] = 0.0 if hi == lo else (ch - lo) / (hi - lo)
    return p.with_data(out)


def to_grayscale(p: Patch) -> Patch:
    if p.colorspace is not Colorspace.RGB:
        raise MetricInputError("grayscale conversion needs an RGB patch")
    gray = p.data @ _GRAY_W
    return Patch(gray[:, :, None], Colorspace.GRAY)


def hed_deconvolve(p: Patch) -> Patch:
    """Hematoxylin channel by Ruifrok-Johnston color deconvolution.

    RGB transmittance is clipped away from zero, converted to optical
    density and unmixed with the inverse stain matrix; negative hematoxylin
    concentrations (out-of-gamut colors) are floored at zero before the
    per-patch min-max rescale to [0, 1], so an unstained white pixel stays 0
    in any patch that contains stain. Constant maps rescale to zeros.
    """
    if p.colorspace is not Colorspace.RGB:
        raise MetricInputError("stain deconvolution needs an RGB patch")
    od = -np.log(np.maximum(p.data, _OD_EPS))
    hema = np.maximum(od @ _STAIN_INV[:, 0], 0.0)
    lo, hi = hema.min(), hema.max()
    out = np.zeros_like(hema) if hi == lo else (hema - lo) / (hi - lo)
    return Patch(out[:, :, None], Colorspace.HEMATOXYLIN)


def invert(p: Patch) -> Patch:
    return p.with_data(1.0 - p.data)


def _quantile_map(src: np.ndarray, ref: np.ndarray, nbins: int) -> np.ndarray:
    # piecewise-linear value map through matched quantiles, endpoints included
    q = np.concatenate(([0.0], (np.arange(nbins) + 0.5) / nbins, [1.0]))
    src_q = np.quantile(src, q)
    ref_q = np.quantile(ref, q)
    return np.interp(src, src_q, ref_q)


def histogram_match(src: Patch, ref: Patch) -> Patch:
    """Monotone per-channel remap of src so its value distribution follows ref.

    Uses 256-level quantile mapping; matching a patch against itself is the
    identity, matching to a constant reference yields that constant.
    """
    if src.channels != ref.channels:
        raise MetricInputError(
            f"histogram match channel mismatch: {src.channels} vs {ref.channels}"
        )
    out = np.stack(
        [
            _quantile_map(src.data[:, :, c], ref.data[:, :, c], HIST_MATCH_BINS)
            for c in range(src.channels)
        ],
        axis=2,
    )
    return src.with_data(np.clip(out, 0.0, 1.0))


def clahe(p: Patch) -> Patch:
    """Contrast-limited adaptive equalization, applied per channel."""
    return p.with_data(
        _per_channel(p, lambda ch: kernels.clahe(ch, CLAHE_GRID, CLAHE_CLIP))
    )


def median_smooth(p: Patch) -> Patch:
    """3x3 median filter per channel with reflective edges."""
    return p.with_data(_per_channel(p, lambda ch: kernels.median_filter(ch, MEDIAN_KERNEL)))


def apply_pipeline(he: Patch, ihc: Patch, cfg: PreprocessConfig) -> tuple[Patch, Patch]:
    """Run the configured pipeline on an (H&E, IHC) pair.

    Both patches must be RGB on entry; histogram matching remaps the IHC
    patch toward the (already converted) H&E reference.
    """
    if he.colorspace is not Colorspace.RGB or ihc.colorspace is not Colorspace.RGB:
        raise MetricInputError("pipeline expects RGB patches on entry")
    if cfg.normalize:
        he, ihc = minmax_normalize(he), minmax_normalize(ihc)
    if cfg.channel_mode is ChannelMode.GRAY:
        he, ihc = to_grayscale(he), to_grayscale(ihc)
    elif cfg.channel_mode is ChannelMode.HED:
        he, ihc = hed_deconvolve(he), hed_deconvolve(ihc)
    if cfg.invert:
        he, ihc = invert(he), invert(ihc)
    if cfg.hist_match:
        ihc = histogram_match(ihc, he)
    if cfg.clahe:
        he, ihc = clahe(he), clahe(ihc)
    if cfg.smooth:
        he, ihc = median_smooth(he), median_smooth(ihc)
    return he, ihc
