"""Metric registry: names, orientations and allowed channel modes.

Classical metric names match the output-file vocabulary: ``psnr``, ``ncc``,
``mi``, ``ssim_w7``, ``ssim_w31``, ``ms-ssim``, ``fsim``, ``fsimc``. The
statistical/structural metrics are benchmarked in single-channel spaces
(gray or hematoxylin); ``fsimc`` is the RGB variant. Deep metrics (``lpips``,
``dists``, ``haps``) accept any channel mode because the extractor replicates
single channels to its RGB input.
"""

from dataclasses import dataclass
from functools import partial
from typing import Callable

from ..errors import MetricInputError
from ..patch import Patch
from ..preprocess import ChannelMode
from .classical import ms_ssim, mutual_information, ncc, psnr, ssim
from .deep import LayerDistances, channel_pearson_distance, dists_style, lpips_style
from .fsim import fsim, fsimc

__all__ = [
    "MetricDescriptor",
    "CLASSICAL_METRICS",
    "DEEP_METRIC_NAMES",
    "ALL_METRIC_NAMES",
    "get_descriptor",
    "channel_pearson_distance",
    "lpips_style",
    "dists_style",
    "LayerDistances",
    "psnr",
    "ncc",
    "mutual_information",
    "ssim",
    "ms_ssim",
    "fsim",
    "fsimc",
]

_SINGLE = frozenset({ChannelMode.GRAY, ChannelMode.HED})
_ANY = frozenset({ChannelMode.RGB, ChannelMode.GRAY, ChannelMode.HED})


@dataclass(frozen=True)
class MetricDescriptor:
    name: str
    higher_is_better: bool
    channel_modes_allowed: frozenset
    fn: Callable[[Patch, Patch], float] | None = None

    def check_mode(self, mode: ChannelMode) -> None:
        if mode not in self.channel_modes_allowed:
            allowed = sorted(m.value for m in self.channel_modes_allowed)
            raise MetricInputError(
                f"metric {self.name!r} is not defined for channel mode "
                f"{mode.value!r} (allowed: {allowed})"
            )


CLASSICAL_METRICS = {
    d.name: d
    for d in [
        MetricDescriptor("psnr", True, _SINGLE, psnr),
        MetricDescriptor("ncc", True, _SINGLE, ncc),
        MetricDescriptor("mi", True, _SINGLE, mutual_information),
        MetricDescriptor("ssim_w7", True, _SINGLE, partial(ssim, window=7)),
        MetricDescriptor("ssim_w31", True, _SINGLE, partial(ssim, window=31)),
        MetricDescriptor("ms-ssim", True, _SINGLE, ms_ssim),
        MetricDescriptor("fsim", True, _SINGLE, fsim),
        MetricDescriptor("fsimc", True, frozenset({ChannelMode.RGB}), fsimc),
    ]
}

# deep distances run through an extractor; fn is bound by the scoring layer
DEEP_METRICS = {
    d.name: d
    for d in [
        MetricDescriptor("lpips", False, _ANY),
        MetricDescriptor("dists", False, _ANY),
        MetricDescriptor("haps", True, _ANY),
    ]
}

DEEP_METRIC_NAMES = tuple(DEEP_METRICS)
ALL_METRIC_NAMES = tuple(CLASSICAL_METRICS) + DEEP_METRIC_NAMES


def get_descriptor(name: str) -> MetricDescriptor:
    if name in CLASSICAL_METRICS:
        return CLASSICAL_METRICS[name]
    if name in DEEP_METRICS:
        return DEEP_METRICS[name]
    raise MetricInputError(
        f"unknown metric {name!r}; available: {', '.join(ALL_METRIC_NAMES)}"
    )
