"""Feature-space distances over extractor stacks.

``channel_pearson_distance`` is per-channel spatial correlation folded into
a per-stage distance d_l = 1 - mean_c rho_c, which is what makes the score
insensitive to global intensity and contrast differences between stains.
``lpips_style`` and ``dists_style`` are structural re-implementations of
the familiar unit-normalized-difference and texture/structure distances,
routed through the same extractor interface; bit-parity with the published
natural-image versions is not promised.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import MetricInputError
from ..features.stack import FeatureStack, check_matching

PEARSON_EPS = 1e-8
_UNIT_EPS = 1e-10
_DISTS_C = 1e-6


@dataclass(frozen=True)
class LayerDistances:
    """Per-stage distances, each in [0, 2]."""

    d: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.d)
        if len(vals) != 4:
            raise MetricInputError(f"expected 4 layer distances, got {len(vals)}")
        object.__setattr__(self, "d", vals)

    def as_array(self) -> np.ndarray:
        return np.array(self.d, dtype=np.float64)


def channel_pearson_distance(
    f1: FeatureStack, f2: FeatureStack, eps: float = PEARSON_EPS
) -> LayerDistances:
    """Per-stage d_l = 1 - mean over channels of spatial Pearson correlation.

    rho is regularized with eps in the denominator and clamped to [-1, 1];
    a channel that is constant in either map therefore contributes rho = 0,
    i.e. a full unit of distance.
    """
    if eps <= 0:
        raise MetricInputError("eps must be positive")
    check_matching(f1, f2)
    out = []
    for s1, s2 in zip(f1, f2):
        c = s1.shape[0]
        x = s1.reshape(c, -1).astype(np.float64)
        y = s2.reshape(c, -1).astype(np.float64)
        xc = x - x.mean(axis=1, keepdims=True)
        yc = y - y.mean(axis=1, keepdims=True)
        cov = (xc * yc).mean(axis=1)
        sx = np.sqrt((xc**2).mean(axis=1))
        sy = np.sqrt((yc**2).mean(axis=1))
        rho = np.clip(cov / (sx * sy + eps), -1.0, 1.0)
        out.append(1.0 - rho.mean())
    return LayerDistances(tuple(out))


def _unit_normalize(stage: np.ndarray) -> np.ndarray:
    norm = np.sqrt((stage.astype(np.float64) ** 2).sum(axis=0, keepdims=True))
    return stage / (norm + _UNIT_EPS)


def lpips_style(f1: FeatureStack, f2: FeatureStack, weights="avg") -> float:
    """Unit-normalized squared feature differences, averaged over stages.

    Per stage: channel-unit-normalize each spatial position, take the
    squared difference summed over channels, then the spatial mean.
    ``weights="avg"`` averages the four stage values; a sequence of four
    per-channel weight vectors applies channel weights before pooling.
    """
    check_matching(f1, f2)
    lin = None
    if not (isinstance(weights, str) and weights == "avg"):
        lin = [np.asarray(w, dtype=np.float64) for w in weights]
        if len(lin) != 4:
            raise MetricInputError("lin weights must provide one vector per stage")
        for w, s in zip(lin, f1):
            if w.shape != (s.shape[0],):
                raise MetricInputError(
                    f"lin weight length {w.shape} does not match {s.shape[0]} channels"
                )
            if (w < 0).any():
                raise MetricInputError("lin weights must be nonnegative")
    per_stage = []
    for idx, (s1, s2) in enumerate(zip(f1, f2)):
        diff2 = (_unit_normalize(s1) - _unit_normalize(s2)) ** 2
        if lin is None:
            stage_val = diff2.sum(axis=0).mean()
        else:
            stage_val = (lin[idx][:, None, None] * diff2).sum(axis=0).mean()
        per_stage.append(float(stage_val))
    return float(np.mean(per_stage))


def dists_style(f1: FeatureStack, f2: FeatureStack) -> float:
    """Texture/structure distance: 1 - mean channel similarity.

    Per stage and channel the texture term compares global means and the
    structure term global covariances; the two are averaged with equal
    weight over every stage-channel.
    """
    check_matching(f1, f2)
    sims = []
    for s1, s2 in zip(f1, f2):
        c = s1.shape[0]
        x = s1.reshape(c, -1).astype(np.float64)
        y = s2.reshape(c, -1).astype(np.float64)
        mx = x.mean(axis=1)
        my = y.mean(axis=1)
        vx = x.var(axis=1)
        vy = y.var(axis=1)
        cov = ((x - mx[:, None]) * (y - my[:, None])).mean(axis=1)
        texture = (2.0 * mx * my + _DISTS_C) / (mx**2 + my**2 + _DISTS_C)
        structure = (2.0 * cov + _DISTS_C) / (vx + vy + _DISTS_C)
        sims.append(0.5 * (texture + structure))
    return float(1.0 - np.concatenate(sims).mean())
