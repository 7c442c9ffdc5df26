"""Geometric stress-test: controlled distortions, score curves, sensitivity
indices.

Each distortion family runs over an increasing magnitude grid starting at
zero. Every generated image (including the zero level) goes through the same
bilinear-resample-with-reflection + central-crop path, and the reference is
the same crop of the undistorted patch, so level 0 is an exact
self-comparison. Two indices summarize a median curve M_k over levels
delta_k: early saturation ES_k = |M_k - M_0| / |M_max - M_0| and the late
sensitivity ratio LSR_m = slope over the final m levels times delta_max over
the total drop (1 for an affine response, 0 for a saturated tail).
"""

import csv
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import DegenerateCurveError, MetricInputError
from .patch import Patch

CROP_KEEP_FRACTION = 0.75
MIN_CROP_INPUT = 64
ELASTIC_GRID = (5, 5)

SHIFT_LEVELS = (0.0, 0.005, 0.01, 0.02, 0.04)  # fraction of min(H, W)
ROTATE_LEVELS = (0.0, 2.0, 4.0, 8.0, 12.0)  # degrees
ELASTIC_LEVELS = (0.0, 1.0, 3.0, 6.0, 9.0, 12.0)  # control-point pixels


class DistortionKind(Enum):
    SHIFT = "shift"
    ROTATE = "rotate"
    ELASTIC = "elastic"


@dataclass(frozen=True)
class DistortionGrid:
    kind: DistortionKind
    levels: tuple

    def __post_init__(self):
        levels = tuple(float(v) for v in self.levels)
        if not levels or levels[0] != 0.0:
            raise MetricInputError("distortion levels must start at 0")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise MetricInputError("distortion levels must be strictly increasing")
        object.__setattr__(self, "levels", levels)


def default_grids() -> list[DistortionGrid]:
    return [
        DistortionGrid(DistortionKind.SHIFT, SHIFT_LEVELS),
        DistortionGrid(DistortionKind.ROTATE, ROTATE_LEVELS),
        DistortionGrid(DistortionKind.ELASTIC, ELASTIC_LEVELS),
    ]


@dataclass(frozen=True)
class SensitivityCurve:
    metric_name: str
    kind: DistortionKind
    deltas: tuple
    medians: tuple
    iqrs: tuple
    n: int
    baseline_v0: float


@dataclass(frozen=True)
class SensitivityIndices:
    metric_name: str
    kind: DistortionKind
    es1: float
    es2: float
    lsr1: float
    lsr2: float


def crop_valid(p: Patch) -> Patch:
    """Central crop keeping floor(3/4) of each side (256 -> 192)."""
    h, w = p.height, p.width
    if h < MIN_CROP_INPUT or w < MIN_CROP_INPUT:
        raise MetricInputError(
            f"crop_valid needs at least {MIN_CROP_INPUT}^2 input, got {h}x{w}"
        )
    nh, nw = (3 * h) // 4, (3 * w) // 4
    oy, ox = (h - nh) // 2, (w - nw) // 2
    return p.with_data(p.data[oy : oy + nh, ox : ox + nw, :])


def _sample_patch(p: Patch, rows: np.ndarray, cols: np.ndarray) -> Patch:
    out = np.stack(
        [kernels.bilinear_sample(p.data[:, :, c], rows, cols) for c in range(p.channels)],
        axis=2,
    )
    return p.with_data(np.clip(out, 0.0, 1.0))


def shift_scale_rotate(
    p: Patch, shift_frac: float, angle_deg: float, seed: int
) -> Patch:
    """Translate (random direction from seed) and rotate about the center.

    The shift magnitude is shift_frac * min(H, W) pixels along a direction
    drawn uniformly on the circle; scale is fixed at 1. Resampling is
    bilinear with reflection padding, then the shared central crop.
    """
    if abs(shift_frac) > 0.1:
        raise MetricInputError("|shift_frac| must be <= 0.1")
    if abs(angle_deg) > 45.0:
        raise MetricInputError("|angle_deg| must be <= 45")
    h, w = p.height, p.width
    rng = np.random.default_rng(seed)
    phi = rng.uniform(0.0, 2.0 * math.pi)
    mag = shift_frac * min(h, w)
    ty, tx = mag * math.sin(phi), mag * math.cos(phi)
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0

    yy, xx = np.meshgrid(
        np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij"
    )
    # inverse map of: rotate about center by theta, then translate by (ty, tx)
    dy = yy - cy - ty
    dx = xx - cx - tx
    src_rows = cos_t * dy + sin_t * dx + cy
    src_cols = -sin_t * dy + cos_t * dx + cx
    return crop_valid(_sample_patch(p, src_rows, src_cols))


def grid_elastic_deform(
    p: Patch, magnitude: float, grid: tuple[int, int] = ELASTIC_GRID, seed: int = 0
) -> Patch:
    """Control-point elastic deformation on a coarse grid.

    Displacements are magnitude * U[-1, 1] per node and axis (so the same
    seed yields the same deformation pattern scaled across magnitudes) and
    are bilinearly interpolated to a dense field before resampling.
    """
    if magnitude < 0:
        raise MetricInputError("magnitude must be nonnegative")
    h, w = p.height, p.width
    gh, gw = grid
    rng = np.random.default_rng(seed)
    node_disp = magnitude * rng.uniform(-1.0, 1.0, size=(gh, gw, 2))

    def dense(axis: int) -> np.ndarray:
        ys = np.linspace(0.0, gh - 1.0, h)
        xs = np.linspace(0.0, gw - 1.0, w)
        i0 = np.minimum(ys.astype(np.int64), gh - 2)
        j0 = np.minimum(xs.astype(np.int64), gw - 2)
        fy = (ys - i0)[:, None]
        fx = (xs - j0)[None, :]
        g = node_disp[:, :, axis]
        v00 = g[i0[:, None], j0[None, :]]
        v01 = g[i0[:, None], j0[None, :] + 1]
        v10 = g[i0[:, None] + 1, j0[None, :]]
        v11 = g[i0[:, None] + 1, j0[None, :] + 1]
        return (
            (1.0 - fy) * (1.0 - fx) * v00
            + (1.0 - fy) * fx * v01
            + fy * (1.0 - fx) * v10
            + fy * fx * v11
        )

    yy, xx = np.meshgrid(
        np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij"
    )
    src_rows = yy + dense(0)
    src_cols = xx + dense(1)
    return crop_valid(_sample_patch(p, src_rows, src_cols))


def dense_displacement_bound(
    magnitude: float, grid: tuple[int, int] = ELASTIC_GRID, seed: int = 0
) -> float:
    """Max per-axis displacement the elastic field can reach (for the oracle)."""
    rng = np.random.default_rng(seed)
    node_disp = magnitude * rng.uniform(-1.0, 1.0, size=(grid[0], grid[1], 2))
    return float(np.abs(node_disp).max())


def distort(p: Patch, kind: DistortionKind, level: float, seed: int) -> Patch:
    if kind is DistortionKind.SHIFT:
        return shift_scale_rotate(p, level, 0.0, seed)
    if kind is DistortionKind.ROTATE:
        return shift_scale_rotate(p, 0.0, level, seed)
    return grid_elastic_deform(p, level, seed=seed)


def _patch_seed(seed: int, patch_index: int, kind: DistortionKind) -> int:
    kind_id = list(DistortionKind).index(kind)
    ss = np.random.SeedSequence([seed, patch_index, kind_id])
    return int(ss.generate_state(1)[0])


def run_stress(
    patches: Sequence[Patch],
    metric_fn: Callable[[Patch, Patch], float],
    metric_name: str,
    grids: Sequence[DistortionGrid] | None = None,
    seed: int = 0,
) -> list[SensitivityCurve]:
    """Score metric(crop(I0), crop(I_k)) over every patch and level.

    The shift/rotate direction and the elastic pattern are drawn once per
    (patch, kind) so levels of one curve share their distortion geometry.
    Medians and IQRs (linear-interpolated quartiles) aggregate over patches.
    """
    if not patches:
        raise MetricInputError("run_stress needs at least one patch")
    if grids is None:
        grids = default_grids()
    curves = []
    for grid in grids:
        scores = np.empty((len(patches), len(grid.levels)))
        self_scores = np.empty(len(patches))
        for i, patch in enumerate(patches):
            ref = crop_valid(patch)
            pseed = _patch_seed(seed, i, grid.kind)
            self_scores[i] = metric_fn(ref, ref)
            for k, level in enumerate(grid.levels):
                scores[i, k] = metric_fn(ref, distort(patch, grid.kind, level, pseed))
        q25, q50, q75 = np.percentile(scores, [25.0, 50.0, 75.0], axis=0)
        curves.append(
            SensitivityCurve(
                metric_name=metric_name,
                kind=grid.kind,
                deltas=grid.levels,
                medians=tuple(float(v) for v in q50),
                iqrs=tuple(float(v) for v in q75 - q25),
                n=len(patches),
                baseline_v0=float(np.median(self_scores)),
            )
        )
    return curves


def early_saturation(curve: SensitivityCurve, k: int) -> float:
    """Fraction of the total median drop already spent at level k."""
    m = np.asarray(curve.medians)
    if not 1 <= k < len(m):
        raise MetricInputError(f"level index k={k} out of range for {len(m)} levels")
    span = abs(m[-1] - m[0])
    if span == 0.0:
        raise DegenerateCurveError(
            f"{curve.metric_name}/{curve.kind.value}: zero dynamic range (M_max == M_0)"
        )
    return float(abs(m[k] - m[0]) / span)


def late_sensitivity_ratio(curve: SensitivityCurve, m: int) -> float:
    """Terminal slope over the final m levels, normalized by the mean slope."""
    if m not in (1, 2):
        raise MetricInputError("m must be 1 or 2")
    med = np.asarray(curve.medians)
    deltas = np.asarray(curve.deltas)
    if len(med) < m + 1:
        raise MetricInputError(f"curve too short for LSR_{m}")
    span = abs(med[-1] - med[0])
    dspan = deltas[-1] - deltas[-1 - m]
    if span == 0.0 or dspan == 0.0:
        raise DegenerateCurveError(
            f"{curve.metric_name}/{curve.kind.value}: degenerate curve for LSR_{m}"
        )
    slope_last = abs(med[-1] - med[-1 - m]) / dspan
    return float(slope_last * deltas[-1] / span)


def indices_for_curve(curve: SensitivityCurve) -> SensitivityIndices:
    return SensitivityIndices(
        metric_name=curve.metric_name,
        kind=curve.kind,
        es1=early_saturation(curve, 1),
        es2=early_saturation(curve, 2),
        lsr1=late_sensitivity_ratio(curve, 1),
        lsr2=late_sensitivity_ratio(curve, 2),
    )


def write_curves_csv(curves: Sequence[SensitivityCurve], path: str | Path) -> None:
    with open(Path(path), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "kind", "delta", "median", "iqr", "n"])
        for curve in curves:
            for delta, med, iqr in zip(curve.deltas, curve.medians, curve.iqrs):
                writer.writerow(
                    [
                        curve.metric_name,
                        curve.kind.value,
                        f"{delta:.10g}",
                        f"{med:.10g}",
                        f"{iqr:.10g}",
                        curve.n,
                    ]
                )


def write_indices_csv(indices: Sequence[SensitivityIndices], path: str | Path) -> None:
    with open(Path(path), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "kind", "ES1", "ES2", "LSR1", "LSR2"])
        for idx in indices:
            writer.writerow(
                [
                    idx.metric_name,
                    idx.kind.value,
                    f"{idx.es1:.10g}",
                    f"{idx.es2:.10g}",
                    f"{idx.lsr1:.10g}",
                    f"{idx.lsr2:.10g}",
                ]
            )


def plot_curves(
    curves: Sequence[SensitivityCurve],
    out_dir: str | Path,
    normalize_p99: bool = False,
) -> list[Path]:
    """Optional static plots, one PNG per distortion kind.

    With normalize_p99 each curve is min-max scaled to its 99th percentile
    so metrics with different ranges share an axis.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for kind in DistortionKind:
        group = [c for c in curves if c.kind is kind]
        if not group:
            continue
        fig, ax = plt.subplots(figsize=(6, 4))
        for curve in group:
            med = np.asarray(curve.medians)
            iqr = np.asarray(curve.iqrs)
            if normalize_p99:
                hi = np.percentile(med, 99.0)
                lo = med.min()
                scale = hi - lo if hi > lo else 1.0
                med = (med - lo) / scale
                iqr = iqr / scale
            ax.plot(curve.deltas, med, marker="o", label=curve.metric_name)
            ax.fill_between(
                curve.deltas, med - iqr / 2, med + iqr / 2, alpha=0.15
            )
        ax.set_xlabel(f"{kind.value} magnitude")
        ax.set_ylabel("median score")
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / f"sensitivity_{kind.value}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written
