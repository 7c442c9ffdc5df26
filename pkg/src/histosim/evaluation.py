"""Ranking statistics and the staged preprocessing-configuration search.

Scores are always orientation-aligned (lower-is-better metrics negated)
before Spearman/AUROC so every reported statistic reads "higher = more
similar". The search runs in stages: stage 0 drops configurations whose
whole-train binary AUROC is below a floor, stage 1 picks the survivor with
the best grouped-CV Spearman subject to the same AUROC floor, and stage 2
(the caller) reports on held-out data with WSI-level bootstrapping.
"""

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    AllConfigsRejectedError,
    MetricInputError,
    UndefinedCorrelationError,
)
from .manifest import DatasetManifest
from .preprocess import PreprocessConfig

DEFAULT_AUC_FLOOR = 0.60
DEFAULT_KFOLD = 5
DEFAULT_BOOTSTRAP = 1000


def _midranks(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    sv = v[order]
    starts = np.flatnonzero(np.concatenate(([True], sv[1:] != sv[:-1])))
    counts = np.diff(np.concatenate((starts, [len(sv)])))
    avg = starts + 1 + (counts - 1) / 2.0
    ranks = np.empty(len(sv), dtype=np.float64)
    ranks[order] = np.repeat(avg, counts)
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rho: Pearson correlation of average-tie midranks."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise UndefinedCorrelationError("inputs must be equal-length vectors")
    if len(x) < 3:
        raise UndefinedCorrelationError("need at least 3 observations")
    rx = _midranks(x)
    ry = _midranks(y)
    rxc = rx - rx.mean()
    ryc = ry - ry.mean()
    denom = np.sqrt(np.dot(rxc, rxc) * np.dot(ryc, ryc))
    if denom == 0.0:
        raise UndefinedCorrelationError("constant input vector")
    return float(np.clip(np.dot(rxc, ryc) / denom, -1.0, 1.0))


def auroc_binary(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUROC: P(score_pos > score_neg) with ties counted half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise MetricInputError("scores and labels must have equal length")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricInputError("binary AUROC needs both classes present")
    ranks = _midranks(s)
    return float(
        (ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    )


def auroc_multiclass(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Ordinal macro AUROC of a scalar score against 3-class labels (0<1<2).

    A scalar score can only rank classes through thresholds, so the macro
    average runs over the ordinal boundaries (class >= 1, class >= 2);
    boundaries missing a side are skipped with a warning. With a score equal
    to the class index this is exactly 1.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise MetricInputError("scores and labels must have equal length")
    if len(np.unique(y)) < 2:
        raise MetricInputError("multiclass AUROC needs at least 2 classes present")
    aucs = []
    for boundary in (1, 2):
        binary = (y >= boundary).astype(int)
        if binary.min() == binary.max():
            warnings.warn(
                f"multiclass AUROC: boundary >= {boundary} has a single class, skipped",
                RuntimeWarning,
                stacklevel=2,
            )
            continue
        aucs.append(auroc_binary(s, binary))
    return float(np.mean(aucs))


def group_kfold(manifest: DatasetManifest, k: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Index folds where all records of a WSI share one validation fold."""
    wsis = sorted(set(r.wsi_id for r in manifest))
    if k < 2:
        raise MetricInputError("k must be at least 2")
    if k > len(wsis):
        raise MetricInputError(f"k={k} exceeds the {len(wsis)} distinct WSIs")
    wsi_ids = np.array([r.wsi_id for r in manifest])
    folds = []
    for chunk in np.array_split(np.array(wsis), k):
        valid = np.flatnonzero(np.isin(wsi_ids, chunk))
        train = np.flatnonzero(~np.isin(wsi_ids, chunk))
        folds.append((train, valid))
    return folds


@dataclass(frozen=True)
class BootstrapStat:
    mean: float
    std: float


@dataclass(frozen=True)
class BootstrapSummary:
    spearman: BootstrapStat
    auc_bin: BootstrapStat
    auc_multi: BootstrapStat
    iterations: int
    skipped: int


def _three_class_codes(expert_scores: np.ndarray) -> np.ndarray:
    # Bad=0, Borderline=1, Good=2
    out = np.where(expert_scores <= 2, 0, np.where(expert_scores == 3, 1, 2))
    return out.astype(int)


def _binary_codes(expert_scores: np.ndarray) -> np.ndarray:
    return (expert_scores >= 3).astype(int)  # Acceptable=1


def _point_stats(
    aligned: np.ndarray, expert: np.ndarray
) -> tuple[float, float, float]:
    sp = spearman(aligned, expert.astype(np.float64))
    auc_b = auroc_binary(aligned, _binary_codes(expert))
    auc_m = auroc_multiclass(aligned, _three_class_codes(expert))
    return sp, auc_b, auc_m


def wsi_bootstrap(
    aligned_scores: Sequence[float],
    expert_scores: Sequence[int],
    wsi_ids: Sequence[str],
    b: int = DEFAULT_BOOTSTRAP,
    seed: int = 0,
) -> BootstrapSummary:
    """Resample whole WSIs with replacement, pooling all their pairs.

    Iterations whose resample cannot support a statistic (single class,
    constant vector) are skipped and counted; mean and std (ddof=1 when
    possible) are taken over the successful iterations.
    """
    if b < 1:
        raise MetricInputError("bootstrap needs at least 1 iteration")
    aligned = np.asarray(aligned_scores, dtype=np.float64)
    expert = np.asarray(expert_scores, dtype=np.int64)
    wsi_arr = np.array(list(wsi_ids))
    if not (len(aligned) == len(expert) == len(wsi_arr)):
        raise MetricInputError("scores, labels, wsi_ids must have equal length")
    wsis = sorted(set(wsi_arr.tolist()))
    index_of = {w: np.flatnonzero(wsi_arr == w) for w in wsis}
    children = np.random.SeedSequence(seed).spawn(b)
    results = []
    skipped = 0
    for child in children:
        rng = np.random.default_rng(child)
        chosen = rng.choice(len(wsis), size=len(wsis), replace=True)
        idx = np.concatenate([index_of[wsis[c]] for c in chosen])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            try:
                results.append(_point_stats(aligned[idx], expert[idx]))
            except (UndefinedCorrelationError, MetricInputError):
                skipped += 1
    if not results:
        raise MetricInputError(
            f"all {b} bootstrap iterations failed their statistic preconditions"
        )
    arr = np.asarray(results)
    ddof = 1 if len(results) > 1 else 0
    stats = [
        BootstrapStat(float(arr[:, i].mean()), float(arr[:, i].std(ddof=ddof)))
        for i in range(3)
    ]
    return BootstrapSummary(
        spearman=stats[0],
        auc_bin=stats[1],
        auc_multi=stats[2],
        iterations=len(results),
        skipped=skipped,
    )


@dataclass(frozen=True)
class EvalReport:
    metric_name: str
    preprocess_code: str
    auc_bin: float
    auc_multi: float
    spearman: float
    auc_bin_bs: BootstrapStat
    auc_multi_bs: BootstrapStat
    sp_bs: BootstrapStat
    n_pairs: int
    n_wsis: int
    bootstrap_skipped: int


def evaluate(
    scores: Sequence[float],
    expert_scores: Sequence[int],
    wsi_ids: Sequence[str],
    metric_name: str = "",
    preprocess_code: str = "",
    higher_is_better: bool = True,
    b: int = DEFAULT_BOOTSTRAP,
    seed: int = 0,
) -> EvalReport:
    """Point statistics plus WSI bootstrap, orientation-aligned."""
    aligned = np.asarray(scores, dtype=np.float64)
    if not higher_is_better:
        aligned = -aligned
    expert = np.asarray(expert_scores, dtype=np.int64)
    sp, auc_b, auc_m = _point_stats(aligned, expert)
    boot = wsi_bootstrap(aligned, expert, wsi_ids, b=b, seed=seed)
    return EvalReport(
        metric_name=metric_name,
        preprocess_code=preprocess_code,
        auc_bin=auc_b,
        auc_multi=auc_m,
        spearman=sp,
        auc_bin_bs=boot.auc_bin,
        auc_multi_bs=boot.auc_multi,
        sp_bs=boot.spearman,
        n_pairs=len(aligned),
        n_wsis=len(set(wsi_ids)),
        bootstrap_skipped=boot.skipped,
    )


EVAL_CSV_COLUMNS = [
    "metric",
    "preprocess",
    "auc_bin",
    "auc_multi",
    "sp",
    "auc_bin_bs_mean",
    "auc_bin_bs_std",
    "auc_multi_bs_mean",
    "auc_multi_bs_std",
    "sp_bs_mean",
    "sp_bs_std",
    "n_pairs",
    "n_wsis",
    "bootstrap_skipped",
]


def write_eval_csv(reports: Sequence[EvalReport], path: str | Path) -> None:
    with open(Path(path), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EVAL_CSV_COLUMNS)
        for r in reports:
            writer.writerow(
                [
                    r.metric_name,
                    r.preprocess_code,
                    f"{r.auc_bin:.10g}",
                    f"{r.auc_multi:.10g}",
                    f"{r.spearman:.10g}",
                    f"{r.auc_bin_bs.mean:.10g}",
                    f"{r.auc_bin_bs.std:.10g}",
                    f"{r.auc_multi_bs.mean:.10g}",
                    f"{r.auc_multi_bs.std:.10g}",
                    f"{r.sp_bs.mean:.10g}",
                    f"{r.sp_bs.std:.10g}",
                    r.n_pairs,
                    r.n_wsis,
                    r.bootstrap_skipped,
                ]
            )


# ---------------------------------------------------------------------------
# staged configuration search
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SearchResult:
    metric_name: str
    best_config: PreprocessConfig
    cv_spearman: float
    cv_auc_bin: float
    survived_stage0: bool


@dataclass(frozen=True)
class ConfigRow:
    code: str
    stage0_auc_bin: float
    survived_stage0: bool
    cv_spearman: float | None
    cv_auc_bin: float | None
    selected: bool


def stage_search(
    search_scorer,
    manifest: DatasetManifest,
    configs: Sequence[PreprocessConfig],
    k: int = DEFAULT_KFOLD,
    auc_floor: float = DEFAULT_AUC_FLOOR,
) -> tuple[SearchResult, list[ConfigRow]]:
    """Stage 0 screening + stage 1 grouped-CV selection over configurations.

    ``search_scorer`` must expose ``name``, ``higher_is_better`` and
    ``prepare(cfg, manifest) -> prepared`` where ``prepared.fit(idx)``
    returns fold state (None for stateless metrics) and
    ``prepared.score(idx, state)`` returns scores for those records.
    Folds whose validation statistics are undefined are skipped; a
    configuration with no usable fold is rejected. Ties on CV Spearman break
    by higher CV AUROC, then lexicographically smaller config code.
    """
    expert = manifest.expert_scores()
    binary = _binary_codes(expert)
    folds = group_kfold(manifest, k)
    sign = 1.0 if search_scorer.higher_is_better else -1.0

    rows = []
    candidates = []
    for cfg in configs:
        code = cfg.code()
        prepared = search_scorer.prepare(cfg, manifest)
        all_idx = np.arange(len(manifest))
        state = prepared.fit(all_idx)
        aligned = sign * np.asarray(prepared.score(all_idx, state), dtype=np.float64)
        try:
            stage0_auc = auroc_binary(aligned, binary)
        except MetricInputError:
            rows.append(ConfigRow(code, float("nan"), False, None, None, False))
            continue
        if stage0_auc < auc_floor:
            rows.append(ConfigRow(code, stage0_auc, False, None, None, False))
            continue

        sp_folds, auc_folds = [], []
        for train_idx, valid_idx in folds:
            fold_state = prepared.fit(train_idx)
            fold_aligned = sign * np.asarray(
                prepared.score(valid_idx, fold_state), dtype=np.float64
            )
            try:
                sp_folds.append(spearman(fold_aligned, expert[valid_idx].astype(float)))
                auc_folds.append(auroc_binary(fold_aligned, binary[valid_idx]))
            except (UndefinedCorrelationError, MetricInputError):
                continue
        if not sp_folds:
            rows.append(ConfigRow(code, stage0_auc, True, None, None, False))
            continue
        cv_sp = float(np.mean(sp_folds))
        cv_auc = float(np.mean(auc_folds))
        rows.append(ConfigRow(code, stage0_auc, True, cv_sp, cv_auc, False))
        if cv_auc >= auc_floor:
            candidates.append((cv_sp, cv_auc, code, cfg))

    if not candidates:
        raise AllConfigsRejectedError(
            f"no configuration reached AUROC >= {auc_floor} for {search_scorer.name}"
        )
    candidates.sort(key=lambda t: (-t[0], -t[1], t[2]))
    best_sp, best_auc, best_code, best_cfg = candidates[0]
    rows = [
        ConfigRow(
            r.code, r.stage0_auc_bin, r.survived_stage0, r.cv_spearman, r.cv_auc_bin,
            r.code == best_code,
        )
        for r in rows
    ]
    result = SearchResult(
        metric_name=search_scorer.name,
        best_config=best_cfg,
        cv_spearman=best_sp,
        cv_auc_bin=best_auc,
        survived_stage0=True,
    )
    return result, rows


def write_search_csv(
    metric_name: str, rows: Sequence[ConfigRow], path: str | Path
) -> None:
    with open(Path(path), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["metric", "preprocess", "stage0_auc_bin", "survived_stage0",
             "cv_spearman", "cv_auc_bin", "selected"]
        )
        for r in rows:
            writer.writerow(
                [
                    metric_name,
                    r.code,
                    f"{r.stage0_auc_bin:.10g}",
                    int(r.survived_stage0),
                    "" if r.cv_spearman is None else f"{r.cv_spearman:.10g}",
                    "" if r.cv_auc_bin is None else f"{r.cv_auc_bin:.10g}",
                    int(r.selected),
                ]
            )
