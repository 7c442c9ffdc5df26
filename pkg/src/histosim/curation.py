"""Manifest scoring and bottom-fraction filtering for training-data curation.

Scoring fills each record's ``scores`` map under the scorer's registered
name; per-record failures become NaN with a logged path instead of aborting
the batch, unless more than 10% of the files are unreadable. Filtering drops
the floor(q*N) records with the lowest orientation-aligned scores, keeping
survivor order stable, and reports every dropped record.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import CurationError, HistosimError
from .manifest import DatasetManifest, with_scores
from .metrics import get_descriptor
from .scoring import BoundScorer, PairCache

log = logging.getLogger(__name__)

MAX_UNREADABLE_FRACTION = 0.10


@dataclass(frozen=True)
class DropReportEntry:
    pair_id: str
    score: float  # NaN for unreadable/unscorable records
    rank: int | None  # 1 = lowest aligned score; None for nan-score entries
    reason: str  # "filtered" or "nan-score"

    def to_obj(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "score": None if math.isnan(self.score) else self.score,
            "rank": self.rank,
            "reason": self.reason,
        }


def score_manifest(
    manifest: DatasetManifest,
    scorer: BoundScorer,
    cache: PairCache | None = None,
    threads: int = 1,
) -> DatasetManifest:
    """Score every pair; returns a manifest with the scorer's column filled."""
    cache = cache or PairCache()
    values = np.full(len(manifest), np.nan)
    failures = 0
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        def one(item):
            i, rec = item
            try:
                he, ihc = cache.pair(rec)
                return i, scorer.score_pair(he, ihc), None
            except HistosimError as exc:
                return i, math.nan, exc

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, enumerate(manifest)))
        for i, value, exc in results:
            if exc is not None:
                failures += 1
                log.error("pair %s failed: %s", manifest.records[i].pair_id, exc)
            values[i] = value
    else:
        for i, rec in enumerate(manifest):
            try:
                he, ihc = cache.pair(rec)
                values[i] = scorer.score_pair(he, ihc)
            except HistosimError as exc:
                failures += 1
                log.error("pair %s failed: %s (he=%s ihc=%s)",
                          rec.pair_id, exc, rec.he_path, rec.ihc_path)
    if len(manifest) and failures / len(manifest) > MAX_UNREADABLE_FRACTION:
        raise CurationError(
            f"{failures}/{len(manifest)} pairs failed to score "
            f"(more than {MAX_UNREADABLE_FRACTION:.0%}); aborting batch"
        )
    return with_scores(manifest, scorer.name, values)


def filter_bottom(
    manifest: DatasetManifest, metric_name: str, fraction: float
) -> tuple[DatasetManifest, list[DropReportEntry]]:
    """Drop the worst floor(q*N) records by aligned similarity.

    NaN-scored records are removed first and reported separately; ties at
    the cut keep the earlier manifest record. Lower-is-better metrics are
    negated before ranking so "lowest" always means "least similar".
    """
    if not 0.0 <= fraction < 1.0:
        raise CurationError(f"fraction must be in [0, 1), got {fraction}")
    desc = get_descriptor(metric_name)
    report: list[DropReportEntry] = []
    scored = []
    for rec in manifest:
        if metric_name not in rec.metric_scores:
            raise CurationError(
                f"record {rec.pair_id!r} has no score for metric {metric_name!r}"
            )
        value = rec.metric_scores[metric_name]
        if math.isnan(value):
            report.append(DropReportEntry(rec.pair_id, math.nan, None, "nan-score"))
        else:
            scored.append((rec, value))

    n = len(scored)
    n_drop = int(math.floor(fraction * n))
    aligned = np.array(
        [v if desc.higher_is_better else -v for _, v in scored], dtype=np.float64
    )
    # ascending by aligned score; among ties the later record drops first,
    # so the earlier one survives
    order = np.lexsort((-np.arange(n), aligned))
    drop_set = set(order[:n_drop].tolist())
    for rank_zero, pos in enumerate(order[:n_drop].tolist()):
        rec, value = scored[pos]
        report.append(DropReportEntry(rec.pair_id, value, rank_zero + 1, "filtered"))
    survivors = [rec for i, (rec, _) in enumerate(scored) if i not in drop_set]
    return DatasetManifest(survivors, split_tag=manifest.split_tag), report
