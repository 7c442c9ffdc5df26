"""Patch-pair manifests, expert label aggregation and WSI-level splitting.

The canonical on-disk format is JSON-Lines, one pair per line with fields
``pair_id``, ``he_path``, ``ihc_path``, ``wsi_id``, ``expert_score``
(optional int 1..5) and ``scores`` (optional metric-name -> float object).
NaN scores are serialized as JSON null.
"""

import csv
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ManifestError


class ThreeClass(Enum):
    BAD = "Bad"
    BORDERLINE = "Borderline"
    GOOD = "Good"


class BinaryClass(Enum):
    BAD = "Bad"
    ACCEPTABLE = "Acceptable"


@dataclass(frozen=True)
class ClassLabel:
    three_class: ThreeClass
    binary: BinaryClass


def aggregate_label(expert_score: int) -> ClassLabel:
    """Collapse a 1..5 expert similarity score into the 3-class / binary labels.

    Scores 1-2 are Bad, 3 is Borderline, 4-5 are Good; the binary label is
    Bad vs Acceptable (Borderline or Good).
    """
    if expert_score not in (1, 2, 3, 4, 5):
        raise ManifestError(f"expert score must be in 1..5, got {expert_score!r}")
    if expert_score <= 2:
        return ClassLabel(ThreeClass.BAD, BinaryClass.BAD)
    if expert_score == 3:
        return ClassLabel(ThreeClass.BORDERLINE, BinaryClass.ACCEPTABLE)
    return ClassLabel(ThreeClass.GOOD, BinaryClass.ACCEPTABLE)


@dataclass(frozen=True)
class PairRecord:
    """One H&E-IHC patch pair plus its WSI group and optional expert label."""

    pair_id: str
    he_path: str
    ihc_path: str
    wsi_id: str
    expert_score: int | None = None
    metric_scores: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.wsi_id:
            raise ManifestError(f"pair {self.pair_id!r}: wsi_id must be non-empty")
        if self.expert_score is not None and self.expert_score not in (1, 2, 3, 4, 5):
            raise ManifestError(
                f"pair {self.pair_id!r}: expert_score must be in 1..5, got {self.expert_score!r}"
            )

    def label(self) -> ClassLabel:
        if self.expert_score is None:
            raise ManifestError(f"pair {self.pair_id!r} has no expert score")
        return aggregate_label(self.expert_score)


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple
    split_tag: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        seen = set()
        for rec in self.records:
            if rec.pair_id in seen:
                raise ManifestError(f"duplicate pair_id {rec.pair_id!r}")
            seen.add(rec.pair_id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def wsi_ids(self) -> list[str]:
        """Distinct WSI ids in first-appearance order."""
        out, seen = [], set()
        for rec in self.records:
            if rec.wsi_id not in seen:
                seen.add(rec.wsi_id)
                out.append(rec.wsi_id)
        return out

    def expert_scores(self) -> np.ndarray:
        missing = [r.pair_id for r in self.records if r.expert_score is None]
        if missing:
            raise ManifestError(f"records without expert score: {missing[:5]}")
        return np.array([r.expert_score for r in self.records], dtype=np.int64)


def _record_from_obj(obj: dict, line_no: int) -> PairRecord:
    try:
        scores = obj.get("scores") or {}
        scores = {
            str(k): (math.nan if v is None else float(v)) for k, v in scores.items()
        }
        expert = obj.get("expert_score")
        return PairRecord(
            pair_id=str(obj["pair_id"]),
            he_path=str(obj["he_path"]),
            ihc_path=str(obj["ihc_path"]),
            wsi_id=str(obj["wsi_id"]),
            expert_score=None if expert is None else int(expert),
            metric_scores=scores,
        )
    except KeyError as exc:
        raise ManifestError(f"line {line_no}: missing field {exc}")
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"line {line_no}: {exc}")
    except ManifestError as exc:
        raise ManifestError(f"line {line_no}: {exc}")


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read a JSONL manifest, preserving record order."""
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {line_no}: invalid JSON ({exc.msg})")
            if not isinstance(obj, dict):
                raise ManifestError(f"line {line_no}: expected a JSON object")
            records.append(_record_from_obj(obj, line_no))
    return DatasetManifest(records)


def _record_to_obj(rec: PairRecord) -> dict:
    obj = {
        "pair_id": rec.pair_id,
        "he_path": rec.he_path,
        "ihc_path": rec.ihc_path,
        "wsi_id": rec.wsi_id,
    }
    if rec.expert_score is not None:
        obj["expert_score"] = rec.expert_score
    if rec.metric_scores:
        obj["scores"] = {
            k: (None if math.isnan(v) else v) for k, v in rec.metric_scores.items()
        }
    return obj


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    with open(Path(path), "w", encoding="utf-8", newline="\n") as fh:
        for rec in manifest:
            fh.write(json.dumps(_record_to_obj(rec), ensure_ascii=False) + "\n")


def save_manifest_csv(manifest: DatasetManifest, path: str | Path) -> None:
    """CSV export (JSONL stays canonical); scores flatten to score:<name> columns."""
    score_names = sorted({k for r in manifest for k in r.metric_scores})
    cols = ["pair_id", "he_path", "ihc_path", "wsi_id", "expert_score"] + [
        f"score:{n}" for n in score_names
    ]
    with open(Path(path), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for rec in manifest:
            row = [
                rec.pair_id,
                rec.he_path,
                rec.ihc_path,
                rec.wsi_id,
                "" if rec.expert_score is None else rec.expert_score,
            ]
            for n in score_names:
                v = rec.metric_scores.get(n)
                row.append("" if v is None or math.isnan(v) else repr(v))
            writer.writerow(row)


def split_by_wsi(
    manifest: DatasetManifest, ratio: float, seed: int
) -> tuple[DatasetManifest, DatasetManifest]:
    """Deterministic grouped train/test split: whole WSIs go to one side.

    The train side gets round(ratio * n_wsis) WSIs, rounding half toward
    train; the result is clipped so both sides stay non-empty.
    """
    if not 0.0 < ratio < 1.0:
        raise ManifestError(f"split ratio must be in (0, 1), got {ratio}")
    wsis = sorted(set(r.wsi_id for r in manifest))
    if len(wsis) < 2:
        raise ManifestError("cannot split a manifest with fewer than 2 distinct WSIs")
    rng = np.random.default_rng(seed)
    order = [wsis[i] for i in rng.permutation(len(wsis))]
    n_train = int(math.floor(ratio * len(wsis) + 0.5))
    n_train = min(max(n_train, 1), len(wsis) - 1)
    train_ids = set(order[:n_train])
    train = [r for r in manifest if r.wsi_id in train_ids]
    test = [r for r in manifest if r.wsi_id not in train_ids]
    return (
        DatasetManifest(train, split_tag="train"),
        DatasetManifest(test, split_tag="test"),
    )


def with_scores(
    manifest: DatasetManifest, name: str, values: "np.ndarray"
) -> DatasetManifest:
    """Return a copy of the manifest with values stored under metric `name`."""
    if len(values) != len(manifest):
        raise ManifestError("score vector length does not match manifest")
    records = [
        replace(rec, metric_scores={**rec.metric_scores, name: float(v)})
        for rec, v in zip(manifest, values)
    ]
    return DatasetManifest(records, split_tag=manifest.split_tag)
