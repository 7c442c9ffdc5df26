"""Binds metric names + preprocessing configs to pair-scoring callables.

Two layers: a :class:`BoundScorer` scores one (H&E, IHC) patch pair under a
fixed configuration (what ``score``/``eval``/``filter`` need), and a
:class:`SearchScorer` additionally supports per-fold fitting for the staged
configuration search (relevant for the calibrated head, which must be
re-fit on each training fold).
"""

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .errors import MetricInputError
from .haps import HapsHead, calibrate, haps_logit, pair_layer_distances
from .manifest import DatasetManifest
from .metrics import CLASSICAL_METRICS, get_descriptor
from .metrics.deep import (
    LayerDistances,
    channel_pearson_distance,
    dists_style,
    lpips_style,
)
from .patch import Patch, load_image
from .preprocess import PreprocessConfig, apply_pipeline


class PairCache:
    """Loads and caches patch pairs for a manifest (paths may repeat)."""

    def __init__(self, base_dir: str | Path | None = None):
        self._base = Path(base_dir) if base_dir else None
        self._images: dict = {}

    def _load(self, path: str) -> Patch:
        full = self._base / path if self._base and not Path(path).is_absolute() else path
        key = str(full)
        if key not in self._images:
            self._images[key] = load_image(full)
        return self._images[key]

    def pair(self, record) -> tuple[Patch, Patch]:
        return self._load(record.he_path), self._load(record.ihc_path)

    def pairs(self, manifest: DatasetManifest) -> list[tuple[Patch, Patch]]:
        return [self.pair(r) for r in manifest]


class BoundScorer:
    """Pair scorer under a fixed preprocessing configuration."""

    def __init__(self, name, higher_is_better, cfg, fn):
        self.name = name
        self.higher_is_better = higher_is_better
        self.cfg = cfg
        self._fn = fn

    def score_pair(self, he: Patch, ihc: Patch) -> float:
        return float(self._fn(he, ihc))

    def score_pairs(self, pairs, threads: int = 1) -> np.ndarray:
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                values = list(pool.map(lambda p: self._fn(*p), pairs))
        else:
            values = [self._fn(he, ihc) for he, ihc in pairs]
        return np.asarray(values, dtype=np.float64)


def build_scorer(
    metric: str,
    cfg: PreprocessConfig,
    extractor=None,
    head: HapsHead | None = None,
) -> BoundScorer:
    """Construct a BoundScorer; deep metrics need an extractor, haps a head."""
    desc = get_descriptor(metric)
    desc.check_mode(cfg.channel_mode)
    if metric in CLASSICAL_METRICS:
        fn = desc.fn

        def classical(he, ihc):
            return fn(*apply_pipeline(he, ihc, cfg))

        return BoundScorer(metric, desc.higher_is_better, cfg, classical)

    if extractor is None:
        raise MetricInputError(f"metric {metric!r} needs an extractor (--model)")

    if metric == "haps":
        if head is None:
            raise MetricInputError("metric 'haps' needs a calibrated head (--head)")

        def haps_fn(he, ihc):
            return haps_logit(pair_layer_distances(he, ihc, cfg, extractor), head)

        return BoundScorer(metric, True, cfg, haps_fn)

    deep_fn = lpips_style if metric == "lpips" else dists_style

    def deep(he, ihc):
        he_p, ihc_p = apply_pipeline(he, ihc, cfg)
        return deep_fn(extractor.extract(he_p), extractor.extract(ihc_p))

    return BoundScorer(metric, desc.higher_is_better, cfg, deep)


# ---------------------------------------------------------------------------
# search scorers
# ---------------------------------------------------------------------------

class _StatelessPrepared:
    def __init__(self, values: np.ndarray):
        self._values = values

    def fit(self, idx):
        return None

    def score(self, idx, state=None) -> np.ndarray:
        return self._values[np.asarray(idx)]


class StatelessSearchScorer:
    """Search adapter for metrics without fit state (classical, lpips, dists).

    Scores per configuration are computed once over the whole manifest and
    sliced per fold, since no fold-specific fitting happens.
    """

    def __init__(self, metric: str, cache: PairCache, extractor=None, threads: int = 1):
        desc = get_descriptor(metric)
        if metric == "haps":
            raise MetricInputError("use HapsSearchScorer for the calibrated head")
        self.name = metric
        self.higher_is_better = desc.higher_is_better
        self._cache = cache
        self._extractor = extractor
        self._threads = threads

    def allowed_configs(self, configs):
        allowed = get_descriptor(self.name).channel_modes_allowed
        return [c for c in configs if c.channel_mode in allowed]

    def prepare(self, cfg: PreprocessConfig, manifest: DatasetManifest):
        scorer = build_scorer(self.name, cfg, extractor=self._extractor)
        values = scorer.score_pairs(self._cache.pairs(manifest), threads=self._threads)
        return _StatelessPrepared(values)


class _HapsPrepared:
    def __init__(self, distances: np.ndarray, binary: np.ndarray, l2: float):
        self._d = distances
        self._y = binary
        self._l2 = l2

    def fit(self, idx):
        idx = np.asarray(idx)
        train = [
            (LayerDistances(tuple(self._d[i])), int(self._y[i])) for i in idx
        ]
        return calibrate(train, l2=self._l2)

    def score(self, idx, state: HapsHead) -> np.ndarray:
        idx = np.asarray(idx)
        return self._d[idx] @ np.asarray(state.w) + state.b


class HapsSearchScorer:
    """Search adapter that re-calibrates the head on each training fold."""

    def __init__(self, cache: PairCache, extractor, l2: float = 1.0, threads: int = 1):
        self.name = "haps"
        self.higher_is_better = True
        self._cache = cache
        self._extractor = extractor
        self._l2 = l2
        self._threads = threads

    def allowed_configs(self, configs):
        return list(configs)

    def prepare(self, cfg: PreprocessConfig, manifest: DatasetManifest):
        pairs = self._cache.pairs(manifest)

        def dist(pair):
            he_p, ihc_p = apply_pipeline(pair[0], pair[1], cfg)
            d = channel_pearson_distance(
                self._extractor.extract(he_p), self._extractor.extract(ihc_p)
            )
            return d.as_array()

        if self._threads > 1:
            with ThreadPoolExecutor(max_workers=self._threads) as pool:
                rows = list(pool.map(dist, pairs))
        else:
            rows = [dist(p) for p in pairs]
        binary = (manifest.expert_scores() >= 3).astype(int)
        return _HapsPrepared(np.stack(rows), binary, self._l2)


def make_search_scorer(
    metric: str, cache: PairCache, extractor=None, l2: float = 1.0, threads: int = 1
):
    if metric == "haps":
        if extractor is None:
            raise MetricInputError("metric 'haps' needs an extractor (--model)")
        return HapsSearchScorer(cache, extractor, l2=l2, threads=threads)
    get_descriptor(metric)  # validates the name
    if metric not in CLASSICAL_METRICS and extractor is None:
        raise MetricInputError(f"metric {metric!r} needs an extractor (--model)")
    return StatelessSearchScorer(metric, cache, extractor=extractor, threads=threads)
