import numpy as np
import pytest

from histosim.errors import (
    AllConfigsRejectedError,
    MetricInputError,
    UndefinedCorrelationError,
)
from histosim.evaluation import (
    auroc_binary,
    auroc_multiclass,
    evaluate,
    group_kfold,
    spearman,
    stage_search,
    wsi_bootstrap,
    write_eval_csv,
)
from histosim.manifest import DatasetManifest, PairRecord
from histosim.preprocess import parse_config


def make_manifest(wsi_scores: dict) -> DatasetManifest:
    """wsi_scores: wsi_id -> list of expert scores."""
    recs = []
    for wsi, scores in wsi_scores.items():
        for j, s in enumerate(scores):
            recs.append(PairRecord(f"{wsi}_{j}", "a.png", "b.png", wsi, s))
    return DatasetManifest(recs)


class TestSpearman:
    def test_identity_and_reversal(self):
        assert spearman([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
        assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)

    def test_tie_fixture_matches_rank_then_pearson_oracle(self):
        x, y = [1, 2, 2, 4], [1, 3, 2, 4]
        rx = np.array([1.0, 2.5, 2.5, 4.0])
        ry = np.array([1.0, 3.0, 2.0, 4.0])
        expected = np.corrcoef(rx, ry)[0, 1]
        assert spearman(x, y) == pytest.approx(expected, abs=1e-12)

    def test_matches_scipy_with_ties(self, rng):
        from scipy.stats import spearmanr

        for _ in range(200):
            n = int(rng.integers(3, 40))
            x = rng.integers(0, 8, n).astype(float)
            y = rng.integers(0, 8, n).astype(float)
            if len(set(x)) < 2 or len(set(y)) < 2:
                continue
            assert spearman(x, y) == pytest.approx(
                spearmanr(x, y).statistic, abs=1e-12
            )

    def test_invariant_under_monotone_transform(self, rng):
        x = rng.random(50)
        y = rng.random(50)
        assert spearman(np.exp(3 * x), y) == pytest.approx(
            spearman(x, y), abs=1e-12
        )

    def test_errors(self):
        with pytest.raises(UndefinedCorrelationError):
            spearman([1, 2], [1, 2])
        with pytest.raises(UndefinedCorrelationError):
            spearman([1, 2, 3], [1, 2])
        with pytest.raises(UndefinedCorrelationError):
            spearman([1.0, 1.0, 1.0], [1, 2, 3])


def brute_force_auc(scores, labels):
    scores = np.asarray(scores, dtype=float)
    pos = scores[np.asarray(labels) == 1]
    neg = scores[np.asarray(labels) == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else (0.5 if p == n else 0.0)
    return total / (len(pos) * len(neg))


class TestAurocBinary:
    def test_paper_style_fixture(self):
        assert auroc_binary([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75

    def test_perfect_separation_and_inversion(self):
        scores = [0.1, 0.2, 0.8, 0.9]
        assert auroc_binary(scores, [0, 0, 1, 1]) == 1.0
        assert auroc_binary(scores, [1, 1, 0, 0]) == 0.0

    def test_matches_brute_force_mann_whitney(self, rng):
        for _ in range(200):
            n = int(rng.integers(4, 50))
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                continue
            scores = rng.integers(0, 10, n).astype(float)  # forces ties
            assert auroc_binary(scores, labels) == brute_force_auc(scores, labels)

    def test_equals_trapezoidal_roc_area_without_ties(self, rng):
        for _ in range(50):
            n = int(rng.integers(4, 60))
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                continue
            scores = rng.permutation(n).astype(float)  # tie-free
            order = np.argsort(-scores)
            sorted_labels = labels[order]
            tpr = np.concatenate(([0.0], np.cumsum(sorted_labels) / labels.sum()))
            fpr = np.concatenate(
                ([0.0], np.cumsum(1 - sorted_labels) / (len(labels) - labels.sum()))
            )
            area = np.trapezoid(tpr, fpr)
            assert auroc_binary(scores, labels) == pytest.approx(area, abs=1e-12)

    def test_single_class_errors(self):
        with pytest.raises(MetricInputError):
            auroc_binary([1.0, 2.0], [1, 1])


class TestAurocMulticlass:
    def test_perfect_ordinal_score(self):
        labels = np.array([0, 0, 1, 1, 2, 2])
        assert auroc_multiclass(labels.astype(float), labels) == 1.0

    def test_random_scores_near_half(self, rng):
        labels = rng.integers(0, 3, 3000)
        scores = rng.random(3000)
        assert auroc_multiclass(scores, labels) == pytest.approx(0.5, abs=0.05)

    def test_two_classes_fall_back_to_binary(self):
        # both boundaries reduce to the same split, no skipping involved
        scores = np.array([0.1, 0.9, 0.3, 0.7])
        labels = np.array([0, 2, 0, 2])
        expected = auroc_binary(scores, (labels == 2).astype(int))
        assert auroc_multiclass(scores, labels) == pytest.approx(expected, abs=1e-12)

    def test_absent_class_warns_and_falls_back(self):
        scores = np.array([0.1, 0.9, 0.3, 0.7])
        labels = np.array([0, 1, 0, 1])  # no Good present
        with pytest.warns(RuntimeWarning, match="single class"):
            value = auroc_multiclass(scores, labels)
        assert value == pytest.approx(
            auroc_binary(scores, labels), abs=1e-12
        )

    def test_single_class_errors(self):
        with pytest.raises(MetricInputError):
            auroc_multiclass([1.0, 2.0], [1, 1])


class TestGroupKfold:
    def test_six_wsis_three_folds(self):
        m = make_manifest({f"w{i}": [3, 4] for i in range(6)})
        folds = group_kfold(m, 3)
        assert len(folds) == 3
        valid_wsis = [set(m.records[i].wsi_id for i in valid) for _, valid in folds]
        assert all(len(v) == 2 for v in valid_wsis)
        assert set().union(*valid_wsis) == {f"w{i}" for i in range(6)}

    def test_every_record_validated_once(self):
        m = make_manifest({f"w{i}": [1, 2, 3] for i in range(5)})
        folds = group_kfold(m, 5)
        seen = np.concatenate([valid for _, valid in folds])
        assert sorted(seen.tolist()) == list(range(len(m)))
        for train, valid in folds:
            assert not set(train) & set(valid)
            assert len(train) + len(valid) == len(m)

    def test_seven_wsis_three_folds_balanced(self):
        m = make_manifest({f"w{i}": [3] for i in range(7)})
        folds = group_kfold(m, 3)
        sizes = sorted(len(valid) for _, valid in folds)
        assert sizes == [2, 2, 3]

    def test_k_exceeding_wsis_errors(self):
        m = make_manifest({"w0": [1], "w1": [2]})
        with pytest.raises(MetricInputError):
            group_kfold(m, 3)


class TestWsiBootstrap:
    def test_single_wsi_zero_std(self, rng):
        n = 12
        expert = np.tile([1, 2, 3, 4, 5], 3)[:n]
        scores = expert + rng.normal(0, 0.1, n)
        summary = wsi_bootstrap(scores, expert, ["w0"] * n, b=50, seed=1)
        # every resample is the whole dataset; std collapses (up to fp noise
        # in the mean of identical values)
        assert summary.spearman.std == pytest.approx(0.0, abs=1e-12)
        assert summary.auc_bin.std == 0.0
        assert summary.skipped == 0

    def test_deterministic(self, rng):
        expert = np.array([1, 2, 3, 4, 5] * 4)
        scores = rng.normal(0, 1, 20) + expert
        wsis = [f"w{i % 4}" for i in range(20)]
        a = wsi_bootstrap(scores, expert, wsis, b=100, seed=9)
        b = wsi_bootstrap(scores, expert, wsis, b=100, seed=9)
        assert a == b

    def test_skips_degenerate_resamples(self, rng):
        # one WSI is single-class; resamples drawing only it must be skipped
        expert = np.array([5, 5, 5] + [1, 2, 3, 4, 5])
        scores = rng.normal(0, 1, 8)
        wsis = ["solo"] * 3 + ["full"] * 5
        summary = wsi_bootstrap(scores, expert, wsis, b=200, seed=3)
        assert summary.skipped > 0
        assert summary.iterations + summary.skipped == 200

    def test_thousand_iterations_smoke(self, rng):
        expert = rng.integers(1, 6, 70)
        scores = expert + rng.normal(0, 1.0, 70)
        wsis = [f"w{i % 7}" for i in range(70)]
        summary = wsi_bootstrap(scores, expert, wsis, b=1000, seed=0)
        assert summary.iterations + summary.skipped == 1000
        assert 0.0 <= summary.auc_bin.mean <= 1.0

    def test_all_failed_errors(self):
        with pytest.raises(MetricInputError):
            wsi_bootstrap([1.0, 2.0, 3.0], [5, 5, 5], ["w0", "w0", "w0"], b=10, seed=0)


class TestEvaluate:
    def test_orientation_alignment(self, rng):
        expert = np.array([1, 2, 3, 4, 5] * 6)
        scores = expert + rng.normal(0, 0.5, 30)
        wsis = [f"w{i % 5}" for i in range(30)]
        hi = evaluate(scores, expert, wsis, b=50, seed=2, higher_is_better=True)
        lo = evaluate(-scores, expert, wsis, b=50, seed=2, higher_is_better=False)
        assert hi.spearman == pytest.approx(lo.spearman, abs=1e-12)
        assert hi.auc_bin == pytest.approx(lo.auc_bin, abs=1e-12)
        assert hi.sp_bs == lo.sp_bs

    def test_csv_writer(self, tmp_path, rng):
        expert = np.array([1, 2, 3, 4, 5] * 4)
        scores = expert + rng.normal(0, 0.5, 20)
        report = evaluate(
            scores, expert, [f"w{i % 4}" for i in range(20)],
            metric_name="ncc", preprocess_code="0|gray|0|0|0|0", b=20, seed=0,
        )
        write_eval_csv([report], tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().strip().splitlines()
        assert lines[0].startswith("metric,preprocess,auc_bin,auc_multi,sp,")
        assert lines[1].startswith("ncc,0|gray|0|0|0|0,")


class MockSearchScorer:
    """Analytic per-config score table, keyed by config code."""

    name = "mock"
    higher_is_better = True

    def __init__(self, table, default=None):
        self.table = table
        self.default = default

    def prepare(self, cfg, manifest):
        values = self.table.get(cfg.code(), self.default)

        class Prepared:
            def fit(self, idx):
                return None

            def score(self, idx, state=None):
                return values[np.asarray(idx)]

        return Prepared()


class TestStageSearch:
    def _manifest(self):
        return make_manifest({f"w{i}": [1, 2, 3, 4, 5] for i in range(6)})

    def test_planted_config_selected(self, rng):
        manifest = self._manifest()
        expert = manifest.expert_scores().astype(float)
        planted = "0|gray|0|1|1|0"
        codes = [c.code() for c in _all_configs()]
        table = {
            code: (expert + rng.normal(0, 0.25, len(expert))
                   if code == planted
                   else rng.normal(0, 1, len(expert)))
            for code in codes
        }
        scorer = MockSearchScorer(table)
        result, rows = stage_search(scorer, manifest, _all_configs(), k=3)
        assert result.best_config.code() == planted
        assert result.survived_stage0
        selected_rows = [r for r in rows if r.selected]
        assert len(selected_rows) == 1 and selected_rows[0].code == planted

    def test_all_rejected(self, rng):
        manifest = self._manifest()
        expert = manifest.expert_scores().astype(float)
        table = {c.code(): -expert for c in _all_configs()}  # anti-correlated
        with pytest.raises(AllConfigsRejectedError):
            stage_search(MockSearchScorer(table), manifest, _all_configs(), k=3)

    def test_tie_broken_by_higher_auc(self):
        manifest = make_manifest({"w0": [1, 2, 3, 4, 5], "w1": [1, 2, 3, 4, 5]})
        # same Spearman (one adjacent swap each) but different AUROC:
        # swapping across the class boundary costs AUC, within a class it
        # does not
        lower_auc = np.array([1, 3, 2, 4, 5, 1, 3, 2, 4, 5], dtype=float)
        higher_auc = np.array([1, 2, 4, 3, 5, 1, 2, 4, 3, 5], dtype=float)
        cfg_a, cfg_b = parse_config("0|gray|0|0|0|0"), parse_config("0|gray|0|0|0|1")
        table = {cfg_a.code(): lower_auc, cfg_b.code(): higher_auc}
        result, _ = stage_search(
            MockSearchScorer(table), manifest, [cfg_a, cfg_b], k=2
        )
        assert result.best_config.code() == cfg_b.code()

    def test_exact_tie_broken_lexicographically(self):
        manifest = make_manifest({"w0": [1, 2, 3, 4, 5], "w1": [1, 2, 3, 4, 5]})
        scores = np.array([1, 2, 3, 4, 5, 1, 2, 3, 4, 5], dtype=float)
        cfg_a, cfg_b = parse_config("0|gray|0|0|0|1"), parse_config("0|gray|0|1|0|0")
        table = {cfg_a.code(): scores, cfg_b.code(): scores}
        result, _ = stage_search(
            MockSearchScorer(table), manifest, [cfg_b, cfg_a], k=2
        )
        assert result.best_config.code() == cfg_a.code()  # "...|0|0|1" < "...|1|0|0"


def _all_configs():
    from histosim.preprocess import enumerate_configs

    return enumerate_configs()
