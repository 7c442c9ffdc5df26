import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from histosim.features.extractor import load_extractor, ExtractorSpec, write_synthetic_model
from histosim.patch import Colorspace, Patch, load_image, save_image


def make_texture(rng, size=64, channels=3, smooth=2.0, lo=0.1, hi=0.9):
    """Smooth random texture with full [lo, hi] span per image."""
    arr = rng.random((size, size, channels))
    arr = gaussian_filter(arr, sigma=(smooth, smooth, 0))
    arr = (arr - arr.min()) / (arr.max() - arr.min())
    return lo + (hi - lo) * arr


def texture_patch(rng, size=64, channels=3, smooth=2.0) -> Patch:
    cs = Colorspace.RGB if channels == 3 else Colorspace.GRAY
    return Patch(make_texture(rng, size, channels, smooth), cs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def patch_factory():
    return texture_patch


@dataclass
class SearchFixture:
    """Synthetic labeled dataset with a planted optimal preprocessing config."""

    manifest_path: Path
    sidecar_path: Path
    planted_code: str
    n_pairs: int
    n_wsis: int


def _build_search_fixture(root: Path) -> SearchFixture:
    """36 pairs / 6 WSIs whose labels are quintiles of the lpips score under
    the lexicographically-minimal config, so the search must select it."""
    from histosim.preprocess import parse_config
    from histosim.scoring import PairCache, build_scorer

    planted = "0|gray|0|0|0|0"
    rng = np.random.default_rng(20240917)
    img_dir = root / "imgs"
    img_dir.mkdir(parents=True)
    sidecar = write_synthetic_model(root / "model", channels=4, seed=7, input_size=64)

    n_wsis, per_wsi = 6, 6
    records = []
    for w in range(n_wsis):
        for j in range(per_wsi):
            he = make_texture(rng, size=64, smooth=2.0)
            # degrade the pair by a noise level that varies within each WSI
            sigma = 0.02 + 0.12 * (j / (per_wsi - 1)) + rng.uniform(0, 0.02)
            ihc = np.clip(he + rng.normal(0.0, sigma, he.shape), 0.0, 1.0)
            he_path = img_dir / f"w{w}_p{j}_he.png"
            ihc_path = img_dir / f"w{w}_p{j}_ihc.png"
            save_image(Patch(he, Colorspace.RGB), he_path)
            save_image(Patch(ihc, Colorspace.RGB), ihc_path)
            records.append(
                {
                    "pair_id": f"w{w}_p{j}",
                    "he_path": str(he_path),
                    "ihc_path": str(ihc_path),
                    "wsi_id": f"wsi{w}",
                }
            )

    # labels = quintiles of the aligned planted-config score on the saved files
    extractor = load_extractor(ExtractorSpec.from_json(sidecar))
    scorer = build_scorer("lpips", parse_config(planted), extractor=extractor)
    cache = PairCache()
    aligned = np.array(
        [
            -scorer.score_pair(
                load_image(r["he_path"]), load_image(r["ihc_path"])
            )
            for r in records
        ]
    )
    order = np.argsort(aligned)  # ascending: worst first
    n = len(records)
    quintile_sizes = [n - 4 * (n // 5)] + [n // 5] * 4
    score_values = []
    for val, count in zip((1, 2, 3, 4, 5), quintile_sizes):
        score_values.extend([val] * count)
    for pos, rec_idx in enumerate(order):
        records[rec_idx]["expert_score"] = score_values[pos]

    manifest_path = root / "manifest.jsonl"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return SearchFixture(manifest_path, sidecar, planted, n, n_wsis)


@pytest.fixture(scope="session")
def search_fixture(tmp_path_factory) -> SearchFixture:
    return _build_search_fixture(tmp_path_factory.mktemp("searchfix"))
