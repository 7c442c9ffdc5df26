"""Batch command-line front-end.

Subcommands: score, search, eval, calibrate, robustness, filter, split.
All outputs are CSV/JSONL written atomically (temp file + rename); every
randomized operation takes an explicit --seed. Errors print a single JSON
line on stderr and exit nonzero.
"""

import csv
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import click

from . import __version__
from .errors import HistosimError, MetricInputError
from .evaluation import (
    evaluate,
    stage_search,
    write_eval_csv,
    write_search_csv,
)
from .features.extractor import open_extractor
from .haps import HapsHead, calibrate, pair_layer_distances
from .manifest import load_manifest, save_manifest, split_by_wsi
from .metrics import ALL_METRIC_NAMES, CLASSICAL_METRICS, get_descriptor
from .patch import load_image
from .preprocess import enumerate_configs, parse_config
from .robustness import (
    default_grids,
    indices_for_curve,
    plot_curves,
    run_stress,
    write_curves_csv,
    write_indices_csv,
)
from .scoring import PairCache, build_scorer, make_search_scorer
from .curation import filter_bottom, score_manifest


def _atomic_write(path: Path, writer_fn) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        writer_fn(Path(tmp))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_head(head_path: str | None) -> HapsHead | None:
    return HapsHead.load(head_path) if head_path else None


def _make_scorer(metric, config, model, head_path):
    cfg = parse_config(config)
    extractor = open_extractor(model) if model else None
    head = _load_head(head_path)
    return build_scorer(metric, cfg, extractor=extractor, head=head), cfg


@click.group()
@click.version_option(version=__version__, prog_name="histosim")
def cli():
    """Full-reference histology similarity metrics and curation tools."""


@cli.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--metric", required=True, type=click.Choice(ALL_METRIC_NAMES))
@click.option("--config", default="0|rgb|0|0|0|0", show_default=True,
              help="Preprocess code n|mode|i|h|c|s.")
@click.option("--model", default=None,
              help="Extractor sidecar JSON, or synthetic[:seed[:channels]].")
@click.option("--head", "head_path", default=None, help="Calibrated head JSON (haps).")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--out-manifest", "out_manifest", default=None, type=click.Path(),
              help="Also write the manifest with scores embedded (filter input).")
@click.option("--threads", default=1, show_default=True)
def score(manifest_path, metric, config, model, head_path, out_path, out_manifest, threads):
    """Score every pair in a manifest; NaN rows mark per-pair failures."""
    manifest = load_manifest(manifest_path)
    scorer, cfg = _make_scorer(metric, config, model, head_path)
    cache = PairCache(base_dir=Path(manifest_path).parent)
    scored = score_manifest(manifest, scorer, cache=cache, threads=threads)

    def write(path: Path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["pair_id", "wsi_id", "metric", "preprocess", "score"])
            for rec in scored:
                value = rec.metric_scores[metric]
                writer.writerow(
                    [rec.pair_id, rec.wsi_id, metric, cfg.code(),
                     "" if math.isnan(value) else f"{value:.10g}"]
                )

    _atomic_write(Path(out_path), write)
    if out_manifest:
        _atomic_write(Path(out_manifest), lambda p: save_manifest(scored, p))
    click.echo(f"scored {len(scored)} pairs with {metric} [{cfg.code()}]")


@cli.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--metric", required=True, type=click.Choice(ALL_METRIC_NAMES))
@click.option("--model", default=None)
@click.option("--k", default=5, show_default=True, help="Group K-fold folds.")
@click.option("--auc-floor", default=0.60, show_default=True)
@click.option("--l2", default=1.0, show_default=True, help="Head L2 (haps only).")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--threads", default=1, show_default=True)
def search(manifest_path, metric, model, k, auc_floor, l2, out_path, threads):
    """Stage 0/1 preprocessing-configuration search on a training manifest."""
    manifest = load_manifest(manifest_path)
    extractor = open_extractor(model) if model else None
    scorer = make_search_scorer(
        metric, PairCache(base_dir=Path(manifest_path).parent),
        extractor=extractor, l2=l2, threads=threads
    )
    configs = scorer.allowed_configs(enumerate_configs())
    result, rows = stage_search(scorer, manifest, configs, k=k, auc_floor=auc_floor)
    _atomic_write(Path(out_path), lambda p: write_search_csv(metric, rows, p))
    click.echo(
        f"selected {result.best_config.code()} "
        f"(cv_spearman={result.cv_spearman:.4f}, cv_auc_bin={result.cv_auc_bin:.4f})"
    )


@cli.command("eval")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--metric", required=True, type=click.Choice(ALL_METRIC_NAMES))
@click.option("--config", required=True)
@click.option("--model", default=None)
@click.option("--head", "head_path", default=None)
@click.option("--bootstrap", default=1000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--threads", default=1, show_default=True)
def eval_cmd(manifest_path, metric, config, model, head_path, bootstrap, seed,
             out_path, threads):
    """Held-out evaluation: Spearman + binary/3-class AUROC with WSI bootstrap."""
    manifest = load_manifest(manifest_path)
    scorer, cfg = _make_scorer(metric, config, model, head_path)
    cache = PairCache(base_dir=Path(manifest_path).parent)
    values = scorer.score_pairs(cache.pairs(manifest), threads=threads)
    report = evaluate(
        values,
        manifest.expert_scores(),
        [r.wsi_id for r in manifest],
        metric_name=metric,
        preprocess_code=cfg.code(),
        higher_is_better=scorer.higher_is_better,
        b=bootstrap,
        seed=seed,
    )
    _atomic_write(Path(out_path), lambda p: write_eval_csv([report], p))
    click.echo(
        f"{metric} [{cfg.code()}]: sp={report.spearman:.4f} "
        f"auc_bin={report.auc_bin:.4f} auc_multi={report.auc_multi:.4f}"
    )


@cli.command("calibrate")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--model", required=True)
@click.option("--config", required=True)
@click.option("--l2", default=1.0, show_default=True)
@click.option("--max-iter", default=500, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def calibrate_cmd(manifest_path, model, config, l2, max_iter, out_path):
    """Fit the similarity head on an expert-labeled manifest."""
    manifest = load_manifest(manifest_path)
    cfg = parse_config(config)
    extractor = open_extractor(model)
    cache = PairCache(base_dir=Path(manifest_path).parent)
    train = []
    for rec in manifest:
        he, ihc = cache.pair(rec)
        d = pair_layer_distances(he, ihc, cfg, extractor)
        train.append((d, 1 if rec.label().binary.value == "Acceptable" else 0))
    head = calibrate(
        train, l2=l2, max_iter=max_iter,
        trained_on=f"{manifest_path} ({len(manifest)} pairs, cfg {cfg.code()})",
    )
    _atomic_write(Path(out_path), lambda p: head.save(p))
    click.echo(
        "calibrated head: w=[" + ", ".join(f"{w:.6g}" for w in head.w)
        + f"], b={head.b:.6g}"
    )


@cli.command()
@click.option("--patches", "patches_dir", required=True, type=click.Path(),
              help="Directory of patch images (sorted by filename).")
@click.option("--metrics", "metric_list", required=True,
              help="Comma-separated metric names.")
@click.option("--model", default=None)
@click.option("--head", "head_path", default=None)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "curves_path", required=True, type=click.Path())
@click.option("--indices", "indices_path", required=True, type=click.Path())
@click.option("--plot", "plot_dir", default=None, type=click.Path())
@click.option("--limit", default=0, show_default=True, help="Cap patch count (0 = all).")
def robustness(patches_dir, metric_list, model, head_path, seed, curves_path,
               indices_path, plot_dir, limit):
    """Geometric stress-test producing sensitivity curves and ES/LSR indices.

    Single-channel metrics see grayscale versions of the distorted patches;
    RGB metrics see them as-is.
    """
    from .preprocess import to_grayscale

    files = sorted(
        p for p in Path(patches_dir).iterdir()
        if p.suffix.lower() in (".png", ".tif", ".tiff", ".jpg", ".jpeg")
    )
    if limit:
        files = files[:limit]
    if not files:
        raise MetricInputError(f"no patch images found in {patches_dir}")
    patches = [load_image(f) for f in files]

    extractor = open_extractor(model) if model else None
    head = _load_head(head_path)
    curves = []
    for name in [m.strip() for m in metric_list.split(",") if m.strip()]:
        desc = get_descriptor(name)
        if name in CLASSICAL_METRICS and name != "fsimc":
            fn = desc.fn

            def metric_fn(a, b, fn=fn):
                return fn(to_grayscale(a), to_grayscale(b))
        else:
            scorer = build_scorer(
                name, parse_config("0|rgb|0|0|0|0"), extractor=extractor, head=head
            )
            metric_fn = scorer.score_pair
        curves.extend(run_stress(patches, metric_fn, name, default_grids(), seed=seed))

    indices = [indices_for_curve(c) for c in curves]
    _atomic_write(Path(curves_path), lambda p: write_curves_csv(curves, p))
    _atomic_write(Path(indices_path), lambda p: write_indices_csv(indices, p))
    if plot_dir:
        plot_curves(curves, plot_dir, normalize_p99=True)
    click.echo(f"stress-tested {len(patches)} patches, {len(curves)} curves")


@cli.command("filter")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(),
              help="Scored manifest (see `score --out-manifest`).")
@click.option("--metric", required=True, type=click.Choice(ALL_METRIC_NAMES))
@click.option("--fraction", default=0.25, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--report", "report_path", required=True, type=click.Path())
def filter_cmd(manifest_path, metric, fraction, out_path, report_path):
    """Drop the lowest-similarity fraction of a scored manifest."""
    manifest = load_manifest(manifest_path)
    filtered, report = filter_bottom(manifest, metric, fraction)

    def write_report(path: Path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for entry in report:
                fh.write(json.dumps(entry.to_obj()) + "\n")

    _atomic_write(Path(out_path), lambda p: save_manifest(filtered, p))
    _atomic_write(Path(report_path), write_report)
    click.echo(
        f"kept {len(filtered)}/{len(manifest)} pairs "
        f"(dropped {len(report)}: {sum(1 for e in report if e.reason == 'filtered')} "
        f"filtered, {sum(1 for e in report if e.reason == 'nan-score')} nan)"
    )


@cli.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--ratio", default=0.8, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out-train", required=True, type=click.Path())
@click.option("--out-test", required=True, type=click.Path())
def split(manifest_path, ratio, seed, out_train, out_test):
    """WSI-level train/test split (no WSI appears on both sides)."""
    manifest = load_manifest(manifest_path)
    train, test = split_by_wsi(manifest, ratio, seed)
    _atomic_write(Path(out_train), lambda p: save_manifest(train, p))
    _atomic_write(Path(out_test), lambda p: save_manifest(test, p))
    click.echo(
        f"train: {len(train)} pairs / {len(set(r.wsi_id for r in train))} WSIs, "
        f"test: {len(test)} pairs / {len(set(r.wsi_id for r in test))} WSIs"
    )


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.ClickException as exc:
        print(json.dumps({"error": "usage", "message": exc.format_message()}),
              file=sys.stderr)
        return 2
    except click.Abort:
        print(json.dumps({"error": "aborted", "message": "aborted"}), file=sys.stderr)
        return 130
    except HistosimError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)
        return 1
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return 1
    except Exception as exc:  # keep the single-line stderr contract for bugs too
        print(
            json.dumps(
                {"error": "internal", "message": f"{type(exc).__name__}: {exc}"}
            ),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
