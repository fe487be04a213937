"""
irisbench command line

Usage:
    irisbench preprocess --manifest data/manifest.csv --out out/pre --scheme norm8x1-seg
    irisbench augment    --manifest out/pre/norm8x1-seg/manifest.csv --out out/aug
    irisbench embed      --manifest out/aug/manifest.csv --out out/embeddings.emb
    irisbench evaluate   --embeddings out/embeddings.emb --metric cosine --out out/eval
    irisbench compare    out/a/report.json out/b/report.json --alpha 0.05
    irisbench pipeline   --config experiment.json --manifest data/manifest.csv --out out/run
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from src.augment import AugmentConfig
from src.config import DEFAULT_SCHEME, EmbedderChoice, ExperimentConfig, load_config, load_manifest
from src.embed import l2_normalize, read_embeddings, write_embeddings
from src.errors import ConfigError, IrisBenchError
from src.metrics import DEFAULT_ALPHA
from src.preprocess import DELINEATED_SCHEMES, SCHEMES
from src.run_iris_analysis import IrisPipeline, print_summary
from src.verify import DistanceMetric, MetricKind, read_scores

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_ERROR = 2


def _experiment(args) -> ExperimentConfig:
    config = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    return config.with_overrides(
        scheme=getattr(args, "scheme", None),
        metric=getattr(args, "metric", None),
        seed=getattr(args, "seed", None),
        runs=getattr(args, "runs", None),
    )


def _finish(title, total, failures, start) -> int:
    print_summary(title, total, failures, time.time() - start)
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_preprocess(args) -> int:
    start = time.time()
    config = _experiment(args)
    manifest = load_manifest(args.manifest, check_files=False)
    pipeline = IrisPipeline(args.out)

    if args.sweep:
        schemes = list(DELINEATED_SCHEMES) + (["bbox-seg", "bbox-noseg"] if args.with_bbox else [])
        results = pipeline.sweep(manifest, schemes, config.preprocess.segment_before_normalization,
                                 config.preprocess.final_size)
        failures = [f for _, fails in results.values() for f in fails]
        return _finish(f"PREPROCESS SWEEP: {len(schemes)} schemes", len(manifest) * len(schemes), failures, start)

    _, failures = pipeline.preprocess(manifest, config.preprocess)
    return _finish(f"PREPROCESS: {config.preprocess.scheme}", len(manifest), failures, start)


def cmd_augment(args) -> int:
    start = time.time()
    augment = None
    if args.config:
        augment = load_config(args.config).augment
    if augment is None or args.range is not None or args.apertures is not None:
        base = augment or AugmentConfig()
        augment = AugmentConfig(
            range_deg=args.range if args.range is not None else base.range_deg,
            apertures=args.apertures if args.apertures is not None else base.apertures,
            stage="final",
        )
    manifest = load_manifest(args.manifest, check_files=False)
    _, failures = IrisPipeline(args.out).augment(manifest, augment)
    return _finish(f"AUGMENT: ±{augment.range_deg:g}° x {augment.apertures}", len(manifest), failures, start)


def cmd_embed(args) -> int:
    start = time.time()
    if args.external:
        embedder = EmbedderChoice(external=Path(args.external).resolve())
        if not embedder.external.is_file():
            raise ConfigError(f"External embedding file not found: {args.external}")
    else:
        embedder = _experiment(args).embedder

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(args.manifest, check_files=False)
    embeddings, failures = IrisPipeline(out.parent).embed(manifest, embedder)
    write_embeddings(embeddings, out)
    print(f"✓ Wrote {len(embeddings)} embeddings to {out}")
    return _finish(f"EMBED: {embedder.kind}", len(manifest), failures, start)


def cmd_evaluate(args) -> int:
    pipeline = IrisPipeline(args.out)
    metric = DistanceMetric(args.metric or MetricKind.COSINE)
    if args.scores:
        scores = read_scores(args.scores)
    else:
        embeddings = read_embeddings(args.embeddings)
        if args.l2_normalize:
            embeddings = l2_normalize(embeddings)
        scores = pipeline.score(embeddings, metric)
    pipeline.evaluate(scores, scheme=args.scheme or "")
    return EXIT_OK


def cmd_compare(args) -> int:
    pipeline = IrisPipeline(args.out)
    pipeline.compare(args.reports, alpha=args.alpha)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    config = _experiment(args)
    manifest = load_manifest(args.manifest, check_files=False)
    pipeline = IrisPipeline(args.out)
    _, failures = pipeline.run_full_pipeline(config, manifest)
    if failures:
        print(f"\n{len(failures)} row(s) failed:")
        for failure in failures:
            print(f"✗ {failure.id} [{failure.stage}]: {failure.message}")
        return EXIT_PARTIAL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="irisbench",
        description="Iris preprocessing, embedding and verification benchmark",
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--manifest", type=str, required=True, help="Dataset manifest CSV")
        p.add_argument("--config", type=str, default=None, help="Experiment config JSON")
        p.add_argument("--out", type=str, required=True, help="Output directory")

    p = sub.add_parser("preprocess", help="Delineate, normalize/crop and resize every manifest image")
    common(p)
    p.add_argument("--scheme", choices=sorted(SCHEMES), default=None,
                   help=f"Input scheme (default: config or {DEFAULT_SCHEME})")
    p.add_argument("--sweep", action="store_true", help="Run all six delineated schemes")
    p.add_argument("--with-bbox", action="store_true", help="Add the bounding-box schemes to --sweep")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("augment", help="Add rotated copies of train rows")
    common(p)
    p.add_argument("--range", type=float, default=None, help="Rotation half-range in degrees (default: 60)")
    p.add_argument("--apertures", type=int, default=None, help="Rotated copies per image (default: 6)")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("embed", help="Compute or import one embedding per manifest row")
    p.add_argument("--manifest", type=str, required=True, help="Preprocessed manifest CSV")
    p.add_argument("--config", type=str, default=None, help="Experiment config JSON")
    p.add_argument("--out", type=str, required=True, help="Output EMB v1 file")
    p.add_argument("--external", type=str, default=None, help="Take embeddings from an EMB v1 file")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("evaluate", help="All-against-all scoring, EER and decidability")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--embeddings", type=str, help="EMB v1 file")
    source.add_argument("--scores", type=str, help="Existing SCORES v1 file")
    p.add_argument("--metric", choices=[k.value for k in MetricKind], default=None,
                   help="Distance metric (default: cosine)")
    p.add_argument("--scheme", type=str, default=None, help="Scheme label stored in the report")
    p.add_argument("--l2-normalize", action="store_true", help="L2-normalize embeddings before scoring")
    p.add_argument("--out", type=str, required=True, help="Output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="Mean±std table and paired t-tests across reports")
    p.add_argument("reports", nargs="+", help="report.json files")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help="Significance level (default: 0.05)")
    p.add_argument("--out", type=str, default=".", help="Directory for comparison.csv and ttests.csv")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("pipeline", help="preprocess -> augment -> embed -> evaluate, repeated per run")
    common(p)
    p.add_argument("--scheme", choices=sorted(SCHEMES), default=None, help="Override the configured scheme")
    p.add_argument("--metric", choices=[k.value for k in MetricKind], default=None, help="Override the metric")
    p.add_argument("--seed", type=int, default=None, help="Override the base seed")
    p.add_argument("--runs", type=int, default=None, help="Override the run count")
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s - %(levelname)s - %(message)s",
    )

    try:
        return args.func(args)
    except IrisBenchError as e:
        logger.error("%s", e)
        print(f"✗ {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
