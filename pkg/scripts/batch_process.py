#!/usr/bin/env python
"""
Batch run the experimental grid: every input scheme with and without
rotation augmentation, followed by a pairwise comparison

Usage:
    python scripts/batch_process.py --manifest data/fixture/manifest.csv --output-dir ./outputs/grid --runs 30
"""

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.augment import AugmentConfig  # noqa: E402
from src.config import ExperimentConfig, load_config, load_manifest  # noqa: E402
from src.errors import IrisBenchError  # noqa: E402
from src.preprocess import DELINEATED_SCHEMES  # noqa: E402
from src.run_iris_analysis import RULE, IrisPipeline  # noqa: E402


def main():
    parser = argparse.ArgumentParser(
        description='Run every scheme x augmentation configuration and compare them'
    )
    parser.add_argument('--manifest', type=str, required=True, help='Dataset manifest CSV')
    parser.add_argument('--config', type=str, default=None,
                        help='Base experiment config JSON (default: built-in defaults)')
    parser.add_argument('--output-dir', type=str, default='./outputs/grid',
                        help='Output directory (default: ./outputs/grid)')
    parser.add_argument('--runs', type=int, default=None, help='Runs per configuration')
    parser.add_argument('--metric', type=str, default=None, help='Distance metric for every configuration')
    parser.add_argument('--no-augment', action='store_true', help='Skip the augmented half of the grid')

    args = parser.parse_args()
    output_dir = Path(args.output_dir)

    try:
        base = load_config(args.config) if args.config else ExperimentConfig()
        base = base.with_overrides(metric=args.metric, runs=args.runs)
        manifest = load_manifest(args.manifest)
    except IrisBenchError as e:
        print(f"✗ {e}")
        sys.exit(2)

    grid = []
    for scheme in DELINEATED_SCHEMES:
        config = base.with_overrides(scheme=scheme)
        grid.append((scheme, replace(config, augment=None)))
        if not args.no_augment:
            grid.append((f"{scheme}+da", replace(config, augment=base.augment or AugmentConfig())))

    results = {}
    total_start = time.time()

    print(f"\n{RULE}")
    print(f"BATCH PROCESSING: {len(grid)} configurations, {base.runs} run(s) each")
    print(f"{RULE}\n")

    for name, config in grid:
        start = time.time()
        try:
            pipeline = IrisPipeline(output_dir / name)
            document, failures = pipeline.run_full_pipeline(config, manifest)
            results[name] = {
                'status': 'success' if not failures else 'partial',
                'time': time.time() - start,
                'summary': document['summary'],
                'failures': len(failures),
            }
            print(f"\n✓ {name} completed in {results[name]['time']:.1f}s")
        except IrisBenchError as e:
            results[name] = {'status': 'failed', 'time': time.time() - start, 'error': str(e)}
            print(f"\n✗ {name} failed: {e}")

    total_time = time.time() - total_start
    n_success = sum(1 for r in results.values() if r['status'] != 'failed')
    n_failed = len(results) - n_success

    print(f"\n{RULE}")
    print("BATCH PROCESSING SUMMARY")
    print(RULE)
    print(f"Configurations: {len(results)}")
    print(f"Successful:     {n_success}")
    print(f"Failed:         {n_failed}")
    print(f"Total time:     {total_time:.1f}s ({total_time/60:.1f}m)")
    print(f"{RULE}\n")

    print("Detailed Results:")
    for name, result in results.items():
        status_icon = '✗' if result['status'] == 'failed' else '✓'
        if result['status'] == 'failed':
            print(f"{status_icon} {name}: failed ({result['time']:.1f}s)")
            print(f"    Error: {result['error']}")
        else:
            summary = result['summary']
            print(f"{status_icon} {name}: EER {summary['eer_percent']} %, d' {summary['decidability']}"
                  f" ({result['failures']} row failures)")
    print()

    reports = [output_dir / name / "report.json" for name, r in results.items() if r['status'] != 'failed']
    if len(reports) >= 2 and base.runs >= 2:
        try:
            IrisPipeline(output_dir).compare(reports)
        except IrisBenchError as e:
            print(f"✗ comparison failed: {e}")
            n_failed += 1

    if n_failed > 0:
        sys.exit(1)


if __name__ == "__main__":
    main()
