#!/usr/bin/env python
"""
Render the synthetic fixture dataset (eye images, iris masks, manifest)

Real iris databases are distributed under license and are not downloaded
here; point a manifest at a local copy instead.

Usage:
    python scripts/make_synthetic_fixture.py --out data/fixture --classes 3 --per-class 4
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.config import load_manifest  # noqa: E402
from src.synthetic import write_synthetic_dataset  # noqa: E402


def main():
    parser = argparse.ArgumentParser(description='Render a synthetic iris dataset')
    parser.add_argument('--out', type=str, default='data/fixture', help='Output directory (default: data/fixture)')
    parser.add_argument('--classes', type=int, default=3, help='Number of eyes/classes (default: 3)')
    parser.add_argument('--per-class', type=int, default=4, help='Test images per class (default: 4)')
    parser.add_argument('--train-per-class', type=int, default=0, help='Train images per class (default: 0)')
    parser.add_argument('--seed', type=int, default=7, help='Random seed (default: 7)')
    args = parser.parse_args()

    out_dir = Path(args.out)
    print(f"Rendering {args.classes} classes x {args.per_class + args.train_per_class} images -> {out_dir}")
    manifest_path = write_synthetic_dataset(out_dir, classes=args.classes, per_class=args.per_class,
                                            train_per_class=args.train_per_class, seed=args.seed)
    manifest = load_manifest(manifest_path)

    print(f"\n✓ Wrote {len(manifest)} images and masks")
    print(f"  Classes: {', '.join(sorted(manifest['class_label'].unique()))}")
    print(f"  Splits:  {manifest['split'].value_counts().to_dict()}")
    print(f"\n📁 Manifest: {manifest_path}")


if __name__ == "__main__":
    main()
