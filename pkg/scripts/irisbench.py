#!/usr/bin/env python
"""
irisbench entry point

Usage:
    python scripts/irisbench.py pipeline --manifest data/fixture/manifest.csv --out outputs/run
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
