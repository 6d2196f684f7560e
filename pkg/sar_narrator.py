#!/usr/bin/env python3
"""
SAR-Narrator launcher.

Builds SAR image-caption corpora from detection boxes, segmentation masks and
paired optical captions, then evaluates captioning and retrieval outputs.

Usage example:
    python sar_narrator.py run-all --config mini/config.yaml --out mini/out
"""
from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent / "backend"))

from app.cli import main  # noqa: E402


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
