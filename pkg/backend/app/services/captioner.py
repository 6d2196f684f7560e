from __future__ import annotations

import math
from typing import Dict, List, Sequence

import numpy as np

from ..schemas.models import (
    BoundingBox,
    CategoryMapping,
    ClassCount,
    DetectionObject,
    ProportionEntry,
    SpatialCell,
)
from .labels import pluralize
from .parser import UNMAPPED

EMPTY_DETECTIONS = "There are no detected objects in this image."
NO_SIGNIFICANT = "No significant categories found."
DEFAULT_THRESHOLD_PERCENT = 1.0
# Classes with more instances than this are described by count only.
MAX_LOCATED_INSTANCES = 3

_GRID = (
    (SpatialCell.TOP_LEFT, SpatialCell.TOP, SpatialCell.TOP_RIGHT),
    (SpatialCell.LEFT, SpatialCell.CENTER, SpatialCell.RIGHT),
    (SpatialCell.BOTTOM_LEFT, SpatialCell.BOTTOM, SpatialCell.BOTTOM_RIGHT),
)

LOCATION_PHRASES: Dict[SpatialCell, str] = {
    SpatialCell.TOP_LEFT: "in the top-left corner",
    SpatialCell.TOP: "at the top",
    SpatialCell.TOP_RIGHT: "in the top-right corner",
    SpatialCell.LEFT: "on the left side",
    SpatialCell.CENTER: "in the center",
    SpatialCell.RIGHT: "on the right side",
    SpatialCell.BOTTOM_LEFT: "in the bottom-left corner",
    SpatialCell.BOTTOM: "at the bottom",
    SpatialCell.BOTTOM_RIGHT: "in the bottom-right corner",
}


# ---- A2C ----

def count_by_class(objects: Sequence[DetectionObject]) -> List[ClassCount]:
    counts: Dict[str, int] = {}
    for obj in objects:
        counts[obj.class_label] = counts.get(obj.class_label, 0) + 1
    return [ClassCount(class_label=c, count=n) for c, n in counts.items()]


def _count_sentence(label: str, count: int, single_class: bool) -> str:
    if count == 1:
        return f"There is 1 {label} in this image."
    if single_class and count == 2:
        return f"There are 2 {pluralize(label)} in this image."
    if count <= 10:
        return f"There are {count} {pluralize(label)} in this image."
    return f"There are more than ten {pluralize(label)} in this image."


def a2c_caption(objects: Sequence[DetectionObject]) -> str:
    """Count-based caption for detection annotations.

    One class gets the single-class branches (1 / 2 / up to ten / more than ten);
    several classes get one sentence each in first-appearance order.
    """
    counts = count_by_class(objects)
    if not counts:
        return EMPTY_DETECTIONS
    if len(counts) == 1:
        return _count_sentence(counts[0].class_label, counts[0].count, single_class=True)
    return " ".join(_count_sentence(c.class_label, c.count, single_class=False) for c in counts)


# ---- spatial extension ----

def spatial_phrase(box: BoundingBox, width: int, height: int) -> SpatialCell:
    """Cell of the 3x3 equal-thirds grid holding the box center; boundaries go left/top."""
    # compare 3 * center against thirds of the image without leaving integers
    cx2 = box.x_min + box.x_max
    cy2 = box.y_min + box.y_max
    col = 0 if 3 * cx2 <= 2 * width else (1 if 3 * cx2 <= 4 * width else 2)
    row = 0 if 3 * cy2 <= 2 * height else (1 if 3 * cy2 <= 4 * height else 2)
    return _GRID[row][col]


def _located_sentence(label: str, cells: List[SpatialCell]) -> str:
    if len(cells) == 1:
        return f"There is 1 {label} {LOCATION_PHRASES[cells[0]]} of the image."
    grouped: Dict[SpatialCell, int] = {}
    for cell in cells:
        grouped[cell] = grouped.get(cell, 0) + 1
    parts = ", ".join(f"{n} {LOCATION_PHRASES[cell]}" for cell, n in grouped.items())
    return f"There are {len(cells)} {pluralize(label)} in this image: {parts}."


def a2c_caption_spatial(objects: Sequence[DetectionObject], width: int, height: int) -> str:
    counts = count_by_class(objects)
    if not counts:
        return EMPTY_DETECTIONS
    single = len(counts) == 1
    sentences = []
    for c in counts:
        if c.count > MAX_LOCATED_INSTANCES:
            sentences.append(_count_sentence(c.class_label, c.count, single_class=single))
            continue
        cells = [spatial_phrase(o.box, width, height) for o in objects if o.class_label == c.class_label]
        sentences.append(_located_sentence(c.class_label, cells))
    return " ".join(sentences)


# ---- SA2C ----

def category_proportions(grid: np.ndarray, mapping: CategoryMapping) -> List[ProportionEntry]:
    """Percent of all pixels (unmapped included) per mapping category, zero entries kept."""
    total = int(grid.size)
    if total == 0:
        raise ValueError("category grid is empty")
    index_counts = np.bincount(grid[grid != UNMAPPED].ravel(), minlength=len(mapping.entries))
    per_category: Dict[str, int] = {name: 0 for name in mapping.categories()}
    for idx, entry in enumerate(mapping.entries):
        per_category[entry.category] += int(index_counts[idx])
    return [ProportionEntry(category=name, percent=100.0 * n / total) for name, n in per_category.items()]


def unmapped_share(grid: np.ndarray) -> float:
    return 100.0 * float(np.count_nonzero(grid == UNMAPPED)) / float(grid.size)


def filter_proportions(entries: Sequence[ProportionEntry], threshold_percent: float) -> List[ProportionEntry]:
    kept = [e for e in entries if e.percent >= threshold_percent]
    return sorted(kept, key=lambda e: (-e.percent, e.category))


def _round_half_up(p: float) -> int:
    return int(math.floor(p + 0.5))


def _join(items: List[str]) -> str:
    if len(items) == 1:
        return items[0]
    if len(items) == 2:
        return f"{items[0]} and {items[1]}"
    return ", ".join(items[:-1]) + f", and {items[-1]}"


def caption_from_proportions(entries: Sequence[ProportionEntry], threshold_percent: float = DEFAULT_THRESHOLD_PERCENT) -> str:
    if not (0.0 < threshold_percent <= 100.0):
        raise ValueError(f"threshold_percent must be in (0, 100], got {threshold_percent}")
    kept = filter_proportions(entries, threshold_percent)
    if not kept:
        return NO_SIGNIFICANT
    names = [e.category for e in kept]
    clauses = [f"{e.category} accounts for {_round_half_up(e.percent)}%" for e in kept]
    clauses[0] = clauses[0][0].upper() + clauses[0][1:]
    return f"This image contains {_join(names)}. {_join(clauses)}."


def sa2c_caption(grid: np.ndarray, mapping: CategoryMapping, threshold_percent: float = DEFAULT_THRESHOLD_PERCENT) -> str:
    return caption_from_proportions(category_proportions(grid, mapping), threshold_percent)
