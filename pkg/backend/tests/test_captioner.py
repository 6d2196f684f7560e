from __future__ import annotations

import itertools

import numpy as np
import pytest
from PIL import Image

from app.schemas.models import BoundingBox, CategoryMapping, ProportionEntry, SpatialCell
from app.services import captioner, parser
from app.services.labels import pluralize
from app.services.parser import UNMAPPED
from conftest import obj, write_image


def ships(n, box=(0, 0, 10, 10)):
    return [obj("ship", *box) for _ in range(n)]


def test_a2c_single_ship():
    assert captioner.a2c_caption(ships(1)) == "There is 1 ship in this image."


def test_a2c_more_than_ten():
    assert captioner.a2c_caption(ships(12)) == "There are more than ten ships in this image."


def test_a2c_multi_class_first_appearance_order():
    objects = [obj("bridge", 0, 0, 5, 5)] + ships(3)
    assert captioner.a2c_caption(objects) == "There is 1 bridge in this image. There are 3 ships in this image."


def test_a2c_empty():
    assert captioner.a2c_caption([]) == captioner.EMPTY_DETECTIONS


def _literal_trace(groups):
    """Independent line-by-line reading of the counting algorithm."""
    if len(groups) == 1:
        c, n = groups[0]
        if n == 1:
            return f"There is 1 {c} in this image."
        if n == 2:
            return f"There are 2 {pluralize(c)} in this image."
        if n <= 10:
            return f"There are {n} {pluralize(c)} in this image."
        return f"There are more than ten {pluralize(c)} in this image."
    out = []
    for c, n in groups:
        if n == 1:
            out.append(f"There is 1 {c} in this image.")
        elif n <= 10:
            out.append(f"There are {n} {pluralize(c)} in this image.")
        else:
            out.append(f"There are more than ten {pluralize(c)} in this image.")
    return " ".join(out)


def test_a2c_matches_literal_trace_exhaustively():
    classes = ["ship", "aircraft", "oil tank"]
    for k in (1, 2, 3):
        for counts in itertools.product((1, 2, 3, 10, 11, 50), repeat=k):
            groups = list(zip(classes[:k], counts))
            objects = [obj(c, 0, 0, 4, 4) for c, n in groups for _ in range(n)]
            assert captioner.a2c_caption(objects) == _literal_trace(groups)


@pytest.mark.parametrize("box,cell", [
    ((0, 0, 10, 10), SpatialCell.TOP_LEFT),
    ((246, 246, 266, 266), SpatialCell.CENTER),
    ((420, 240, 440, 260), SpatialCell.RIGHT),
    ((500, 500, 512, 512), SpatialCell.BOTTOM_RIGHT),
])
def test_spatial_phrase(box, cell):
    b = BoundingBox(x_min=box[0], y_min=box[1], x_max=box[2], y_max=box[3])
    assert captioner.spatial_phrase(b, 512, 512) == cell


def test_spatial_phrase_total_over_random_boxes():
    rng = np.random.default_rng(0)
    cells = set()
    for _ in range(500):
        x0, y0 = rng.integers(0, 500, size=2)
        w, h = rng.integers(1, 12, size=2)
        b = BoundingBox(x_min=int(x0), y_min=int(y0), x_max=int(x0 + w), y_max=int(y0 + h))
        cells.add(captioner.spatial_phrase(b, 512, 512))
    assert cells == set(SpatialCell)


def test_spatial_single_object():
    out = captioner.a2c_caption_spatial([obj("ship", 440, 10, 480, 40)], 512, 512)
    assert out == "There is 1 ship in the top-right corner of the image."


def test_spatial_two_ships_grouped_by_cell():
    objects = [obj("ship", 420, 240, 440, 260), obj("ship", 440, 10, 480, 40)]
    out = captioner.a2c_caption_spatial(objects, 512, 512)
    assert out == "There are 2 ships in this image: 1 on the right side, 1 in the top-right corner."


def test_spatial_falls_back_to_counts_for_crowds():
    objects = ships(12)
    assert captioner.a2c_caption_spatial(objects, 512, 512) == captioner.a2c_caption(objects)


MAPPING = CategoryMapping.from_pairs([((0, 0, 255), "water"), ((0, 128, 0), "forest"), ((255, 255, 0), "farmland")])


def test_category_proportions_counts_unmapped_in_denominator():
    grid = np.array([[0, 0], [UNMAPPED, UNMAPPED]], dtype=np.int32)
    entries = {e.category: e.percent for e in captioner.category_proportions(grid, MAPPING)}
    assert entries == {"water": 50.0, "forest": 0.0, "farmland": 0.0}
    assert captioner.unmapped_share(grid) == 50.0


def test_proportions_match_pixel_loop():
    rng = np.random.default_rng(3)
    for _ in range(25):
        grid = rng.integers(-1, 3, size=(16, 16)).astype(np.int32)
        entries = captioner.category_proportions(grid, MAPPING)
        for idx, e in enumerate(entries):
            expected = sum(1 for v in grid.ravel() if v == idx) / 256 * 100
            assert e.percent == pytest.approx(expected, rel=1e-9)
        total = sum(e.percent for e in entries) + captioner.unmapped_share(grid)
        assert total == pytest.approx(100.0, rel=1e-9)


def test_decoded_masks_match_rgb_pixel_loop(tmp_path):
    palette = [entry.color for entry in MAPPING.entries] + [(10, 10, 10), (200, 0, 200)]
    color_to_category = {entry.color: entry.category for entry in MAPPING.entries}
    rng = np.random.default_rng(21)
    for trial in range(25):
        picks = rng.integers(0, len(palette), size=(16, 16))
        rgb = np.array([[palette[p] for p in row] for row in picks], dtype=np.uint8)
        path = write_image(tmp_path / f"mask{trial}.png", rgb)

        grid = parser.load_mask(path, MAPPING)
        entries = {e.category: e.percent for e in captioner.category_proportions(grid, MAPPING)}

        with Image.open(path) as im:
            decoded = im.convert("RGB")
            counts = dict.fromkeys(MAPPING.categories(), 0)
            for y in range(decoded.height):
                for x in range(decoded.width):
                    category = color_to_category.get(decoded.getpixel((x, y)))
                    if category is not None:
                        counts[category] += 1
        assert entries == {c: pytest.approx(100.0 * n / 256, rel=1e-9) for c, n in counts.items()}


def test_sa2c_orders_by_exact_percent():
    entries = [ProportionEntry(category="farmland", percent=1.1),
               ProportionEntry(category="forest", percent=81.0),
               ProportionEntry(category="water", percent=1.2)]
    assert captioner.caption_from_proportions(entries) == (
        "This image contains forest, water, and farmland. "
        "Forest accounts for 81%, water accounts for 1%, and farmland accounts for 1%."
    )


def test_sa2c_equal_percents_sorted_by_name():
    entries = [ProportionEntry(category="village", percent=25.0),
               ProportionEntry(category="road", percent=25.0),
               ProportionEntry(category="farmland", percent=50.0)]
    assert captioner.caption_from_proportions(entries).startswith("This image contains farmland, road, and village.")


def test_sa2c_two_categories_use_and():
    entries = [ProportionEntry(category="forest", percent=60.01), ProportionEntry(category="water", percent=39.99)]
    assert captioner.caption_from_proportions(entries) == (
        "This image contains forest and water. Forest accounts for 60% and water accounts for 40%."
    )


def test_sa2c_uniform_grid():
    grid = np.zeros((2, 2), dtype=np.int32)
    assert captioner.sa2c_caption(grid, MAPPING) == "This image contains water. Water accounts for 100%."


def test_sa2c_nothing_significant():
    grid = np.full((10, 10), UNMAPPED, dtype=np.int32)
    grid[0, 0] = 1
    assert captioner.sa2c_caption(grid, MAPPING, threshold_percent=2.0) == captioner.NO_SIGNIFICANT


def test_sa2c_rejects_bad_threshold():
    with pytest.raises(ValueError):
        captioner.caption_from_proportions([], threshold_percent=0)


def test_sa2c_rounds_half_up():
    entries = [ProportionEntry(category="water", percent=2.5), ProportionEntry(category="forest", percent=97.5)]
    assert "water accounts for 3%" in captioner.caption_from_proportions(entries)
