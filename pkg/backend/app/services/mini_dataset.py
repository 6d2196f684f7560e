"""Synthetic mini-dataset: four sources, 20 samples, a config and a replay cassette.

hrsid (COCO, 5 detection) and ssdd (VOC, 3 detection, two of them pixel copies of
hrsid images), whu (6 masks with optical captions) and osdataset (6 paired captions).
A run-all over it keeps 18 records: 6 a2c_spatial, 6 sa2c_fused, 6 paired_rewritten.
"""
from __future__ import annotations

import json
import logging
import re
import shutil
import tempfile
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import Any, Dict, List, Tuple

import numpy as np
import yaml
from PIL import Image

from .config import load_config
from .llm_client import Cassette, ChatEndpoint
from .rewrite import rule_rewrite


logger = logging.getLogger(__name__)

SIZE = 64
CONFIG_NAME = "config.yaml"
CASSETTE_NAME = "cassette.jsonl"

Box = Tuple[int, int, int, int]

HRSID: Dict[str, List[Tuple[str, Box]]] = {
    "0001": [("ship", (26, 26, 38, 38))],
    "0002": [("ship", (50, 28, 60, 36)), ("ship", (50, 2, 60, 10))],
    "0003": [("ship", (x, y, x + 8, y + 8)) for y in (2, 16, 30) for x in (2, 16, 30, 44)],
    "0004": [("harbor", (2, 2, 12, 12)), ("ship", (20, 52, 28, 60)), ("ship", (36, 52, 44, 60)), ("ship", (4, 52, 12, 60))],
    "0005": [("ship", (x, 40, x + 6, 46)) for x in (2, 14, 26, 38, 50)],
}

# ssdd image -> hrsid image it copies, or None for a fresh one
SSDD: Dict[str, Tuple[str | None, List[Tuple[str, Box]]]] = {
    "0001": ("0001", [("ship", (26, 26, 38, 38))]),
    "0002": ("0003", [("ship", (2, 2, 10, 10)), ("ship", (16, 2, 24, 10))]),
    "0003": (None, [("ship", (2, 28, 12, 36))]),
}

MAPPING = [
    ((0, 0, 255), "water"),
    ((255, 255, 0), "farmland"),
    ((255, 0, 0), "village"),
    ((0, 128, 0), "forest"),
    ((128, 128, 128), "road"),
]

# pixel counts per category over 64x64 = 4096 pixels; the remainder stays black (unmapped)
WHU_MASKS: Dict[str, List[Tuple[str, int]]] = {
    "0001": [("water", 3604), ("farmland", 123), ("village", 41)],
    "0002": [("forest", 3318), ("water", 45), ("farmland", 41)],
    "0003": [("water", 4096)],
    "0004": [("farmland", 2048), ("village", 1024), ("road", 1024)],
    "0005": [("forest", 2458), ("water", 1638)],
    "0006": [("village", 30)],
}

WHU_OPTICAL: Dict[str, Tuple[str, str]] = {
    "0001": (
        "The image presents an aerial view of a field, captured from a high angle. The field is divided into "
        "sections by a network of roads or pathways, creating a grid-like pattern.",
        "The image showcases a vast water body dominating the scene, with a field divided into sections by a "
        "network of roads forming a grid-like pattern.",
    ),
    "0002": (
        "An aerial view of a dense green forest with a small lake and a narrow strip of farmland.",
        "A dense forest dominates the scene, with a small lake and a narrow strip of farmland at its edges.",
    ),
    "0003": (
        "A large body of blue water seen from above.",
        "A large body of water fills the entire scene.",
    ),
    "0004": (
        "Farmland fields are crossed by several roads leading to a small village.",
        "Farmland covers a significant portion of the scene, crossed by roads leading to a small village.",
    ),
    "0005": (
        "A forest stretches along the shore of a wide river.",
        "A forest forms the majority of the scene, stretching along the shore of a wide river.",
    ),
    "0006": (
        "A few village houses are scattered across an open area.",
        "A few village houses are scattered across an open area.",
    ),
}

OS_PAIRED: Dict[str, Tuple[str, str]] = {
    "0001": (
        "The black and white aerial photograph depicts a landscape divided into two distinct sections by a "
        "diagonal line, with a large, rectangular farm or agricultural area on the left and a densely vegetated "
        "area on the right",
        "A landscape divided by a diagonal line, with a large farm on the left and a densely vegetated area on the right.",
    ),
    "0002": (
        "A gray cargo ship, possibly a container vessel, is anchored near white port cranes.",
        "A cargo ship is anchored near port cranes.",
    ),
    "0003": (
        "Rows of green trees line a straight road that passes several brown farmland plots.",
        "A straight road passes several farmland plots.",
    ),
    "0004": (
        "The photo, taken at a low angle, shows a large airport with two runways and parked planes.",
        "A large airport with two runways and parked planes.",
    ),
    "0005": (
        "A dark river winds through a residential area with white houses and some trees.",
        "A river winds through a residential area with houses.",
    ),
    "0006": (
        "Several storage tanks, likely oil tanks, stand beside a gray industrial building.",
        "Several storage tanks stand beside an industrial building.",
    ),
}

_INPUT_LINE = re.compile(r"^Input: (.*)$", re.M)
_CAPTION_B = re.compile(r"^Caption B: (?P<b>.*)$", re.M)


def scripted_transport(payload: Dict[str, Any]) -> str:
    """Offline stand-in for the chat endpoint: canned answers keyed by the caption being rewritten."""
    prompt = payload["messages"][-1]["content"]
    m = _CAPTION_B.search(prompt)
    if m:
        key = m.group("b").strip()
        for optical, fused in WHU_OPTICAL.values():
            if optical == key:
                return fused
        return rule_rewrite(key)
    inputs = _INPUT_LINE.findall(prompt)
    key = inputs[-1].strip() if inputs else ""
    for optical, rewritten in OS_PAIRED.values():
        if optical == key:
            return rewritten
    return rule_rewrite(key)


def _noise(rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 256, size=(SIZE, SIZE), dtype=np.uint8)


def _save(arr: np.ndarray, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def _write_coco(root: Path, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    pixels: Dict[str, np.ndarray] = {}
    doc: Dict[str, list] = {"images": [], "annotations": [], "categories": [{"id": 1, "name": "ship"}, {"id": 2, "name": "harbor"}]}
    cat_ids = {c["name"]: c["id"] for c in doc["categories"]}
    ann_id = 1
    for img_id, (key, objects) in enumerate(HRSID.items(), start=1):
        pixels[key] = _noise(rng)
        _save(pixels[key], root / "images" / f"{key}.png")
        doc["images"].append({"id": img_id, "file_name": f"{key}.png", "width": SIZE, "height": SIZE})
        for label, (x0, y0, x1, y1) in objects:
            doc["annotations"].append({"id": ann_id, "image_id": img_id, "category_id": cat_ids[label], "bbox": [x0, y0, x1 - x0, y1 - y0]})
            ann_id += 1
    (root / "annotations.json").write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return pixels


def _write_voc(root: Path, rng: np.random.Generator, hrsid_pixels: Dict[str, np.ndarray]) -> None:
    for key, (copy_of, objects) in SSDD.items():
        arr = hrsid_pixels[copy_of] if copy_of else _noise(rng)
        _save(arr, root / "images" / f"{key}.png")
        ann = ET.Element("annotation")
        ET.SubElement(ann, "filename").text = f"{key}.png"
        size = ET.SubElement(ann, "size")
        ET.SubElement(size, "width").text = str(SIZE)
        ET.SubElement(size, "height").text = str(SIZE)
        ET.SubElement(size, "depth").text = "1"
        for label, (x0, y0, x1, y1) in objects:
            obj = ET.SubElement(ann, "object")
            ET.SubElement(obj, "name").text = label
            bnd = ET.SubElement(obj, "bndbox")
            for tag, v in zip(("xmin", "ymin", "xmax", "ymax"), (x0, y0, x1, y1)):
                ET.SubElement(bnd, tag).text = str(v)
        (root / "annotations").mkdir(parents=True, exist_ok=True)
        ET.ElementTree(ann).write(root / "annotations" / f"{key}.xml", encoding="utf-8", xml_declaration=True)


def _write_masks(root: Path, rng: np.random.Generator) -> None:
    colors = {name: color for color, name in MAPPING}
    for key, counts in WHU_MASKS.items():
        _save(_noise(rng), root / "images" / f"{key}.png")
        flat = np.zeros((SIZE * SIZE, 3), dtype=np.uint8)
        pos = 0
        for name, n in counts:
            flat[pos:pos + n] = colors[name]
            pos += n
        _save(flat.reshape(SIZE, SIZE, 3), root / "masks" / f"{key}.png")
    lines = [f"{key}\t{optical}" for key, (optical, _) in WHU_OPTICAL.items()]
    (root / "optical_captions.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_paired(root: Path, rng: np.random.Generator) -> None:
    for key in OS_PAIRED:
        _save(_noise(rng), root / "images" / f"{key}.png")
    lines = [f"{key}\t{optical}" for key, (optical, _) in OS_PAIRED.items()]
    (root / "captions.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def mini_config() -> Dict[str, Any]:
    return {
        "out": "out",
        "seed": 0,
        "sources": [
            {"name": "hrsid", "task": "detection", "adapter": "coco",
             "paths": ["hrsid/annotations.json"], "image_root": "hrsid/images"},
            {"name": "ssdd", "task": "detection", "adapter": "voc",
             "paths": ["ssdd/annotations"], "image_root": "ssdd/images"},
            {"name": "whu", "task": "segmentation", "adapter": "mask",
             "paths": ["whu/masks"], "image_root": "whu/images",
             "mapping": [{"color": list(c), "category": n} for c, n in MAPPING],
             "optical_captions": "whu/optical_captions.tsv"},
            {"name": "osdataset", "task": "paired", "adapter": "paired_tsv",
             "paths": ["osdataset/captions.tsv"], "image_root": "osdataset/images"},
        ],
        "dedup": {"global_max_distance": 0},
        "caption": {"threshold_percent": 1.0, "spatial_enabled": True},
        "rewrite": {"mode": "replay", "cassette": CASSETTE_NAME, "n_examples": 3},
        "split": {"train": 0.8, "test": 0.2},
    }


def record_cassette(config_path: str | Path) -> int:
    """Run ingest, caption and rewrite against the scripted transport, recording every exchange."""
    from .pipeline import run_caption, run_ingest, run_rewrite

    cfg = load_config(config_path)
    cassette_path = Path(cfg.rewrite.cassette)
    if cassette_path.exists():
        cassette_path.unlink()
    cassette = Cassette(cassette_path)
    endpoint = ChatEndpoint(model=cfg.rewrite.model, mode="live", cassette=cassette,
                            transport=scripted_transport, max_concurrency=1)
    with tempfile.TemporaryDirectory() as tmp:
        scratch = cfg.model_copy(update={"out": tmp})
        samples, _ = run_ingest(scratch)
        run_rewrite(scratch, run_caption(scratch, samples), endpoint)
    logger.info("cassette path=%s entries=%d", cassette_path, len(cassette))
    return len(cassette)


def make_mini_dataset(directory: str | Path, seed: int = 7) -> Path:
    root = Path(directory)
    if root.exists():
        for name in ("hrsid", "ssdd", "whu", "osdataset"):
            shutil.rmtree(root / name, ignore_errors=True)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    hrsid_pixels = _write_coco(root / "hrsid", rng)
    _write_voc(root / "ssdd", rng, hrsid_pixels)
    _write_masks(root / "whu", rng)
    _write_paired(root / "osdataset", rng)
    config_path = root / CONFIG_NAME
    config_path.write_text(yaml.safe_dump(mini_config(), sort_keys=False), encoding="utf-8")
    record_cassette(config_path)
    return config_path
