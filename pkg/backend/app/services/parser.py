from __future__ import annotations

import csv
import json
import logging
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import List, Optional, Iterable, Tuple, Dict, Any

import numpy as np
import pandas as pd
from PIL import Image

from ..schemas.models import (
    AnnotatedSample,
    BoundingBox,
    CategoryMapping,
    DetectionObject,
    ValidationVerdict,
)
from .errors import (
    DanglingReference,
    EmptyImage,
    InvalidBox,
    MalformedDocument,
    UnreadableImage,
)
from .labels import normalize_class_label

logger = logging.getLogger(__name__)

UNMAPPED = -1

# Verdict reason codes
CORRUPTED_IMAGE = "corrupted_image"
INVALID_DIMENSIONS = "invalid_dimensions"
MISSING_ANNOTATION = "missing_annotation"
CORRUPTED_ANNOTATION = "corrupted_annotation"
DUPLICATE_ID = "duplicate_id"

ADAPTER_TASKS = {
    "coco": "detection",
    "voc": "detection",
    "mask": "segmentation",
    "paired_tsv": "paired",
}


def sample_id(source: str, name: str) -> str:
    return f"{source}-{Path(name).stem}"


def image_size(path: str | Path) -> Tuple[int, int]:
    """(width, height) from the image header, or (0, 0) when the file cannot be opened."""
    try:
        with Image.open(path) as im:
            return int(im.width), int(im.height)
    except (OSError, ValueError):
        return 0, 0


def _make_box(coords: Iterable[int], width: int, height: int, path: Path) -> BoundingBox:
    x_min, y_min, x_max, y_max = coords
    if x_min >= x_max or y_min >= y_max:
        raise InvalidBox(f"degenerate box {[x_min, y_min, x_max, y_max]}", path)
    if x_min < 0 or y_min < 0 or x_max > width or y_max > height:
        raise InvalidBox(f"box {[x_min, y_min, x_max, y_max]} outside {width}x{height} image", path)
    return BoundingBox(x_min=x_min, y_min=y_min, x_max=x_max, y_max=y_max)


def _detection(label: Any, box: BoundingBox, path: Path) -> DetectionObject:
    if not normalize_class_label(label):
        raise MalformedDocument("object with empty class label", path)
    return DetectionObject(class_label=label, box=box)


# ---- COCO ----

def parse_detection_coco(
    path: str | Path,
    image_root: Optional[str | Path] = None,
    source: Optional[str] = None,
) -> List[AnnotatedSample]:
    """Parse a COCO-style detection document into one sample per image.

    Boxes arrive as [x, y, w, h] and leave in corner form; labels are normalized.
    """
    path = Path(path)
    source = source or path.stem
    root = Path(image_root) if image_root is not None else path.parent
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedDocument(f"unreadable JSON: {e}", path) from e
    if not isinstance(doc, dict):
        raise MalformedDocument("top-level JSON value is not an object", path)
    for key in ("images", "annotations", "categories"):
        if not isinstance(doc.get(key), list):
            raise MalformedDocument(f"missing required array '{key}'", path)

    categories: Dict[Any, str] = {}
    for cat in doc["categories"]:
        try:
            categories[cat["id"]] = str(cat["name"])
        except (KeyError, TypeError) as e:
            raise MalformedDocument(f"bad category entry {cat!r}", path) from e

    images: Dict[Any, Dict[str, Any]] = {}
    order: List[Any] = []
    for img in doc["images"]:
        try:
            image_id = img["id"]
            entry = {
                "file_name": str(img["file_name"]),
                "width": int(img["width"]),
                "height": int(img["height"]),
            }
        except (KeyError, TypeError, ValueError) as e:
            raise MalformedDocument(f"bad image entry {img!r}", path) from e
        if image_id in images:
            raise MalformedDocument(f"duplicate image id {image_id!r}", path)
        images[image_id] = entry
        order.append(image_id)

    objects: Dict[Any, List[DetectionObject]] = {i: [] for i in order}
    for ann in doc["annotations"]:
        try:
            image_id = ann["image_id"]
            category_id = ann["category_id"]
            x, y, w, h = (float(v) for v in ann["bbox"])
        except (KeyError, TypeError, ValueError) as e:
            raise MalformedDocument(f"bad annotation entry {ann!r}", path) from e
        if image_id not in images:
            raise DanglingReference(f"annotation references unknown image {image_id!r}", path)
        if category_id not in categories:
            raise DanglingReference(f"annotation references unknown category {category_id!r}", path)
        if w <= 0 or h <= 0:
            raise InvalidBox(f"non-positive box size w={w} h={h}", path)
        img = images[image_id]
        corners = (int(round(x)), int(round(y)), int(round(x + w)), int(round(y + h)))
        box = _make_box(corners, img["width"], img["height"], path)
        objects[image_id].append(_detection(categories[category_id], box, path))

    samples = []
    for image_id in order:
        img = images[image_id]
        samples.append(
            AnnotatedSample(
                id=sample_id(source, img["file_name"]),
                image_path=str(root / img["file_name"]),
                width=img["width"],
                height=img["height"],
                source_dataset=source,
                task="detection",
                detections=objects[image_id],
            )
        )
    logger.debug("coco path=%s images=%d annotations=%d", path, len(samples), len(doc["annotations"]))
    return samples


# ---- VOC ----

def _required_text(node: ET.Element, tag: str, path: Path) -> str:
    child = node.find(tag)
    if child is None or child.text is None or not child.text.strip():
        raise MalformedDocument(f"missing <{tag}> element", path)
    return child.text.strip()


def _required_int(node: ET.Element, tag: str, path: Path) -> int:
    text = _required_text(node, tag, path)
    try:
        return int(float(text))
    except ValueError as e:
        raise MalformedDocument(f"<{tag}> is not a number: {text!r}", path) from e


def parse_detection_voc(
    path: str | Path,
    image_root: Optional[str | Path] = None,
    source: Optional[str] = None,
    image_ext: str = ".png",
) -> AnnotatedSample:
    """Parse a single-image VOC-style XML document."""
    path = Path(path)
    source = source or path.parent.name
    root_dir = Path(image_root) if image_root is not None else path.parent
    try:
        root = ET.parse(path).getroot()
    except (ET.ParseError, OSError) as e:
        raise MalformedDocument(f"unparseable XML: {e}", path) from e

    size = root.find("size")
    if size is None:
        raise MalformedDocument("missing <size> element", path)
    width = _required_int(size, "width", path)
    height = _required_int(size, "height", path)

    filename_node = root.find("filename")
    if filename_node is not None and filename_node.text and filename_node.text.strip():
        file_name = filename_node.text.strip()
    else:
        file_name = path.stem + image_ext

    detections: List[DetectionObject] = []
    for obj in root.findall("object"):
        name = _required_text(obj, "name", path)
        bnd = obj.find("bndbox")
        if bnd is None:
            raise MalformedDocument("object without <bndbox>", path)
        coords = tuple(_required_int(bnd, t, path) for t in ("xmin", "ymin", "xmax", "ymax"))
        detections.append(_detection(name, _make_box(coords, width, height, path), path))

    return AnnotatedSample(
        id=sample_id(source, file_name),
        image_path=str(root_dir / file_name),
        width=width,
        height=height,
        source_dataset=source,
        task="detection",
        detections=detections,
    )


def parse_voc_dir(
    path: str | Path,
    image_root: Optional[str | Path] = None,
    source: Optional[str] = None,
    image_ext: str = ".png",
) -> List[AnnotatedSample]:
    """A directory of VOC files (sorted by name) or a single VOC file."""
    path = Path(path)
    files = sorted(path.glob("*.xml")) if path.is_dir() else [path]
    return [parse_detection_voc(f, image_root=image_root, source=source, image_ext=image_ext) for f in files]


# ---- paired captions / masks ----

def read_caption_tsv(path: str | Path) -> Dict[str, str]:
    """id<TAB>caption lines -> ordered dict."""
    path = Path(path)
    try:
        df = pd.read_csv(
            path,
            sep="\t",
            header=None,
            names=["id", "caption"],
            dtype=str,
            quoting=csv.QUOTE_NONE,
            keep_default_na=False,
            skip_blank_lines=True,
            encoding="utf-8",
        )
    except (OSError, UnicodeDecodeError, pd.errors.ParserError) as e:
        raise MalformedDocument(f"unreadable caption TSV: {e}", path) from e
    except pd.errors.EmptyDataError:
        return {}
    out: Dict[str, str] = {}
    for key, caption in zip(df["id"], df["caption"]):
        key = str(key).strip()
        if not key:
            raise MalformedDocument("caption line without id", path)
        if key in out:
            raise MalformedDocument(f"duplicate id {key!r}", path)
        out[key] = str(caption).strip()
    return out


def parse_paired_tsv(
    path: str | Path,
    image_root: Optional[str | Path] = None,
    source: Optional[str] = None,
    image_ext: str = ".png",
) -> List[AnnotatedSample]:
    path = Path(path)
    source = source or path.stem
    root = Path(image_root) if image_root is not None else path.parent
    samples = []
    for key, caption in read_caption_tsv(path).items():
        image_path = root / f"{key}{image_ext}"
        width, height = image_size(image_path)
        samples.append(
            AnnotatedSample(
                id=sample_id(source, key),
                image_path=str(image_path),
                width=width,
                height=height,
                source_dataset=source,
                task="paired",
                optical_caption=caption,
            )
        )
    return samples


def parse_mask_dir(
    directory: str | Path,
    image_root: str | Path,
    source: str,
    image_ext: str = ".png",
) -> List[AnnotatedSample]:
    """One segmentation sample per mask PNG, paired with the same-named image."""
    directory = Path(directory)
    if not directory.is_dir():
        raise MalformedDocument("mask path is not a directory", directory)
    samples = []
    for mask in sorted(directory.glob("*.png")):
        image_path = Path(image_root) / f"{mask.stem}{image_ext}"
        width, height = image_size(image_path)
        samples.append(
            AnnotatedSample(
                id=sample_id(source, mask.name),
                image_path=str(image_path),
                width=width,
                height=height,
                source_dataset=source,
                task="segmentation",
                mask_path=str(mask),
            )
        )
    return samples


def load_mask(path: str | Path, mapping: CategoryMapping, tolerance: int = 0) -> np.ndarray:
    """Map an RGB mask onto mapping indices; unmatched pixels hold UNMAPPED.

    With tolerance > 0 a pixel matches an entry when every channel is within
    tolerance; the first matching entry wins.
    """
    try:
        with Image.open(path) as im:
            im.load()
            rgb = np.asarray(im.convert("RGB"), dtype=np.int16)
    except (OSError, ValueError) as e:
        raise UnreadableImage(f"cannot read mask: {e}", path) from e
    if rgb.size == 0:
        raise EmptyImage("mask has zero pixels", path)
    grid = np.full(rgb.shape[:2], UNMAPPED, dtype=np.int32)
    for idx, entry in enumerate(mapping.entries):
        diff = np.abs(rgb - np.asarray(entry.color, dtype=np.int16)).max(axis=2)
        hit = (diff <= tolerance) & (grid == UNMAPPED)
        grid[hit] = idx
    return grid


# ---- validation ----

def _image_readable(path: str) -> bool:
    try:
        with Image.open(path) as im:
            im.verify()
        with Image.open(path) as im:
            im.load()
        return True
    except (OSError, ValueError, SyntaxError):
        return False


def validate_sample(sample: AnnotatedSample) -> ValidationVerdict:
    """Keep or drop a sample; never raises and never writes."""
    if not _image_readable(sample.image_path):
        return ValidationVerdict.drop(CORRUPTED_IMAGE)
    if sample.width <= 0 or sample.height <= 0:
        return ValidationVerdict.drop(INVALID_DIMENSIONS)
    if sample.task == "detection":
        if not sample.detections:
            return ValidationVerdict.drop(MISSING_ANNOTATION)
    elif sample.task == "segmentation":
        if not sample.mask_path or not Path(sample.mask_path).is_file():
            return ValidationVerdict.drop(MISSING_ANNOTATION)
        if not _image_readable(sample.mask_path):
            return ValidationVerdict.drop(CORRUPTED_ANNOTATION)
    elif not (sample.optical_caption or "").strip():
        return ValidationVerdict.drop(MISSING_ANNOTATION)
    return ValidationVerdict.ok()


# ---- canonical JSONL ----

def sample_to_record(sample: AnnotatedSample) -> Dict[str, Any]:
    rec: Dict[str, Any] = {
        "id": sample.id,
        "image": sample.image_path,
        "width": sample.width,
        "height": sample.height,
        "source": sample.source_dataset,
        "task": sample.task,
    }
    if sample.detections is not None:
        rec["detections"] = [{"class": d.class_label, "box": d.box.as_list()} for d in sample.detections]
    if sample.mask_path is not None:
        rec["mask"] = sample.mask_path
    if sample.optical_caption is not None:
        rec["optical_caption"] = sample.optical_caption
    return rec


def sample_from_record(rec: Dict[str, Any]) -> AnnotatedSample:
    detections = None
    if rec.get("detections") is not None:
        detections = []
        for d in rec["detections"]:
            x_min, y_min, x_max, y_max = d["box"]
            box = BoundingBox(x_min=x_min, y_min=y_min, x_max=x_max, y_max=y_max)
            detections.append(DetectionObject(class_label=d["class"], box=box))
    return AnnotatedSample(
        id=rec["id"],
        image_path=rec["image"],
        width=rec["width"],
        height=rec["height"],
        source_dataset=rec["source"],
        task=rec["task"],
        detections=detections,
        mask_path=rec.get("mask"),
        optical_caption=rec.get("optical_caption"),
    )


def write_samples(samples: Iterable[AnnotatedSample], path: str | Path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for s in samples:
            f.write(json.dumps(sample_to_record(s), ensure_ascii=False) + "\n")
            n += 1
    return n


def read_samples(path: str | Path) -> List[AnnotatedSample]:
    path = Path(path)
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line_num, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                out.append(sample_from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise MalformedDocument(f"line {line_num}: {e}", path) from e
    return out
