from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, List, Tuple

import numpy as np
import pytest
from PIL import Image

from app.schemas.models import AnnotatedSample, BoundingBox, CaptionRecord, DetectionObject
from app.services.mini_dataset import make_mini_dataset


def write_image(path: Path, arr: np.ndarray) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)
    return path


def noise(seed: int, size: int = 64) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, 256, size=(size, size), dtype=np.uint8)


def obj(label: str, x0: int, y0: int, x1: int, y1: int) -> DetectionObject:
    return DetectionObject(class_label=label, box=BoundingBox(x_min=x0, y_min=y0, x_max=x1, y_max=y1))


def write_coco(path: Path, images: List[dict], annotations: List[dict], categories: List[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"images": images, "annotations": annotations, "categories": categories}), encoding="utf-8")
    return path


def record(rid: str, caption: str, source: str = "hrsid", method: str = "a2c_spatial") -> CaptionRecord:
    return CaptionRecord(id=rid, image=f"/img/{rid}.png", caption=caption, method=method, source=source)


def image_samples(tmp_path: Path, arrays: Iterable[Tuple[str, str, np.ndarray]]) -> List[AnnotatedSample]:
    out = []
    for sid, source, arr in arrays:
        p = write_image(tmp_path / source / f"{sid}.png", arr)
        out.append(AnnotatedSample(id=sid, image_path=str(p), width=arr.shape[1], height=arr.shape[0],
                                   source_dataset=source, task="paired", optical_caption="x"))
    return out


@pytest.fixture(scope="module")
def mini_config(tmp_path_factory) -> Path:
    return make_mini_dataset(tmp_path_factory.mktemp("mini"))


@pytest.fixture(autouse=True)
def _pinned_env(monkeypatch):
    for name in ("SAR_NARRATOR_MODE", "SAR_NARRATOR_OUT", "SAR_NARRATOR_SEED", "SAR_NARRATOR_BASE_URL",
                 "SAR_NARRATOR_MODEL", "SAR_NARRATOR_API_KEY", "SAR_NARRATOR_CORS_ORIGINS"):
        monkeypatch.delenv(name, raising=False)
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
