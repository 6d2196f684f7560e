from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.fft import dct

from ..schemas.models import AnnotatedSample, DedupPolicy, DropEntry
from .errors import HashingError, TooSmall, UnreadableImage


logger = logging.getLogger(__name__)

HASH_SIDE = 32
BLOCK = 8
BAND_BITS = 16
BAND_COUNT = 64 // BAND_BITS
# Band index is exact only when every threshold is below the band count (pigeonhole).
BAND_MAX_DISTANCE = BAND_COUNT - 1
BAND_MIN_SAMPLES = 10_000


@dataclass(frozen=True)
class PHash:
    bits: int

    def hex(self) -> str:
        return f"{self.bits:016x}"

    @classmethod
    def from_hex(cls, text: str) -> "PHash":
        return cls(int(text, 16))


def _area_average(gray: np.ndarray) -> np.ndarray:
    h, w = gray.shape
    if h % HASH_SIDE == 0 and w % HASH_SIDE == 0:
        return gray.reshape(HASH_SIDE, h // HASH_SIDE, HASH_SIDE, w // HASH_SIDE).mean(axis=(1, 3))
    im = Image.fromarray(gray.astype(np.float32))
    return np.asarray(im.resize((HASH_SIDE, HASH_SIDE), Image.BOX), dtype=np.float64)


def phash64(image: Image.Image | np.ndarray) -> PHash:
    """64-bit DCT perceptual hash.

    Grayscale, area-average to 32x32, 2-D DCT-II, top-left 8x8 block; each AC coefficient
    is compared against the median of the 63 AC coefficients. The DC bit stays 0 and bits
    are packed row-major, most significant first.
    """
    if isinstance(image, Image.Image):
        gray = np.asarray(image.convert("L"), dtype=np.float64)
    else:
        gray = np.asarray(image, dtype=np.float64)
        if gray.ndim == 3:
            gray = gray.mean(axis=2)
    if gray.ndim != 2 or min(gray.shape) < BLOCK:
        raise TooSmall(f"image {gray.shape} smaller than {BLOCK}x{BLOCK}")
    small = _area_average(gray)
    small = small - small.mean()
    coeffs = dct(dct(small, type=2, norm="ortho", axis=0), type=2, norm="ortho", axis=1)
    block = np.round(coeffs[:BLOCK, :BLOCK], 6).ravel()
    median = np.median(block[1:])
    flags = block > median
    flags[0] = False
    bits = 0
    for flag in flags:
        bits = (bits << 1) | int(flag)
    return PHash(bits)


def phash_file(path: str | Path) -> PHash:
    try:
        with Image.open(path) as im:
            im.load()
            return phash64(im)
    except TooSmall as e:
        raise TooSmall(str(e), path) from e
    except (OSError, UnidentifiedImageError, ValueError) as e:
        raise UnreadableImage(f"cannot read image: {e}", path) from e


def hamming(a: PHash, b: PHash) -> int:
    return bin(a.bits ^ b.bits).count("1")


def _bands(h: PHash) -> List[int]:
    mask = (1 << BAND_BITS) - 1
    return [(h.bits >> (BAND_BITS * k)) & mask for k in range(BAND_COUNT)]


def _threshold(policy: DedupPolicy, src_a: str, src_b: str) -> Tuple[int, str]:
    if src_a == src_b and src_a in policy.per_source_max_distance:
        return policy.per_source_max_distance[src_a], f"source:{src_a}"
    return policy.global_max_distance, "global"


def _max_threshold(policy: DedupPolicy) -> int:
    return max([policy.global_max_distance, *policy.per_source_max_distance.values()])


@dataclass(frozen=True)
class ScanDrop:
    index: int
    kept_index: int
    distance: int
    rule: str


def scan_hashes(
    hashes: Sequence[PHash],
    sources: Sequence[str],
    policy: DedupPolicy,
    index: str = "auto",
) -> Tuple[List[int], List[ScanDrop]]:
    """Greedy first-kept scan in input order. Returns kept positions and one drop per discarded position."""
    if len(hashes) != len(sources):
        raise ValueError("hashes and sources must align")
    if index not in ("auto", "brute", "bands"):
        raise ValueError(f"unknown index '{index}'")
    max_thr = _max_threshold(policy)
    if index == "bands" and max_thr > BAND_MAX_DISTANCE:
        raise ValueError(f"band index needs every threshold <= {BAND_MAX_DISTANCE}")
    use_bands = index == "bands" or (index == "auto" and len(hashes) >= BAND_MIN_SAMPLES and max_thr <= BAND_MAX_DISTANCE)

    kept: List[int] = []
    drops: List[ScanDrop] = []
    buckets: List[Dict[int, List[int]]] = [{} for _ in range(BAND_COUNT)]

    for i, h in enumerate(hashes):
        if use_bands:
            found = set()
            for k, value in enumerate(_bands(h)):
                found.update(buckets[k].get(value, ()))
            candidates: Iterable[int] = sorted(found)
        else:
            candidates = kept
        hit: Optional[ScanDrop] = None
        for j in candidates:
            thr, rule = _threshold(policy, sources[i], sources[j])
            d = hamming(h, hashes[j])
            if d <= thr:
                hit = ScanDrop(index=i, kept_index=j, distance=d, rule=rule)
                break
        if hit is not None:
            drops.append(hit)
            continue
        kept.append(i)
        if use_bands:
            for k, value in enumerate(_bands(h)):
                buckets[k].setdefault(value, []).append(i)
    return kept, drops


def hash_samples(samples: Sequence[AnnotatedSample], workers: Optional[int] = None) -> List[PHash]:
    def one(sample: AnnotatedSample) -> PHash:
        try:
            return phash_file(sample.image_path)
        except Exception as e:
            raise HashingError(sample.id, e) from e

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, samples))


def dedup_corpus(
    samples: Sequence[AnnotatedSample],
    policy: DedupPolicy,
    workers: Optional[int] = None,
    index: str = "auto",
) -> Tuple[List[AnnotatedSample], List[DropEntry]]:
    if not samples:
        return [], []
    hashes = hash_samples(samples, workers)
    kept_idx, drops = scan_hashes(hashes, [s.source_dataset for s in samples], policy, index)
    ledger = [
        DropEntry(dropped_id=samples[d.index].id, kept_id=samples[d.kept_index].id, distance=d.distance, rule=d.rule)
        for d in drops
    ]
    logger.info("dedup samples=%d kept=%d dropped=%d", len(samples), len(kept_idx), len(ledger))
    return [samples[i] for i in kept_idx], ledger


def write_ledger(entries: Iterable[DropEntry], path: str | Path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        for e in entries:
            f.write(json.dumps(e.model_dump(), ensure_ascii=False) + "\n")
            n += 1
    return n


def read_ledger(path: str | Path) -> List[DropEntry]:
    with open(path, "r", encoding="utf-8") as f:
        return [DropEntry(**json.loads(line)) for line in f if line.strip()]
