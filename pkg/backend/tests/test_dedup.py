from __future__ import annotations

import numpy as np
import pytest
from PIL import Image

from app.schemas.models import DedupPolicy
from app.services import dedup
from app.services.dedup import PHash
from app.services.errors import HashingError, TooSmall, UnreadableImage
from conftest import image_samples, noise, write_image


def smooth(seed: int, size: int = 64) -> np.ndarray:
    """Low-frequency pattern with headroom for a +5 offset."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:size, 0:size] / size
    a, b, c = rng.uniform(1, 4, size=3)
    return (100 + 60 * np.sin(a * x * np.pi) * np.cos(b * y * np.pi + c)).astype(np.uint8)


def test_same_file_same_hash(tmp_path):
    p = write_image(tmp_path / "a.png", noise(1))
    assert dedup.phash_file(p) == dedup.phash_file(p)


def test_constant_image_hashes_to_zero():
    assert dedup.phash64(np.full((64, 64), 77, dtype=np.uint8)).bits == 0


def test_constant_offset_keeps_hash():
    arr = smooth(0)
    assert dedup.hamming(dedup.phash64(arr), dedup.phash64(arr + 5)) == 0


def test_non_multiple_sizes_hash():
    img = Image.fromarray(noise(2, 50))
    assert 0 <= dedup.phash64(img).bits < 2 ** 64


def test_too_small(tmp_path):
    p = write_image(tmp_path / "tiny.png", noise(3, 4))
    with pytest.raises(TooSmall) as exc:
        dedup.phash_file(p)
    assert str(p) in str(exc.value)


def test_unreadable(tmp_path):
    p = tmp_path / "x.png"
    p.write_bytes(b"garbage")
    with pytest.raises(UnreadableImage):
        dedup.phash_file(p)


def test_hex_roundtrip_and_hamming_extremes():
    h = PHash(0xDEADBEEF00FF00FF)
    assert PHash.from_hex(h.hex()) == h
    assert dedup.hamming(h, h) == 0
    assert dedup.hamming(PHash(0), PHash(2 ** 64 - 1)) == 64


def test_hamming_matches_bit_loop():
    rng = np.random.default_rng(9)
    for _ in range(10_000):
        a, b = (int(v) for v in rng.integers(0, 2 ** 63, size=2, dtype=np.int64))
        expected = sum(((a >> i) & 1) != ((b >> i) & 1) for i in range(64))
        assert dedup.hamming(PHash(a), PHash(b)) == expected


def _oracle(hashes, sources, policy):
    kept = []
    for i, h in enumerate(hashes):
        dup = False
        for j in kept:
            thr = policy.per_source_max_distance.get(sources[i], policy.global_max_distance) \
                if sources[i] == sources[j] else policy.global_max_distance
            if dedup.hamming(h, hashes[j]) <= thr:
                dup = True
                break
        if not dup:
            kept.append(i)
    return kept


def _flip(h: PHash, bits) -> PHash:
    out = h.bits
    for b in bits:
        out ^= 1 << int(b)
    return PHash(out)


def _fixture(rng, n_base=170, n_exact=20, n_near=10, max_flip=3):
    base = [PHash(int(v)) for v in rng.integers(0, 2 ** 63, size=n_base, dtype=np.int64)]
    hashes = list(base)
    for _ in range(n_exact):
        hashes.append(base[int(rng.integers(n_base))])
    for _ in range(n_near):
        src = base[int(rng.integers(n_base))]
        hashes.append(_flip(src, rng.choice(64, size=int(rng.integers(1, max_flip + 1)), replace=False)))
    order = rng.permutation(len(hashes))
    return [hashes[i] for i in order]


@pytest.mark.parametrize("index", ["brute", "bands"])
def test_scan_agrees_with_all_pairs_oracle(index):
    rng = np.random.default_rng(11)
    hashes = _fixture(rng)
    sources = ["a" if i % 2 else "b" for i in range(len(hashes))]
    policy = DedupPolicy(global_max_distance=3)
    kept, drops = dedup.scan_hashes(hashes, sources, policy, index=index)
    assert kept == _oracle(hashes, sources, policy)
    assert len(kept) + len(drops) == len(hashes)
    for d in drops:
        assert d.kept_index < d.index
        assert d.kept_index in kept


def test_per_source_threshold_applies_within_source():
    h = PHash(0)
    near = PHash(0b11111)
    policy = DedupPolicy(global_max_distance=0, per_source_max_distance={"a": 5})
    kept, drops = dedup.scan_hashes([h, near], ["a", "a"], policy)
    assert kept == [0]
    assert drops[0].rule == "source:a"
    kept, _ = dedup.scan_hashes([h, near], ["a", "b"], policy)
    assert kept == [0, 1]


def test_bands_refuse_wide_thresholds():
    with pytest.raises(ValueError):
        dedup.scan_hashes([PHash(0)], ["a"], DedupPolicy(global_max_distance=8), index="bands")


def test_dedup_corpus_keeps_first_of_pixel_copies(tmp_path):
    a, b = noise(20), noise(21)
    samples = image_samples(tmp_path, [("s1", "x", a), ("s2", "x", b), ("s3", "y", a.copy())])
    kept, ledger = dedup.dedup_corpus(samples, DedupPolicy())
    assert [s.id for s in kept] == ["s1", "s2"]
    assert [(e.dropped_id, e.kept_id, e.distance, e.rule) for e in ledger] == [("s3", "s1", 0, "global")]

    path = tmp_path / "ledger.jsonl"
    dedup.write_ledger(ledger, path)
    assert dedup.read_ledger(path) == ledger


def test_dedup_corpus_wraps_hash_failures(tmp_path):
    samples = image_samples(tmp_path, [("s1", "x", noise(1))])
    samples[0] = samples[0].model_copy(update={"image_path": str(tmp_path / "missing.png")})
    with pytest.raises(HashingError) as exc:
        dedup.dedup_corpus(samples, DedupPolicy())
    assert exc.value.sample_id == "s1"


def test_dedup_corpus_empty():
    assert dedup.dedup_corpus([], DedupPolicy()) == ([], [])
