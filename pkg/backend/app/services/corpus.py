from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .. import __version__
from ..schemas.models import CaptionRecord, CorpusStats
from .errors import DegenerateSplit, DuplicateId, EmptyManifest, MalformedDocument
from .metrics import tokenize


logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
HEADER_NAME = "manifest.header.json"
BUCKET_WIDTH = 5
TOP_WORDS = 20

# Fixed 50-entry English function-word list.
STOPWORDS = frozenset({
    "a", "an", "the", "and", "or", "but", "of", "in", "on", "at",
    "to", "for", "with", "by", "from", "as", "into", "onto", "over", "under",
    "is", "are", "was", "were", "be", "been", "being", "it", "its", "this",
    "that", "these", "those", "there", "here", "which", "who", "while", "than", "then",
    "some", "such", "no", "not", "can", "has", "have", "had", "their", "also",
})


def record_to_line(rec: CaptionRecord) -> str:
    return json.dumps(rec.to_json_dict(), ensure_ascii=False, sort_keys=False)


def records_sha256(records: Sequence[CaptionRecord]) -> str:
    h = hashlib.sha256()
    for rec in records:
        h.update(record_to_line(rec).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def created_timestamp() -> str:
    """UTC ISO timestamp; SOURCE_DATE_EPOCH pins it for reproducible headers."""
    epoch = os.getenv("SOURCE_DATE_EPOCH")
    ts = int(epoch) if epoch and epoch.strip().isdigit() else int(time.time())
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class CorpusManifest:
    records: List[CaptionRecord]
    header: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)


def _tally(records: Sequence[CaptionRecord]) -> Tuple[Dict[str, int], Dict[str, int]]:
    per_source = Counter(r.source_dataset for r in records)
    per_method = Counter(r.method for r in records)
    return dict(sorted(per_source.items())), dict(sorted(per_method.items()))


def _read_header(path: Path) -> Optional[Dict[str, Any]]:
    if not path.exists():
        return None
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise MalformedDocument(f"invalid header JSON: {e}", path) from e


def assemble(
    records: Iterable[CaptionRecord],
    out_dir: str | Path,
    config_sha256: str = "",
) -> CorpusManifest:
    """Write manifest.jsonl plus its header sidecar, preserving append order.

    Re-assembling identical records keeps the version; any change rewrites the
    manifest under version + 1.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seen: set[str] = set()
    kept: List[CaptionRecord] = []
    for rec in records:
        if rec.id in seen:
            raise DuplicateId(rec.id)
        seen.add(rec.id)
        kept.append(rec)

    digest = records_sha256(kept)
    previous = _read_header(out_dir / HEADER_NAME)
    version = 1
    if previous:
        same = previous.get("records_sha256") == digest and previous.get("config_sha256") == config_sha256
        version = int(previous.get("version", 0)) + (0 if same else 1)

    per_source, per_method = _tally(kept)
    header = {
        "total": len(kept),
        "per_source": per_source,
        "per_method": per_method,
        "created": created_timestamp(),
        "pipeline_version": __version__,
        "config_sha256": config_sha256,
        "version": version,
        "records_sha256": digest,
    }
    with open(out_dir / MANIFEST_NAME, "w", encoding="utf-8") as f:
        for rec in kept:
            f.write(record_to_line(rec) + "\n")
    with open(out_dir / HEADER_NAME, "w", encoding="utf-8") as f:
        json.dump(header, f, indent=2, ensure_ascii=False)
        f.write("\n")
    logger.info("assemble records=%d version=%d", len(kept), version)
    return CorpusManifest(records=kept, header=header)


def read_records(path: str | Path) -> List[CaptionRecord]:
    path = Path(path)
    out: List[CaptionRecord] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                out.append(CaptionRecord(**json.loads(line)))
            except (json.JSONDecodeError, ValueError, TypeError) as e:
                raise MalformedDocument(f"line {lineno}: {e}", path) from e
    return out


def write_records(records: Iterable[CaptionRecord], path: str | Path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(record_to_line(rec) + "\n")
            n += 1
    return n


def read_manifest(out_dir: str | Path) -> CorpusManifest:
    out_dir = Path(out_dir)
    records = read_records(out_dir / MANIFEST_NAME)
    return CorpusManifest(records=records, header=_read_header(out_dir / HEADER_NAME) or {})


# ---- stats ----

@dataclass
class _Partial:
    """Associative partial aggregate over a chunk of records."""

    lengths: Counter = field(default_factory=Counter)
    words: Counter = field(default_factory=Counter)
    sources: Counter = field(default_factory=Counter)
    methods: Counter = field(default_factory=Counter)
    total_words: int = 0
    n: int = 0

    def merge(self, other: "_Partial") -> "_Partial":
        return _Partial(
            lengths=self.lengths + other.lengths,
            words=self.words + other.words,
            sources=self.sources + other.sources,
            methods=self.methods + other.methods,
            total_words=self.total_words + other.total_words,
            n=self.n + other.n,
        )


def _bucket(length: int) -> str:
    lo = (length // BUCKET_WIDTH) * BUCKET_WIDTH
    return f"{lo}-{lo + BUCKET_WIDTH - 1}"


def _partial(records: Sequence[CaptionRecord]) -> _Partial:
    p = _Partial()
    for rec in records:
        tokens = tokenize(rec.caption)
        p.lengths[_bucket(len(tokens))] += 1
        p.words.update(t for t in tokens if t not in STOPWORDS)
        p.sources[rec.source_dataset] += 1
        p.methods[rec.method] += 1
        p.total_words += len(tokens)
        p.n += 1
    return p


def compute_stats(manifest: CorpusManifest | Sequence[CaptionRecord], chunk_size: int = 4096, top_n: int = TOP_WORDS) -> CorpusStats:
    records = manifest.records if isinstance(manifest, CorpusManifest) else list(manifest)
    if not records:
        raise EmptyManifest("cannot compute stats over an empty manifest")
    total = _Partial()
    for start in range(0, len(records), chunk_size):
        total = total.merge(_partial(records[start:start + chunk_size]))
    histogram = dict(sorted(total.lengths.items(), key=lambda kv: int(kv[0].split("-")[0])))
    top = sorted(total.words.items(), key=lambda kv: (-kv[1], kv[0]))[:top_n]
    return CorpusStats(
        total_records=total.n,
        mean_caption_length_words=total.total_words / total.n,
        length_histogram=histogram,
        top_words=top,
        per_source_counts=dict(sorted(total.sources.items())),
        per_method_counts=dict(sorted(total.methods.items())),
    )


def stats_table(stats: CorpusStats) -> pd.DataFrame:
    """Length distribution as a table: bucket, count, share (%)."""
    df = pd.DataFrame(list(stats.length_histogram.items()), columns=["bucket", "count"])
    df["share"] = (df["count"] / max(1, stats.total_records) * 100.0).round(1)
    return df


def stats_report(stats: CorpusStats) -> Dict[str, Any]:
    out = stats.model_dump()
    out["mean_caption_length_words"] = round(stats.mean_caption_length_words, 1)
    out["top_words"] = [[w, c] for w, c in stats.top_words]
    return out


# ---- split ----

def _allocate(sizes: Dict[str, int], train_ratio: float) -> Dict[str, int]:
    """Largest-remainder allocation so per-source train counts sum to round(N * ratio)."""
    total = sum(sizes.values())
    target = int(round(total * train_ratio))
    exact = {k: v * train_ratio for k, v in sizes.items()}
    alloc = {k: int(np.floor(x)) for k, x in exact.items()}
    remaining = target - sum(alloc.values())
    order = sorted(sizes, key=lambda k: (-(exact[k] - alloc[k]), k))
    for k in order[:max(0, remaining)]:
        alloc[k] += 1
    return alloc


def split(
    manifest: CorpusManifest | Sequence[CaptionRecord],
    ratios: Tuple[float, float] = (0.8, 0.2),
    seed: int = 0,
) -> Tuple[List[CaptionRecord], List[CaptionRecord]]:
    """Seeded shuffle stratified by source_dataset; each side keeps manifest order."""
    records = manifest.records if isinstance(manifest, CorpusManifest) else list(manifest)
    train_ratio, test_ratio = ratios
    if train_ratio <= 0 or test_ratio <= 0 or abs(train_ratio + test_ratio - 1.0) > 1e-9:
        raise ValueError(f"ratios must be positive and sum to 1.0, got {ratios}")
    df = pd.DataFrame({"pos": range(len(records)), "source": [r.source_dataset for r in records]})
    sizes = df.groupby("source").size().to_dict()
    alloc = _allocate(sizes, train_ratio)
    rng = np.random.default_rng(seed)
    train_pos: List[int] = []
    for source in sorted(sizes):
        positions = df.loc[df["source"] == source, "pos"].to_numpy()
        chosen = rng.permutation(positions)[:alloc[source]]
        train_pos.extend(int(p) for p in chosen)
    in_train = set(train_pos)
    train = [r for i, r in enumerate(records) if i in in_train]
    test = [r for i, r in enumerate(records) if i not in in_train]
    if not train or not test:
        raise DegenerateSplit(f"split produced train={len(train)} test={len(test)}")
    logger.info("split train=%d test=%d seed=%d", len(train), len(test), seed)
    return train, test


def write_split(train: Sequence[CaptionRecord], test: Sequence[CaptionRecord], out_dir: str | Path) -> Dict[str, str]:
    split_dir = Path(out_dir) / "splits"
    paths = {"train": split_dir / "train.jsonl", "test": split_dir / "test.jsonl"}
    write_records(train, paths["train"])
    write_records(test, paths["test"])
    return {k: str(v) for k, v in paths.items()}
