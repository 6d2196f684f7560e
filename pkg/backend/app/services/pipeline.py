from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Set, Tuple

from ..schemas.models import AnnotatedSample, CaptionRecord, CategoryMapping, DropEntry, ValidationVerdict
from . import captioner, corpus, dedup, parser
from .config import PipelineConfig, SourceConfig, config_sha256, require_live_credentials
from .errors import ConfigError, EmptyCompletion, ImageError, ParseError, SarNarratorError, StageError
from .llm_client import Cassette, ChatEndpoint, http_transport
from .rewrite import fuse_captions, make_job, rewrite_caption, rule_rewrite, RewriteOutcome
from .templates import load_icl_store


logger = logging.getLogger(__name__)

EXIT_CODES = {
    "ok": 0,
    "config": 2,
    "ingest": 10,
    "caption": 11,
    "rewrite": 12,
    "dedup": 13,
    "assemble": 14,
    "stats": 15,
    "split": 16,
    "eval": 17,
}

SAMPLES_FILE = "samples.jsonl"
VALIDATION_FILE = "validation_report.json"
RAW_CAPTIONS_FILE = "captions_raw.jsonl"
CAPTIONS_FILE = "captions.jsonl"
LEDGER_FILE = "dedup_ledger.jsonl"
STATS_FILE = "stats.json"
STAGE_REPORT_FILE = "stage_report.json"


def _write_json(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, ensure_ascii=False)
        f.write("\n")


class StageReport:
    """Per-stage outcome counts, merged into stage_report.json across invocations."""

    def __init__(self, out_dir: str | Path):
        self.path = Path(out_dir) / STAGE_REPORT_FILE
        self.stages: Dict[str, Dict[str, Any]] = {}
        if self.path.exists():
            try:
                self.stages = json.loads(self.path.read_text(encoding="utf-8")).get("stages", {})
            except json.JSONDecodeError:
                self.stages = {}

    def record(self, stage: str, **counts: Any) -> None:
        self.stages[stage] = counts
        _write_json(self.path, {"stages": self.stages})


@contextmanager
def stage(name: str) -> Iterator[None]:
    """Wrap a stage so failures surface as StageError with the stage's exit code."""
    try:
        yield
    except (ConfigError, StageError):
        raise
    except (SarNarratorError, OSError, ValueError) as e:
        logger.error("stage=%s failed error=%s", name, e)
        raise StageError(name, EXIT_CODES[name], e) from e


def out_path(cfg: PipelineConfig, name: str) -> Path:
    return Path(cfg.out) / name


# ---- ingest ----

def _parse_source(src: SourceConfig) -> List[AnnotatedSample]:
    samples: List[AnnotatedSample] = []
    for p in src.paths:
        if src.adapter == "coco":
            samples.extend(parser.parse_detection_coco(p, image_root=src.image_root, source=src.name))
        elif src.adapter == "voc":
            samples.extend(parser.parse_voc_dir(p, image_root=src.image_root, source=src.name, image_ext=src.image_ext))
        elif src.adapter == "mask":
            samples.extend(parser.parse_mask_dir(p, image_root=src.image_root or p, source=src.name, image_ext=src.image_ext))
        else:
            samples.extend(parser.parse_paired_tsv(p, image_root=src.image_root, source=src.name, image_ext=src.image_ext))
    return samples


def run_ingest(cfg: PipelineConfig, report: Optional[StageReport] = None) -> Tuple[List[AnnotatedSample], Dict[str, Any]]:
    if not cfg.sources:
        raise ConfigError("no sources configured")
    with stage("ingest"):
        kept: List[AnnotatedSample] = []
        per_source: Dict[str, Dict[str, Any]] = {}
        drops: List[Dict[str, str]] = []
        seen: Set[str] = set()
        for src in cfg.sources:
            try:
                parsed = _parse_source(src)
            except (ParseError, ImageError, OSError) as e:
                logger.error("ingest source=%s aborted error=%s", src.name, e)
                per_source[src.name] = {"parsed": 0, "kept": 0, "dropped": 0, "error": str(e)}
                continue
            with ThreadPoolExecutor() as pool:
                verdicts = list(pool.map(parser.validate_sample, parsed))
            n_kept = 0
            for sample, verdict in zip(parsed, verdicts):
                if verdict.keep and sample.id in seen:
                    # first kept sample owns the id
                    verdict = ValidationVerdict.drop(parser.DUPLICATE_ID)
                if verdict.keep:
                    seen.add(sample.id)
                    kept.append(sample)
                    n_kept += 1
                else:
                    drops.append({"id": sample.id, "source": src.name, "reason": verdict.reason})
            per_source[src.name] = {"parsed": len(parsed), "kept": n_kept, "dropped": len(parsed) - n_kept, "error": None}
            logger.info("ingest source=%s parsed=%d kept=%d", src.name, len(parsed), n_kept)

        validation = {
            "total_parsed": sum(s["parsed"] for s in per_source.values()),
            "total_kept": len(kept),
            "sources": per_source,
            "drops": drops,
        }
        parser.write_samples(kept, out_path(cfg, SAMPLES_FILE))
        _write_json(out_path(cfg, VALIDATION_FILE), validation)
    if report:
        report.record("ingest", parsed=validation["total_parsed"], kept=len(kept), dropped=len(drops),
                      failed_sources=sorted(k for k, v in per_source.items() if v["error"]))
    return kept, validation


# ---- caption ----

def _mappings(cfg: PipelineConfig) -> Dict[str, CategoryMapping]:
    return {s.name: s.category_mapping() for s in cfg.sources if s.task == "segmentation"}


def caption_sample(sample: AnnotatedSample, cfg: PipelineConfig, mappings: Dict[str, CategoryMapping]) -> CaptionRecord:
    if sample.task == "detection":
        if cfg.caption.spatial_enabled:
            text = captioner.a2c_caption_spatial(sample.detections or [], sample.width, sample.height)
            method = "a2c_spatial"
        else:
            text = captioner.a2c_caption(sample.detections or [])
            method = "a2c"
    elif sample.task == "segmentation":
        mapping = mappings.get(sample.source_dataset)
        if mapping is None:
            raise ConfigError(f"no category mapping for source {sample.source_dataset}")
        grid = parser.load_mask(sample.mask_path, mapping, cfg.caption.mask_tolerance)
        text = captioner.sa2c_caption(grid, mapping, cfg.caption.threshold_percent)
        method = "sa2c"
    else:
        # rewritten in the rewrite stage
        text = sample.optical_caption or ""
        method = "paired_rewritten"
    return CaptionRecord(id=sample.id, image=sample.image_path, caption=text, method=method, source=sample.source_dataset)


def run_caption(cfg: PipelineConfig, samples: Sequence[AnnotatedSample], report: Optional[StageReport] = None) -> List[CaptionRecord]:
    mappings = _mappings(cfg)
    with stage("caption"):
        with ThreadPoolExecutor() as pool:
            records = list(pool.map(lambda s: caption_sample(s, cfg, mappings), samples))
        corpus.write_records(records, out_path(cfg, RAW_CAPTIONS_FILE))
    counts: Dict[str, int] = {}
    for r in records:
        counts[r.method] = counts.get(r.method, 0) + 1
    logger.info("caption records=%d methods=%s", len(records), counts)
    if report:
        report.record("caption", records=len(records), per_method=dict(sorted(counts.items())))
    return records


# ---- rewrite ----

def optical_captions(cfg: PipelineConfig) -> Dict[str, str]:
    """Caption B for fusion, keyed by sample id."""
    out: Dict[str, str] = {}
    for src in cfg.sources:
        if src.task != "segmentation" or not src.optical_captions:
            continue
        for key, caption in parser.read_caption_tsv(src.optical_captions).items():
            if caption:
                out[parser.sample_id(src.name, key)] = caption
    return out


def build_endpoint(cfg: PipelineConfig) -> ChatEndpoint:
    rw = cfg.rewrite
    require_live_credentials(cfg)
    transport = http_transport(rw.base_url) if rw.mode == "live" else None
    return ChatEndpoint(
        model=rw.model,
        mode=rw.mode,
        cassette=Cassette(rw.cassette),
        transport=transport,
        retries=rw.retries,
        backoff_base=rw.backoff_base,
        max_concurrency=rw.max_concurrency,
        rate_per_second=rw.rate_per_second,
        temperature=rw.temperature,
    )


def run_rewrite(
    cfg: PipelineConfig,
    records: Sequence[CaptionRecord],
    endpoint: Optional[ChatEndpoint] = None,
    report: Optional[StageReport] = None,
) -> List[CaptionRecord]:
    rw = cfg.rewrite
    lexicons = rw.lexicons.merged()
    with stage("rewrite"):
        captions_b = optical_captions(cfg)
        needs_store = rw.n_examples > 0 and any(r.method == "paired_rewritten" for r in records)
        store = load_icl_store(rw.icl_store) if needs_store else []
        endpoint = endpoint or build_endpoint(cfg)

        def one(rec: CaptionRecord) -> Tuple[CaptionRecord, Optional[RewriteOutcome]]:
            if rec.method == "paired_rewritten":
                job = make_job(rec.id, [rec.caption], store, rw.n_examples, cfg.seed)
                try:
                    outcome = rewrite_caption(endpoint, job, rw.fallback_enabled, lexicons=lexicons)
                except EmptyCompletion:
                    if not rw.fallback_enabled:
                        raise
                    outcome = RewriteOutcome(rule_rewrite(rec.caption, lexicons), fallback_used=True)
                method = "paired_rewritten"
            elif rec.method == "sa2c" and rec.id in captions_b:
                try:
                    outcome = fuse_captions(endpoint, rec.caption, captions_b[rec.id], rw.fallback_enabled, lexicons=lexicons)
                except EmptyCompletion:
                    if not rw.fallback_enabled:
                        raise
                    fallback = f"{rec.caption} {rule_rewrite(captions_b[rec.id], lexicons)}".strip()
                    outcome = RewriteOutcome(fallback, fallback_used=True)
                method = "sa2c_fused"
            else:
                return rec, None
            new = rec.model_copy(update={
                "caption": outcome.caption or rec.caption,
                "raw_caption": rec.caption,
                "method": method,
                "fallback_used": outcome.fallback_used,
            })
            return new, outcome

        with ThreadPoolExecutor(max_workers=rw.max_concurrency) as pool:
            results = list(pool.map(one, records))
        out = [r for r, _ in results]
        corpus.write_records(out, out_path(cfg, CAPTIONS_FILE))

    outcomes = [o for _, o in results if o is not None]
    counts = {
        "records": len(out),
        "rewritten": sum(1 for r in out if r.method == "paired_rewritten"),
        "fused": sum(1 for r in out if r.method == "sa2c_fused"),
        "passthrough": len(out) - len(outcomes),
        "fallback": sum(1 for o in outcomes if o.fallback_used),
        "attempts": sum(o.attempts for o in outcomes),
    }
    logger.info("rewrite %s", " ".join(f"{k}={v}" for k, v in counts.items()))
    if report:
        report.record("rewrite", **counts)
    return out


# ---- dedup / assemble / stats / split ----

def run_dedup(
    cfg: PipelineConfig,
    samples: Sequence[AnnotatedSample],
    records: Sequence[CaptionRecord],
    report: Optional[StageReport] = None,
) -> Tuple[List[CaptionRecord], List[DropEntry]]:
    with stage("dedup"):
        captioned = {r.id for r in records}
        pool = [s for s in samples if s.id in captioned]
        kept, ledger = dedup.dedup_corpus(pool, cfg.dedup.policy(), workers=cfg.dedup.workers, index=cfg.dedup.index)
        dedup.write_ledger(ledger, out_path(cfg, LEDGER_FILE))
    kept_records = drop_ledgered(records, ledger)
    if report:
        report.record("dedup", hashed=len(pool), kept=len(kept), dropped=len(ledger))
    return kept_records, ledger


def drop_ledgered(records: Sequence[CaptionRecord], ledger: Sequence[DropEntry]) -> List[CaptionRecord]:
    dropped = {e.dropped_id for e in ledger}
    return [r for r in records if r.id not in dropped]


def run_assemble(cfg: PipelineConfig, records: Sequence[CaptionRecord], report: Optional[StageReport] = None) -> corpus.CorpusManifest:
    with stage("assemble"):
        manifest = corpus.assemble(records, cfg.out, config_sha256=config_sha256(cfg))
    if report:
        report.record("assemble", total=manifest.header["total"], version=manifest.header["version"])
    return manifest


def run_stats(cfg: PipelineConfig, manifest: corpus.CorpusManifest, report: Optional[StageReport] = None):
    with stage("stats"):
        stats = corpus.compute_stats(manifest)
        _write_json(out_path(cfg, STATS_FILE), corpus.stats_report(stats))
    if report:
        report.record("stats", total=stats.total_records, mean_words=round(stats.mean_caption_length_words, 1))
    return stats


def run_split(cfg: PipelineConfig, manifest: corpus.CorpusManifest, report: Optional[StageReport] = None):
    with stage("split"):
        train, test = corpus.split(manifest, (cfg.split.train, cfg.split.test), seed=cfg.seed)
        corpus.write_split(train, test, cfg.out)
    if report:
        report.record("split", train=len(train), test=len(test), seed=cfg.seed)
    return train, test


def run_all(cfg: PipelineConfig, endpoint: Optional[ChatEndpoint] = None) -> Dict[str, Any]:
    """ingest -> caption -> rewrite -> dedup -> assemble -> stats -> split."""
    require_live_credentials(cfg)
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    report = StageReport(cfg.out)
    samples, _ = run_ingest(cfg, report)
    raw = run_caption(cfg, samples, report)
    final = run_rewrite(cfg, raw, endpoint, report)
    kept, ledger = run_dedup(cfg, samples, final, report)
    manifest = run_assemble(cfg, kept, report)
    stats = run_stats(cfg, manifest, report)
    train, test = run_split(cfg, manifest, report)
    return {
        "records": len(manifest),
        "dropped": len(ledger),
        "per_method": manifest.header["per_method"],
        "mean_caption_length_words": round(stats.mean_caption_length_words, 1),
        "train": len(train),
        "test": len(test),
        "config_sha256": manifest.header["config_sha256"],
    }
