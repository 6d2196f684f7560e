"""
SAR-Narrator command line.

Each pipeline stage is a subcommand that reads the previous stage's files from
--out and writes its own; run-all chains them. Summaries go to stdout as JSON,
progress logs to stderr.

Usage example:
    python sar_narrator.py make-mini-dataset mini
    python sar_narrator.py run-all --config mini/config.yaml --out mini/out
    python sar_narrator.py eval-captions preds.jsonl --refs refs.jsonl
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from .schemas.models import CaptionEvalReport, RetrievalReport
from .services import corpus, dedup, metrics, parser, pipeline, retrieval
from .services.config import PipelineConfig, load_config
from .services.errors import ConfigError, SarNarratorError, StageError
from .services.mini_dataset import make_mini_dataset
from .services.pipeline import EXIT_CODES, StageReport, stage


logger = logging.getLogger("sar_narrator")


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _emit(obj: Any) -> None:
    print(json.dumps(obj, indent=2, ensure_ascii=False, default=str))


def _config(ns: argparse.Namespace) -> PipelineConfig:
    return load_config(ns.config, mode=ns.mode, out=ns.out, seed=ns.seed)


# ---- pipeline stages ----

def cmd_ingest(ns: argparse.Namespace) -> Dict[str, Any]:
    cfg = _config(ns)
    _, validation = pipeline.run_ingest(cfg, StageReport(cfg.out))
    return {k: validation[k] for k in ("total_parsed", "total_kept", "sources")}


def cmd_caption(ns: argparse.Namespace) -> Dict[str, Any]:
    cfg = _config(ns)
    with stage("caption"):
        samples = parser.read_samples(pipeline.out_path(cfg, pipeline.SAMPLES_FILE))
    records = pipeline.run_caption(cfg, samples, StageReport(cfg.out))
    return {"records": len(records)}


def cmd_rewrite(ns: argparse.Namespace) -> Dict[str, Any]:
    cfg = _config(ns)
    with stage("rewrite"):
        raw = corpus.read_records(pipeline.out_path(cfg, pipeline.RAW_CAPTIONS_FILE))
    report = StageReport(cfg.out)
    pipeline.run_rewrite(cfg, raw, report=report)
    return report.stages["rewrite"]


def cmd_dedup(ns: argparse.Namespace) -> Dict[str, Any]:
    cfg = _config(ns)
    with stage("dedup"):
        samples = parser.read_samples(pipeline.out_path(cfg, pipeline.SAMPLES_FILE))
        records = corpus.read_records(pipeline.out_path(cfg, pipeline.CAPTIONS_FILE))
    kept, ledger = pipeline.run_dedup(cfg, samples, records, StageReport(cfg.out))
    return {"kept": len(kept), "dropped": len(ledger)}


def cmd_assemble(ns: argparse.Namespace) -> Dict[str, Any]:
    cfg = _config(ns)
    with stage("assemble"):
        records = corpus.read_records(pipeline.out_path(cfg, pipeline.CAPTIONS_FILE))
        ledger_path = pipeline.out_path(cfg, pipeline.LEDGER_FILE)
        if ledger_path.exists():
            records = pipeline.drop_ledgered(records, dedup.read_ledger(ledger_path))
    manifest = pipeline.run_assemble(cfg, records, StageReport(cfg.out))
    return manifest.header


def cmd_stats(ns: argparse.Namespace) -> Dict[str, Any]:
    cfg = _config(ns)
    with stage("stats"):
        manifest = corpus.read_manifest(cfg.out)
    stats = pipeline.run_stats(cfg, manifest, StageReport(cfg.out))
    return corpus.stats_report(stats)


def cmd_split(ns: argparse.Namespace) -> Dict[str, Any]:
    cfg = _config(ns)
    with stage("split"):
        manifest = corpus.read_manifest(cfg.out)
    train, test = pipeline.run_split(cfg, manifest, StageReport(cfg.out))
    return {"train": len(train), "test": len(test), "seed": cfg.seed}


def cmd_run_all(ns: argparse.Namespace) -> Dict[str, Any]:
    return pipeline.run_all(_config(ns))


# ---- evaluation ----

def _write_report(report: Any, output: Optional[str]) -> Dict[str, Any]:
    data = report.model_dump(by_alias=True)
    if output:
        Path(output).parent.mkdir(parents=True, exist_ok=True)
        Path(output).write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
        logger.info("report written path=%s", output)
    return data


def cmd_eval_captions(ns: argparse.Namespace) -> Dict[str, Any]:
    with stage("eval"):
        items = metrics.read_caption_eval_file(ns.predictions, ns.refs)
        report = metrics.evaluate_captions(items, smoothing=ns.smoothing)
    return _write_report(report, ns.output)


def cmd_eval_retrieval(ns: argparse.Namespace) -> Dict[str, Any]:
    with stage("eval"):
        if ns.matrix:
            m = retrieval.read_similarity_matrix(ns.matrix)
        elif ns.images and ns.texts:
            m = retrieval.similarity_from_embeddings(ns.images, ns.texts)
        else:
            raise ConfigError("eval-retrieval needs --matrix or both --images and --texts")
        report = retrieval.evaluate_retrieval(m)
    return _write_report(report, ns.output)


def _load_report(path: str) -> CaptionEvalReport | RetrievalReport:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if "CIDEr" in data:
        return CaptionEvalReport(**data)
    return RetrievalReport(**data)


def cmd_eval_compare(ns: argparse.Namespace) -> Dict[str, Any]:
    with stage("eval"):
        base = _load_report(ns.baseline)
        cand = _load_report(ns.candidate)
        deltas = metrics.compare_reports(base, cand)
    print(metrics.format_table({Path(ns.baseline).stem: base, Path(ns.candidate).stem: cand}), file=sys.stderr)
    return deltas


def cmd_make_mini_dataset(ns: argparse.Namespace) -> Dict[str, Any]:
    path = make_mini_dataset(ns.directory)
    return {"config": str(path)}


COMMANDS: Dict[str, Callable[[argparse.Namespace], Dict[str, Any]]] = {
    "ingest": cmd_ingest,
    "caption": cmd_caption,
    "rewrite": cmd_rewrite,
    "dedup": cmd_dedup,
    "assemble": cmd_assemble,
    "stats": cmd_stats,
    "split": cmd_split,
    "run-all": cmd_run_all,
    "eval-captions": cmd_eval_captions,
    "eval-retrieval": cmd_eval_retrieval,
    "eval-compare": cmd_eval_compare,
    "make-mini-dataset": cmd_make_mini_dataset,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Pipeline config YAML")
    common.add_argument("--seed", type=int, help="Override the config seed")
    common.add_argument("--mode", choices=["live", "replay"], help="Rewrite endpoint mode")
    common.add_argument("--out", help="Output directory for stage files")
    common.add_argument("--verbose", action="store_true", help="Debug logging")

    p = argparse.ArgumentParser(prog="sar-narrator", description="Build and evaluate SAR image-caption corpora.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("ingest", "caption", "rewrite", "dedup", "assemble", "stats", "split", "run-all"):
        sub.add_parser(name, parents=[common], help=f"Run the {name} stage")

    ec = sub.add_parser("eval-captions", parents=[common], help="BLEU/METEOR/ROUGE-L/CIDEr over a caption file")
    ec.add_argument("predictions", help="JSONL of {id, candidate, references} or {id, candidate}")
    ec.add_argument("--refs", help="JSONL of {id, references} joined by id")
    ec.add_argument("--smoothing", action="store_true", help="Add-epsilon BLEU smoothing")
    ec.add_argument("--output", help="Write the report JSON here")

    er = sub.add_parser("eval-retrieval", parents=[common], help="Recall@K over a similarity matrix")
    er.add_argument("--matrix", help="Similarity matrix text file")
    er.add_argument("--images", help="Image embedding matrix file")
    er.add_argument("--texts", help="Text embedding matrix file")
    er.add_argument("--output", help="Write the report JSON here")

    cmp_ = sub.add_parser("eval-compare", parents=[common], help="Absolute and relative deltas between two reports")
    cmp_.add_argument("baseline")
    cmp_.add_argument("candidate")

    mk = sub.add_parser("make-mini-dataset", parents=[common], help="Write the synthetic mini-dataset")
    mk.add_argument("directory")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    ns = build_parser().parse_args(argv)
    configure_logging(ns.verbose)
    try:
        result = COMMANDS[ns.command](ns)
    except ConfigError as e:
        logger.error("config error: %s", e)
        return EXIT_CODES["config"]
    except StageError as e:
        logger.error("stage %s failed: %s", e.stage, e.cause)
        return e.exit_code
    except SarNarratorError as e:
        logger.error("%s: %s", ns.command, e)
        return EXIT_CODES.get(ns.command, 1)
    _emit(result)
    return EXIT_CODES["ok"]


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
