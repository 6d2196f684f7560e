"""Caption metrics: BLEU-1..4, simplified METEOR, ROUGE-L and base CIDEr.

All metrics share one tokenizer (lowercase, ASCII punctuation deleted, whitespace split).
METEOR here has no synonym stage, so absolute values are not comparable with the
reference METEOR implementation. SPICE is not computed.
"""
from __future__ import annotations

import json
import logging
import math
import string
from collections import Counter
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from nltk.stem.porter import PorterStemmer
from nltk.translate.bleu_score import SmoothingFunction, corpus_bleu as nltk_corpus_bleu, modified_precision, sentence_bleu

from ..schemas.models import CaptionEvalItem, CaptionEvalReport, RetrievalReport
from .errors import AlignmentMismatch, MalformedDocument, NoReferences


logger = logging.getLogger(__name__)

_PUNCT = str.maketrans("", "", string.punctuation)
_STEMMER = PorterStemmer()
# add-epsilon smoothing (epsilon 0.1)
_SMOOTH = SmoothingFunction(epsilon=0.1).method1

ROUGE_BETA = 1.2
CIDER_MAX_N = 4
CIDER_SCALE = 10.0


def tokenize(caption: str) -> List[str]:
    return (caption or "").lower().translate(_PUNCT).split()


def _weights(n: int) -> Tuple[float, ...]:
    if n < 1 or n > 4:
        raise ValueError(f"BLEU order must be in 1..4, got {n}")
    return tuple(1.0 / n for _ in range(n))


def _check_refs(references: Sequence[Sequence[str]]) -> None:
    if not references:
        raise NoReferences("at least one reference is required")


def _zero_order(candidates: Sequence[Sequence[str]], references: Sequence[Sequence[Sequence[str]]], n: int) -> bool:
    """True when some order 1..n has no clipped match over the pooled corpus."""
    for order in range(1, n + 1):
        matched = sum(modified_precision([list(r) for r in refs], list(c), order).numerator
                      for c, refs in zip(candidates, references))
        if matched == 0:
            return True
    return False


# ---- BLEU ----

def bleu(candidate: Sequence[str], references: Sequence[Sequence[str]], n: int = 4, smoothing: bool = False) -> float:
    """Sentence BLEU-n with clipping and closest-reference brevity penalty."""
    weights = _weights(n)
    _check_refs(references)
    if not candidate or (not smoothing and _zero_order([candidate], [references], n)):
        return 0.0
    return float(sentence_bleu(
        [list(r) for r in references], list(candidate), weights=weights,
        smoothing_function=_SMOOTH if smoothing else None,
    ))


def corpus_bleu(candidates: Sequence[Sequence[str]], references: Sequence[Sequence[Sequence[str]]], n: int = 4,
                smoothing: bool = False) -> float:
    """Corpus BLEU-n with n-gram counts pooled over all items."""
    weights = _weights(n)
    if len(candidates) != len(references):
        raise AlignmentMismatch(f"{len(candidates)} candidates vs {len(references)} reference sets")
    for refs in references:
        _check_refs(refs)
    if not candidates or not any(candidates):
        return 0.0
    if not smoothing and _zero_order(candidates, references, n):
        return 0.0
    return float(nltk_corpus_bleu(
        [[list(r) for r in refs] for refs in references], [list(c) for c in candidates],
        weights=weights, smoothing_function=_SMOOTH if smoothing else None,
    ))


# ---- ROUGE-L ----

def _lcs(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], references: Sequence[Sequence[str]], beta: float = ROUGE_BETA) -> float:
    _check_refs(references)
    best = 0.0
    for ref in references:
        lcs = _lcs(candidate, ref)
        if lcs == 0:
            continue
        p = lcs / len(candidate)
        r = lcs / len(ref)
        f = ((1 + beta ** 2) * p * r) / (r + beta ** 2 * p)
        best = max(best, f)
    return best


# ---- METEOR (exact + stem) ----

def _stem(token: str) -> str:
    return _STEMMER.stem(token)


def _align(candidate: Sequence[str], reference: Sequence[str]) -> List[Tuple[int, int]]:
    used_c: set[int] = set()
    used_r: set[int] = set()
    pairs: List[Tuple[int, int]] = []
    for key in (lambda t: t, _stem):
        ref_keys = [key(t) for t in reference]
        for i, tok in enumerate(candidate):
            if i in used_c:
                continue
            k = key(tok)
            for j, rk in enumerate(ref_keys):
                if j not in used_r and rk == k:
                    used_c.add(i)
                    used_r.add(j)
                    pairs.append((i, j))
                    break
    return sorted(pairs)


def _chunks(pairs: List[Tuple[int, int]]) -> int:
    chunks = 0
    prev: Optional[Tuple[int, int]] = None
    for i, j in pairs:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor_simplified(candidate: Sequence[str], references: Sequence[Sequence[str]]) -> float:
    _check_refs(references)
    best = 0.0
    for ref in references:
        pairs = _align(candidate, ref)
        m = len(pairs)
        if m == 0:
            continue
        p = m / len(candidate)
        r = m / len(ref)
        fmean = 10 * p * r / (r + 9 * p)
        penalty = 0.5 * (_chunks(pairs) / m) ** 3
        best = max(best, fmean * (1 - penalty))
    return best


# ---- CIDEr ----

def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _vec(counts: Counter, df: Counter, log_n: float) -> Tuple[Dict[tuple, float], float]:
    vec = {g: tf * (log_n - math.log(max(1.0, df[g]))) for g, tf in counts.items()}
    norm = math.sqrt(sum(v * v for v in vec.values()))
    return vec, norm


def _cosine(a: Tuple[Dict[tuple, float], float], b: Tuple[Dict[tuple, float], float]) -> float:
    (va, na), (vb, nb) = a, b
    if na == 0 or nb == 0:
        return 0.0
    return sum(w * vb.get(g, 0.0) for g, w in va.items()) / (na * nb)


def cider(candidates: Sequence[Sequence[str]], references: Sequence[Sequence[Sequence[str]]],
          max_n: int = CIDER_MAX_N) -> Tuple[float, List[float]]:
    """Base CIDEr (no length penalty, no clipping); returns (corpus mean, per-item scores).

    Document frequency counts each n-gram once per item over that item's reference set.
    """
    if len(candidates) != len(references):
        raise AlignmentMismatch(f"{len(candidates)} candidates vs {len(references)} reference sets")
    if not candidates:
        raise AlignmentMismatch("CIDEr needs a corpus of at least one item")
    for refs in references:
        _check_refs(refs)
    log_n = math.log(float(len(references)))

    df_by_n: Dict[int, Counter] = {}
    for n in range(1, max_n + 1):
        df: Counter = Counter()
        for refs in references:
            df.update(set().union(*(_ngrams(r, n).keys() for r in refs)))
        df_by_n[n] = df

    scores: List[float] = []
    for cand, refs in zip(candidates, references):
        per_n = []
        for n in range(1, max_n + 1):
            cv = _vec(_ngrams(cand, n), df_by_n[n], log_n)
            sims = [_cosine(cv, _vec(_ngrams(r, n), df_by_n[n], log_n)) for r in refs]
            per_n.append(float(np.mean(sims)))
        scores.append(float(np.mean(per_n)) * CIDER_SCALE)
    return float(np.mean(scores)), scores


# ---- reports ----

def evaluate_captions(items: Sequence[CaptionEvalItem], smoothing: bool = False) -> CaptionEvalReport:
    if not items:
        raise AlignmentMismatch("no caption items to evaluate")
    cands = [tokenize(it.candidate) for it in items]
    refs = []
    for it in items:
        if not it.references:
            raise NoReferences(f"item {it.id} has no references")
        refs.append([tokenize(r) for r in it.references])
    cider_mean, _ = cider(cands, refs)
    report = CaptionEvalReport(
        bleu1=corpus_bleu(cands, refs, 1, smoothing),
        bleu2=corpus_bleu(cands, refs, 2, smoothing),
        bleu3=corpus_bleu(cands, refs, 3, smoothing),
        bleu4=corpus_bleu(cands, refs, 4, smoothing),
        meteor=float(np.mean([meteor_simplified(c, r) for c, r in zip(cands, refs)])),
        rouge_l=float(np.mean([rouge_l(c, r) for c, r in zip(cands, refs)])),
        cider=cider_mean,
        items=len(items),
    )
    logger.info("eval captions items=%d bleu4=%.4f cider=%.4f", len(items), report.bleu4, report.cider)
    return report


def _read_jsonl(path: Path) -> List[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise MalformedDocument(f"line {lineno}: {e}", path) from e
    return rows


def read_caption_eval_file(pred_file: str | Path, ref_file: Optional[str | Path] = None) -> List[CaptionEvalItem]:
    """Items from one {id, candidate, references} file, or joined by id from a
    predictions file {id, candidate} and a references file {id, references}."""
    pred_file = Path(pred_file)
    preds = _read_jsonl(pred_file)
    if ref_file is None:
        try:
            return [CaptionEvalItem(**row) for row in preds]
        except (TypeError, ValueError) as e:
            raise MalformedDocument(str(e), pred_file) from e
    ref_rows = {str(row["id"]): row.get("references") or [] for row in _read_jsonl(Path(ref_file))}
    pred_ids = [str(row["id"]) for row in preds]
    if sorted(pred_ids) != sorted(ref_rows):
        raise AlignmentMismatch(f"prediction ids and reference ids differ ({len(pred_ids)} vs {len(ref_rows)})")
    return [CaptionEvalItem(id=str(row["id"]), candidate=row["candidate"], references=ref_rows[str(row["id"])]) for row in preds]


def compare_reports(baseline: CaptionEvalReport | RetrievalReport,
                    candidate: CaptionEvalReport | RetrievalReport) -> Dict[str, Dict[str, float]]:
    """Per column: baseline, candidate, absolute delta and relative delta (% of baseline)."""
    if type(baseline) is not type(candidate):
        raise ValueError("reports must be of the same kind")
    base = baseline.model_dump(by_alias=True)
    cand = candidate.model_dump(by_alias=True)
    out: Dict[str, Dict[str, float]] = {}
    for col, b in base.items():
        c = cand[col]
        if not isinstance(b, float) or col in ("items", "images", "texts"):
            continue
        out[col] = {
            "baseline": b,
            "candidate": c,
            "absolute": c - b,
            "relative": (c - b) / b * 100.0 if b else float("nan"),
        }
    return out


def format_table(reports: Dict[str, CaptionEvalReport | RetrievalReport], digits: int = 4) -> str:
    """Markdown table, one row per named report, columns in report order."""
    if not reports:
        return ""
    first = next(iter(reports.values()))
    cols = [c for c in first.model_dump(by_alias=True) if c not in ("items", "images", "texts")]
    lines = ["| Model | " + " | ".join(cols) + " |", "|" + "---|" * (len(cols) + 1)]
    for name, rep in reports.items():
        row = rep.model_dump(by_alias=True)
        cells = [v if isinstance(v, str) else f"{v:.{digits}f}" for v in (row[c] for c in cols)]
        lines.append(f"| {name} | " + " | ".join(cells) + " |")
    return "\n".join(lines)
