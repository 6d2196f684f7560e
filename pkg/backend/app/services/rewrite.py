from __future__ import annotations

import hashlib
import logging
import random
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict

from ..schemas.models import IclExample, PromptTemplate, RewriteJob
from .errors import CassetteMiss, EmptyCompletion, EndpointError, InsufficientExamples
from .llm_client import ChatEndpoint
from .templates import get_template


logger = logging.getLogger(__name__)

DEFAULT_N_EXAMPLES = 3


# ---- ICL selection ----

def select_icl_examples(store: Sequence[IclExample], n: int, seed: int) -> List[IclExample]:
    """n distinct examples, sampled without replacement; same (store, n, seed) gives the same list."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if len(store) < n:
        raise InsufficientExamples(f"ICL store holds {len(store)} examples, {n} requested")
    return random.Random(seed).sample(list(store), n)


def job_seed(base_seed: int, record_id: str) -> int:
    digest = hashlib.sha256(f"{base_seed}:{record_id}".encode("utf-8")).hexdigest()
    return int(digest[:8], 16)


def make_job(record_id: str, captions: List[str], store: Sequence[IclExample], n: int, base_seed: int) -> RewriteJob:
    seed = job_seed(base_seed, record_id)
    examples = select_icl_examples(store, n, seed) if len(captions) == 1 else []
    return RewriteJob(record_id=record_id, input_captions=captions, selected_examples=examples, seed=seed)


# ---- prompts ----

def _principles_block(template: PromptTemplate) -> str:
    return "\n".join(f"[{i}] {p}" for i, p in enumerate(template.principles, start=1))


def build_rewrite_prompt(caption: str, examples: Sequence[IclExample], template: Optional[PromptTemplate] = None) -> str:
    if not caption or not caption.strip():
        raise ValueError("caption must be non-empty")
    template = template or get_template("sar_rewrite")
    parts = [template.header, _principles_block(template)]
    if examples:
        pairs = "\n\n".join(f"Input: {ex.source_caption}\nOutput: {ex.rewritten_caption}" for ex in examples)
        parts.append("Examples:\n" + pairs)
    parts.append(f"Input: {caption.strip()}\nOutput:")
    return "\n\n".join(parts)


def build_fusion_prompt(caption_a: str, caption_b: str, template: Optional[PromptTemplate] = None) -> str:
    if not caption_a or not caption_a.strip():
        raise ValueError("caption_a must be non-empty")
    if not caption_b or not caption_b.strip():
        raise ValueError("caption_b must be non-empty")
    template = template or get_template("fusion")
    return "\n\n".join([
        template.header,
        _principles_block(template),
        f"Caption A: {caption_a.strip()}\nCaption B: {caption_b.strip()}\nOutput:",
    ])


# ---- rule-based rewrite ----

class RuleLexicons(BaseModel):
    """Word lists driving rule_rewrite. Multi-word entries are matched as phrases."""

    model_config = ConfigDict(frozen=True)

    colors: Tuple[str, ...] = (
        "black and white", "gray", "grey", "black", "white", "shades", "shade", "colored",
        "colorful", "green", "blue", "brown", "red", "yellow", "orange", "dark", "light",
    )
    hedges: Tuple[str, ...] = (
        "possibly", "likely", "perhaps", "appears to be", "seems to", "might be", "probably",
    )
    trees: Tuple[str, ...] = ("tree", "trees")
    imaging: Tuple[str, ...] = (
        "aerial photograph", "image quality", "camera", "photograph", "photo", "resolution", "angle", "lens",
    )


DEFAULT_LEXICONS = RuleLexicons()

_TREE_MODIFIERS = (
    r"a|an|the|some|several|many|few|a few|dense|densely|scattered|tall|small|large|lush|"
    r"rows? of|lines? of|clusters? of|groups? of|patches? of"
)
_TREE_CONNECTORS = r"with|and|or|by|among|near|of|beside|along|around|under|behind|next to|surrounded by"
_FRAMING_VERBS = r"depicts|shows|presents|captures|displays|illustrates|features|reveals"


def _alt(words: Sequence[str]) -> str:
    ordered = sorted(words, key=len, reverse=True)
    return "|".join(r"\s+".join(re.escape(w) for w in word.split()) for word in ordered)


@dataclass(frozen=True)
class _RulePatterns:
    color: re.Pattern
    hedge: re.Pattern
    tree: re.Pattern
    imaging: re.Pattern
    framing: re.Pattern


@lru_cache(maxsize=16)
def _compile(lex: RuleLexicons) -> _RulePatterns:
    unit = rf"(?:{_alt(lex.colors)})(?:ish)?(?:-[a-z]+)*"
    shades_of = r"(?:(?:in\s+)?(?:various\s+|different\s+)?shades?\s+of\s+)?"
    color = re.compile(
        rf"\b(?:(?P<art>an?)\s+)?{shades_of}{unit}(?:(?:\s*,\s*|\s+(?:and|or)\s+){unit})*\b\s*",
        re.IGNORECASE,
    )
    hedge = re.compile(
        rf"(?P<lead>,\s*)?\b(?:(?:which|that)(?:\s+(?:is|are|was|were))?\s+)?(?:{_alt(lex.hedges)})\b[^,.;]*(?P<trail>,)?",
        re.IGNORECASE,
    )
    tree = re.compile(
        rf"(?:\s*,\s*|\s+(?:{_TREE_CONNECTORS})\s+)?(?:\b(?:{_TREE_MODIFIERS})\s+)*\b(?:{_alt(lex.trees)})\b(?!-)",
        re.IGNORECASE,
    )
    imaging = re.compile(rf"\b(?:{_alt(lex.imaging)})(?:s|ed|ic)?\b", re.IGNORECASE)
    framing = re.compile(
        rf"^(?:the|this|an?)\s+(?:[\w-]+\s+){{0,3}}?(?:{_alt(lex.imaging)})\s+(?:{_FRAMING_VERBS})\s+",
        re.IGNORECASE,
    )
    return _RulePatterns(color=color, hedge=hedge, tree=tree, imaging=imaging, framing=framing)


_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")


def _drop_colors(text: str, pat: re.Pattern) -> str:
    def repl(m: re.Match) -> str:
        art = m.group("art")
        if not art:
            return ""
        nxt = text[m.end():m.end() + 1].lower()
        chosen = "an" if nxt and nxt in "aeiou" else "a"
        if art[0].isupper():
            chosen = chosen.capitalize()
        return chosen + " "

    return pat.sub(repl, text)


def _drop_hedges(text: str, pat: re.Pattern) -> str:
    return pat.sub(lambda m: " " if m.group("lead") and m.group("trail") else "", text)


def _drop_imaging(text: str, pats: _RulePatterns) -> str:
    out: List[str] = []
    for sentence in _SENTENCE_SPLIT.split(text.strip()):
        s = pats.framing.sub("", sentence.strip(), count=1)
        m = re.match(r"^(.*?)([.!?]*)$", s, re.S)
        body, end = m.group(1), m.group(2)
        clauses = [c for c in re.split(r"\s*,\s*", body) if c.strip()]
        if not clauses or pats.imaging.search(clauses[0]):
            continue
        kept = [clauses[0]] + [c for c in clauses[1:] if not pats.imaging.search(c)]
        out.append(", ".join(kept) + end)
    return " ".join(out)


def _normalize(text: str) -> str:
    text = re.sub(r"\s+", " ", text)
    text = re.sub(r"\s+([,.;:!?])", r"\1", text)
    text = re.sub(r",+(?=[,.;:!?])", "", text)
    text = re.sub(r"([.!?])(?:\s*[,;])+", r"\1", text)
    text = re.sub(r"^[\s,;]+", "", text).strip()
    sentences = [s for s in _SENTENCE_SPLIT.split(text) if s]
    return " ".join(s[:1].upper() + s[1:] for s in sentences)


def rule_rewrite(caption: str, lexicons: Optional[RuleLexicons] = None) -> str:
    """Deterministic approximation of the SAR rewrite principles.

    Colors, then hedged clauses, then tree phrases, then imaging remarks are removed;
    spacing is normalized and sentence starts capitalized. No period is added.
    """
    pats = _compile(lexicons or DEFAULT_LEXICONS)
    text = _drop_colors(caption or "", pats.color)
    text = _drop_hedges(text, pats.hedge)
    text = pats.tree.sub("", text)
    text = _normalize(text)
    text = _drop_imaging(text, pats)
    return _normalize(text)


# ---- endpoint-backed rewrite ----

@dataclass(frozen=True)
class RewriteOutcome:
    caption: str
    fallback_used: bool = False
    attempts: int = 0


def _complete(endpoint: ChatEndpoint, prompt: str, fallback: Callable[[], str], fallback_enabled: bool) -> RewriteOutcome:
    try:
        completion = endpoint.complete(prompt)
    except CassetteMiss:
        raise
    except EndpointError as e:
        if not fallback_enabled:
            raise
        logger.warning("rewrite fallback attempts=%d error=%s", e.attempts, e)
        return RewriteOutcome(caption=fallback(), fallback_used=True, attempts=e.attempts)
    text = completion.text.strip()
    if not text:
        raise EmptyCompletion("endpoint returned an empty completion")
    return RewriteOutcome(caption=text, attempts=completion.attempts)


def rewrite_caption(endpoint: ChatEndpoint, job: RewriteJob, fallback_enabled: bool = True,
                    template: Optional[PromptTemplate] = None,
                    lexicons: Optional[RuleLexicons] = None) -> RewriteOutcome:
    caption = job.input_captions[0]
    prompt = build_rewrite_prompt(caption, job.selected_examples, template)
    return _complete(endpoint, prompt, lambda: rule_rewrite(caption, lexicons), fallback_enabled)


def fuse_captions(endpoint: ChatEndpoint, caption_a: str, caption_b: str, fallback_enabled: bool = True,
                  template: Optional[PromptTemplate] = None,
                  lexicons: Optional[RuleLexicons] = None) -> RewriteOutcome:
    prompt = build_fusion_prompt(caption_a, caption_b, template)

    def fallback() -> str:
        return f"{caption_a.strip()} {rule_rewrite(caption_b, lexicons)}".strip()

    return _complete(endpoint, prompt, fallback, fallback_enabled)
