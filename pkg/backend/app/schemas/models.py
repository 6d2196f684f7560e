from __future__ import annotations

from enum import Enum
from typing import List, Optional, Literal, Dict, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..services.labels import normalize_class_label


Task = Literal["detection", "segmentation", "paired"]
Method = Literal["a2c", "a2c_spatial", "sa2c", "sa2c_fused", "paired_rewritten"]


# ---- ingest ----

class BoundingBox(BaseModel):
    model_config = ConfigDict(frozen=True)

    x_min: int = Field(ge=0)
    y_min: int = Field(ge=0)
    x_max: int = Field(ge=0)
    y_max: int = Field(ge=0)

    @model_validator(mode="after")
    def check_order(self):
        if self.x_min >= self.x_max or self.y_min >= self.y_max:
            raise ValueError(f"degenerate box {self.as_list()}")
        return self

    def as_list(self) -> List[int]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    def within(self, width: int, height: int) -> bool:
        return self.x_max <= width and self.y_max <= height


class DetectionObject(BaseModel):
    model_config = ConfigDict(frozen=True)

    class_label: str
    box: BoundingBox

    @field_validator("class_label", mode="before")
    @classmethod
    def normalize_label(cls, v):
        label = normalize_class_label(v)
        if not label:
            raise ValueError("class_label must be non-empty")
        return label


class CategoryEntry(BaseModel):
    color: Tuple[int, int, int]
    category: str

    @field_validator("color")
    @classmethod
    def check_color(cls, v):
        if any(c < 0 or c > 255 for c in v):
            raise ValueError(f"color channel out of range: {v}")
        return v

    @field_validator("category")
    @classmethod
    def check_category(cls, v):
        v = str(v).strip().lower()
        if not v:
            raise ValueError("category must be non-empty")
        return v


class CategoryMapping(BaseModel):
    entries: List[CategoryEntry]

    @model_validator(mode="after")
    def check_entries(self):
        if not self.entries:
            raise ValueError("mapping needs at least one entry")
        colors = [e.color for e in self.entries]
        if len(set(colors)) != len(colors):
            raise ValueError("mapping colors must be pairwise distinct")
        return self

    @classmethod
    def from_pairs(cls, pairs) -> "CategoryMapping":
        return cls(entries=[CategoryEntry(color=tuple(c), category=name) for c, name in pairs])

    def categories(self) -> List[str]:
        """Distinct category names in first-appearance order."""
        seen: List[str] = []
        for e in self.entries:
            if e.category not in seen:
                seen.append(e.category)
        return seen


class AnnotatedSample(BaseModel):
    id: str
    image_path: str
    width: int
    height: int
    source_dataset: str
    task: Task
    detections: Optional[List[DetectionObject]] = None
    mask_path: Optional[str] = None
    optical_caption: Optional[str] = None

    @model_validator(mode="after")
    def check_payload(self):
        present = {
            "detection": self.detections is not None,
            "segmentation": self.mask_path is not None,
            "paired": self.optical_caption is not None,
        }
        if sum(present.values()) != 1 or not present[self.task]:
            raise ValueError(f"sample {self.id}: payload does not match task '{self.task}'")
        return self


class ValidationVerdict(BaseModel):
    keep: bool
    reason: Optional[str] = None

    @classmethod
    def ok(cls) -> "ValidationVerdict":
        return cls(keep=True)

    @classmethod
    def drop(cls, reason: str) -> "ValidationVerdict":
        return cls(keep=False, reason=reason)


# ---- caption generation ----

class ClassCount(BaseModel):
    class_label: str
    count: int = Field(ge=1)


class ProportionEntry(BaseModel):
    category: str
    percent: float = Field(ge=0.0, le=100.0)


class SpatialCell(str, Enum):
    TOP_LEFT = "top-left corner"
    TOP = "top"
    TOP_RIGHT = "top-right corner"
    LEFT = "left"
    CENTER = "center"
    RIGHT = "right"
    BOTTOM_LEFT = "bottom-left corner"
    BOTTOM = "bottom"
    BOTTOM_RIGHT = "bottom-right corner"


# ---- rewrite ----

class PromptTemplate(BaseModel):
    kind: Literal["sar_rewrite", "fusion"]
    header: str
    principles: List[str]

    @model_validator(mode="after")
    def check_count(self):
        expected = 4 if self.kind == "sar_rewrite" else 5
        if len(self.principles) != expected:
            raise ValueError(f"{self.kind} template needs {expected} principles, got {len(self.principles)}")
        return self


class IclExample(BaseModel):
    model_config = ConfigDict(frozen=True)

    source_caption: str
    rewritten_caption: str

    @model_validator(mode="after")
    def check_pair(self):
        if not self.source_caption.strip() or not self.rewritten_caption.strip():
            raise ValueError("ICL example captions must be non-empty")
        if self.source_caption.strip() == self.rewritten_caption.strip():
            raise ValueError("ICL example must actually rewrite its source")
        return self


class RewriteJob(BaseModel):
    record_id: str
    input_captions: List[str]
    selected_examples: List[IclExample] = []
    seed: int = 0

    @field_validator("input_captions")
    @classmethod
    def check_inputs(cls, v):
        if len(v) not in (1, 2):
            raise ValueError("a job rewrites one caption or fuses two")
        return v


# ---- dedup ----

class DedupPolicy(BaseModel):
    global_max_distance: int = Field(default=0, ge=0, le=64)
    per_source_max_distance: Dict[str, int] = {}

    @field_validator("per_source_max_distance")
    @classmethod
    def check_per_source(cls, v):
        for name, d in v.items():
            if d < 0 or d > 64:
                raise ValueError(f"per-source distance for {name} out of [0,64]: {d}")
        return v


class DropEntry(BaseModel):
    dropped_id: str
    kept_id: str
    distance: int
    rule: str


# ---- corpus ----

class CaptionRecord(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    id: str
    image_path: str = Field(alias="image")
    caption: str
    raw_caption: Optional[str] = None
    method: Method
    source_dataset: str = Field(alias="source")
    fallback_used: bool = Field(default=False, alias="fallback")

    @field_validator("caption")
    @classmethod
    def check_caption(cls, v):
        if not v or not v.strip():
            raise ValueError("caption must be non-empty")
        return v

    def to_json_dict(self) -> Dict[str, object]:
        return self.model_dump(by_alias=True, exclude_none=True)


class CorpusStats(BaseModel):
    total_records: int
    mean_caption_length_words: float
    length_histogram: Dict[str, int]
    top_words: List[Tuple[str, int]]
    per_source_counts: Dict[str, int]
    per_method_counts: Dict[str, int]


# ---- eval ----

class CaptionEvalReport(BaseModel):
    """Column order mirrors the captioning tables: SPICE, BLEU-1..4, METEOR, ROUGE-L, CIDEr."""

    model_config = ConfigDict(populate_by_name=True)

    spice: str = Field(default="not computed", alias="SPICE")
    bleu1: float = Field(alias="BLEU-1")
    bleu2: float = Field(alias="BLEU-2")
    bleu3: float = Field(alias="BLEU-3")
    bleu4: float = Field(alias="BLEU-4")
    meteor: float = Field(alias="METEOR")
    rouge_l: float = Field(alias="ROUGE-L")
    cider: float = Field(alias="CIDEr")
    items: int = 0


class RetrievalReport(BaseModel):
    """Column order mirrors the retrieval tables: i2t-R@1,5,10, t2i-R@1,5,10, Mean Recall."""

    model_config = ConfigDict(populate_by_name=True)

    i2t_r1: float = Field(alias="i2t-R@1")
    i2t_r5: float = Field(alias="i2t-R@5")
    i2t_r10: float = Field(alias="i2t-R@10")
    t2i_r1: float = Field(alias="t2i-R@1")
    t2i_r5: float = Field(alias="t2i-R@5")
    t2i_r10: float = Field(alias="t2i-R@10")
    mean_recall: float = Field(alias="Mean Recall")
    images: int = 0
    texts: int = 0


# ---- API payloads ----

class DetectionCaptionInput(BaseModel):
    objects: List[DetectionObject]
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    spatial: bool = True


class ProportionCaptionInput(BaseModel):
    proportions: Dict[str, float]
    threshold_percent: float = 1.0


class CaptionResponse(BaseModel):
    caption: str
    method: str


class RuleRewriteInput(BaseModel):
    caption: str


class PromptInput(BaseModel):
    caption: str
    n_examples: int = Field(default=3, ge=0)
    seed: int = 0


class PromptResponse(BaseModel):
    prompt: str
    examples: int


class CaptionEvalItem(BaseModel):
    id: str
    candidate: str
    references: List[str]


class CaptionEvalInput(BaseModel):
    items: List[CaptionEvalItem]


class RetrievalInput(BaseModel):
    scores: List[List[float]]
