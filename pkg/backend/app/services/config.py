from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..schemas.models import CategoryMapping, DedupPolicy, Task
from .errors import ConfigError
from .llm_client import API_KEY_ENV, DEFAULT_BASE_URL, DEFAULT_MODEL
from .parser import ADAPTER_TASKS
from .rewrite import DEFAULT_LEXICONS, RuleLexicons


logger = logging.getLogger(__name__)

ENV_PREFIX = "SAR_NARRATOR_"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MappingEntry(_Strict):
    color: Tuple[int, int, int]
    category: str


class SourceConfig(_Strict):
    name: str
    task: Task
    adapter: Literal["coco", "voc", "mask", "paired_tsv"]
    paths: List[str]
    image_root: Optional[str] = None
    image_ext: str = ".png"
    mapping: List[MappingEntry] = []
    optical_captions: Optional[str] = None

    @field_validator("name")
    @classmethod
    def check_name(cls, v):
        if not v.strip():
            raise ValueError("source name must be non-empty")
        return v.strip()

    @model_validator(mode="after")
    def check_adapter(self):
        if ADAPTER_TASKS[self.adapter] != self.task:
            raise ValueError(f"adapter '{self.adapter}' does not produce task '{self.task}'")
        if self.task == "segmentation" and not self.mapping:
            raise ValueError(f"source {self.name}: segmentation needs a color mapping")
        if not self.paths:
            raise ValueError(f"source {self.name}: at least one path is required")
        return self

    def category_mapping(self) -> CategoryMapping:
        return CategoryMapping.from_pairs([(m.color, m.category) for m in self.mapping])


class DedupConfig(_Strict):
    global_max_distance: int = Field(default=0, ge=0, le=64)
    per_source_max_distance: Dict[str, int] = {}
    workers: Optional[int] = None
    index: Literal["auto", "brute", "bands"] = "auto"

    def policy(self) -> DedupPolicy:
        return DedupPolicy(global_max_distance=self.global_max_distance,
                           per_source_max_distance=dict(self.per_source_max_distance))


class CaptionConfig(_Strict):
    threshold_percent: float = Field(default=1.0, gt=0.0, le=100.0)
    spatial_enabled: bool = True
    mask_tolerance: int = Field(default=0, ge=0, le=255)


class LexiconExtras(_Strict):
    """Words appended to the built-in rule-rewrite lexicons."""

    colors: List[str] = []
    hedges: List[str] = []
    trees: List[str] = []
    imaging: List[str] = []

    def merged(self) -> RuleLexicons:
        base = DEFAULT_LEXICONS
        return RuleLexicons(
            colors=base.colors + tuple(self.colors),
            hedges=base.hedges + tuple(self.hedges),
            trees=base.trees + tuple(self.trees),
            imaging=base.imaging + tuple(self.imaging),
        )


class RewriteConfig(_Strict):
    mode: Literal["live", "replay"] = "replay"
    base_url: str = DEFAULT_BASE_URL
    model: str = DEFAULT_MODEL
    temperature: float = 0.0
    n_examples: int = Field(default=3, ge=0)
    max_concurrency: int = Field(default=4, ge=1)
    rate_per_second: float = Field(default=0.0, ge=0.0)
    retries: int = Field(default=3, ge=1)
    backoff_base: float = Field(default=0.5, ge=0.0)
    fallback_enabled: bool = True
    cassette: Optional[str] = None
    icl_store: Optional[str] = None
    lexicons: LexiconExtras = LexiconExtras()


class SplitConfig(_Strict):
    train: float = 0.8
    test: float = 0.2

    @model_validator(mode="after")
    def check_ratios(self):
        if self.train <= 0 or self.test <= 0 or abs(self.train + self.test - 1.0) > 1e-9:
            raise ValueError(f"split ratios must be positive and sum to 1.0, got {self.train}/{self.test}")
        return self


class PipelineConfig(_Strict):
    sources: List[SourceConfig] = []
    dedup: DedupConfig = DedupConfig()
    caption: CaptionConfig = CaptionConfig()
    rewrite: RewriteConfig = RewriteConfig()
    split: SplitConfig = SplitConfig()
    out: str = "out"
    seed: int = 0

    @model_validator(mode="after")
    def check_unique_sources(self):
        names = [s.name for s in self.sources]
        if len(set(names)) != len(names):
            raise ValueError("source names must be unique")
        return self

    def fingerprint(self) -> str:
        return config_sha256(self)


def config_sha256(cfg: PipelineConfig) -> str:
    blob = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _resolve(base: Path, value: Optional[str]) -> Optional[str]:
    if value is None:
        return None
    p = Path(value).expanduser()
    return str(p if p.is_absolute() else (base / p).resolve())


def _resolve_paths(raw: Dict[str, Any], base: Path) -> Dict[str, Any]:
    for src in raw.get("sources") or []:
        if not isinstance(src, dict):
            continue
        src["paths"] = [_resolve(base, p) for p in (src.get("paths") or [])]
        for key in ("image_root", "optical_captions"):
            if src.get(key):
                src[key] = _resolve(base, src[key])
    rw = raw.get("rewrite")
    if isinstance(rw, dict):
        for key in ("cassette", "icl_store"):
            if rw.get(key):
                rw[key] = _resolve(base, rw[key])
    if raw.get("out"):
        raw["out"] = _resolve(base, raw["out"])
    return raw


def _env_overrides() -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    if os.getenv(ENV_PREFIX + "MODE"):
        out["mode"] = os.environ[ENV_PREFIX + "MODE"]
    if os.getenv(ENV_PREFIX + "OUT"):
        out["out"] = os.environ[ENV_PREFIX + "OUT"]
    if os.getenv(ENV_PREFIX + "SEED"):
        try:
            out["seed"] = int(os.environ[ENV_PREFIX + "SEED"])
        except ValueError as e:
            raise ConfigError(f"{ENV_PREFIX}SEED must be an integer") from e
    if os.getenv(ENV_PREFIX + "BASE_URL"):
        out["base_url"] = os.environ[ENV_PREFIX + "BASE_URL"]
    if os.getenv(ENV_PREFIX + "MODEL"):
        out["model"] = os.environ[ENV_PREFIX + "MODEL"]
    return out


def _apply(raw: Dict[str, Any], overrides: Dict[str, Any]) -> None:
    for key, value in overrides.items():
        if value is None:
            continue
        if key in ("mode", "base_url", "model"):
            if not isinstance(raw.get("rewrite"), dict):
                raw["rewrite"] = {}
            raw["rewrite"][key] = value
        elif key == "out":
            raw["out"] = str(Path(value).expanduser().resolve())
        elif key == "seed":
            raw["seed"] = int(value)
        else:
            raise ConfigError(f"unknown override '{key}'")


def load_config(path: Optional[str | Path] = None, **flags: Any) -> PipelineConfig:
    """Build the effective config: file, then SAR_NARRATOR_* environment, then flags.

    Recognized overrides are mode, out, seed, base_url and model.
    """
    raw: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            with open(path, "r", encoding="utf-8") as f:
                loaded = yaml.safe_load(f) or {}
        except OSError as e:
            raise ConfigError(f"{path}: cannot read config: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: invalid YAML: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        raw = _resolve_paths(loaded, path.resolve().parent)
    _apply(raw, _env_overrides())
    _apply(raw, flags)
    try:
        cfg = PipelineConfig(**raw)
    except ValidationError as e:
        raise ConfigError(f"{path or '<defaults>'}: {e}") from e
    logger.debug("config sources=%d mode=%s out=%s", len(cfg.sources), cfg.rewrite.mode, cfg.out)
    return cfg


def require_live_credentials(cfg: PipelineConfig) -> None:
    if cfg.rewrite.mode == "live" and not (os.getenv(API_KEY_ENV) or "").strip():
        raise ConfigError(f"live mode requires {API_KEY_ENV} in the environment")
