from __future__ import annotations

import json
import logging
import os
from functools import lru_cache
from typing import Dict, List, Optional, Any

import yaml
from pydantic import ValidationError

from ..schemas.models import IclExample, PromptTemplate
from .errors import MalformedDocument


logger = logging.getLogger(__name__)

TEMPLATES_DIR = os.path.join(os.path.dirname(__file__), "templates")
DEFAULT_ICL_STORE = os.path.join(TEMPLATES_DIR, "icl_examples.jsonl")


def _load_yaml_templates(directory: str = TEMPLATES_DIR) -> List[Dict[str, Any]]:
    items: List[Dict[str, Any]] = []
    if not os.path.isdir(directory):
        return items
    for name in sorted(os.listdir(directory)):
        if not name.endswith(".yaml") and not name.endswith(".yml"):
            continue
        path = os.path.join(directory, name)
        try:
            with open(path, "r", encoding="utf-8") as f:
                obj = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise MalformedDocument(f"invalid YAML: {e}", path) from e
        if isinstance(obj, dict) and "kind" in obj:
            obj["_path"] = path
            items.append(obj)
    return items


@lru_cache(maxsize=8)
def load_templates(directory: str = TEMPLATES_DIR) -> Dict[str, PromptTemplate]:
    """Prompt templates keyed by kind. A later file with the same kind replaces an earlier one."""
    out: Dict[str, PromptTemplate] = {}
    for obj in _load_yaml_templates(directory):
        path = obj.pop("_path")
        try:
            tpl = PromptTemplate(**obj)
        except ValidationError as e:
            raise MalformedDocument(str(e), path) from e
        out[tpl.kind] = tpl
    return out


def get_template(kind: str, directory: Optional[str] = None) -> PromptTemplate:
    templates = load_templates(directory or TEMPLATES_DIR)
    if kind not in templates:
        raise MalformedDocument(f"no prompt template of kind '{kind}'", directory or TEMPLATES_DIR)
    return templates[kind]


def load_icl_store(path: Optional[str] = None) -> List[IclExample]:
    """Read line-delimited {source_caption, rewritten_caption} pairs."""
    path = path or DEFAULT_ICL_STORE
    store: List[IclExample] = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    store.append(IclExample(**json.loads(line)))
                except (json.JSONDecodeError, ValidationError, TypeError) as e:
                    raise MalformedDocument(f"line {lineno}: {e}", path) from e
    except OSError as e:
        raise MalformedDocument(f"cannot read ICL store: {e}", path) from e
    logger.debug("icl store path=%s examples=%d", path, len(store))
    return store
