from __future__ import annotations

from typing import Optional

from fastapi import APIRouter

from ..services.llm_client import DEFAULT_BASE_URL, chat_probe, llm_status


router = APIRouter()


@router.get("/llm/status")
def status(base_url: str = DEFAULT_BASE_URL, model: Optional[str] = None):
    return llm_status(base_url, model)


@router.get("/llm/ping")
def ping(base_url: str = DEFAULT_BASE_URL, model: Optional[str] = None):
    """Minimal chat completion against the rewrite endpoint; surfaces the provider's answer or error."""
    return chat_probe(base_url, model)
