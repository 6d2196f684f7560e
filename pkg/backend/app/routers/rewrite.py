from __future__ import annotations

from fastapi import APIRouter, HTTPException

from ..schemas.models import CaptionResponse, PromptInput, PromptResponse, RuleRewriteInput
from ..services.errors import InsufficientExamples
from ..services.rewrite import build_rewrite_prompt, rule_rewrite, select_icl_examples
from ..services.templates import load_icl_store


router = APIRouter()


@router.post("/rewrite/rule", response_model=CaptionResponse)
def rewrite_rule(data: RuleRewriteInput):
    return CaptionResponse(caption=rule_rewrite(data.caption), method="rule_rewrite")


@router.post("/rewrite/prompt", response_model=PromptResponse)
def rewrite_prompt(data: PromptInput):
    """Build the ICL rewrite prompt without calling the endpoint."""
    try:
        examples = select_icl_examples(load_icl_store(), data.n_examples, data.seed)
        prompt = build_rewrite_prompt(data.caption, examples)
    except (InsufficientExamples, ValueError) as e:
        raise HTTPException(status_code=422, detail=str(e))
    return PromptResponse(prompt=prompt, examples=len(examples))
