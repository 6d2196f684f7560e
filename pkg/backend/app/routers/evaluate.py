from __future__ import annotations

from fastapi import APIRouter, HTTPException

from ..schemas.models import CaptionEvalInput, CaptionEvalReport, RetrievalInput, RetrievalReport
from ..services.metrics import evaluate_captions
from ..services.retrieval import evaluate_retrieval


router = APIRouter()


@router.post("/eval/captions", response_model=CaptionEvalReport, response_model_by_alias=True)
def eval_captions(data: CaptionEvalInput, smoothing: bool = False):
    try:
        return evaluate_captions(data.items, smoothing=smoothing)
    except ValueError as e:
        raise HTTPException(status_code=422, detail=str(e))


@router.post("/eval/retrieval", response_model=RetrievalReport, response_model_by_alias=True)
def eval_retrieval(data: RetrievalInput):
    try:
        return evaluate_retrieval(data.scores)
    except ValueError as e:
        raise HTTPException(status_code=422, detail=str(e))
