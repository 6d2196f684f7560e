from __future__ import annotations

from fastapi import APIRouter, HTTPException

from ..schemas.models import CaptionResponse, DetectionCaptionInput, ProportionCaptionInput, ProportionEntry
from ..services import captioner


router = APIRouter()


@router.post("/caption/detections", response_model=CaptionResponse)
def caption_detections(data: DetectionCaptionInput):
    if data.spatial:
        text = captioner.a2c_caption_spatial(data.objects, data.width, data.height)
        return CaptionResponse(caption=text, method="a2c_spatial")
    return CaptionResponse(caption=captioner.a2c_caption(data.objects), method="a2c")


@router.post("/caption/proportions", response_model=CaptionResponse)
def caption_proportions(data: ProportionCaptionInput):
    """SA2C text from precomputed category percents."""
    try:
        entries = [ProportionEntry(category=k, percent=v) for k, v in data.proportions.items()]
        text = captioner.caption_from_proportions(entries, data.threshold_percent)
    except ValueError as e:
        raise HTTPException(status_code=422, detail=str(e))
    return CaptionResponse(caption=text, method="sa2c")
