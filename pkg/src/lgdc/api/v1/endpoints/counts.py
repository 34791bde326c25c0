from fastapi import APIRouter, Depends
from fastapi.concurrency import run_in_threadpool

from lgdc.dependencies import get_counting_service
from lgdc.schemas.counts import CountRequest, CountResponse
from lgdc.services.counting_service import CountingService

router = APIRouter()


@router.post("", response_model=CountResponse)
async def create_counts(
    request: CountRequest,
    service: CountingService = Depends(get_counting_service),
):
    """Adapt to the annotated support image and count every query."""
    return await run_in_threadpool(service.count, request)
