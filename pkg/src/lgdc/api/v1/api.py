from fastapi import APIRouter

from lgdc.api.v1.endpoints import counts

api_router = APIRouter()
api_router.include_router(counts.router, prefix="/counts", tags=["counts"])
