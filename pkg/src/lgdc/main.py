from contextlib import asynccontextmanager
from datetime import datetime

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from lgdc.api.v1.api import api_router
from lgdc.core.config import config
from lgdc.core.exceptions import AllSamplesDegenerate, DataError, LGDCError
from lgdc.core.logger import get_logger, setup_logging
from lgdc.core.middleware import LoggingMiddleware

logger = get_logger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    setup_logging(config.LOG_LEVEL, config.LOG_JSON)
    logger.info("application_startup", service="lgdc", checkpoint=config.CHECKPOINT_PATH)
    yield
    logger.info("application_shutdown", service="lgdc")


app = FastAPI(
    title=config.PROJECT_NAME,
    description="One-shot crowd counting with local-to-global density guidance",
    version="0.1.0",
    openapi_url=f"{config.API_V1_STR}/openapi.json",
    lifespan=lifespan,
)

app.add_middleware(LoggingMiddleware)

app.include_router(api_router, prefix=config.API_V1_STR)

start_time = datetime.now()


def _error_response(request: Request, status_code: int, exc: Exception) -> JSONResponse:
    return JSONResponse(
        status_code=status_code,
        content={
            "detail": str(exc),
            "error_type": type(exc).__name__,
            "request_id": getattr(request.state, "request_id", "unknown"),
        },
    )


@app.exception_handler(AllSamplesDegenerate)
async def degenerate_support_handler(request: Request, exc: AllSamplesDegenerate):
    logger.warning("degenerate_support_rejected", path=request.url.path, error=str(exc))
    return _error_response(request, 409, exc)


@app.exception_handler(DataError)
async def data_error_handler(request: Request, exc: DataError):
    logger.warning("invalid_input_rejected", path=request.url.path, error=str(exc), error_type=type(exc).__name__)
    return _error_response(request, 422, exc)


@app.exception_handler(LGDCError)
async def engine_error_handler(request: Request, exc: LGDCError):
    logger.error("engine_error", path=request.url.path, error=str(exc), error_type=type(exc).__name__)
    return _error_response(request, 400 if exc.exit_code == 2 else 500, exc)


@app.exception_handler(Exception)
async def global_exception_handler(request: Request, exc: Exception):
    """Handle all unhandled exceptions globally."""
    logger.error(
        "unhandled_exception",
        error=str(exc),
        path=request.url.path,
        method=request.method,
        exc_info=True,
    )
    return JSONResponse(
        status_code=500,
        content={
            "detail": "Internal server error",
            "request_id": getattr(request.state, "request_id", "unknown"),
        },
    )


@app.get("/health")
async def health():
    """A simple, fast liveness check."""
    current_time = datetime.now()
    uptime = current_time - start_time

    days = uptime.days
    hours, remainder = divmod(uptime.seconds, 3600)
    minutes, seconds = divmod(remainder, 60)

    logger.debug("health_check_requested", uptime_seconds=uptime.total_seconds())

    return JSONResponse(
        content={
            "status": "OK",
            "start_time": start_time.isoformat(),
            "current_time": current_time.isoformat(),
            "uptime": f"{days}d {hours}hrs {minutes}mins {seconds}s",
        },
        status_code=200,
    )
