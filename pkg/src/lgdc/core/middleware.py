import time

from fastapi import Request
from starlette.middleware.base import BaseHTTPMiddleware
from starlette.responses import JSONResponse

from lgdc.core.logger import LoggingContext, get_logger

logger = get_logger(__name__)


class LoggingMiddleware(BaseHTTPMiddleware):
    """Logs every request with a correlation id echoed back as ``X-Request-ID``."""

    async def dispatch(self, request: Request, call_next):
        request_id = request.headers.get("X-Request-ID") or str(time.time_ns())
        request.state.request_id = request_id

        with LoggingContext(run_id=request_id):
            logger.info(
                "request_started",
                method=request.method,
                path=request.url.path,
                client_ip=request.client.host if request.client else "unknown",
                content_length=request.headers.get("content-length"),
            )
            start_time = time.perf_counter()

            try:
                response = await call_next(request)
            except Exception as exc:
                logger.error(
                    "request_failed",
                    method=request.method,
                    path=request.url.path,
                    duration_seconds=time.perf_counter() - start_time,
                    error=str(exc),
                    error_type=type(exc).__name__,
                )
                return JSONResponse(
                    status_code=500,
                    content={"detail": "Internal server error", "request_id": request_id},
                    headers={"X-Request-ID": request_id},
                )

            logger.info(
                "request_completed",
                method=request.method,
                path=request.url.path,
                status_code=response.status_code,
                duration_seconds=time.perf_counter() - start_time,
            )
            response.headers["X-Request-ID"] = request_id
            return response
