import logging
import sys
import time
import uuid
from contextvars import ContextVar, Token
from typing import Optional

import structlog

# Correlation ids; HTTP requests reuse run_id
run_id_var: ContextVar[Optional[str]] = ContextVar("run_id", default=None)
scene_id_var: ContextVar[Optional[str]] = ContextVar("scene_id", default=None)


def setup_logging(log_level: str = "INFO", json_logs: bool = True, enable_access_log: bool = False):
    """
    Set up structured logging for the engine.

    Args:
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        json_logs: Render JSON lines; otherwise a human-readable console format
        enable_access_log: Whether to keep uvicorn access logs when serving
    """

    def add_app_info(logger, method_name, event_dict):
        event_dict["app"] = "lgdc"
        return event_dict

    def add_run_context(logger, method_name, event_dict):
        run_id = run_id_var.get()
        scene_id = scene_id_var.get()

        if run_id:
            event_dict["run_id"] = run_id
        if scene_id:
            event_dict["scene_id"] = scene_id

        return event_dict

    shared_processors = [
        structlog.contextvars.merge_contextvars,
        structlog.stdlib.add_log_level,
        structlog.stdlib.add_logger_name,
        structlog.processors.TimeStamper(fmt="iso"),
        structlog.processors.StackInfoRenderer(),
        structlog.processors.format_exc_info,
        add_app_info,
        add_run_context,
    ]

    structlog.configure(
        processors=[
            *shared_processors,
            structlog.stdlib.ProcessorFormatter.wrap_for_formatter,
        ],
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )

    renderer = structlog.processors.JSONRenderer() if json_logs else structlog.dev.ConsoleRenderer(colors=False)
    formatter = structlog.stdlib.ProcessorFormatter(
        foreign_pre_chain=shared_processors,
        processor=renderer,
    )

    # stdout carries CLI tables and reports
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(formatter)

    root_logger = logging.getLogger()
    root_logger.handlers.clear()
    root_logger.addHandler(handler)
    root_logger.setLevel(getattr(logging, log_level.upper()))

    access_logger = logging.getLogger("uvicorn.access")
    if not enable_access_log:
        access_logger.disabled = True
    else:
        access_logger.handlers.clear()
        access_logger.addHandler(handler)
        access_logger.setLevel(getattr(logging, log_level.upper()))


def get_logger(module_name: str) -> structlog.stdlib.BoundLogger:
    """Get a structured logger instance for the given module."""
    return structlog.get_logger(module_name)


class LoggingContext:
    """Context manager binding run and scene ids to every log line inside it."""

    def __init__(self, run_id: Optional[str] = None, scene_id: Optional[str] = None):
        self.run_id = run_id or uuid.uuid4().hex[:12]
        self.scene_id = scene_id
        self.run_token: Optional[Token[Optional[str]]] = None
        self.scene_token: Optional[Token[Optional[str]]] = None

    def __enter__(self):
        self.run_token = run_id_var.set(self.run_id)
        if self.scene_id:
            self.scene_token = scene_id_var.set(self.scene_id)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if self.run_token is not None:
            run_id_var.reset(self.run_token)
        if self.scene_token is not None:
            scene_id_var.reset(self.scene_token)


class PerformanceTimer:
    """Context manager for timing operations."""

    def __init__(self, logger: structlog.stdlib.BoundLogger, operation: str, **context):
        self.logger = logger
        self.operation = operation
        self.context = context
        self.start_time: Optional[float] = None
        self.duration: Optional[float] = None

    def __enter__(self):
        self.start_time = time.perf_counter()
        self.logger.info("operation_started", operation=self.operation, **self.context)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if self.start_time is None:
            return
        self.duration = time.perf_counter() - self.start_time

        if exc_type is not None:
            self.logger.error(
                "operation_failed",
                operation=self.operation,
                duration_seconds=self.duration,
                error=str(exc_val),
                error_type=exc_type.__name__,
                **self.context,
            )
        else:
            self.logger.info(
                "operation_completed",
                operation=self.operation,
                duration_seconds=self.duration,
                **self.context,
            )
