"""
Logger configuration for FEM Impute using Loguru.

One logger serves the CLI, the library and the HTTP service:
- Colored console output on stderr (stdout is reserved for CLI results)
- Optional rotating files under ``settings.LOG_DIR``
- Tagged lines (REQUEST, PERFORMANCE, FIT) routed to their own files
"""

import sys
from datetime import datetime
from pathlib import Path
from typing import Optional

from fastapi import Request
from loguru import logger

from app.config.settings import settings

CONSOLE_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>"
)
FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}"
TAGGED_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {message}"

# (file name, level, rotation, retention, message tag or None)
FILE_SINKS = [
    ("app.log", "DEBUG", "10 MB", "7 days", None),
    ("errors.log", "ERROR", "5 MB", "30 days", None),
    ("requests.log", "INFO", "20 MB", "14 days", "REQUEST"),
    ("performance.log", "INFO", "10 MB", "7 days", "PERFORMANCE"),
    ("fits.log", "DEBUG", "20 MB", "7 days", "FIT"),
]


def _tag_filter(tag: str):
    return lambda record: record["message"].startswith(tag)


class LoguruConfig:
    """Loguru configuration class for the application."""

    def __init__(self, app_name: str = "fem-impute", logs_dir: Optional[str] = None):
        self.app_name = app_name
        self.logs_dir = Path(logs_dir or settings.LOG_DIR)

    def setup_logger(self, log_level: str = "INFO", log_to_files: bool = False) -> None:
        """Replace all handlers: console on stderr, plus file sinks when enabled."""
        logger.remove()
        logger.add(sys.stderr, format=CONSOLE_FORMAT, level=log_level, colorize=True, backtrace=True, diagnose=False)

        if not log_to_files:
            return

        self.logs_dir.mkdir(parents=True, exist_ok=True)
        for name, level, rotation, retention, tag in FILE_SINKS:
            logger.add(
                self.logs_dir / name,
                format=FILE_FORMAT if tag is None else TAGGED_FORMAT,
                level=level,
                rotation=rotation,
                retention=retention,
                compression="zip",
                encoding="utf-8",
                filter=None if tag is None else _tag_filter(tag),
                backtrace=level == "ERROR",
            )


def log_request_start(request: Request) -> None:
    """Log the start of a request using Loguru."""
    logger.info(
        "REQUEST START: {method} {path}",
        method=request.method,
        path=request.url.path,
        client_ip=request.client.host if request.client else None,
        timestamp=datetime.now().isoformat(),
    )


def log_request_end(request: Request, status_code: int, process_time: float) -> None:
    """Log the completion of a request using Loguru."""
    logger.info(
        "REQUEST END: {method} {path} - {status_code} ({process_time:.4f}s)",
        method=request.method,
        path=request.url.path,
        status_code=status_code,
        process_time=round(process_time, 4),
    )


def log_request_error(request: Request, error: Exception, process_time: float) -> None:
    """Log a request error using Loguru."""
    logger.error(
        "REQUEST ERROR: {method} {path} - {error} ({process_time:.4f}s)",
        method=request.method,
        path=request.url.path,
        error=str(error),
        process_time=round(process_time, 4),
        error_type=type(error).__name__,
    )


def log_performance(operation: str, duration: float, **kwargs) -> None:
    """Log wall time of a fit, an imputation or a benchmark replicate."""
    logger.info(
        "PERFORMANCE: {operation} completed in {duration:.4f}s",
        operation=operation,
        duration=duration,
        **kwargs,
    )


def log_fit_iteration(method: str, iteration: int, loglik: float, change: float) -> None:
    """Per-iteration trace of an EM fit (DEBUG)."""
    logger.debug(
        "FIT {method} iteration {iteration}: loglik={loglik:.6f}, max relative change={change:.3e}",
        method=method.upper(),
        iteration=iteration,
        loglik=loglik,
        change=change,
    )


def set_log_level(log_level: str) -> None:
    """Reconfigure the console level (CLI --verbose / --quiet)."""
    loguru_config.setup_logger(log_level=log_level, log_to_files=settings.LOG_TO_FILES)


loguru_config = LoguruConfig()
loguru_config.setup_logger(log_level=settings.effective_log_level, log_to_files=settings.LOG_TO_FILES)

app_logger = logger
