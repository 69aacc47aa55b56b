"""
Structured logging configuration
"""

import json
import logging
import sys
import traceback
from datetime import datetime, timezone
from typing import Any, Dict, Optional, Sequence

from berkson_md.core.config import settings

_RESERVED_ATTRS = frozenset(
    [
        "name",
        "msg",
        "args",
        "levelname",
        "levelno",
        "pathname",
        "filename",
        "module",
        "lineno",
        "funcName",
        "created",
        "msecs",
        "relativeCreated",
        "thread",
        "threadName",
        "processName",
        "process",
        "getMessage",
        "exc_info",
        "exc_text",
        "stack_info",
        "taskName",
        "message",
    ]
)


class JsonFormatter(logging.Formatter):
    """Formatter emitting one JSON object per record"""

    def format(self, record: logging.LogRecord) -> str:
        log_entry = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
            "service": settings.app_name,
            "environment": settings.environment,
        }

        if record.exc_info:
            log_entry["exception"] = {
                "type": record.exc_info[0].__name__,
                "message": str(record.exc_info[1]),
                "traceback": traceback.format_exception(*record.exc_info),
            }

        # Add custom attributes from extra
        for key, value in record.__dict__.items():
            if key not in _RESERVED_ATTRS and not key.startswith("_"):
                log_entry[key] = value

        return json.dumps(log_entry, default=str)


class TextFormatter(logging.Formatter):
    """Human-readable text formatter for terminals"""

    def format(self, record: logging.LogRecord) -> str:
        timestamp = datetime.now(timezone.utc).strftime("%Y-%m-%d %H:%M:%S")
        event = getattr(record, "event_type", None)
        event_info = f" [{event}]" if event else ""

        base_message = (
            f"{timestamp} - {record.name} - {record.levelname}"
            f"{event_info} - {record.getMessage()}"
        )

        if record.exc_info:
            base_message += "\n" + self.formatException(record.exc_info)

        return base_message


def setup_logging(level: Optional[str] = None, fmt: Optional[str] = None) -> None:
    """Setup application logging configuration"""

    log_level = getattr(logging, (level or settings.log_level).upper(), logging.INFO)

    if (fmt or settings.log_format) == "json":
        formatter: logging.Formatter = JsonFormatter()
    else:
        formatter = TextFormatter()

    root_logger = logging.getLogger()
    root_logger.setLevel(log_level)

    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    # stdout carries tables and results; logs go to stderr
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(log_level)
    console_handler.setFormatter(formatter)
    root_logger.addHandler(console_handler)

    loggers_config = {
        "concurrent.futures": logging.WARNING,
    }

    for logger_name, lvl in loggers_config.items():
        logger = logging.getLogger(logger_name)
        logger.setLevel(lvl)
        logger.propagate = True


def get_logger(name: str) -> logging.Logger:
    """Get a logger instance with proper configuration"""
    return logging.getLogger(name)


# Event logging helpers
def log_run_start(logger: logging.Logger, command: str, details: Dict[str, Any]) -> None:
    """Log the start of a CLI command or Monte Carlo run"""
    logger.info(
        f"Run started: {command}",
        extra={"event_type": "run_start", "command": command, **details},
    )


def log_run_end(
    logger: logging.Logger, command: str, success: bool, duration_ms: float
) -> None:
    """Log run completion"""
    level = logging.INFO if success else logging.ERROR
    logger.log(
        level,
        f"Run {command} {'succeeded' if success else 'failed'}",
        extra={
            "event_type": "run_end",
            "command": command,
            "success": success,
            "duration_ms": duration_ms,
        },
    )


def log_fit_completed(
    logger: logging.Logger,
    theta_hat: Sequence[float],
    objective: float,
    iterations: int,
    converged: bool,
) -> None:
    """Log the outcome of a minimum-distance fit"""
    level = logging.DEBUG if converged else logging.WARNING
    logger.log(
        level,
        f"Fit {'converged' if converged else 'did not converge'} "
        f"after {iterations} iteration(s)",
        extra={
            "event_type": "fit_completed",
            "theta_hat": list(theta_hat),
            "objective": objective,
            "iterations": iterations,
            "converged": converged,
        },
    )


def log_test_completed(
    logger: logging.Logger, d_hat: float, p_value: float, reject: bool
) -> None:
    """Log a lack-of-fit test decision"""
    logger.debug(
        "Lack-of-fit test completed",
        extra={
            "event_type": "test_completed",
            "d_hat": d_hat,
            "p_value": p_value,
            "reject": reject,
        },
    )


def log_replication_failure(
    logger: logging.Logger, rep: int, seed: int, reason: str
) -> None:
    """Log an excluded Monte Carlo replication"""
    logger.warning(
        f"Replication {rep} excluded: {reason}",
        extra={
            "event_type": "replication_failure",
            "rep": rep,
            "seed": seed,
            "reason": reason,
        },
    )


def log_bandwidth_warning(logger: logging.Logger, message: str, exponent: float) -> None:
    """Log a bandwidth rate outside the admissible range"""
    logger.warning(
        message,
        extra={"event_type": "bandwidth_warning", "h_exponent": exponent},
    )


def log_floored_nodes(logger: logging.Logger, floored: int, total: int) -> None:
    """Log grid nodes whose density estimate hit the floor"""
    if floored:
        logger.debug(
            f"{floored} of {total} grid nodes floored",
            extra={
                "event_type": "floored_nodes",
                "floored_nodes": floored,
                "grid_nodes": total,
            },
        )
