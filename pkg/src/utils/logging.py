"""
Structured logging configuration for Gametodyn.

JSON records on stderr by default so command output on stdout stays
machine-readable.
"""

import logging
import sys
from datetime import datetime, timezone
from typing import Any, Dict, Optional

import structlog
from pythonjsonlogger import jsonlogger


class GametodynFormatter(jsonlogger.JsonFormatter):
    """Custom JSON formatter for Gametodyn logs."""

    def add_fields(self, log_record: Dict[str, Any], record: logging.LogRecord, message_dict: Dict[str, Any]):
        """Add custom fields to log records."""
        super().add_fields(log_record, record, message_dict)

        log_record['timestamp'] = datetime.now(timezone.utc).isoformat()
        log_record['service'] = 'gametodyn'

        if hasattr(record, 'patient_id'):
            log_record['patient_id'] = record.patient_id


def setup_logging(log_level: str = "INFO", service_name: str = "gametodyn",
                  json_output: bool = True, log_file: Optional[str] = None):
    """
    Setup structured logging for Gametodyn.

    Args:
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        service_name: Name of the service for log identification
        json_output: Render JSON (True) or human-readable console lines
        log_file: Optional path receiving all records
    """
    level = getattr(logging, str(log_level).upper(), None)
    if not isinstance(level, int):
        raise ValueError(f"Unknown log level: {log_level}")

    renderer = (structlog.processors.JSONRenderer() if json_output
                else structlog.dev.ConsoleRenderer(colors=False))

    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.UnicodeDecoder(),
            renderer,
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )

    root_logger = logging.getLogger()
    root_logger.setLevel(level)

    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    if json_output:
        formatter = GametodynFormatter('%(timestamp)s %(levelname)s %(name)s %(message)s')
    else:
        formatter = logging.Formatter('%(message)s')

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(formatter)
    root_logger.addHandler(console_handler)

    if log_file:
        file_handler = logging.FileHandler(log_file)
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(GametodynFormatter('%(timestamp)s %(levelname)s %(name)s %(message)s'))
        root_logger.addHandler(file_handler)

    return structlog.get_logger(service_name)


class LogContext:
    """Context manager for adding structured logging context."""

    def __init__(self, logger, **context):
        self.logger = logger
        self.context = context
        self.bound_logger = None

    def __enter__(self):
        self.bound_logger = self.logger.bind(**self.context)
        return self.bound_logger

    def __exit__(self, exc_type, exc_val, exc_tb):
        if exc_type:
            self.bound_logger.error(
                "Exception in context",
                exc_type=exc_type.__name__,
                exc_value=str(exc_val)
            )


def get_logger(name: str) -> structlog.BoundLogger:
    """Get a structured logger instance."""
    return structlog.get_logger(name)


class PerformanceLogger:
    """Logger for run durations."""

    def __init__(self, logger: structlog.BoundLogger):
        self.logger = logger

    def log_simulation(self, model: str, records: int, duration: float, rows: int = 1):
        """Log one (possibly batched) simulation."""
        self.logger.debug(
            "Simulation finished",
            model=model,
            records=records,
            rows=rows,
            duration_ms=duration * 1000
        )

    def log_fit(self, patient_id: str, model: str, evaluations: int, duration: float):
        """Log a completed parameter fit."""
        self.logger.info(
            "Fit finished",
            patient_id=patient_id,
            model=model,
            evaluations=evaluations,
            duration_ms=duration * 1000
        )

    def log_file_write(self, path: str, rows: int, duration: float):
        """Log a result file write."""
        self.logger.info(
            "File written",
            path=path,
            rows=rows,
            duration_ms=duration * 1000
        )
