import os
import logging
import uuid
from datetime import datetime, timezone
from typing import Optional

logger = logging.getLogger(__name__)

SERVICE_NAME = "dkm"


# Error hierarchy; exit codes are part of the command-line contract
class DKMError(Exception):
    error_type = "DKMError"
    exit_code = 1

    def __init__(self, message: str, context: Optional[dict] = None):
        super().__init__(message)
        self.message = message
        self.context = dict(context or {})


class ConfigError(DKMError):
    error_type = "ConfigError"
    exit_code = 2


class DataError(DKMError):
    error_type = "DataError"
    exit_code = 3


class NumericalError(DKMError):
    error_type = "NumericalError"
    exit_code = 4


class DegenerateKernelError(NumericalError):
    """All points coincide in feature space; the bandwidth collapses."""

    error_type = "DegenerateKernelError"

    def __init__(self, message: str, depth: Optional[int] = None, context: Optional[dict] = None):
        context = dict(context or {})
        if depth is not None:
            context["depth"] = depth
        super().__init__(message, context)
        self.depth = depth


# Error reporting utilities
def generate_error_id() -> str:
    """Generate unique error ID for tracking"""
    return str(uuid.uuid4())


def create_error_report(
    error_type: str,
    message: str,
    exit_code: int,
    error_id: str,
    context: Optional[dict] = None,
    expose_details: bool = False
) -> dict:
    """Create standardized error report for a failed command"""
    report = {
        "error": error_type,
        "message": message,
        "exit_code": exit_code,
        "error_id": error_id,
        "timestamp": datetime.now(timezone.utc).isoformat()
    }

    # Only expose full context outside production
    if expose_details and context and os.getenv('ENVIRONMENT') != 'production':
        report["details"] = context
    elif context and "command" in context:
        report["command"] = context["command"]

    return report


def log_run_error(
    error: Exception,
    error_type: str,
    message: str,
    context: dict,
    error_id: str,
    level: str = "ERROR",
    exit_code: Optional[int] = None
):
    """Structured error logging for command failures"""
    log_data = {
        "error_id": error_id,
        "error_type": error_type,
        "error_message": message,
        "context": context,
        "service": SERVICE_NAME
    }

    if exit_code is not None:
        log_data["exit_code"] = exit_code
        if exit_code == 2:
            log_data["status_category"] = "config"
        elif exit_code == 3:
            log_data["status_category"] = "data"
        elif exit_code == 4:
            log_data["status_category"] = "numerical"
        else:
            log_data["status_category"] = "error"

    if os.getenv('ENVIRONMENT') != 'production':
        log_data["error_details"] = str(error)

    code_part = f" [exit {exit_code}]" if exit_code is not None else ""
    log_message = f"[{error_id}]{code_part} {error_type}: {message}"

    if level == "ERROR":
        logger.error(log_message, extra=log_data)
    elif level == "WARNING":
        logger.warning(log_message, extra=log_data)
    else:
        logger.info(log_message, extra=log_data)


def format_number(value: float, digits: int = 17) -> str:
    """Decimal rendering with a fixed number of significant digits."""
    return f"{float(value):.{digits}g}"
