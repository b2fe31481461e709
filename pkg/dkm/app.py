import os
import sys
import json
import time
import logging
import argparse
from pathlib import Path
from typing import List, Optional, Sequence

from pydantic import ValidationError

try:
    from .commands import router
    from .config import RunConfig, json_logs_requested, load_run_config, log_level
    from .utils import (
        SERVICE_NAME, ConfigError, DataError, DKMError,
        create_error_report, generate_error_id, log_run_error,
    )
except ImportError:
    # For direct execution without package structure
    from commands import router
    from config import RunConfig, json_logs_requested, load_run_config, log_level
    from utils import (
        SERVICE_NAME, ConfigError, DataError, DKMError,
        create_error_report, generate_error_id, log_run_error,
    )

# Try to import JSON logger for production, fall back to plain logging
try:
    from pythonjsonlogger import jsonlogger
    HAS_JSON_LOGGER = True
except ImportError:
    HAS_JSON_LOGGER = False

# Error monitoring is optional and only wired up when a DSN is configured
try:
    import sentry_sdk
    from sentry_sdk.integrations.logging import LoggingIntegration
    HAS_SENTRY_SDK = True
except ImportError:
    HAS_SENTRY_SDK = False

logger = logging.getLogger(__name__)


def setup_logging(level: Optional[str] = None, diagnostics_path: Optional[Path] = None) -> logging.Logger:
    """Configure the root logger; diagnostics go to stderr and optionally a file."""
    root = logging.getLogger()
    root.setLevel((level or log_level()).upper())

    # Remove default handlers
    for handler in root.handlers[:]:
        root.removeHandler(handler)

    if HAS_JSON_LOGGER and json_logs_requested():
        formatter = jsonlogger.JsonFormatter(
            '%(asctime)s %(name)s %(levelname)s %(message)s %(service)s %(beta)s %(level)s %(machine)s %(duration)s',
            timestamp=True
        )
    else:
        formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        )

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(formatter)
    root.addHandler(handler)

    if diagnostics_path is not None:
        file_handler = logging.FileHandler(diagnostics_path, mode="w")
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)

    return logging.getLogger(__name__)


def setup_error_monitoring() -> bool:
    dsn = os.getenv("SENTRY_DSN")
    if not dsn or not HAS_SENTRY_SDK:
        return False
    # Only ERROR records become events
    sentry_logging = LoggingIntegration(level=logging.ERROR, event_level=logging.ERROR)
    sentry_sdk.init(
        dsn=dsn,
        integrations=[sentry_logging],
        environment=os.getenv("ENVIRONMENT", "development"),
        traces_sample_rate=0.0,
    )
    logger.info("Error monitoring enabled", extra={"service": SERVICE_NAME})
    return True


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--beta", type=float, help="single diffusion parameter")
    common.add_argument("--level", type=int, help="single deepening level")
    common.add_argument("--out", type=Path, help="output path")
    common.add_argument("--seed", type=int, help="master seed (sbm seed for generate)")
    common.add_argument("--threads", type=int, help="worker threads for the sweep")
    common.add_argument("--diagnostics", type=Path, help="also write diagnostics to this file")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")

    parser = argparse.ArgumentParser(prog="dkm", description="Deep kernel machines for graph node classification")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, command in router.commands.items():
        subparsers.add_parser(name, parents=[common], help=command.help, description=command.help)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.beta is not None:
        values["beta_grid"] = [args.beta]
    if args.level is not None:
        values["levels"] = [args.level]
    if args.out is not None:
        values["output"] = args.out
    if args.seed is not None:
        values[router.get(args.command).seed_field] = args.seed
    if args.threads is not None:
        values["threads"] = args.threads
    return load_run_config(args.config, args.overrides, **values)


def _report_failure(error: DKMError, command: Optional[str]) -> int:
    error_id = generate_error_id()
    context = {"command": command, **error.context}
    log_run_error(
        error=error,
        error_type=error.error_type,
        message=error.message,
        context=context,
        error_id=error_id,
        exit_code=error.exit_code,
    )
    report = create_error_report(
        error_type=error.error_type,
        message=error.message,
        exit_code=error.exit_code,
        error_id=error_id,
        context=context,
        expose_details=True,
    )
    print(json.dumps(report, default=str), file=sys.stderr)
    return error.exit_code


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command; returns the process exit code (0, 2, 3 or 4)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else ConfigError.exit_code

    try:
        setup_logging(args.log_level, args.diagnostics)
    except (OSError, ValueError) as e:
        print(f"cannot set up diagnostics: {e}", file=sys.stderr)
        return ConfigError.exit_code
    setup_error_monitoring()

    started = time.time()
    logger.info(f"Running {args.command}", extra={"command": args.command, "service": SERVICE_NAME})
    try:
        config = config_from_args(args)
        written: List[Path] = router.dispatch(args.command, config)
    except DKMError as e:
        return _report_failure(e, args.command)
    except ValidationError as e:
        return _report_failure(ConfigError(f"invalid configuration: {e}"), args.command)
    except OSError as e:
        return _report_failure(DataError(f"{e.strerror or e}: {e.filename}", {"path": str(e.filename)}), args.command)

    logger.info(
        f"{args.command} finished",
        extra={
            "command": args.command,
            "outputs": [str(p) for p in written],
            "duration": round(time.time() - started, 3),
            "exit_code": 0,
            "service": SERVICE_NAME,
        },
    )
    return 0
