"""
Structured logging for eagc-sim.

structlog renders every event (JSON or console). Events from structlog loggers
and plain stdlib records (numpy, scipy, third-party code) pass through the same
``ProcessorFormatter``, so both come out with a timestamp, level and logger
name. stderr and an optional rotating run log carry the rendered lines; stdout
is left to command output. Per-run fields (scenario, controller, seed) travel
as structlog context variables.
"""

import logging
import logging.handlers
import sys
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

try:
    import structlog
    STRUCTLOG_AVAILABLE = True
except ImportError:
    STRUCTLOG_AVAILABLE = False

from .config_loader import ConfigError, load_app_config

PLAIN_LAYOUT = "%(asctime)s %(levelname)-8s %(name)s | %(message)s"
ROTATE_BYTES = 8 * 1024 * 1024
ROTATE_KEEP = 3


def _shared_processors() -> List[Any]:
    """Processors applied to structlog events and stdlib records alike."""
    return [
        structlog.contextvars.merge_contextvars,
        structlog.stdlib.add_logger_name,
        structlog.stdlib.add_log_level,
        structlog.processors.TimeStamper(fmt="iso", utc=True),
        structlog.processors.StackInfoRenderer(),
    ]


def _renderer(log_format: str, colors: bool) -> Any:
    if log_format == "json":
        return structlog.processors.JSONRenderer(sort_keys=True)
    return structlog.dev.ConsoleRenderer(colors=colors)


def _formatter(log_format: str, colors: bool) -> logging.Formatter:
    if not STRUCTLOG_AVAILABLE:
        return logging.Formatter(PLAIN_LAYOUT)
    final: List[Any] = [structlog.stdlib.ProcessorFormatter.remove_processors_meta]
    if log_format == "json":
        final += [structlog.processors.format_exc_info, structlog.processors.dict_tracebacks]
    final.append(_renderer(log_format, colors))
    return structlog.stdlib.ProcessorFormatter(
        foreign_pre_chain=_shared_processors(),
        processors=final,
    )


def _build_handlers(
    level: int,
    log_format: str,
    to_stderr: bool,
    log_file: Optional[Path],
) -> List[logging.Handler]:
    handlers: List[logging.Handler] = []
    if to_stderr:
        stream = logging.StreamHandler(sys.stderr)
        stream.setFormatter(_formatter(log_format, colors=sys.stderr.isatty()))
        handlers.append(stream)
    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        rotating = logging.handlers.RotatingFileHandler(
            log_file, maxBytes=ROTATE_BYTES, backupCount=ROTATE_KEEP, encoding="utf-8",
        )
        rotating.setFormatter(_formatter(log_format, colors=False))
        handlers.append(rotating)
    for handler in handlers:
        handler.setLevel(level)
    return handlers


def _run_log_path(directory: Path) -> Path:
    return Path(directory) / f"eagc_sim_{datetime.now():%Y%m%d_%H%M%S}.log"


def _emit(logger: Any, level: str, message: str, fields: Dict[str, Any]) -> None:
    """Send one event through structlog keywords or stdlib ``extra``."""
    method = getattr(logger, level, logger.info)
    if STRUCTLOG_AVAILABLE:
        method(message, **fields)
    else:
        method(message, extra=fields)


def _present(**fields: Any) -> Dict[str, Any]:
    return {key: value for key, value in fields.items() if value is not None}


class SimLogger:
    """Process-wide logging setup plus helpers for simulator events."""

    def __init__(self) -> None:
        self._configured = False
        self._loggers: Dict[str, Any] = {}

    @property
    def configured(self) -> bool:
        return self._configured

    def configure_logging(
        self,
        log_level: str = "INFO",
        log_format: str = "text",
        output_path: Optional[Path] = None,
        console_output: bool = True,
        force: bool = False,
    ) -> None:
        """
        Install handlers on the root logger and configure structlog.

        Args:
            log_level: DEBUG, INFO, WARNING, ERROR or CRITICAL
            log_format: "json" or "text"
            output_path: Rotating log file, or None
            console_output: Write events to stderr
            force: Replace an earlier configuration
        """
        if self._configured and not force:
            return

        level = logging.getLevelName(log_level.upper())
        if not isinstance(level, int):
            level = logging.INFO

        if STRUCTLOG_AVAILABLE:
            structlog.configure(
                processors=[
                    structlog.stdlib.filter_by_level,
                    *_shared_processors(),
                    structlog.stdlib.ProcessorFormatter.wrap_for_formatter,
                ],
                wrapper_class=structlog.stdlib.BoundLogger,
                logger_factory=structlog.stdlib.LoggerFactory(),
                cache_logger_on_first_use=True,
            )

        root = logging.getLogger()
        root.handlers.clear()
        root.setLevel(level)
        for handler in _build_handlers(level, log_format, console_output, output_path):
            root.addHandler(handler)

        self._loggers.clear()
        self._configured = True

    def configure_from_app_config(self, level_override: Optional[str] = None) -> None:
        """Configure from config/app.yaml; an unreadable config gives text logging at INFO."""
        try:
            app_config = load_app_config()
        except (ConfigError, OSError):
            self.configure_logging(log_level=level_override or "INFO")
            return

        log_dir = app_config.log_output_path
        self.configure_logging(
            log_level=level_override or app_config.log_level.value,
            log_format=app_config.log_format,
            output_path=_run_log_path(log_dir) if log_dir is not None else None,
        )

    def get_logger(self, name: str) -> Any:
        """Return the cached logger for ``name``, configuring logging on first use."""
        if not self._configured:
            self.configure_from_app_config()
        if name not in self._loggers:
            self._loggers[name] = structlog.get_logger(name) if STRUCTLOG_AVAILABLE else logging.getLogger(name)
        return self._loggers[name]

    def add_context(self, **fields: Any) -> None:
        """Replace the context bound to every following event."""
        if STRUCTLOG_AVAILABLE:
            structlog.contextvars.clear_contextvars()
            structlog.contextvars.bind_contextvars(**fields)

    def clear_context(self) -> None:
        if STRUCTLOG_AVAILABLE:
            structlog.contextvars.clear_contextvars()

    def log_simulation_event(
        self,
        logger: Any,
        event_type: str,
        scenario: str,
        controller: Optional[str] = None,
        sim_time_s: Optional[float] = None,
        generator: Optional[str] = None,
        **extra: Any,
    ) -> None:
        """
        Log a run milestone.

        Args:
            logger: Target logger
            event_type: run_start, run_complete, stability_violation, divergence
            scenario: Scenario name
            controller: Controller kind
            sim_time_s: Simulated time of the event
            generator: Generator concerned
        """
        fields = {"event_type": event_type, "scenario": scenario, **extra}
        fields.update(_present(controller=controller, sim_time_s=sim_time_s, generator=generator))
        _emit(logger, "info", f"simulation {event_type}", fields)

    def log_performance_metrics(
        self,
        logger: Any,
        operation: str,
        duration_ms: float,
        steps_per_second: Optional[float] = None,
        **extra: Any,
    ) -> None:
        """Log wall time and integration throughput of an operation."""
        fields = {"operation": operation, "duration_ms": round(duration_ms, 3), **extra}
        fields.update(_present(steps_per_second=steps_per_second))
        _emit(logger, "info", f"{operation} finished", fields)

    def log_system_event(
        self,
        logger: Any,
        event_type: str,
        component: str,
        status: str = "info",
        message: Optional[str] = None,
        **extra: Any,
    ) -> None:
        """Log a process-level event; ``status`` picks the level (info, warning, error)."""
        fields = {"event_type": event_type, "component": component, "status": status, **extra}
        level = status.lower() if status.lower() in ("warning", "error") else "info"
        _emit(logger, level, message or f"{component} {event_type}", fields)


_manager: Optional[SimLogger] = None


def get_logger_manager() -> SimLogger:
    global _manager
    if _manager is None:
        _manager = SimLogger()
    return _manager


def get_logger(name: str) -> Any:
    return get_logger_manager().get_logger(name)


def add_context(**fields: Any) -> None:
    get_logger_manager().add_context(**fields)


def clear_context() -> None:
    get_logger_manager().clear_context()


def log_simulation_event(logger: Any, **kwargs: Any) -> None:
    get_logger_manager().log_simulation_event(logger, **kwargs)


def log_performance_metrics(logger: Any, **kwargs: Any) -> None:
    get_logger_manager().log_performance_metrics(logger, **kwargs)


def log_system_event(logger: Any, **kwargs: Any) -> None:
    get_logger_manager().log_system_event(logger, **kwargs)
