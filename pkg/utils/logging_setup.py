"""Console logging for CLI commands and module entry points."""

import logging
import os
from typing import Optional

import structlog
from rich.logging import RichHandler


def configure_logging(level: Optional[str] = None) -> None:
    """
    Route stdlib logging through structlog's renderer onto a rich console handler.

    Modules keep using logging.getLogger(__name__); this only decides how
    records look. TAULAB_LOG_LEVEL overrides the default INFO level.
    """
    level_name = (level or os.getenv("TAULAB_LOG_LEVEL") or "INFO").upper()

    shared = [
        structlog.stdlib.add_log_level,
        structlog.stdlib.add_logger_name,
        structlog.processors.TimeStamper(fmt="%H:%M:%S"),
    ]
    structlog.configure(
        processors=shared + [structlog.stdlib.ProcessorFormatter.wrap_for_formatter],
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=True,
    )
    formatter = structlog.stdlib.ProcessorFormatter(
        foreign_pre_chain=shared,
        processors=[
            structlog.stdlib.ProcessorFormatter.remove_processors_meta,
            structlog.dev.ConsoleRenderer(colors=False),
        ],
    )
    handler = RichHandler(show_time=False, show_level=False, show_path=False, markup=False)
    handler.setFormatter(formatter)

    root = logging.getLogger()
    root.handlers.clear()
    root.addHandler(handler)
    root.setLevel(level_name)
