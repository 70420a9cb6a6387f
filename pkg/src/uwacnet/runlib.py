""" Logging setup for the command-line runs """

from __future__ import annotations

import logging
from typing import Any

__all__ = (
    "init_logging",
    "BASIC_LOG_FORMAT",
)


def _make_short_levelnames(shortnum: bool = True) -> dict[int, str]:
    """Return a dict (levelnum -> levelname) with short names for logging.
    `shortnum`: also shorten all 'Level #' names to 'L##'.
    """
    names = {
        logging.DEBUG: "DBG",
        logging.INFO: "INFO",
        logging.WARNING: "WARN",
        logging.ERROR: "ERR",
        logging.CRITICAL: "CRIT",
    }
    if shortnum:
        for idx in range(1, 100):
            names.setdefault(idx, f"L{idx:02d}")
    return names


BASIC_LOG_FORMAT = "%(asctime)s: %(levelname)-13s: %(name)s: %(message)s"
BASIC_LOG_FORMAT_TD = "%(asctime)s(+%(time_diff)5.3fs): %(levelname)-13s: %(name)s: %(message)s"
RUN_CONTEXT_PREFIX = "[%(run_context)s] "


def init_logging(
    level: int = logging.INFO,
    colored: bool = True,
    time_diff: bool = False,
    run_context: tuple[str, int | None] | None = None,
    short_levelnames: bool = True,
    **kwargs: Any,
) -> None:
    """Simple shorthand for neat and customizable logging init"""
    coloredlogs: Any = None
    if colored:
        # https://pypi.python.org/pypi/coloredlogs
        try:
            import coloredlogs
        except Exception:  # pylint: disable=broad-except
            coloredlogs = None

    if short_levelnames:
        for lvl, name in _make_short_levelnames().items():
            logging.addLevelName(lvl, name)

    logformat = BASIC_LOG_FORMAT_TD if time_diff else BASIC_LOG_FORMAT
    if run_context is not None:
        logformat = RUN_CONTEXT_PREFIX + logformat
    kwargs.setdefault("format", logformat)
    kwargs["level"] = level

    if coloredlogs is not None:
        kwargs["fmt"] = kwargs.pop("format")
        coloredlogs.install(**kwargs)
    else:
        kwargs.setdefault("force", True)
        logging.basicConfig(**kwargs)

    filters: list[logging.Filter] = []
    if time_diff:
        from .logging_annotators import TimeDiffAnnotator

        filters.append(TimeDiffAnnotator())
    if run_context is not None:
        from .logging_annotators import RunContextAnnotator

        filters.append(RunContextAnnotator(*run_context))
    # Filters go on the handlers: records from child loggers skip the root logger's filters.
    for handler in logging.root.handlers:
        for flt in filters:
            handler.addFilter(flt)
