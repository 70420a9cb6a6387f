"""
Package-wide exceptions.
"""
from __future__ import annotations

import functools
import logging
from collections.abc import Callable
from typing import Any

__all__ = (
    "UwacnetError",
    "DomainError",
    "Unreachable",
    "RateCapExceeded",
    "Infeasible",
    "NotConverged",
    "BadConfig",
    "Bailout",
    "exclogwrap",
)


class UwacnetError(Exception):
    """Base for everything raised on purpose by this package"""


class DomainError(UwacnetError, ValueError):
    """Input outside of the function's domain"""


class Unreachable(UwacnetError):
    """Requested target cannot be reached under the configured cap"""

    def __init__(self, message: str, cap: float | None = None) -> None:
        super().__init__(message)
        self.cap = cap


class RateCapExceeded(UwacnetError):
    """Cost model asked for a rate beyond its validity range"""

    def __init__(self, rate: float, cap: float) -> None:
        super().__init__(f"rate {rate:.6g} kbps exceeds the cost model cap of {cap:.6g} kbps")
        self.rate = rate
        self.cap = cap


class Infeasible(UwacnetError):
    """No feasible solution (e.g. the sinks are not reachable)"""


class NotConverged(UwacnetError):
    """Iteration budget exhausted; carries the best-found value"""

    def __init__(self, message: str, best: object = None, gap: float | None = None) -> None:
        super().__init__(message)
        self.best = best
        self.gap = gap


class BadConfig(UwacnetError, ValueError):
    """Unknown or invalid configuration"""


class Bailout(UwacnetError):
    """Cannot do as requested"""

    def __init__(self, message: str, exit_code: int = 2) -> None:
        super().__init__(message)
        self.exit_code = exit_code


def exclogwrap(func: Callable[..., Any] | None = None, name: str | None = None, log: Any = None):
    """
    Wrap the function to exception-log its exceptions.

    Useful for the per-trial workers whose failures are counted, not raised.
    """

    def exclogwrap_configured(func: Callable[..., Any]):
        name_actual = name if name is not None else getattr(func, "__name__", repr(func))
        logger = log or logging.getLogger(getattr(func, "__module__", __name__))

        @functools.wraps(func)
        def _wrapped(*ar: Any, **kwa: Any) -> Any:
            try:
                return func(*ar, **kwa)
            except Exception as exc:
                logger.exception("%r failed: %r", name_actual, exc)
                raise

        return _wrapped

    if func is not None:
        return exclogwrap_configured(func)
    return exclogwrap_configured
