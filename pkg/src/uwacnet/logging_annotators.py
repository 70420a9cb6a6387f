"""
Logging: annotating filters

https://docs.python.org/3/howto/logging-cookbook.html#adding-contextual-information-to-your-logging-output
"""
from __future__ import annotations

import logging
import time
from typing import Any

__all__ = (
    "Annotator",
    "TimeDiffAnnotator",
    "RunContextAnnotator",
)


_not_available = object()


class Annotator(logging.Filter):
    """A convenience abstract class for most annotators"""

    attribute_name: str | None = None
    # Shortcut for using the previously generated value.
    use_cached_value = True

    def __init__(self, *args: Any, **kwargs: Any) -> None:
        self.attribute_name = kwargs.pop("attribute_name", None) or self.attribute_name
        if self.attribute_name is None:
            raise Exception("attribute_name should either be on class or always specified")
        super().__init__(*args, **kwargs)

    def get_value(self, record: logging.LogRecord) -> Any:
        raise NotImplementedError

    def _get_value_cached(self, record: logging.LogRecord) -> Any:
        assert self.attribute_name
        value = getattr(record, self.attribute_name, _not_available)
        if value is not _not_available:
            return value
        return self.get_value(record)

    def filter(self, record: logging.LogRecord) -> bool:
        """“annotate”, actually"""
        assert self.attribute_name
        if self.use_cached_value:
            value = self._get_value_cached(record)
        else:
            value = self.get_value(record)
        setattr(record, self.attribute_name, value)
        return True


class TimeDiffAnnotator(Annotator):
    """Adds `time_diff`: seconds since the previous log line of the process.
    Handy for spotting the slow parts of a sweep."""

    attribute_name = "time_diff"

    def __init__(self, *args: Any, **kwargs: Any) -> None:
        self.last_ts = time.time()
        super().__init__(*args, **kwargs)

    def get_value(self, record: logging.LogRecord) -> float:
        now = time.time()
        result = now - self.last_ts
        self.last_ts = now
        return result


class RunContextAnnotator(Annotator):
    """Adds `run_context` (`command` and `seed` of the CLI run)"""

    attribute_name = "run_context"

    def __init__(self, command: str, seed: int | None, *args: Any, **kwargs: Any) -> None:
        self.value = f"{command}#{seed}" if seed is not None else command
        super().__init__(*args, **kwargs)

    def get_value(self, record: logging.LogRecord) -> str:
        return self.value
