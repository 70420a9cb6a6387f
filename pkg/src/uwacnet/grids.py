"""
Grid construction for sweeps: float ranges and config grid descriptors.
"""
from __future__ import annotations

from collections.abc import Iterator, Mapping, Sequence
from typing import Any

import numpy as np

from .errors import BadConfig

__all__ = (
    "fxrange",
    "frange",
    "linear_grid",
    "log_grid",
    "parse_grid",
)


def fxrange(start: float, end: float | None = None, inc: float | None = None) -> Iterator[float]:
    """The xrange function for float

    >>> list(fxrange(0, 1, 0.25))
    [0.0, 0.25, 0.5, 0.75]
    """
    assert inc != 0, "inc should not be zero"
    if end is None:
        end = start
        start = 0.0
    if inc is None:
        inc = 1.0
    i = 0  # to prevent error accumulation
    while True:
        nextv = start + i * inc
        if inc > 0 and nextv >= end or inc < 0 and nextv <= end:
            break
        yield float(nextv)
        i += 1


def frange(start: float, end: float | None = None, inc: float | None = None) -> list[float]:
    """list(fxrange)"""
    return list(fxrange(start, end, inc))


def linear_grid(start: float, stop: float, count: int) -> np.ndarray:
    if count < 1:
        raise BadConfig(f"grid count must be positive, got {count}")
    return np.linspace(float(start), float(stop), int(count))


def log_grid(start: float, stop: float, count: int) -> np.ndarray:
    """Log-uniform grid including both ends

    >>> log_grid(0.1, 10, 3)[[0, -1]].tolist()
    [0.1, 10.0]
    """
    if count < 1:
        raise BadConfig(f"grid count must be positive, got {count}")
    if start <= 0 or stop <= 0:
        raise BadConfig(f"log grid needs positive bounds, got {start}..{stop}")
    return np.geomspace(float(start), float(stop), int(count))


def parse_grid(descriptor: Any, name: str = "grid") -> np.ndarray:
    """
    Grid from a config value: an explicit list, `{start, stop, count, scale}`
    or `{start, stop, step}` (stop included when hit exactly).

    >>> parse_grid([0.5, 1, 2]).tolist()
    [0.5, 1.0, 2.0]
    >>> parse_grid({"start": 0.5, "stop": 1.5, "step": 0.25}).tolist()
    [0.5, 0.75, 1.0, 1.25, 1.5]
    >>> parse_grid({"start": 1, "stop": 3, "count": 3}).tolist()
    [1.0, 2.0, 3.0]
    """
    if isinstance(descriptor, Mapping):
        unknown = set(descriptor) - {"start", "stop", "count", "scale", "step"}
        if unknown:
            raise BadConfig(f"{name}: unknown keys {sorted(unknown)}")
        try:
            start = float(descriptor["start"])
            stop = float(descriptor["stop"])
        except KeyError as exc:
            raise BadConfig(f"{name}: missing {exc.args[0]!r}") from exc
        if "step" in descriptor:
            step = float(descriptor["step"])
            if step <= 0:
                raise BadConfig(f"{name}: step must be positive")
            # Half a step past `stop` so that an exactly-hit end is included.
            values = frange(start, stop + step / 2, step)
            result = np.asarray(values, dtype=float)
        else:
            count = int(descriptor.get("count", 0))
            scale = descriptor.get("scale", "linear")
            if scale == "log":
                result = log_grid(start, stop, count)
            elif scale == "linear":
                result = linear_grid(start, stop, count)
            else:
                raise BadConfig(f"{name}: unknown scale {scale!r}")
    elif isinstance(descriptor, Sequence) and not isinstance(descriptor, str):
        result = np.asarray([float(value) for value in descriptor], dtype=float)
    else:
        raise BadConfig(f"{name}: expected a list or a mapping, got {descriptor!r}")
    if result.size == 0:
        raise BadConfig(f"{name}: empty grid")
    return result
