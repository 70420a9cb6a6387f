"""
Order-preserving fan-out of independent work items (grid points, trials,
deployments) over worker processes.
"""
from __future__ import annotations

import logging
from collections.abc import Callable, Iterable
from concurrent.futures import ProcessPoolExecutor
from typing import TypeVar

__all__ = ("map_ordered",)

_log = logging.getLogger(__name__)

TItem = TypeVar("TItem")
TRet = TypeVar("TRet")


def map_ordered(
    func: Callable[[TItem], TRet], items: Iterable[TItem], threads: int = 1, chunksize: int = 1
) -> list[TRet]:
    """
    `[func(item) for item in items]`, in worker processes when `threads > 1`.

    `func` must be a module-level function; results come back in input order.

    >>> map_ordered(abs, [-1, 2, -3])
    [1, 2, 3]
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    _log.debug("Running %d items on %d processes", len(items), threads)
    with ProcessPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(func, items, chunksize=chunksize))
