"""
Result caches for the expensive numeric calls (optimal frequencies,
solved link operating points).
"""
from __future__ import annotations

import functools
import logging
from collections.abc import Callable, Hashable
from typing import Any

__all__ = (
    "Memoize",
    "memoize",
    "memoize_method",
)


def _freeze(value: Any, digits: int) -> Hashable:
    """Make a cache key part; floats are cut to `digits` significant digits"""
    if isinstance(value, float):
        return float(f"{value:.{digits}g}")
    if isinstance(value, (tuple, list)):
        return tuple(_freeze(item, digits) for item in value)
    if isinstance(value, dict):
        return tuple(sorted((key, _freeze(val, digits)) for key, val in value.items()))
    return value


class Memoize:
    def __init__(
        self,
        fn: Callable[..., Any],
        maxsize: int | None = None,
        digits: int = 12,
        force_kwarg: str = "_memoize_force_new",
    ) -> None:
        """
        :param fn: function to memoize.

        :param maxsize: drop the oldest entry when the cache holds that many.

        :param digits: significant digits kept from float arguments in the key,
        so that values differing only by rounding noise share an entry.
        """
        self.log = logging.getLogger(f"{__name__}.{getattr(fn, '__name__', 'fn')}")
        self.fn = fn
        self.mem: dict[Hashable, Any] = {}
        self.maxsize = maxsize
        self.digits = digits
        self.force_kwarg = force_kwarg
        self.hits = 0
        self.misses = 0
        # Internal attribute, for `memoize_method`.
        self.skip_first_arg = False
        functools.update_wrapper(self, fn)

    def memoize_clear_mem(self) -> None:
        self.mem.clear()

    def make_key(self, ar: tuple, kwa: dict) -> Hashable:
        if self.skip_first_arg:
            ar = ar[1:]
        return (_freeze(ar, self.digits), _freeze(kwa, self.digits))

    def __call__(self, *ar: Any, **kwa: Any) -> Any:
        override = kwa.pop(self.force_kwarg, False)
        try:
            key = self.make_key(ar, kwa)
            hash(key)
        except TypeError:  # e.g. unhashable args
            self.log.warning("memoize: Trying to memoize unhashable args %r, %r", ar, kwa)
            return self.fn(*ar, **kwa)
        if not override and key in self.mem:
            self.hits += 1
            return self.mem[key]
        self.misses += 1
        res = self.fn(*ar, **kwa)
        if self.maxsize is not None and len(self.mem) >= self.maxsize:
            self.mem.pop(next(iter(self.mem)))
        self.mem[key] = res
        return res


def memoize(fn: Callable[..., Any] | None = None, **cfg: Any) -> Any:
    """`Memoize` as a decorator, with or without parameters.

    >>> calls = []
    >>> @memoize(digits=6)
    ... def square(value):
    ...     calls.append(value)
    ...     return value * value
    >>> square(0.1), square(0.1 + 1e-12), len(calls)
    (0.010000000000000002, 0.010000000000000002, 1)
    """
    if fn is not None:
        return Memoize(fn, **cfg)
    return lambda func: Memoize(func, **cfg)


def memoize_method(func: Callable[..., Any] | None = None, memo_attr: str | None = None, **cfg: Any):
    """`memoize` for a method, saving the cache on an instance attribute"""

    def configured(func: Callable[..., Any]):
        attr = memo_attr or f"_cached_{func.__name__}_{id(func):x}"

        @functools.wraps(func)
        def _memoized_method(self, *c_ar, **c_kwa):
            # Created on first use so that the cache lives as long as the instance.
            cache = getattr(self, attr, None)
            if cache is None:
                cache = Memoize(func, **cfg)
                cache.skip_first_arg = True
                setattr(self, attr, cache)
            return cache(self, *c_ar, **c_kwa)

        return _memoized_method

    if func is not None:
        return configured(func)
    return configured
