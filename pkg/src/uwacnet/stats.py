"""
Small statistics helpers for the Monte-Carlo studies.
"""
from __future__ import annotations

import math
from collections.abc import Iterable, Iterator
from typing import Any

from scipy import stats as sp_stats

__all__ = (
    "pair_window",
    "IterStat",
    "mean_ci",
    "binomial_ci",
)


def pair_window(iterable: Iterable[Any]) -> Iterator[tuple[Any, Any]]:
    """
    Adjacent pairs.

    >>> list(pair_window([11, 22, 33, 44]))
    [(11, 22), (22, 33), (33, 44)]
    """
    iterable = iter(iterable)
    try:
        prev_value = next(iterable)
    except StopIteration:
        return
    for item in iterable:
        yield prev_value, item
        prev_value = item


class IterStat:
    """
    Iterative single-pass computing of mean and variance.

    http://www.johndcook.com/standard_deviation.html

    >>> stat = IterStat([1.0, 2.0, 3.0, 4.0])
    >>> stat.mean, stat.variance, stat.sample_variance
    (2.5, 1.25, 1.6666666666666667)
    """

    def __init__(self, vals: Iterable[float] | None = None, start: float = 0.0) -> None:
        self.start = start
        self.old_mean: float | None = None
        self.mean = self.stdx = start
        self.cnt = 0

        if vals:
            for val in vals:
                self.send(val)

    def send(self, val: float) -> None:
        self.cnt += 1
        if self.cnt == 1:
            self.mean = val
        else:
            assert self.old_mean is not None
            self.mean = self.mean + (val - self.mean) / float(self.cnt)
            self.stdx = self.stdx + (val - self.old_mean) * (val - self.mean)
        self.old_mean = self.mean

    @property
    def variance(self) -> float:
        if self.cnt <= 1:
            return self.start
        return self.stdx / self.cnt

    @property
    def sample_variance(self) -> float:
        if self.cnt <= 1:
            return self.start
        return self.stdx / (self.cnt - 1)

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


def mean_ci(values: Iterable[float], level: float = 0.95) -> tuple[float, float, float]:
    """Mean with a Student-t confidence interval: `(mean, low, high)`"""
    stat = IterStat(values)
    if stat.cnt == 0:
        return math.nan, math.nan, math.nan
    if stat.cnt == 1:
        return stat.mean, stat.mean, stat.mean
    half = sp_stats.t.ppf(0.5 + level / 2, stat.cnt - 1) * math.sqrt(
        stat.sample_variance / stat.cnt
    )
    return stat.mean, stat.mean - half, stat.mean + half


def binomial_ci(successes: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson interval for a proportion; NaNs for zero trials"""
    if trials <= 0:
        return math.nan, math.nan
    interval = sp_stats.binomtest(successes, trials).proportion_ci(
        confidence_level=level, method="wilson"
    )
    return float(interval.low), float(interval.high)
