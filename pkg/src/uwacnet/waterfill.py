"""
Waterfilling evaluation of the complete channel model.

For a link of length `l` a level `K` selects the band where `A(l, f) N(f) <= K`;
capacity, power and SNR follow by integrating over that band. The solvers
find the level meeting a capacity or an SNR target.

Levels and psds are handled in dB against `A N` so that the whole (l, C)
range stays finite; linear values are available as accessors.

Units: kHz, km, kbps. Power is the psd integrated over Hz.
"""
from __future__ import annotations

import dataclasses
import functools
import logging
import math
from collections.abc import Callable, Iterable, Sequence
from typing import Any

import numpy as np
from scipy import optimize

from .channel import (
    DEFAULT_SEARCH_KHZ,
    EnvironmentParams,
    an_product_db,
    db_to_linear,
    linear_to_db,
    noise_psd_db,
    optimal_frequency,
)
from .errors import DomainError, NotConverged, Unreachable
from .parallel import map_ordered

__all__ = (
    "Tolerances",
    "DEFAULT_TOLERANCES",
    "Band",
    "integrate_band",
    "LinkOperatingPoint",
    "min_level_db",
    "band_at_level",
    "capacity_given_level",
    "power_given_level",
    "snr_given_level",
    "solve_capacity_point",
    "solve_snr_point",
    "rescale_spreading",
    "capacity_cross_distance",
    "snr_at_distance",
    "marginal_power",
    "level_slope",
    "power_curvature",
    "sweep_surface",
    "sweep_snr_surface",
    "surface_rows",
    "SURFACE_COLUMNS",
)

_log = logging.getLogger(__name__)

LN2 = math.log(2.0)
# Natural-log units per dB.
NEPER_PER_DB = math.log(10.0) / 10.0
BITS_PER_DB = NEPER_PER_DB / LN2
HZ_PER_KHZ = 1000.0

SWEEP_MODES = ("bisect", "increment")

SURFACE_COLUMNS = (
    "l_km",
    "C_kbps",
    "P_dB",
    "f_ini_khz",
    "f_end_khz",
    "B_khz",
    "K_dB",
    "SNR_dB",
    "interval",
)


@dataclasses.dataclass(frozen=True)
class Tolerances:
    capacity_rtol: float = 1e-4
    root_xtol_db: float = 1e-10
    edge_rtol: float = 1e-9
    quad_rtol: float = 1e-7
    grid_points: int = 1200
    quad_nodes: int = 48
    quad_panels: int = 4
    max_panels: int = 64
    # 10^20 linear psd units
    k_cap_db: float = 200.0
    search_khz: tuple[float, float] = DEFAULT_SEARCH_KHZ
    # "increment" is the literal small-step raise of the level, for debugging.
    sweep_mode: str = "bisect"
    increment_db: float = 0.05

    def __post_init__(self) -> None:
        if self.sweep_mode not in SWEEP_MODES:
            raise DomainError(f"sweep_mode must be one of {SWEEP_MODES}, got {self.sweep_mode!r}")
        lo, hi = self.search_khz
        if not 0 < lo < hi:
            raise DomainError(f"bad frequency search range {self.search_khz!r}")
        object.__setattr__(self, "search_khz", (float(lo), float(hi)))
        if self.grid_points < 3 or self.quad_nodes < 2 or self.quad_panels < 1:
            raise DomainError("grid_points, quad_nodes and quad_panels are too small")
        if not self.increment_db > 0:
            raise DomainError("increment_db must be positive")


DEFAULT_TOLERANCES = Tolerances()


@dataclasses.dataclass(frozen=True)
class Band:
    """
    Union of sorted, pairwise disjoint frequency intervals (kHz).

    >>> band = Band(((10.0, 12.0), (15.0, 16.5)))
    >>> band.bandwidth, band.f_ini, band.f_end
    (3.5, 10.0, 16.5)
    >>> Band().is_empty
    True
    """

    intervals: tuple[tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        intervals = tuple((float(f_ini), float(f_end)) for f_ini, f_end in self.intervals)
        prev_end = -math.inf
        for f_ini, f_end in intervals:
            if not (math.isfinite(f_ini) and math.isfinite(f_end) and f_ini < f_end):
                raise DomainError(f"bad band interval ({f_ini!r}, {f_end!r})")
            if f_ini <= prev_end:
                raise DomainError(f"band intervals must be sorted and disjoint: {intervals!r}")
            prev_end = f_end
        object.__setattr__(self, "intervals", intervals)

    @property
    def is_empty(self) -> bool:
        return not self.intervals

    @property
    def bandwidth(self) -> float:
        """kHz"""
        return float(sum(f_end - f_ini for f_ini, f_end in self.intervals))

    @property
    def bandwidth_hz(self) -> float:
        return self.bandwidth * HZ_PER_KHZ

    @property
    def f_ini(self) -> float:
        return self.intervals[0][0] if self.intervals else math.nan

    @property
    def f_end(self) -> float:
        return self.intervals[-1][1] if self.intervals else math.nan

    def contains(self, f: float) -> bool:
        return any(f_ini <= f <= f_end for f_ini, f_end in self.intervals)


@dataclasses.dataclass(frozen=True)
class LinkOperatingPoint:
    """
    A solved link: distance (km), capacity (kbps), waterfilling level (dB),
    band, power (linear) and SNR (dB).
    """

    distance: float
    capacity: float
    level_db: float
    band: Band
    power: float
    snr_db: float
    env: EnvironmentParams

    @property
    def level(self) -> float:
        return float(db_to_linear(self.level_db))

    @property
    def power_db(self) -> float:
        return float(linear_to_db(self.power))

    @property
    def snr(self) -> float:
        return float(db_to_linear(self.snr_db))


def _check_distance(l: float) -> float:
    if not (l > 0 and math.isfinite(l)):
        raise DomainError(f"distance must be positive and finite, got {l!r}")
    return float(l)


def min_level_db(l: float, env: EnvironmentParams, tolerances: Tolerances = DEFAULT_TOLERANCES) -> float:
    """min_f A(l, f) N(f), in dB"""
    f0 = optimal_frequency(_check_distance(l), env, tolerances.search_khz)
    return float(an_product_db(l, f0, env))


# Band search


def _band_at_level_db(l: float, level_db: float, env: EnvironmentParams, tol: Tolerances) -> Band:
    lo, hi = tol.search_khz
    f0 = optimal_frequency(l, env, tol.search_khz)
    grid = np.union1d(np.geomspace(lo, hi, tol.grid_points), [f0])
    inside = np.asarray(an_product_db(l, grid, env)) <= level_db
    if not inside.any():
        return Band()

    def excess(freq: float) -> float:
        return float(an_product_db(l, freq, env)) - level_db

    def edge(left: float, right: float) -> float:
        return float(optimize.brentq(excess, left, right, rtol=tol.edge_rtol))

    padded = np.concatenate(([0], inside.astype(np.int8), [0]))
    change = np.diff(padded)
    starts = np.flatnonzero(change == 1)
    stops = np.flatnonzero(change == -1) - 1
    last = len(grid) - 1
    intervals = []
    for start, stop in zip(starts, stops):
        f_ini = lo if start == 0 else edge(grid[start - 1], grid[start])
        f_end = hi if stop == last else edge(grid[stop], grid[stop + 1])
        if f_ini < f_end:
            intervals.append((f_ini, f_end))
    if len(intervals) > 1:
        _log.debug("multi-interval band at l=%.6g km: %r", l, intervals)
    return Band(tuple(intervals))


def band_at_level(
    l: float, level: float, env: EnvironmentParams, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> Band:
    """{f : A(l, f) N(f) <= level} within the search range; empty at or below the minimum"""
    _check_distance(l)
    if not level > 0:
        return Band()
    return _band_at_level_db(l, float(linear_to_db(level)), env, tolerances)


# Integration


@functools.lru_cache(maxsize=None)
def _legendre(nodes: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(nodes)


def _gauss_composite(func: Callable[[np.ndarray], np.ndarray], lo: float, hi: float, panels: int, nodes: int) -> float:
    points, weights = _legendre(nodes)
    edges = np.linspace(lo, hi, panels + 1)
    half = (np.diff(edges) / 2)[:, None]
    mid = ((edges[:-1] + edges[1:]) / 2)[:, None]
    return float(np.sum(half * weights[None, :] * func(mid + half * points[None, :])))


def integrate_band(func: Callable[[np.ndarray], np.ndarray], band: Band, tol: Tolerances) -> float:
    """
    Composite Gauss-Legendre over each interval; the panel count doubles
    until the result agrees with the half-order rule.

    This stands in for adaptive Simpson at the same relative tolerance
    (`quad_rtol`). The integrands are smooth inside a band, and one
    vectorized evaluation per panel set is much cheaper here than the
    scalar callbacks of `scipy.integrate.quad`.
    """
    total = 0.0
    for f_ini, f_end in band.intervals:
        panels = tol.quad_panels
        while True:
            fine = _gauss_composite(func, f_ini, f_end, panels, tol.quad_nodes)
            coarse = _gauss_composite(func, f_ini, f_end, panels, tol.quad_nodes // 2)
            error = abs(fine - coarse)
            if error <= tol.quad_rtol * abs(fine) or error == 0:
                break
            if panels >= tol.max_panels:
                raise NotConverged(
                    f"integration over [{f_ini:.6g}, {f_end:.6g}] kHz did not converge:"
                    f" estimate {fine!r}, error {error!r} with {panels} panels",
                    best=fine,
                    gap=error,
                )
            panels *= 2
        total += fine
    return total


def _margin_db(l: float, level_db: float, env: EnvironmentParams, freq: np.ndarray) -> np.ndarray:
    return np.maximum(level_db - np.asarray(an_product_db(l, freq, env)), 0.0)


def _capacity_db(l: float, level_db: float, env: EnvironmentParams, band: Band, tol: Tolerances) -> float:
    return integrate_band(lambda freq: _margin_db(l, level_db, env, freq) * BITS_PER_DB, band, tol)


def _power_db(l: float, level_db: float, env: EnvironmentParams, band: Band, tol: Tolerances) -> float:
    def signal_psd(freq: np.ndarray) -> np.ndarray:
        an_db = np.asarray(an_product_db(l, freq, env))
        # K - A N, without cancellation near the band edges
        return np.power(10.0, an_db / 10) * np.expm1(NEPER_PER_DB * np.maximum(level_db - an_db, 0.0))

    return HZ_PER_KHZ * integrate_band(signal_psd, band, tol)


def _snr_linear(l: float, level_db: float, env: EnvironmentParams, band: Band, tol: Tolerances) -> float:
    if band.is_empty:
        return 0.0

    def received_psd(freq: np.ndarray) -> np.ndarray:
        # S / A = N (K / (A N) - 1)
        noise = np.power(10.0, np.asarray(noise_psd_db(freq, env)) / 10)
        return noise * np.expm1(NEPER_PER_DB * _margin_db(l, level_db, env, freq))

    noise_total = integrate_band(lambda freq: np.power(10.0, np.asarray(noise_psd_db(freq, env)) / 10), band, tol)
    return integrate_band(received_psd, band, tol) / noise_total


def capacity_given_level(
    l: float, level: float, env: EnvironmentParams, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> float:
    """kbps carried by the band of `level`; 0 at the minimum"""
    band = band_at_level(l, level, env, tolerances)
    if band.is_empty:
        return 0.0
    return _capacity_db(l, float(linear_to_db(level)), env, band, tolerances)


def power_given_level(
    l: float, level: float, env: EnvironmentParams, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> float:
    """Integral of `K - A N` over the band, i.e. `K |B| - ∫ A N` over it"""
    band = band_at_level(l, level, env, tolerances)
    if band.is_empty:
        return 0.0
    return _power_db(l, float(linear_to_db(level)), env, band, tolerances)


def snr_given_level(
    l: float, level: float, env: EnvironmentParams, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> float:
    """SNR (dB) at the receiver; `-inf` for an empty band"""
    band = band_at_level(l, level, env, tolerances)
    return float(linear_to_db(_snr_linear(l, float(linear_to_db(level)), env, band, tolerances)))


# Solvers


def _bracket_level(objective: Callable[[float], float], min_db: float, tol: Tolerances, label: str) -> tuple[float, float]:
    """Double the dB step above the minimum until the objective changes sign"""
    lo, step = min_db, 1.0
    while True:
        hi = min(min_db + step, tol.k_cap_db)
        if hi > lo and objective(hi) >= 0:
            return lo, hi
        if hi >= tol.k_cap_db:
            raise Unreachable(
                f"{label} is not reachable below the level cap of {tol.k_cap_db:g} dB",
                cap=tol.k_cap_db,
            )
        lo = hi
        step *= 2


def _increment_level(objective: Callable[[float], float], min_db: float, tol: Tolerances, label: str) -> tuple[float, float]:
    """Raise the level by `increment_db` until the target is passed"""
    level_db = min_db
    steps = 0
    while True:
        nxt = level_db + tol.increment_db
        if nxt > tol.k_cap_db:
            raise Unreachable(
                f"{label} is not reachable below the level cap of {tol.k_cap_db:g} dB",
                cap=tol.k_cap_db,
            )
        steps += 1
        if objective(nxt) >= 0:
            _log.debug("increment sweep passed %s after %d steps", label, steps)
            return level_db, nxt
        level_db = nxt


def _solve_level(objective: Callable[[float], float], min_db: float, tol: Tolerances, label: str) -> float:
    if tol.sweep_mode == "increment":
        lo, hi = _increment_level(objective, min_db, tol, label)
    else:
        lo, hi = _bracket_level(objective, min_db, tol, label)
    return float(optimize.brentq(objective, lo, hi, xtol=tol.root_xtol_db))


def _make_point(l: float, level_db: float, env: EnvironmentParams, tol: Tolerances) -> LinkOperatingPoint:
    band = _band_at_level_db(l, level_db, env, tol)
    if band.is_empty:
        return _zero_point(l, env, level_db)
    return LinkOperatingPoint(
        distance=l,
        capacity=_capacity_db(l, level_db, env, band, tol),
        level_db=level_db,
        band=band,
        power=_power_db(l, level_db, env, band, tol),
        snr_db=float(linear_to_db(_snr_linear(l, level_db, env, band, tol))),
        env=env,
    )


def _zero_point(l: float, env: EnvironmentParams, level_db: float) -> LinkOperatingPoint:
    return LinkOperatingPoint(
        distance=l, capacity=0.0, level_db=level_db, band=Band(), power=0.0, snr_db=-math.inf, env=env
    )


def solve_capacity_point(
    l: float, capacity: float, env: EnvironmentParams, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> LinkOperatingPoint:
    """The operating point carrying `capacity` kbps over distance `l` km"""
    l = _check_distance(l)
    if not (capacity >= 0 and math.isfinite(capacity)):
        raise DomainError(f"capacity must be non-negative and finite, got {capacity!r}")
    min_db = min_level_db(l, env, tolerances)
    if capacity == 0:
        return _zero_point(l, env, min_db)

    def objective(level_db: float) -> float:
        band = _band_at_level_db(l, level_db, env, tolerances)
        if band.is_empty:
            return -capacity
        return _capacity_db(l, level_db, env, band, tolerances) - capacity

    label = f"capacity {capacity:.6g} kbps at {l:.6g} km"
    point = _make_point(l, _solve_level(objective, min_db, tolerances, label), env, tolerances)
    if abs(point.capacity - capacity) > tolerances.capacity_rtol * capacity:
        raise NotConverged(
            f"{label}: solved point carries {point.capacity!r} kbps", best=point, gap=point.capacity - capacity
        )
    return point


def solve_snr_point(
    l: float, snr_db: float, env: EnvironmentParams, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> LinkOperatingPoint:
    """The operating point giving `snr_db` at the receiver"""
    l = _check_distance(l)
    if not math.isfinite(snr_db):
        raise DomainError(f"SNR target must be finite, got {snr_db!r}")
    target = float(db_to_linear(snr_db))
    min_db = min_level_db(l, env, tolerances)

    def objective(level_db: float) -> float:
        band = _band_at_level_db(l, level_db, env, tolerances)
        return _snr_linear(l, level_db, env, band, tolerances) - target

    label = f"SNR {snr_db:.6g} dB at {l:.6g} km"
    point = _make_point(l, _solve_level(objective, min_db, tolerances, label), env, tolerances)
    if abs(point.snr - target) > tolerances.capacity_rtol * target:
        raise NotConverged(f"{label}: solved point gives {point.snr_db!r} dB", best=point)
    return point


def rescale_spreading(point: LinkOperatingPoint, k_old: float, k_new: float) -> LinkOperatingPoint:
    """
    Move a point solved under spreading factor `k_old` to `k_new`: power and
    level scale by `(l / l_ref) ** (k_new - k_old)`, the band stays.
    """
    if not math.isclose(point.env.k, k_old, rel_tol=1e-12):
        raise DomainError(f"point was solved with k={point.env.k!r}, not {k_old!r}")
    env = point.env.with_k(k_new)
    shift_db = 10 * (k_new - k_old) * math.log10(point.distance / point.env.l_ref)
    return dataclasses.replace(
        point,
        level_db=point.level_db + shift_db,
        power=point.power * 10 ** (shift_db / 10),
        env=env,
    )


def _attenuation_ratio(donor: LinkOperatingPoint, l_prime: float, env: EnvironmentParams, freq: np.ndarray) -> np.ndarray:
    """A(l) / A(l') for the donor's distance l"""
    return np.power(
        10.0,
        (np.asarray(an_product_db(donor.distance, freq, env)) - np.asarray(an_product_db(l_prime, freq, env))) / 10,
    )


def capacity_cross_distance(
    l_prime: float,
    donor: LinkOperatingPoint,
    env: EnvironmentParams | None = None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> float:
    """kbps decodable at distance `l_prime` from the donor's band and psd"""
    l_prime = _check_distance(l_prime)
    env = env or donor.env
    if donor.band.is_empty:
        return 0.0

    def integrand(freq: np.ndarray) -> np.ndarray:
        snr = np.expm1(NEPER_PER_DB * _margin_db(donor.distance, donor.level_db, env, freq))
        return np.log1p(snr * _attenuation_ratio(donor, l_prime, env, freq)) / LN2

    return integrate_band(integrand, donor.band, tolerances)


def snr_at_distance(
    donor: LinkOperatingPoint,
    l_prime: float,
    env: EnvironmentParams | None = None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> float:
    """SNR (dB) a receiver at `l_prime` sees from the donor's transmission"""
    l_prime = _check_distance(l_prime)
    env = env or donor.env
    if donor.band.is_empty:
        return -math.inf

    def noise(freq: np.ndarray) -> np.ndarray:
        return np.power(10.0, np.asarray(noise_psd_db(freq, env)) / 10)

    def received_psd(freq: np.ndarray) -> np.ndarray:
        excess = np.expm1(NEPER_PER_DB * _margin_db(donor.distance, donor.level_db, env, freq))
        return noise(freq) * excess * _attenuation_ratio(donor, l_prime, env, freq)

    ratio = integrate_band(received_psd, donor.band, tolerances) / integrate_band(noise, donor.band, tolerances)
    return float(linear_to_db(ratio))


def marginal_power(point: LinkOperatingPoint) -> float:
    """dP/dC per bit/s: ln(2) K"""
    return LN2 * point.level


def level_slope(point: LinkOperatingPoint) -> float:
    """dK/dC per bit/s: K ln(2) / |B|"""
    if point.band.is_empty:
        return math.inf
    return point.level * LN2 / point.band.bandwidth_hz


def power_curvature(point: LinkOperatingPoint) -> float:
    """d²P/dC² per (bit/s)²: (dK/dC)² |B| / K"""
    slope = level_slope(point)
    if math.isinf(slope):
        return math.inf
    return slope**2 * point.band.bandwidth_hz / point.level


# Surfaces


def surface_rows(point: LinkOperatingPoint, key: str = "C_kbps", value: float | None = None) -> list[dict[str, Any]]:
    """CSV rows of one solved point; one row per band interval"""
    base = dict(
        l_km=point.distance,
        C_kbps=point.capacity,
        P_dB=point.power_db,
        B_khz=point.band.bandwidth,
        K_dB=point.level_db,
        SNR_dB=point.snr_db,
    )
    if value is not None:
        base[key] = value
    intervals: Sequence[tuple[float, float]] = point.band.intervals or ((math.nan, math.nan),)
    return [
        dict(base, f_ini_khz=f_ini, f_end_khz=f_end, interval=idx)
        for idx, (f_ini, f_end) in enumerate(intervals)
    ]


def _solve_surface_item(item: tuple[str, float, float, EnvironmentParams, Tolerances]) -> list[dict[str, Any]]:
    mode, l, target, env, tol = item
    if mode == "snr":
        point = solve_snr_point(l, target, env, tol)
        return surface_rows(point, "SNR_dB", target)
    point = solve_capacity_point(l, target, env, tol)
    return surface_rows(point, "C_kbps", target)


def _sweep(mode: str, l_grid: Iterable[float], targets: Iterable[float], env: EnvironmentParams, tol: Tolerances, threads: int) -> list[dict[str, Any]]:
    items = [(mode, float(l), float(target), env, tol) for l in l_grid for target in targets]
    if not items:
        raise DomainError("empty sweep grid")
    _log.info("Solving %d %s points", len(items), mode)
    results = map_ordered(_solve_surface_item, items, threads=threads, chunksize=8)
    return [row for rows in results for row in rows]


def sweep_surface(
    l_grid: Iterable[float],
    capacity_grid: Iterable[float],
    env: EnvironmentParams,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    threads: int = 1,
) -> list[dict[str, Any]]:
    """Solved (l, C) surface as `SURFACE_COLUMNS` rows, l-major; `C_kbps` holds the exact targets"""
    return _sweep("capacity", l_grid, list(capacity_grid), env, tolerances, threads)


def sweep_snr_surface(
    l_grid: Iterable[float],
    snr_grid: Iterable[float],
    env: EnvironmentParams,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    threads: int = 1,
) -> list[dict[str, Any]]:
    """Solved (l, SNR) surface; the SNR column holds the exact targets"""
    return _sweep("snr", l_grid, list(snr_grid), env, tolerances, threads)
