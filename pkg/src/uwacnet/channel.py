"""
Acoustic channel physics: Thorp absorption, spreading loss and the Coates
ambient-noise model.

Units throughout: frequency in kHz, distance in km, power spectral
densities in dB re µPa per Hz (or its linear form).
"""
from __future__ import annotations

import dataclasses
import logging
import math
from typing import Union

import numpy as np
from scipy import optimize

from .errors import DomainError
from .memo import memoize

__all__ = (
    "EnvironmentParams",
    "FrequencyKHz",
    "DistanceKm",
    "PsdLinear",
    "db_to_linear",
    "linear_to_db",
    "absorption_db_per_km",
    "thorp_absorption_db",
    "path_loss_db",
    "path_loss",
    "noise_components_db",
    "noise_psd_db",
    "noise_psd",
    "noise_psd_simplified",
    "an_product_db",
    "an_product",
    "inverse_an_product_db",
    "optimal_frequency",
    "DEFAULT_SEARCH_KHZ",
)

_log = logging.getLogger(__name__)

FrequencyKHz = float
DistanceKm = float
PsdLinear = float
ArrayLike = Union[float, np.ndarray]

DEFAULT_SEARCH_KHZ = (0.1, 200.0)
OPTIMAL_FREQUENCY_XTOL = 1e-4
# Coarse scan before the bounded refinement of f0.
_SCAN_POINTS = 400

# Simplified log-linear noise: 10 log N = N1 - eta log f
SIMPLIFIED_NOISE_N1_DB = 50.0
SIMPLIFIED_NOISE_ETA_DB_PER_DECADE = 18.0
SIMPLIFIED_NOISE_MAX_KHZ = 100.0


@dataclasses.dataclass(frozen=True)
class EnvironmentParams:
    """Spreading factor `k`, shipping activity `s`, wind speed `w` (m/s),
    reference distance `l_ref` (km)"""

    k: float = 1.5
    s: float = 0.5
    w: float = 0.0
    l_ref: float = 1.0

    def __post_init__(self) -> None:
        if not self.k >= 1:
            raise DomainError(f"spreading factor must be >= 1, got {self.k!r}")
        if not 0 <= self.s <= 1:
            raise DomainError(f"shipping activity must be within [0, 1], got {self.s!r}")
        if not self.w >= 0:
            raise DomainError(f"wind speed must be non-negative, got {self.w!r}")
        if not self.l_ref > 0:
            raise DomainError(f"reference distance must be positive, got {self.l_ref!r}")

    def with_k(self, k: float) -> EnvironmentParams:
        return dataclasses.replace(self, k=k)


def db_to_linear(value_db: ArrayLike) -> ArrayLike:
    """
    >>> db_to_linear(30.0)
    1000.0
    """
    return np.power(10.0, np.asarray(value_db, dtype=float) / 10.0)[()]


def linear_to_db(value: ArrayLike) -> ArrayLike:
    """`-inf` for zero"""
    with np.errstate(divide="ignore"):
        return (10.0 * np.log10(np.asarray(value, dtype=float)))[()]


def _positive(name: str, value: ArrayLike) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if not np.all(arr > 0):
        raise DomainError(f"{name} must be strictly positive, got {value!r}")
    return arr


def absorption_db_per_km(f: ArrayLike) -> ArrayLike:
    """
    Thorp's absorption, dB/km, `f` in kHz.

    >>> round(float(absorption_db_per_km(10.0)), 3)
    1.187
    """
    f2 = np.square(_positive("frequency", f))
    return (0.11 * f2 / (1 + f2) + 44 * f2 / (4100 + f2) + 2.75e-4 * f2 + 0.003)[()]


thorp_absorption_db = absorption_db_per_km


def path_loss_db(l: ArrayLike, f: ArrayLike, env: EnvironmentParams) -> ArrayLike:
    """10 log A(l, f) = 10 k log(l / l_ref) + l a(f)"""
    l_arr = _positive("distance", l)
    return (10 * env.k * np.log10(l_arr / env.l_ref) + l_arr * absorption_db_per_km(f))[()]


def path_loss(l: ArrayLike, f: ArrayLike, env: EnvironmentParams) -> ArrayLike:
    return db_to_linear(path_loss_db(l, f, env))


def noise_components_db(f: ArrayLike, env: EnvironmentParams) -> dict[str, ArrayLike]:
    """Turbulence, shipping, wind and thermal noise, dB re µPa per Hz"""
    f_arr = _positive("frequency", f)
    log_f = np.log10(f_arr)
    return {
        "turbulence": (17 - 30 * log_f)[()],
        "shipping": (40 + 20 * (env.s - 0.5) + 26 * log_f - 60 * np.log10(f_arr + 0.03))[()],
        "wind": (50 + 7.5 * math.sqrt(env.w) + 20 * log_f - 40 * np.log10(f_arr + 0.4))[()],
        "thermal": (-15 + 20 * log_f)[()],
    }


def noise_psd_db(f: ArrayLike, env: EnvironmentParams) -> ArrayLike:
    components = noise_components_db(f, env)
    stacked = np.stack([np.asarray(value) for value in components.values()])
    # log-sum-exp in dB
    return (10 * np.log10(np.sum(np.power(10.0, stacked / 10), axis=0)))[()]


def noise_psd(f: ArrayLike, env: EnvironmentParams) -> ArrayLike:
    return db_to_linear(noise_psd_db(f, env))


def noise_psd_simplified(f: ArrayLike) -> ArrayLike:
    """
    Log-linear approximation of the noise, valid up to 100 kHz.

    >>> float(linear_to_db(noise_psd_simplified(10.0)))
    32.0
    """
    f_arr = _positive("frequency", f)
    if np.any(f_arr > SIMPLIFIED_NOISE_MAX_KHZ):
        raise DomainError(f"simplified noise is valid up to {SIMPLIFIED_NOISE_MAX_KHZ} kHz")
    return db_to_linear(SIMPLIFIED_NOISE_N1_DB - SIMPLIFIED_NOISE_ETA_DB_PER_DECADE * np.log10(f_arr))


def an_product_db(l: ArrayLike, f: ArrayLike, env: EnvironmentParams) -> ArrayLike:
    return (np.asarray(path_loss_db(l, f, env)) + np.asarray(noise_psd_db(f, env)))[()]


def an_product(l: ArrayLike, f: ArrayLike, env: EnvironmentParams) -> ArrayLike:
    return db_to_linear(an_product_db(l, f, env))


def inverse_an_product_db(l: ArrayLike, f: ArrayLike, env: EnvironmentParams) -> ArrayLike:
    """The 1/(A N) curves; their peak sits at the optimal frequency"""
    return (-np.asarray(an_product_db(l, f, env)))[()]


def _check_search(search: tuple[float, float]) -> tuple[float, float]:
    lo, hi = float(search[0]), float(search[1])
    if not 0 < lo < hi:
        raise DomainError(f"bad frequency search range {search!r}")
    return lo, hi


@memoize(maxsize=100_000)
def optimal_frequency(
    l: DistanceKm,
    env: EnvironmentParams,
    search: tuple[float, float] = DEFAULT_SEARCH_KHZ,
    xtol: float = OPTIMAL_FREQUENCY_XTOL,
) -> FrequencyKHz:
    """argmin_f A(l, f) N(f) over `search`"""
    _positive("distance", l)
    lo, hi = _check_search(search)
    grid = np.geomspace(lo, hi, _SCAN_POINTS)
    values = an_product_db(l, grid, env)
    idx = int(np.argmin(values))
    left = grid[max(idx - 1, 0)]
    right = grid[min(idx + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(
        lambda freq: float(an_product_db(l, freq, env)),
        bounds=(left, right),
        method="bounded",
        options={"xatol": xtol},
    )
    f0 = float(res.x)
    # The bounded search never returns the bracket ends exactly.
    if values[idx] < float(an_product_db(l, f0, env)):
        f0 = float(grid[idx])
    _log.debug("optimal frequency at l=%.6g km: %.6g kHz", l, f0)
    return f0
