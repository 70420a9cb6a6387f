"""
Convexity of the power as a function of the rate: second differences on solved
surfaces for the complete model, derivative inequalities for the
approximate one.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from collections.abc import Sequence
from typing import Any

import numpy as np

from .approxfit import PowerModelCoeffs
from .channel import EnvironmentParams
from .errors import DomainError, UwacnetError
from .parallel import map_ordered
from .waterfill import DEFAULT_TOLERANCES, NEPER_PER_DB, Tolerances, solve_capacity_point

__all__ = (
    "ConvexityViolation",
    "ConvexityReport",
    "ApproxConvexity",
    "check_surface_convexity",
    "verify_complete_model_convexity",
    "power_model_derivatives",
    "approx_power_derivatives",
    "check_approx_convexity",
    "convexity_threshold_log_km",
    "threshold_profile",
    "min_convex_distance",
    "DEFAULT_SECOND_DIFFERENCE_TOL",
)

_log = logging.getLogger(__name__)

DEFAULT_SECOND_DIFFERENCE_TOL = 1e-6
LN10 = math.log(10.0)


@dataclasses.dataclass(frozen=True)
class ConvexityViolation:
    l_km: float
    C_kbps: float
    kind: str  # "increasing" or "convex"
    value: float


@dataclasses.dataclass
class ConvexityReport:
    l_grid: list[float]
    c_grid: list[float]
    tol: float
    min_second_difference: float
    max_second_difference: float
    violations: list[ConvexityViolation]
    # (l, C, reason) of the points the solver failed on
    holes: list[tuple[float, float, str]] = dataclasses.field(default_factory=list)
    min_convex_distance_m: float | None = None

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_document(self) -> dict[str, Any]:
        return dict(
            grid=dict(l_km=self.l_grid, C_kbps=self.c_grid, tol=self.tol),
            passed=self.passed,
            min_second_difference=self.min_second_difference,
            max_second_difference=self.max_second_difference,
            violations=[dataclasses.asdict(item) for item in self.violations],
            holes=[list(item) for item in self.holes],
            min_convex_distance_m=self.min_convex_distance_m,
        )


def _strict_grid(values: Sequence[float], name: str, min_size: int) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size < min_size:
        raise DomainError(f"{name} needs at least {min_size} points, got {arr.size}")
    if np.any(np.diff(arr) <= 0):
        raise DomainError(f"{name} must be strictly increasing")
    return arr


def check_surface_convexity(
    l_grid: Sequence[float],
    c_grid: Sequence[float],
    power: np.ndarray,
    tol: float = DEFAULT_SECOND_DIFFERENCE_TOL,
) -> ConvexityReport:
    """
    Check a power matrix `power[i_l, i_c]` (linear, NaN for holes): first
    differences along C positive, divided second differences at least
    `-tol` relative to the adjacent slopes.
    """
    l_arr = _strict_grid(l_grid, "l grid", 1)
    c_arr = _strict_grid(c_grid, "C grid", 3)
    power = np.asarray(power, dtype=float)
    if power.shape != (l_arr.size, c_arr.size):
        raise DomainError(f"power matrix shape {power.shape} does not match the grids")
    violations: list[ConvexityViolation] = []
    second_all: list[float] = []
    for i_l, l_km in enumerate(l_arr):
        row = power[i_l]
        first = np.diff(row)
        for i_c in np.flatnonzero(np.isfinite(first) & (first <= 0)):
            violations.append(ConvexityViolation(float(l_km), float(c_arr[i_c + 1]), "increasing", float(first[i_c])))
        slopes = first / np.diff(c_arr)
        second = 2 * np.diff(slopes) / (c_arr[2:] - c_arr[:-2])
        scale = np.maximum(np.abs(slopes[:-1]), np.abs(slopes[1:]))
        for i_c in range(second.size):
            if not np.isfinite(second[i_c]):
                continue
            second_all.append(float(second[i_c]))
            if slopes[i_c + 1] - slopes[i_c] < -tol * scale[i_c]:
                violations.append(ConvexityViolation(float(l_km), float(c_arr[i_c + 1]), "convex", float(second[i_c])))
    holes = [
        (float(l_arr[i_l]), float(c_arr[i_c]), "nan")
        for i_l, i_c in zip(*np.nonzero(~np.isfinite(power)))
    ]
    return ConvexityReport(
        l_grid=l_arr.tolist(),
        c_grid=c_arr.tolist(),
        tol=tol,
        min_second_difference=min(second_all) if second_all else math.nan,
        max_second_difference=max(second_all) if second_all else math.nan,
        violations=violations,
        holes=holes,
    )


def _solve_power(item: tuple[float, float, EnvironmentParams, Tolerances]) -> tuple[float, str]:
    l_km, capacity, env, tolerances = item
    try:
        return solve_capacity_point(l_km, capacity, env, tolerances).power, ""
    except UwacnetError as exc:
        return math.nan, f"{type(exc).__name__}: {exc}"


def verify_complete_model_convexity(
    l_grid: Sequence[float],
    c_grid: Sequence[float],
    env: EnvironmentParams,
    tol: float = DEFAULT_SECOND_DIFFERENCE_TOL,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    threads: int = 1,
) -> ConvexityReport:
    """Solve P over the grid with the waterfill solver and check it"""
    l_arr = _strict_grid(l_grid, "l grid", 1)
    c_arr = _strict_grid(c_grid, "C grid", 3)
    if np.any(c_arr <= 0):
        raise DomainError("C grid must be positive")
    items = [(float(l_km), float(capacity), env, tolerances) for l_km in l_arr for capacity in c_arr]
    results = map_ordered(_solve_power, items, threads=threads, chunksize=8)
    power = np.asarray([value for value, _ in results]).reshape(l_arr.size, c_arr.size)
    report = check_surface_convexity(l_arr, c_arr, power, tol)
    report.holes = [(item[0], item[1], reason) for item, (_, reason) in zip(items, results) if reason]
    if report.holes:
        _log.warning("%d grid points could not be solved", len(report.holes))
    _log.info(
        "convexity over %dx%d grid: %s (%d violations)",
        l_arr.size,
        c_arr.size,
        "pass" if report.passed else "FAIL",
        len(report.violations),
    )
    return report


# Approximate model


def power_model_derivatives(z: float, coeffs: PowerModelCoeffs) -> tuple[float, float, float, float]:
    """`(da1, dda1, da2, dda2)`: z-derivatives of the power model exponents"""
    if not z > 0:
        raise DomainError(f"rate must be positive, got {z!r}")
    alpha1, alpha2, _ = coeffs.alpha
    beta1, beta2, _ = coeffs.beta
    x = 10 * math.log10(z + 1)
    dx = 10 / ((z + 1) * LN10)
    da1 = alpha2 + 2 * alpha1 * z
    dda1 = 2 * alpha1
    da2 = beta2 * 10 / (z * LN10) + 2 * beta1 * x * dx
    dda2 = -beta2 * 10 / (z * z * LN10) + 2 * beta1 * (dx * dx - x * 10 / ((z + 1) ** 2 * LN10))
    return da1, dda1, da2, dda2


def approx_power_derivatives(l: float, z: float, coeffs: PowerModelCoeffs) -> tuple[float, float]:
    """First and second z-derivatives of `P̃(l, z)`"""
    da1, dda1, da2, dda2 = power_model_derivatives(z, coeffs)
    log_l = math.log(l)
    power = float(coeffs.value(l, z))
    slope = log_l * da1 + NEPER_PER_DB * da2
    return power * slope, power * (slope * slope + log_l * dda1 + NEPER_PER_DB * dda2)


def _sign_conditions(derivatives: tuple[float, float, float, float]) -> bool:
    da1, dda1, da2, dda2 = derivatives
    return da1 > 0 and dda1 < 0 and da2 > 0 and dda2 < 0


@dataclasses.dataclass(frozen=True)
class ApproxConvexity:
    increasing: bool
    convex: bool
    # False when the derivative signs the threshold relies on do not hold.
    sign_conditions: bool


def check_approx_convexity(l: float, z: float, coeffs: PowerModelCoeffs) -> ApproxConvexity:
    """The increasing and convex inequalities of `P̃(l, z)` in `u = ln l`"""
    if not l > 0:
        raise DomainError(f"distance must be positive, got {l!r}")
    derivatives = power_model_derivatives(z, coeffs)
    da1, dda1, da2, dda2 = derivatives
    u = math.log(l)
    c = NEPER_PER_DB
    linear = u * da1 + c * da2
    quadratic = u * u * da1 * da1 + c * dda2 + (c * da2) ** 2 + u * (2 * c * da1 * da2 + dda1)
    sign_ok = _sign_conditions(derivatives)
    if not sign_ok:
        _log.warning("power model derivative signs do not hold at z=%.6g: %r", z, derivatives)
    return ApproxConvexity(increasing=linear > 0, convex=quadratic >= 0, sign_conditions=sign_ok)


def convexity_threshold_log_km(da1: float, dda1: float, da2: float, dda2: float) -> tuple[float, float]:
    """
    Lower bound on `ln(l / km)` above which the model is increasing and
    convex; also returns the square-root argument. A negative argument
    leaves only the increasing constraint.

    >>> convexity_threshold_log_km(0.5, 0.0, 1.0, 0.0)[0] == -NEPER_PER_DB * 2
    True
    """
    c = NEPER_PER_DB
    base = -c * da2 / da1
    discriminant = c * (da2 * dda1 / da1**3 - dda2 / da1**2) + dda1**2 / (4 * da1**4)
    if discriminant < 0:
        return base, discriminant
    return base + max(0.0, -dda1 / (2 * da1**2) + math.sqrt(discriminant)), discriminant


def threshold_profile(z_values: Sequence[float], coeffs: PowerModelCoeffs, require_signs: bool = True) -> list[dict[str, float]]:
    """Per-rate threshold rows: `z`, `log_km`, `distance_m`, `discriminant`"""
    rows = []
    for z in z_values:
        derivatives = power_model_derivatives(float(z), coeffs)
        if require_signs and not _sign_conditions(derivatives):
            raise DomainError(f"power model derivative signs do not hold at z={z!r}: {derivatives!r}")
        log_km, discriminant = convexity_threshold_log_km(*derivatives)
        rows.append(
            dict(z=float(z), log_km=log_km, distance_m=1000 * math.exp(log_km), discriminant=discriminant)
        )
    return rows


def min_convex_distance(
    z_range: tuple[float, float], coeffs: PowerModelCoeffs, points: int = 400
) -> float:
    """Supremum over `z_range` of the convexity distance threshold, meters"""
    z_lo, z_hi = z_range
    if not 0 <= z_lo < z_hi:
        raise DomainError(f"bad rate range {z_range!r}")
    # The open lower end.
    z_values = np.linspace(z_lo, z_hi, points + 1)[1:] if z_lo == 0 else np.linspace(z_lo, z_hi, points)
    rows = threshold_profile(z_values, coeffs)
    negative = [row["z"] for row in rows if row["discriminant"] < 0]
    if negative:
        _log.warning(
            "square-root argument negative for %d rates in [%.4g, %.4g] kbps; only the increasing constraint applies there",
            len(negative),
            min(negative),
            max(negative),
        )
    best = max(rows, key=lambda row: row["log_km"])
    _log.debug("convexity threshold %.4g m at z=%.4g kbps", best["distance_m"], best["z"])
    return best["distance_m"]
