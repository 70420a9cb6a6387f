"""
Closed-form approximations `value(l, x) = l ** a1(x) * 10 ** (a2(x) / 10)` of
the solved surfaces, where `x` is the capacity (kbps) or the SNR (dB).

Fitting is done in two linear stages: per `x`, a log-log regression on `l`
gives the empirical `a1(x)` (slope) and `a2(x)` (intercept, dB); then the
polynomial forms of `a1` and `a2` are least-squares fitted to those curves.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from collections.abc import Mapping, Sequence
from typing import Any, ClassVar, Union

import numpy as np
import pandas as pd

from .channel import EnvironmentParams
from .errors import DomainError
from .grids import linear_grid, log_grid

__all__ = (
    "ApproxModelCoeffs",
    "PowerModelCoeffs",
    "FendModelCoeffs",
    "BandModelCoeffs",
    "SnrPowerModelCoeffs",
    "SnrBandModelCoeffs",
    "SnrCapacityModelCoeffs",
    "SnrLinkModels",
    "WindModelCoeffs",
    "SurfaceComparison",
    "TEMPLATES",
    "eval_power_model",
    "eval_fend_model",
    "eval_band_model",
    "fit_models",
    "fit_snr_models",
    "eval_wind_model",
    "fit_wind_model",
    "compare_surface",
    "case_grid",
    "published_reference_offset_db",
    "published_coeffs",
    "CASE_CAPACITY_CAP_KBPS",
    "PUBLISHED_REFERENCE_OFFSET_DB",
    "WIND_MODEL_COEFFS",
)

_log = logging.getLogger(__name__)

SurfaceLike = Union[pd.DataFrame, Sequence[Mapping[str, Any]]]

CASE_CAPACITY_CAP_KBPS = {"case1": 2.0, "case2": 100.0}
CASE_DISTANCE_CAP_KM = {"case1": 10.0, "case2": 100.0}
# Shortest fitted distance, km.
FIT_MIN_DISTANCE_KM = 0.013
FIT_GRID_POINTS = 50
MIN_POINTS_PER_AXIS = 10
DISTANCE_SCALES = ("log", "linear")
# The published power tables reference the source level to 1 m and integrate
# power per kHz: 10 k log10(1000) - 10 log10(1000) dB above this package's
# levels at k = 1.5.
PUBLISHED_REFERENCE_OFFSET_DB = {"power": 15.0}


def _db(value: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return 10 * np.log10(value)


def _poly_basis(x: np.ndarray, degree: int) -> np.ndarray:
    """Columns `x**degree, ..., x, 1`"""
    return np.vander(np.asarray(x, dtype=float), degree + 1)


@dataclasses.dataclass(frozen=True)
class ApproxModelCoeffs:
    """
    Coefficients of one approximate model; `alpha` and `beta` are ordered
    from the highest-order term to the constant.
    """

    alpha: tuple[float, ...]
    beta: tuple[float, ...]
    mse_a1: float = math.nan
    mse_a2: float = math.nan
    case: str = ""
    env: EnvironmentParams | None = None

    template: ClassVar[str] = ""
    # Surface columns holding the modelled quantity and the parameter.
    quantity: ClassVar[str] = ""
    variable: ClassVar[str] = "C_kbps"
    alpha_size: ClassVar[int] = 3
    beta_size: ClassVar[int] = 3

    def __post_init__(self) -> None:
        alpha = tuple(float(value) for value in self.alpha)
        beta = tuple(float(value) for value in self.beta)
        if len(alpha) != self.alpha_size or len(beta) != self.beta_size:
            raise DomainError(
                f"{self.template} model needs {self.alpha_size} alpha and {self.beta_size} beta"
                f" coefficients, got {len(alpha)} and {len(beta)}"
            )
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @staticmethod
    def a1_basis(x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @staticmethod
    def a2_basis(x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def a1(self, x: Any) -> np.ndarray:
        return (self.a1_basis(np.atleast_1d(np.asarray(x, dtype=float))) @ np.asarray(self.alpha)).reshape(np.shape(x))

    def a2(self, x: Any) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            basis = self.a2_basis(np.atleast_1d(np.asarray(x, dtype=float)))
            # 0 * -inf terms belong to absent coefficients.
            terms = np.where(np.asarray(self.beta)[None, :] == 0, 0.0, basis * np.asarray(self.beta)[None, :])
        return terms.sum(axis=1).reshape(np.shape(x))

    def value_db(self, l: Any, x: Any) -> Any:
        l_arr = np.asarray(l, dtype=float)
        if np.any(l_arr <= 0):
            raise DomainError(f"distance must be positive, got {l!r}")
        return (self.a1(x) * _db(l_arr) + self.a2(x))[()]

    def value(self, l: Any, x: Any) -> Any:
        return np.power(10.0, np.asarray(self.value_db(l, x)) / 10)[()]

    def to_document(self) -> dict[str, Any]:
        env = self.env
        return dict(
            template=self.template,
            case=self.case,
            k=env.k if env else None,
            s=env.s if env else None,
            w=env.w if env else None,
            alpha=list(self.alpha),
            beta=list(self.beta),
            mse_a1=self.mse_a1,
            mse_a2=self.mse_a2,
        )

    @staticmethod
    def from_document(doc: Mapping[str, Any]) -> ApproxModelCoeffs:
        try:
            cls = TEMPLATES[doc["template"]]
        except KeyError as exc:
            raise DomainError(f"unknown model template in {doc!r}") from exc
        env = None
        if doc.get("k") is not None:
            env = EnvironmentParams(k=doc["k"], s=doc["s"], w=doc["w"])
        return cls(
            alpha=tuple(doc["alpha"]),
            beta=tuple(doc["beta"]),
            mse_a1=_float_or_nan(doc.get("mse_a1")),
            mse_a2=_float_or_nan(doc.get("mse_a2")),
            case=doc.get("case") or "",
            env=env,
        )


def _float_or_nan(value: Any) -> float:
    return math.nan if value is None else float(value)


class PowerModelCoeffs(ApproxModelCoeffs):
    """
    `a1 = α3 + α2 C + α1 C²`,
    `a2 = β3 + β2 10log10(C) + β1 (10log10(C + 1))²`
    """

    template = "power"
    quantity = "P_dB"

    @staticmethod
    def a1_basis(x: np.ndarray) -> np.ndarray:
        return _poly_basis(x, 2)

    @staticmethod
    def a2_basis(x: np.ndarray) -> np.ndarray:
        return np.column_stack([_db(x + 1) ** 2, _db(x), np.ones_like(x)])

    @property
    def is_linear_a1(self) -> bool:
        return self.alpha[0] == 0


class FendModelCoeffs(ApproxModelCoeffs):
    """`a1` and `a2` quadratic in 10log10(C)"""

    template = "fend"
    quantity = "f_end_khz"

    @staticmethod
    def a1_basis(x: np.ndarray) -> np.ndarray:
        return _poly_basis(_db(x), 2)

    @staticmethod
    def a2_basis(x: np.ndarray) -> np.ndarray:
        return _poly_basis(_db(x), 2)


class BandModelCoeffs(ApproxModelCoeffs):
    """`a1` cubic and `a2` quadratic in 10log10(C)"""

    template = "band"
    quantity = "B_khz"
    alpha_size = 4

    @staticmethod
    def a1_basis(x: np.ndarray) -> np.ndarray:
        return _poly_basis(_db(x), 3)

    @staticmethod
    def a2_basis(x: np.ndarray) -> np.ndarray:
        return _poly_basis(_db(x), 2)


class _SnrModelCoeffs(ApproxModelCoeffs):
    """`a1` and `a2` quadratic in the SNR (dB)"""

    variable = "SNR_dB"

    @staticmethod
    def a1_basis(x: np.ndarray) -> np.ndarray:
        return _poly_basis(x, 2)

    @staticmethod
    def a2_basis(x: np.ndarray) -> np.ndarray:
        return _poly_basis(x, 2)


class SnrPowerModelCoeffs(_SnrModelCoeffs):
    template = "snr_power"
    quantity = "P_dB"


class SnrBandModelCoeffs(_SnrModelCoeffs):
    template = "snr_band"
    quantity = "B_khz"


class SnrCapacityModelCoeffs(_SnrModelCoeffs):
    template = "snr_capacity"
    quantity = "C_kbps"


TEMPLATES: dict[str, type[ApproxModelCoeffs]] = {
    cls.template: cls
    for cls in (
        PowerModelCoeffs,
        FendModelCoeffs,
        BandModelCoeffs,
        SnrPowerModelCoeffs,
        SnrBandModelCoeffs,
        SnrCapacityModelCoeffs,
    )
}


def _check_capacity(C: Any, strict: bool = False) -> np.ndarray:
    arr = np.asarray(C, dtype=float)
    if np.any(arr < 0) or strict and np.any(arr == 0):
        raise DomainError(f"capacity out of the model domain: {C!r}")
    return arr


def eval_power_model(l: Any, C: Any, coeffs: PowerModelCoeffs) -> Any:
    """
    Linear power; 0 at C = 0.

    >>> power = eval_power_model(1.0, 1.0, published_coeffs("case1", "power"))
    >>> round(10 * math.log10(power), 3)
    74.309
    """
    return coeffs.value(l, _check_capacity(C))


def eval_fend_model(l: Any, C: Any, coeffs: FendModelCoeffs) -> Any:
    """kHz"""
    return coeffs.value(l, _check_capacity(C, strict=True))


def eval_band_model(l: Any, C: Any, coeffs: BandModelCoeffs) -> Any:
    """kHz"""
    return coeffs.value(l, _check_capacity(C, strict=True))


# Published coefficient sets (k = 1.5, s = 0.5, w = 0).

_PUBLISHED: dict[tuple[str, str], tuple[tuple[float, ...], tuple[float, ...], float, float]] = {
    ("case1", "power"): ((-0.00235, 0.01565, 2.1329), (0.014798, 1.0148, 74.175), 2.532e-7, 5.8979e-5),
    ("case1", "fend"): ((4.795e-5, 0.00246, -0.44149), (0.00171, 0.07153, 13.738), 3.930e-9, 3.4706e-5),
    ("case1", "band"): (
        (-5.958e-7, -2.563e-5, -0.000305, -0.30694),
        (-5.163e-6, 0.33427, 9.6752),
        6.599e-9,
        2.9233e-7,
    ),
    ("case2", "power"): ((-5.617e-5, 0.02855, 2.9305), (0.04317, 0.90597, 76.156), 0.00011, 0.00010115),
    ("case2", "fend"): ((-0.00019, 0.01186, -0.55076), (0.0065157, -0.032693, 14.739), 1.32e-7, 7.3024e-5),
    ("case2", "band"): (
        (1.696e-6, 4.252e-5, -0.00249, -0.36397),
        (-0.0018252, 0.34788, 10.328),
        7.29e-7,
        0.00019414,
    ),
}


def published_coeffs(case: str, template: str) -> ApproxModelCoeffs:
    try:
        alpha, beta, mse_a1, mse_a2 = _PUBLISHED[(case, template)]
    except KeyError as exc:
        raise DomainError(f"no published coefficients for {case!r} / {template!r}") from exc
    return TEMPLATES[template](
        alpha=alpha, beta=beta, mse_a1=mse_a1, mse_a2=mse_a2, case=case, env=EnvironmentParams()
    )


def published_reference_offset_db(template: str) -> float:
    """
    dB to subtract from a published model to put it on this package's levels.

    >>> published_reference_offset_db("power"), published_reference_offset_db("band")
    (15.0, 0.0)
    """
    return PUBLISHED_REFERENCE_OFFSET_DB.get(template, 0.0)


def case_grid(case: str, points: int = FIT_GRID_POINTS, distance_scale: str = "log") -> tuple[np.ndarray, np.ndarray]:
    """
    The (l, C) fitting grid, C uniform in (0, cap].

    `distance_scale="log"`: l log-uniform from 13 m. `"linear"`: l uniform in
    (0, cap], which weights the fit towards the long links.
    """
    try:
        l_max = CASE_DISTANCE_CAP_KM[case]
        c_max = CASE_CAPACITY_CAP_KBPS[case]
    except KeyError as exc:
        raise DomainError(f"unknown case {case!r}") from exc
    c_grid = np.linspace(c_max / points, c_max, points)
    if distance_scale == "log":
        return log_grid(FIT_MIN_DISTANCE_KM, l_max, points), c_grid
    if distance_scale == "linear":
        return linear_grid(l_max / points, l_max, points), c_grid
    raise DomainError(f"distance scale must be one of {DISTANCE_SCALES}, got {distance_scale!r}")


# Fitting


def _as_frame(surface: SurfaceLike) -> pd.DataFrame:
    frame = surface if isinstance(surface, pd.DataFrame) else pd.DataFrame(list(surface))
    if "interval" in frame.columns:
        frame = frame[frame["interval"] == 0]
    return frame


def _quantity_db(frame: pd.DataFrame, cls: type[ApproxModelCoeffs]) -> np.ndarray:
    values = frame[cls.quantity].to_numpy(dtype=float)
    if cls.quantity.endswith("_dB"):
        return values
    return _db(values)


def parameter_curves(surface: SurfaceLike, cls: type[ApproxModelCoeffs]) -> pd.DataFrame:
    """Empirical `a1(x)`, `a2(x)` from per-x log-log regressions"""
    frame = _as_frame(surface)
    missing = {"l_km", cls.quantity, cls.variable} - set(frame.columns)
    if missing:
        raise DomainError(f"surface lacks columns {sorted(missing)}")
    frame = frame.assign(_log_l=_db(frame["l_km"].to_numpy(dtype=float)), _value=_quantity_db(frame, cls))
    frame = frame[np.isfinite(frame["_value"]) & np.isfinite(frame["_log_l"])]
    if frame["l_km"].nunique() < 2:
        raise DomainError("degenerate grid: at least two distances are needed")
    rows = []
    for x, group in frame.groupby(cls.variable, sort=True):
        if group["l_km"].nunique() < 2:
            _log.warning("skipping %s=%r: fewer than two distances", cls.variable, x)
            continue
        slope, intercept = np.polyfit(group["_log_l"], group["_value"], 1)
        rows.append(dict(x=float(x), a1=float(slope), a2=float(intercept)))
    return pd.DataFrame(rows, columns=["x", "a1", "a2"])


def _lstsq(basis: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, float]:
    if basis.shape[0] < basis.shape[1]:
        raise DomainError(f"{basis.shape[0]} parameter values cannot fit {basis.shape[1]} coefficients")
    coef, *_ = np.linalg.lstsq(basis, target, rcond=None)
    mse = float(np.mean((basis @ coef - target) ** 2))
    return coef, mse


def fit_models(
    surface: SurfaceLike,
    template: str = "power",
    case: str = "",
    env: EnvironmentParams | None = None,
    linear_a1: bool = False,
) -> ApproxModelCoeffs:
    """
    Two-stage fit of `template` to a solved surface (`waterfill.SURFACE_COLUMNS`);
    MSEs are over the parameter curves.
    `linear_a1` drops the quadratic term of the power model's `a1`.
    """
    try:
        cls = TEMPLATES[template]
    except KeyError as exc:
        raise DomainError(f"unknown template {template!r}; known: {sorted(TEMPLATES)}") from exc
    if linear_a1 and cls is not PowerModelCoeffs:
        raise DomainError("linear_a1 applies to the power model only")
    curves = parameter_curves(surface, cls)
    if len(curves) < MIN_POINTS_PER_AXIS:
        _log.warning("fitting %s on %d parameter values only", template, len(curves))
    x = curves["x"].to_numpy()
    a1_basis = cls.a1_basis(x)
    if linear_a1:
        coef, mse_a1 = _lstsq(a1_basis[:, 1:], curves["a1"].to_numpy())
        alpha = np.concatenate(([0.0], coef))
    else:
        alpha, mse_a1 = _lstsq(a1_basis, curves["a1"].to_numpy())
    beta, mse_a2 = _lstsq(cls.a2_basis(x), curves["a2"].to_numpy())
    result = cls(alpha=tuple(alpha), beta=tuple(beta), mse_a1=mse_a1, mse_a2=mse_a2, case=case, env=env)
    _log.info("fitted %s: alpha=%r beta=%r mse=(%.3g, %.3g)", template, result.alpha, result.beta, mse_a1, mse_a2)
    return result


@dataclasses.dataclass(frozen=True)
class SnrLinkModels:
    """P̃(l, SNR), B̂(l, SNR), Ĉ(l, SNR) for the fixed-SNR link weights"""

    power: SnrPowerModelCoeffs
    band: SnrBandModelCoeffs
    capacity: SnrCapacityModelCoeffs

    def link_power(self, l: float, snr_db: float) -> float:
        return float(self.power.value(l, snr_db))

    def link_bandwidth(self, l: float, snr_db: float) -> float:
        """kHz"""
        return float(self.band.value(l, snr_db))

    def link_capacity(self, l: float, snr_db: float) -> float:
        """kbps"""
        return float(self.capacity.value(l, snr_db))


def fit_snr_models(surface: SurfaceLike, env: EnvironmentParams | None = None) -> SnrLinkModels:
    """Fit the SNR-parameterized models to a `sweep_snr_surface` output"""
    frame = _as_frame(surface)
    return SnrLinkModels(
        power=fit_models(frame, "snr_power", env=env),  # type: ignore[arg-type]
        band=fit_models(frame, "snr_band", env=env),  # type: ignore[arg-type]
        capacity=fit_models(frame, "snr_capacity", env=env),  # type: ignore[arg-type]
    )


# Wind speed


WIND_COEFF_NAMES = ("alpha1", "alpha2", "alpha3", "beta1", "beta2", "beta3")


@dataclasses.dataclass(frozen=True)
class WindModelCoeffs:
    """
    Per-coefficient `(γ1, γ2, γ3)`:
    `coeff(w) = γ3 + γ2 10log10(w + 1) + γ1 (10log10(w + 1))²`
    """

    gammas: Mapping[str, tuple[float, float, float]]
    mse: Mapping[str, float] = dataclasses.field(default_factory=dict)

    def __post_init__(self) -> None:
        missing = set(WIND_COEFF_NAMES) - set(self.gammas)
        if missing:
            raise DomainError(f"wind model lacks {sorted(missing)}")

    def coefficient(self, name: str, w: float) -> float:
        if w < 0:
            raise DomainError(f"wind speed must be non-negative, got {w!r}")
        x = 10 * math.log10(w + 1)
        g1, g2, g3 = self.gammas[name]
        return g3 + g2 * x + g1 * x * x


def eval_wind_model(w: float, gammas: WindModelCoeffs) -> PowerModelCoeffs:
    """
    The power model for wind speed `w` (m/s).

    >>> model = eval_wind_model(0.0, WIND_MODEL_COEFFS)
    >>> model.alpha[2], model.beta[2]
    (2.4586, 73.144)
    """
    values = {name: gammas.coefficient(name, w) for name in WIND_COEFF_NAMES}
    return PowerModelCoeffs(
        alpha=(values["alpha1"], values["alpha2"], values["alpha3"]),
        beta=(values["beta1"], values["beta2"], values["beta3"]),
        env=EnvironmentParams(w=w),
    )


def fit_wind_model(fits: Mapping[float, PowerModelCoeffs]) -> WindModelCoeffs:
    """Quadratic-in-10log10(w + 1) fit of each power-model coefficient"""
    if len(fits) < 3:
        raise DomainError(f"wind model needs at least 3 wind speeds, got {len(fits)}")
    speeds = sorted(fits)
    basis = _poly_basis(np.asarray([10 * math.log10(w + 1) for w in speeds]), 2)
    gammas: dict[str, tuple[float, float, float]] = {}
    mse: dict[str, float] = {}
    for idx, name in enumerate(WIND_COEFF_NAMES):
        source = "alpha" if name.startswith("alpha") else "beta"
        target = np.asarray([getattr(fits[w], source)[idx % 3] for w in speeds])
        coef, mse[name] = _lstsq(basis, target)
        gammas[name] = (float(coef[0]), float(coef[1]), float(coef[2]))
    return WindModelCoeffs(gammas=gammas, mse=mse)


WIND_MODEL_COEFFS = WindModelCoeffs(
    gammas={
        "alpha1": (5.2669e-6, -0.000157, -0.004575),
        "alpha2": (-2.971e-5, 0.000865, 0.029306),
        "alpha3": (0.000152, 0.01809, 2.4586),
        "beta1": (9.924e-6, -0.00027, 0.012288),
        "beta2": (7.799e-6, -0.000219, 1.0118),
        "beta3": (0.068091, 1.3659, 73.144),
    }
)


# Comparison


@dataclasses.dataclass(frozen=True)
class SurfaceComparison:
    """dB errors of a model against a surface; `aligned` ones after removing the median offset"""

    points: int
    max_abs_db: float
    rms_db: float
    median_offset_db: float
    max_abs_aligned_db: float
    rms_aligned_db: float


def compare_surface(surface: SurfaceLike, coeffs: ApproxModelCoeffs, offset_db: float = 0.0) -> SurfaceComparison:
    """
    Errors of `coeffs` minus `offset_db` against the surface; pass
    `published_reference_offset_db(template)` for the published tables.
    """
    frame = _as_frame(surface)
    measured = _quantity_db(frame, type(coeffs))
    model = np.asarray(
        coeffs.value_db(frame["l_km"].to_numpy(dtype=float), frame[coeffs.variable].to_numpy(dtype=float))
    )
    diff = measured - (model - offset_db)
    diff = diff[np.isfinite(diff)]
    if diff.size == 0:
        raise DomainError("no comparable surface points")
    offset = float(np.median(diff))
    aligned = diff - offset
    return SurfaceComparison(
        points=int(diff.size),
        max_abs_db=float(np.max(np.abs(diff))),
        rms_db=float(np.sqrt(np.mean(diff**2))),
        median_offset_db=offset,
        max_abs_aligned_db=float(np.max(np.abs(aligned))),
        rms_aligned_db=float(np.sqrt(np.mean(aligned**2))),
    )
