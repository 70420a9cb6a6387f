from __future__ import annotations

import math

import numpy as np
import pandas as pd
import pytest

from uwacnet.approxfit import (
    WIND_MODEL_COEFFS,
    ApproxModelCoeffs,
    BandModelCoeffs,
    PowerModelCoeffs,
    case_grid,
    compare_surface,
    eval_band_model,
    eval_fend_model,
    eval_power_model,
    eval_wind_model,
    fit_models,
    fit_snr_models,
    fit_wind_model,
    parameter_curves,
    published_coeffs,
    published_reference_offset_db,
)
from uwacnet.errors import DomainError
from uwacnet.waterfill import sweep_surface

L_GRID = np.geomspace(0.013, 10.0, 12)
C_GRID = np.linspace(0.1, 2.0, 12)


def _synthetic_surface(a1, a2_db):
    rows = []
    for c in C_GRID:
        for l_km in L_GRID:
            rows.append(dict(l_km=l_km, C_kbps=c, P_dB=a1(c) * 10 * math.log10(l_km) + a2_db(c), interval=0))
    return pd.DataFrame(rows)


def test_fit_recovers_constant_law():
    surface = _synthetic_surface(lambda c: 2.0, lambda c: 70.0)
    curves = parameter_curves(surface, PowerModelCoeffs)
    assert np.allclose(curves["a1"], 2.0)
    assert np.allclose(curves["a2"], 70.0)
    coeffs = fit_models(surface, "power")
    assert coeffs.alpha == pytest.approx((0.0, 0.0, 2.0), abs=1e-8)
    assert coeffs.beta == pytest.approx((0.0, 0.0, 70.0), abs=1e-6)
    assert coeffs.mse_a1 == pytest.approx(0.0, abs=1e-16)


def test_fit_recovers_capacity_dependence():
    surface = _synthetic_surface(lambda c: 2.0 + 0.1 * c, lambda c: 70.0 + 10 * math.log10(c))
    coeffs = fit_models(surface, "power", case="synthetic")
    assert coeffs.alpha == pytest.approx((0.0, 0.1, 2.0), abs=1e-8)
    assert coeffs.beta == pytest.approx((0.0, 1.0, 70.0), abs=1e-6)
    assert coeffs.case == "synthetic"
    comparison = compare_surface(surface, coeffs)
    assert comparison.points == len(surface)
    assert comparison.max_abs_db < 1e-6


def test_fit_linear_a1():
    surface = _synthetic_surface(lambda c: 2.0 + 0.1 * c, lambda c: 70.0)
    coeffs = fit_models(surface, "power", linear_a1=True)
    assert coeffs.is_linear_a1
    assert coeffs.alpha[1:] == pytest.approx((0.1, 2.0), abs=1e-8)
    with pytest.raises(DomainError):
        fit_models(surface.rename(columns={"P_dB": "B_khz"}), "band", linear_a1=True)


def test_fit_rejects_degenerate_grid():
    surface = _synthetic_surface(lambda c: 2.0, lambda c: 70.0)
    with pytest.raises(DomainError):
        fit_models(surface[surface["l_km"] == L_GRID[0]], "power")
    with pytest.raises(DomainError):
        fit_models(surface.drop(columns="P_dB"), "power")
    with pytest.raises(DomainError):
        fit_models(surface, "no-such-template")


def test_fit_ignores_extra_intervals():
    surface = _synthetic_surface(lambda c: 2.0, lambda c: 70.0)
    extra = surface.assign(interval=1, P_dB=0.0)
    coeffs = fit_models(pd.concat([surface, extra]), "power")
    assert coeffs.beta[2] == pytest.approx(70.0, abs=1e-6)


def test_published_power_values(case1_power):
    assert 10 * math.log10(eval_power_model(1.0, 1.0, case1_power)) == pytest.approx(74.309, abs=1e-3)
    assert 10 * math.log10(eval_power_model(10.0, 1.0, case1_power)) == pytest.approx(95.771, abs=1e-3)
    assert eval_power_model(1.0, 0.0, case1_power) == 0.0
    with pytest.raises(DomainError):
        eval_power_model(1.0, -0.1, case1_power)
    with pytest.raises(DomainError):
        eval_power_model(0.0, 1.0, case1_power)


def test_published_coefficient_shapes():
    assert isinstance(published_coeffs("case2", "band"), BandModelCoeffs)
    assert len(published_coeffs("case1", "band").alpha) == 4
    with pytest.raises(DomainError):
        published_coeffs("case3", "power")
    with pytest.raises(DomainError):
        PowerModelCoeffs(alpha=(1.0, 2.0), beta=(1.0, 2.0, 3.0))


def test_fend_exceeds_bandwidth():
    l_grid, c_grid = case_grid("case1", points=20)
    fend, band = published_coeffs("case1", "fend"), published_coeffs("case1", "band")
    ll, cc = np.meshgrid(l_grid, c_grid)
    assert np.all(eval_fend_model(ll, cc, fend) > eval_band_model(ll, cc, band))
    with pytest.raises(DomainError):
        eval_fend_model(1.0, 0.0, fend)


def test_case_grid():
    l_grid, c_grid = case_grid("case1")
    assert len(l_grid) == len(c_grid) == 50
    assert l_grid[0] == pytest.approx(0.013)
    assert l_grid[-1] == pytest.approx(10.0)
    assert c_grid[0] > 0
    assert c_grid[-1] == pytest.approx(2.0)
    l_grid, _ = case_grid("case1", points=50, distance_scale="linear")
    assert l_grid[0] == pytest.approx(0.2)
    assert np.diff(l_grid) == pytest.approx(np.full(49, 0.2))
    with pytest.raises(DomainError):
        case_grid("case9")
    with pytest.raises(DomainError):
        case_grid("case1", distance_scale="cubic")


def test_compare_surface_offset():
    coeffs = published_coeffs("case1", "power")
    offset_db = published_reference_offset_db("power")
    rows = [
        dict(l_km=l_km, C_kbps=c, P_dB=float(coeffs.value_db(l_km, c)) - offset_db, interval=0)
        for l_km in (0.5, 2.0)
        for c in (0.5, 1.5)
    ]
    shifted = compare_surface(rows, coeffs, offset_db)
    assert shifted.max_abs_db == pytest.approx(0.0, abs=1e-9)
    raw = compare_surface(rows, coeffs)
    assert raw.max_abs_db == pytest.approx(offset_db)
    assert raw.max_abs_aligned_db == pytest.approx(0.0, abs=1e-9)


def test_document_round_trip(case1_power):
    doc = case1_power.to_document()
    assert doc["template"] == "power"
    assert doc["k"] == 1.5
    assert ApproxModelCoeffs.from_document(doc) == case1_power
    with pytest.raises(DomainError):
        ApproxModelCoeffs.from_document(dict(doc, template="nope"))


def test_wind_model_at_calm():
    calm = eval_wind_model(0.0, WIND_MODEL_COEFFS)
    assert calm.alpha == pytest.approx((-0.004575, 0.029306, 2.4586))
    assert calm.beta == pytest.approx((0.012288, 1.0118, 73.144))
    assert calm.env.w == 0.0


def test_wind_model_at_nine():
    windy = eval_wind_model(9.0, WIND_MODEL_COEFFS)
    assert windy.alpha[0] == pytest.approx(-0.00562, abs=1e-5)
    with pytest.raises(DomainError):
        eval_wind_model(-1.0, WIND_MODEL_COEFFS)


def test_fit_wind_model_recovers_table():
    fits = {w: eval_wind_model(w, WIND_MODEL_COEFFS) for w in (0.0, 3.0, 6.0, 9.0)}
    fitted = fit_wind_model(fits)
    for name, gammas in WIND_MODEL_COEFFS.gammas.items():
        assert fitted.gammas[name] == pytest.approx(gammas, rel=1e-6, abs=1e-9)
        assert fitted.mse[name] == pytest.approx(0.0, abs=1e-12)


def test_fit_wind_model_needs_three_speeds():
    fits = {w: eval_wind_model(w, WIND_MODEL_COEFFS) for w in (0.0, 5.0)}
    with pytest.raises(DomainError):
        fit_wind_model(fits)


def test_fit_snr_models():
    rows = []
    for snr in np.linspace(-10.0, 10.0, 5):
        for l_km in L_GRID:
            log_l = 10 * math.log10(l_km)
            rows.append(
                dict(
                    l_km=l_km,
                    SNR_dB=snr,
                    P_dB=1.6 * log_l + 60.0 + snr,
                    B_khz=10 ** ((-0.3 * log_l + 10.0) / 10),
                    C_kbps=10 ** ((-0.3 * log_l + 8.0 + 0.1 * snr) / 10),
                    interval=0,
                )
            )
    models = fit_snr_models(rows)
    assert 10 * math.log10(models.link_power(1.0, 0.0)) == pytest.approx(60.0, abs=1e-6)
    assert models.link_bandwidth(1.0, 5.0) == pytest.approx(10.0, rel=1e-6)
    assert models.link_capacity(10.0, 0.0) == pytest.approx(10 ** 0.5, rel=1e-6)


@pytest.mark.slow
def test_case1_models_match_the_solved_surface(env):
    l_grid, c_grid = case_grid("case1", distance_scale="linear")
    surface = pd.DataFrame(sweep_surface(l_grid, c_grid, env, threads=4))
    refit = compare_surface(surface, fit_models(surface, "power", case="case1", env=env))
    assert refit.max_abs_db <= 1.0
    offset_db = published_reference_offset_db("power")
    # The wind table at w = 0 and the case-1 table describe the same channel.
    wind = compare_surface(surface, eval_wind_model(0.0, WIND_MODEL_COEFFS), offset_db)
    assert wind.max_abs_db <= 2.0
    case1 = compare_surface(surface, published_coeffs("case1", "power"), offset_db)
    assert case1.max_abs_db <= 3.0
