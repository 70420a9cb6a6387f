from __future__ import annotations

import math

import numpy as np
import pytest

from uwacnet.errors import DomainError
from uwacnet.interference import (
    DEFAULT_SNR_SERIES,
    DEFAULT_THETA_SERIES,
    INTERFERENCE_COLUMNS,
    ActiveLink,
    InterferenceScenario,
    band_overlap,
    interference_matrix,
    scenario_series,
    scheme_links,
    severe_interference_rate,
    sir_db,
    transmit_psd,
)
from uwacnet.netopt import ApproxCostModel
from uwacnet.waterfill import Band, solve_capacity_point


@pytest.fixture
def km_point(env):
    return solve_capacity_point(1.0, 0.5, env)


def _link(tx_id, rx_id, tx, rx, point):
    return ActiveLink(tx_id=tx_id, rx_id=rx_id, tx=tx, rx=rx, point=point)


def test_band_overlap():
    left = Band(((1.0, 3.0), (5.0, 8.0)))
    assert band_overlap(left, Band(((2.0, 6.0),))).intervals == ((2.0, 3.0), (5.0, 6.0))
    assert band_overlap(left, left) == left
    assert band_overlap(left, Band(((3.0, 5.0),))).is_empty
    assert band_overlap(left, Band()).is_empty


def test_transmit_psd_vanishes_outside_band(km_point):
    inside = np.linspace(km_point.band.f_ini, km_point.band.f_end, 7)[1:-1]
    outside = np.asarray([km_point.band.f_ini / 2, km_point.band.f_end * 2])
    assert np.all(transmit_psd(km_point, inside) > 0)
    assert np.all(transmit_psd(km_point, outside) == 0)


def test_link_needs_a_band(env):
    with pytest.raises(DomainError):
        _link(0, 1, (0.0, 0.0), (1.0, 0.0), solve_capacity_point(1.0, 0.0, env))


def test_colocated_duplicate_is_zero_db(km_point):
    victim = _link(0, 1, (0.0, 0.0), (1.0, 0.0), km_point)
    twin = _link(2, 3, (0.0, 0.0), (1.0, 1.0), km_point)
    assert sir_db(victim, [twin]) == pytest.approx(0.0, abs=1e-9)


def test_no_interferers(km_point):
    victim = _link(0, 1, (0.0, 0.0), (1.0, 0.0), km_point)
    assert sir_db(victim, []) == math.inf


def test_disjoint_bands_do_not_interfere(env):
    short = solve_capacity_point(0.2, 0.01, env)
    longer = solve_capacity_point(0.31, 0.01, env)
    victim = _link(0, 1, (0.0, 0.0), (0.2, 0.0), short)
    other = _link(2, 3, (0.25, 0.0), (0.56, 0.0), longer)
    assert sir_db(victim, [other]) == math.inf


def test_sir_falls_as_interferers_join(km_point):
    victim = _link(0, 1, (0.0, 0.0), (1.0, 0.0), km_point)
    interferers = [
        _link(2, 5, (2.0, 0.0), (3.0, 0.0), km_point),
        _link(3, 6, (0.0, 2.0), (0.0, 3.0), km_point),
        _link(4, 7, (3.0, 1.0), (4.0, 1.0), km_point),
    ]
    values = [sir_db(victim, interferers[:count]) for count in (1, 2, 3)]
    assert values[0] > values[1] > values[2]
    # The closest interferer is 1 km from the receiver, like the transmitter.
    assert values[0] == pytest.approx(0.0, abs=1e-9)


def test_interferer_at_victim_receiver(km_point, env):
    victim = _link(0, 1, (0.0, 0.0), (1.0, 0.0), km_point)
    relay = _link(1, 2, (1.0, 0.0), (2.0, 0.0), km_point)
    with pytest.raises(DomainError):
        sir_db(victim, [relay])
    with pytest.raises(DomainError):
        sir_db(victim, [], env=env.with_k(2.0))


def test_interference_matrix_exclusions(km_point):
    links = [
        _link(0, 1, (0.0, 0.0), (1.0, 0.0), km_point),
        _link(1, 2, (1.0, 0.0), (2.0, 0.0), km_point),
        _link(0, 3, (0.0, 0.0), (0.0, 1.0), km_point),
        _link(4, 5, (2.0, 2.0), (3.0, 2.0), km_point),
    ]
    signal, matrix = interference_matrix(links)
    assert signal.shape == (4,)
    assert np.all(signal > 0)
    assert np.all(np.diag(matrix) == 0)
    # Own transmissions and those of the victim's receiver.
    assert matrix[0, 1] == 0 and matrix[0, 2] == 0
    assert matrix[0, 3] > 0
    assert matrix[1, 0] > 0


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(scheme=4),
        dict(scheme=3),
        dict(scheme=1, theta=0.5),
        dict(scheme=2, theta=0.0),
        dict(node_counts=(1, 3)),
        dict(rate=0.0),
    ],
)
def test_scenario_validation(kwargs):
    with pytest.raises(DomainError):
        InterferenceScenario(**kwargs)


def test_scenario_series():
    assert [scenario.theta for scenario in scenario_series(2)] == list(DEFAULT_THETA_SERIES)
    assert [scenario.theta_or_snr for scenario in scenario_series(3)] == list(DEFAULT_SNR_SERIES)
    (single,) = scenario_series(1, InterferenceScenario(scheme=2, theta=0.2))
    assert single.scheme == 1 and single.theta == 1.0
    assert [scenario.snr_db for scenario in scenario_series(3, values=[5.0])] == [5.0]
    with pytest.raises(DomainError):
        scenario_series(5)


def test_scheme_links(line3, case1_power):
    cost_model = ApproxCostModel(case1_power)
    continuous = scheme_links(InterferenceScenario(rate=0.2), line3, 0, 2, cost_model)
    assert continuous
    assert all(link.arc is not None and link.tx_id == link.arc.tail for link in continuous)
    assert {link.rx_id for link in continuous} >= {2}
    fixed = scheme_links(InterferenceScenario(scheme=3, snr_db=0.0, rate=0.2), line3, 0, 2, cost_model)
    assert all(link.point.snr_db == pytest.approx(0.0, abs=1e-3) for link in fixed)
    assert all(link.arc is None for link in fixed)


@pytest.mark.parametrize("scheme, theta", [(1, 1.0), (2, 0.5)])
def test_severe_interference_rate_small_run(case1_power, scheme, theta):
    scenario = InterferenceScenario(scheme=scheme, theta=theta, side_km=1.0, node_counts=(3, 4), rate=0.1, epochs=5)
    cost_model = ApproxCostModel(case1_power)
    rows = severe_interference_rate(scenario, 3, seed=7, cost_model=cost_model)
    assert [row["n_nodes"] for row in rows] == [3, 4]
    for row in rows:
        assert set(row) == set(INTERFERENCE_COLUMNS)
        assert row["trials"] + row["discarded"] == 3
        assert 0 <= row["severe"] <= row["trials"]
        assert row["ci_low"] <= row["severe_percent"] <= row["ci_high"]
        assert row["theta_or_snr"] == theta
    assert severe_interference_rate(scenario, 3, seed=7, cost_model=cost_model) == rows
    with pytest.raises(DomainError):
        severe_interference_rate(scenario, 0, seed=7, cost_model=cost_model)


def _pooled_percent(rows):
    trials = sum(row["trials"] for row in rows)
    return 100.0 * sum(row["severe"] for row in rows) / trials


@pytest.mark.slow
def test_continuous_transmission_rarely_interferes():
    rows = severe_interference_rate(InterferenceScenario(), 200, seed=0, threads=4)
    assert [row["n_nodes"] for row in rows] == [3, 4, 5, 6, 7, 8]
    assert _pooled_percent(rows) < 5.0
    assert all(row["ci_low"] < 5.0 for row in rows)


@pytest.mark.slow
def test_duty_cycle_interference_rises_then_falls():
    base = InterferenceScenario(node_counts=(3, 5, 8))
    rates = [
        _pooled_percent(severe_interference_rate(scenario, 200, seed=0, threads=4))
        for scenario in scenario_series(2, base)
    ]
    assert rates[-1] < 3.0
    assert max(rates[1:-1]) > rates[0]
    assert max(rates[1:-1]) > rates[-1]
