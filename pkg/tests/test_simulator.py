from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest
import simpy

from uwacnet.approxfit import SnrBandModelCoeffs, SnrCapacityModelCoeffs, SnrLinkModels, SnrPowerModelCoeffs
from uwacnet.channel import EnvironmentParams
from uwacnet.errors import DomainError, Infeasible
from uwacnet.grids import log_grid
from uwacnet.netopt import CostModel, Deployment, Hyperarc, TabulatedCostModel
from uwacnet.simulator import (
    SIM_METRICS_COLUMNS,
    AcousticMedium,
    ExactSnrLinks,
    FittedSnrLinks,
    Packet,
    Scheme4Subgraph,
    SimConfig,
    calibrate_access_probability,
    mac_step,
    measure_gap,
    order_nodes,
    psk_bit_error,
    psk_packet_error,
    run_scheme4,
    run_scheme5,
    scheme_runner,
    select_route_scheme5,
    select_subgraph_scheme4,
    sensitivity_sweep,
    weighted_link_choice,
)


class FlatLinks:
    """1 kbps links whose power grows with the square of the reach"""

    snr_db = 10.0

    def power(self, l):
        return 1e6 * l * l

    def bandwidth(self, l):
        return 1.0

    def capacity(self, l):
        return 1.0

    def snr_at(self, l_tx, distance):
        return self.snr_db + 20 * math.log10(l_tx / distance)


class SquareCostModel(CostModel):
    name = "square"

    def power(self, l, rate):
        return 1e6 * l * l * rate


@pytest.fixture
def links():
    return FlatLinks()


@pytest.fixture
def pair():
    return Deployment.from_positions([(0.0, 0.0), (0.5, 0.0)])


def test_psk_errors_match_erfc():
    for snr_db in (-5.0, 0.0, 5.0, 10.0):
        expected = 0.5 * math.erfc(math.sqrt(10 ** (snr_db / 10)))
        assert psk_bit_error(snr_db) == pytest.approx(expected, rel=1e-12)
        assert psk_packet_error(snr_db, 1) == pytest.approx(expected, rel=1e-9)
    assert psk_bit_error(10.0) == pytest.approx(3.87e-6, rel=0.01)
    assert psk_packet_error(10.0, 256) == pytest.approx(9.9e-4, rel=0.01)
    assert psk_packet_error(math.inf, 256) == 0.0
    with pytest.raises(DomainError):
        psk_packet_error(10.0, 0)


def test_packet_error_grows_with_size():
    errors = [psk_packet_error(5.0, n) for n in (1, 16, 256, 4096)]
    assert all(a < b for a, b in zip(errors, errors[1:]))


def test_config_validation():
    with pytest.raises(DomainError):
        SimConfig(access_probability=0.0)
    with pytest.raises(DomainError):
        SimConfig(signaling="fsk")
    with pytest.raises(DomainError):
        SimConfig(ack_bits=0)
    config = SimConfig(packet_bits=128)
    assert config.ack_size == 128
    assert config.propagation(1.5) == pytest.approx(1.0)


def test_mac_step():
    rng = np.random.default_rng(0)
    assert mac_step([3], 1.0, rng) == [3]
    assert mac_step([3, 4], 0.0, rng) == []
    with pytest.raises(DomainError):
        mac_step([3], 1.5, rng)


def test_weighted_link_choice(rng):
    big = Hyperarc(0, (1,), 0.5)
    small = Hyperarc(0, (1, 2), 0.9)
    picks = [weighted_link_choice(0, {big: 90.0, small: 10.0}, rng) for _ in range(5000)]
    assert picks.count(big) / len(picks) == pytest.approx(0.9, abs=0.02)
    assert weighted_link_choice(0, {small: 1.0, big: 0.0}, rng) == small
    with pytest.raises(DomainError):
        weighted_link_choice(0, {}, rng)


def test_order_nodes():
    z = {(1, (2,)): 90, (1, (2, 4)): 10, (2, (4, 3)): 90, (4, (3,)): 10}
    assert order_nodes(z, source=1) == [1, 2, 4, 3]
    assert order_nodes(z, source=1, sink=3)[-1] == 3
    with pytest.raises(Infeasible):
        order_nodes(z, source=1, sink=7)


def test_scheme4_two_nodes_sends_one_packet_per_degree(pair, links):
    config = SimConfig(access_probability=1.0, generation_size=5)
    metrics = run_scheme4(pair, 0, 1, config, links)
    assert metrics.complete
    assert metrics.per_node_transmissions[0] == 5
    assert metrics.collisions == 0
    # Last packet sent at t = 4, then 1/3 s of flight and 0.256 s of airtime.
    assert metrics.completion_time == pytest.approx(4 + 0.5 / 1.5 + 0.256)


def test_scheme4_relay_line_overshoots_by_one(links):
    deployment = Deployment.from_positions([(0.0, 0.0), (1.0, 0.0), (1.5, 0.0)])
    first, second = Hyperarc(0, (1,), 1.0), Hyperarc(1, (2,), 0.5)
    subgraph = Scheme4Subgraph(source=0, sink=2, z={first: 1.0, second: 1.0}, weights={first: 1.0, second: 1.0})
    config = SimConfig(access_probability=1.0, generation_size=5)
    metrics = run_scheme4(deployment, 0, 2, config, links, subgraph)
    assert metrics.complete
    # The relay's acknowledgements do not reach the source.
    assert metrics.per_node_transmissions[0] == 6
    assert metrics.gating_events == 0


def test_scheme4_subgraph_selection(links, line3):
    subgraph = select_subgraph_scheme4(line3, 0, 2, links, SimConfig())
    assert sum(rate for arc, rate in subgraph.z.items() if arc.tail == 0) == 100
    assert order_nodes(subgraph.z, 0, 2)[0] == 0
    assert subgraph.cost > 0


def test_scheme4_draws_between_split_ranges(links, line3):
    near, far = Hyperarc(0, (1,), 0.5), Hyperarc(0, (1, 2), 1.0)
    relay = Hyperarc(1, (0, 2), 0.5)
    z = {near: 90.0, far: 10.0, relay: 90.0}
    subgraph = Scheme4Subgraph(source=0, sink=2, z=z, weights={arc: 1.0 for arc in z})
    config = SimConfig(access_probability=1.0, generation_size=60, seed=2)
    metrics = run_scheme4(line3, 0, 2, config, links, subgraph)
    assert metrics.complete
    reaches = [record.reach_km for record in metrics.records if record.node == 0]
    assert reaches.count(0.5) > reaches.count(1.0) > 0


def test_scheme5_lossless_pair_alternates_data_and_acks(pair, links):
    config = SimConfig(access_probability=1.0, generation_size=5)
    metrics = run_scheme5(pair, 0, 1, config, links)
    assert metrics.complete
    assert metrics.transmissions == 10
    assert metrics.per_node_transmissions == {0: 5, 1: 5}
    assert metrics.duplicates == 0


def test_scheme5_retransmissions_produce_duplicates(pair, links):
    duplicates = 0
    for seed in range(5):
        config = SimConfig(access_probability=0.2, generation_size=10, seed=seed)
        metrics = run_scheme5(pair, 0, 1, config, links)
        assert metrics.complete
        duplicates += metrics.duplicates
    assert duplicates > 0


def test_scheme5_route(links, line3):
    assert select_route_scheme5(line3, 0, 2, links, SimConfig()) == [0, 1, 2]


def test_runs_are_deterministic(links, line3):
    config = SimConfig(access_probability=0.4, generation_size=6, seed=3)
    for scheme in (4, 5):
        run = scheme_runner(scheme)
        first = run(line3, 0, 2, config, links).to_row()
        assert run(line3, 0, 2, config, links).to_row() == first
        assert set(first) == set(SIM_METRICS_COLUMNS)
    with pytest.raises(DomainError):
        scheme_runner(6)


def test_energy_identity(links, line3):
    metrics = run_scheme4(line3, 0, 2, SimConfig(access_probability=0.5, generation_size=4, seed=1), links)
    assert metrics.energy == pytest.approx(sum(record.energy for record in metrics.records))
    assert metrics.power == pytest.approx(metrics.energy / metrics.completion_time)
    assert metrics.delivered_bits == 4 * 256


def test_event_cap_stops_incomplete_runs(pair, links):
    config = SimConfig(access_probability=0.5, generation_size=50, event_cap=20)
    metrics = run_scheme5(pair, 0, 1, config, links)
    assert not metrics.complete
    assert metrics.events == 20


def test_psk_links_drop_packets(pair):
    class NoisyLinks(FlatLinks):
        snr_db = 4.3

    config = SimConfig(access_probability=1.0, generation_size=5, signaling="psk", packet_bits=64)
    metrics = run_scheme5(pair, 0, 1, config, NoisyLinks())
    assert metrics.complete
    assert metrics.dropped > 0


def _overheard(signaling, trials=200):
    """Receptions per node when node 0 sends to node 1 and node 2 sits 4% past the reach"""
    deployment = Deployment.from_positions([(0.0, 0.0), (0.5, 0.0), (0.52, 0.0)])
    clock = simpy.Environment()
    heard = {1: 0, 2: 0}

    def on_receive(receiver, sender, packet, time):
        heard[receiver] += 1

    config = SimConfig(signaling=signaling, packet_bits=64)
    medium = AcousticMedium(clock, deployment, config, FlatLinks(), np.random.default_rng(0), on_receive)
    for _ in range(trials):
        medium.transmit(0, 0.5, Packet("data", 0, seq=0, dest=1))
        clock.run(until=clock.now + 1.0)
    return heard


def test_psk_is_heard_beyond_the_reach():
    # 9.66 dB at node 2 leaves a packet error rate near 3e-4.
    heard = _overheard("psk")
    assert heard[1] > 190
    assert heard[2] > 190


def test_gaussian_is_not_heard_beyond_the_reach():
    assert _overheard("gaussian") == {1: 200, 2: 0}


def test_fitted_links():
    models = SnrLinkModels(
        power=SnrPowerModelCoeffs(alpha=(0.0, 0.0, 1.5), beta=(0.0, 1.0, 60.0)),
        band=SnrBandModelCoeffs(alpha=(0.0, 0.0, -0.3), beta=(0.0, 0.0, 10.0)),
        capacity=SnrCapacityModelCoeffs(alpha=(0.0, 0.0, -0.3), beta=(0.0, 0.0, 8.0)),
    )
    fitted = FittedSnrLinks(models, 10.0)
    assert fitted.power(1.0) == pytest.approx(1e7)
    assert fitted.bandwidth(1.0) == pytest.approx(10.0)
    assert fitted.snr_at(1.0, 1.0) == pytest.approx(10.0)
    assert fitted.snr_at(1.0, 0.5) > 10.0 > fitted.snr_at(1.0, 2.0)


def test_exact_links(env):
    exact = ExactSnrLinks(5.0, env)
    assert exact.point(1.0).snr_db == pytest.approx(5.0, abs=1e-3)
    assert exact.snr_at(1.0, 1.0) == 5.0
    assert exact.capacity(1.0) > 0 and exact.bandwidth(1.0) > 0


def test_calibration_limits(pair, links):
    config = SimConfig(generation_size=3)
    p, rate = calibrate_access_probability(pair, 0, 1, config, links, 5, target_rate_kbps=10.0, seeds=1)
    assert p == 1.0
    assert rate < 10.0
    p, rate = calibrate_access_probability(pair, 0, 1, config, links, 5, target_rate_kbps=1e-9, p_min=0.05, seeds=1)
    assert p == 0.05
    with pytest.raises(DomainError):
        calibrate_access_probability(pair, 0, 1, config, links, 5, 1.0, p_min=1.0)


def test_measure_gap(pair, links):
    config = SimConfig(access_probability=1.0, generation_size=4)
    rows = measure_gap([(pair, 0, 1)], config, 0.1, links, SquareCostModel(), calibrate=False)
    assert [row["scheme"] for row in rows] == [4, 5]
    for row in rows:
        assert row["deployments"] == 1
        assert row["gap_dB"] == pytest.approx(row["power_dB"] - row["bound_dB"])
        assert row["ci_low"] == row["ci_high"] == row["gap_dB"]
    with pytest.raises(DomainError):
        measure_gap([], config, 0.1, links)


def test_sensitivity_sweep(pair, links):
    rows = sensitivity_sweep(pair, 0, 1, SimConfig(), links, 5, [2, 3], [128], [1.0])
    assert [(row["G"], row["n"], row["p"]) for row in rows] == [(2, 128, 1.0), (3, 128, 1.0)]
    assert [row["transmissions"] for row in rows] == [4, 6]


# Desk scale: 1 km square, 10 dB links, 3 to 8 nodes.


@pytest.fixture(scope="module")
def desk():
    env = EnvironmentParams()
    instances = []
    for idx in range(24):
        rng = np.random.default_rng(np.random.SeedSequence([0, idx]))
        n_nodes = 3 + idx % 6
        deployment = Deployment.random(n_nodes, 1.0, rng)
        source, sink = (int(value) for value in rng.choice(n_nodes, size=2, replace=False))
        instances.append((deployment, source, sink))
    return dict(
        instances=instances,
        links=ExactSnrLinks(10.0, env),
        cost_model=TabulatedCostModel.build(env, log_grid(0.005, 1.5, 16), log_grid(0.01, 2.1, 10), threads=4),
        # Stop-and-wait routing needs long packets to reach 2 kbps over 1 km.
        config=SimConfig(slot=0.2, packet_bits=4096, generation_size=20),
    )


@pytest.fixture(scope="module")
def desk_gaps(desk):
    """signaling -> scheme -> gap row at 1 kbps"""
    gaps = {}
    for signaling in ("gaussian", "psk"):
        config = dataclasses.replace(desk["config"], signaling=signaling)
        rows = measure_gap(desk["instances"], config, 1.0, desk["links"], desk["cost_model"])
        gaps[signaling] = {row["scheme"]: row for row in rows}
    return gaps


@pytest.fixture(scope="module")
def desk_trends(desk):
    """(scheme, rate) -> mean power and energy, dB, at the calibrated access probability"""
    config, links = desk["config"], desk["links"]
    trends = {}
    for scheme in (4, 5):
        run = scheme_runner(scheme)
        for rate in (0.2, 1.0, 2.0):
            powers, energies = [], []
            for deployment, source, sink in desk["instances"]:
                p, _ = calibrate_access_probability(deployment, source, sink, config, links, scheme, rate)
                metrics = run(deployment, source, sink, dataclasses.replace(config, access_probability=p), links)
                powers.append(metrics.power_db)
                energies.append(10 * math.log10(metrics.energy))
            trends[scheme, rate] = (float(np.mean(powers)), float(np.mean(energies)))
    return trends


@pytest.mark.slow
def test_routing_gap_exceeds_coding_gap(desk_gaps):
    gaussian = desk_gaps["gaussian"]
    assert gaussian[4]["gap_dB"] > 0
    assert gaussian[5]["gap_dB"] >= gaussian[4]["gap_dB"]


@pytest.mark.slow
def test_psk_widens_the_gap(desk_gaps):
    for scheme in (4, 5):
        added = desk_gaps["psk"][scheme]["gap_dB"] - desk_gaps["gaussian"][scheme]["gap_dB"]
        assert added == pytest.approx(6.0, abs=2.0)


@pytest.mark.slow
@pytest.mark.xfail(reason="absolute gaps depend on G, n, T and p, which are not pinned down", strict=False)
def test_desk_gap_levels(desk_gaps):
    gaussian = desk_gaps["gaussian"]
    assert gaussian[4]["gap_dB"] == pytest.approx(11.0, abs=3.0)
    assert gaussian[5]["gap_dB"] == pytest.approx(13.0, abs=3.0)


@pytest.mark.slow
def test_doubling_the_rate_costs_routing_more(desk_trends):
    coding = desk_trends[4, 2.0][0] - desk_trends[4, 1.0][0]
    routing = desk_trends[5, 2.0][0] - desk_trends[5, 1.0][0]
    assert routing > coding > 0


@pytest.mark.slow
def test_coding_energy_is_flat_in_the_rate(desk_trends):
    coding = [desk_trends[4, rate][1] for rate in (0.2, 1.0, 2.0)]
    routing = [desk_trends[5, rate][1] for rate in (0.2, 1.0, 2.0)]
    assert max(coding) - min(coding) <= 1.0
    assert routing[0] < routing[1] < routing[2]
