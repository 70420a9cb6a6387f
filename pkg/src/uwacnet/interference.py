"""
How often does the no-interference assumption break? Links of solved
subgraphs in random deployments are checked for a signal-to-interference
ratio below a threshold, with ideal filtering: an interferer only counts
over the part of its band that overlaps the victim's.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from collections.abc import Iterable, Sequence
from typing import Any

import numpy as np

from .channel import EnvironmentParams, an_product_db, path_loss
from .errors import DomainError, UwacnetError, exclogwrap
from .grids import log_grid
from .memo import memoize
from .netopt import (
    CostModel,
    Deployment,
    Hyperarc,
    MulticastRequest,
    SolverParams,
    TabulatedCostModel,
    build_hypergraph,
    solve_min_power_multicast,
)
from .parallel import map_ordered
from .stats import binomial_ci
from .waterfill import (
    DEFAULT_TOLERANCES,
    NEPER_PER_DB,
    Band,
    LinkOperatingPoint,
    Tolerances,
    integrate_band,
    solve_capacity_point,
    solve_snr_point,
)

__all__ = (
    "ActiveLink",
    "InterferenceScenario",
    "SIR_NO_INTERFERENCE",
    "SEVERE_SIR_DB",
    "INTERFERENCE_COLUMNS",
    "band_overlap",
    "transmit_psd",
    "sir_db",
    "interference_matrix",
    "scheme_links",
    "scenario_cost_model",
    "severe_interference_rate",
    "scenario_series",
    "DEFAULT_THETA_SERIES",
    "DEFAULT_SNR_SERIES",
)

_log = logging.getLogger(__name__)

SIR_NO_INTERFERENCE = math.inf
SEVERE_SIR_DB = 3.0

INTERFERENCE_COLUMNS = (
    "scheme",
    "theta_or_snr",
    "n_nodes",
    "trials",
    "severe",
    "discarded",
    "severe_percent",
    "ci_low",
    "ci_high",
)


Position = tuple[float, float]


@dataclasses.dataclass(frozen=True)
class ActiveLink:
    """
    A transmission (`point`, from `tx`) as heard at `rx`. Links that share
    `arc` are one transmission reaching several receivers.
    """

    tx_id: int
    rx_id: int
    tx: Position
    rx: Position
    point: LinkOperatingPoint
    theta: float = 1.0
    arc: Hyperarc | None = None

    def __post_init__(self) -> None:
        if self.point.band.is_empty:
            raise DomainError(f"link {self.tx_id}->{self.rx_id} has an empty band")
        if not self.point.power > 0:
            raise DomainError(f"link {self.tx_id}->{self.rx_id} has no power")

    @property
    def distance(self) -> float:
        return math.hypot(self.rx[0] - self.tx[0], self.rx[1] - self.tx[1])


def band_overlap(b1: Band, b2: Band) -> Band:
    """
    >>> band_overlap(Band(((1.0, 3.0), (5.0, 8.0))), Band(((2.0, 6.0),))).intervals
    ((2.0, 3.0), (5.0, 6.0))
    >>> band_overlap(Band(((1.0, 2.0),)), Band(((3.0, 4.0),))).is_empty
    True
    """
    result = []
    for lo1, hi1 in b1.intervals:
        for lo2, hi2 in b2.intervals:
            lo, hi = max(lo1, lo2), min(hi1, hi2)
            if hi > lo:
                result.append((lo, hi))
    return Band(tuple(sorted(result)))


def transmit_psd(point: LinkOperatingPoint, freq: np.ndarray) -> np.ndarray:
    """Waterfilling transmit psd `K - A N` of a solved point, 0 outside its band"""
    an_db = np.asarray(an_product_db(point.distance, freq, point.env))
    return np.power(10.0, an_db / 10) * np.expm1(NEPER_PER_DB * np.maximum(point.level_db - an_db, 0.0))


def _received(link: ActiveLink, distance: float, band: Band, tolerances: Tolerances) -> float:
    if band.is_empty:
        return 0.0
    env = link.point.env
    return integrate_band(
        lambda freq: transmit_psd(link.point, freq) / np.asarray(path_loss(distance, freq, env)), band, tolerances
    )


def _check_interferer(victim: ActiveLink, other: ActiveLink) -> None:
    if other.tx == victim.rx:
        raise DomainError(f"interferer {other.tx_id} transmits from the victim's receiver {victim.rx_id}")


def sir_db(
    victim: ActiveLink,
    interferers: Iterable[ActiveLink],
    env: EnvironmentParams | None = None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> float:
    """
    Received signal over the interference in the victim's band, dB;
    `SIR_NO_INTERFERENCE` when no interferer overlaps it. Each link carries
    its own environment; `env`, when given, must match the victim's.
    """
    if env is not None and env != victim.point.env:
        raise DomainError("victim link was solved in another environment")
    signal = _received(victim, victim.distance, victim.point.band, tolerances)
    noise = 0.0
    for other in interferers:
        _check_interferer(victim, other)
        overlap = band_overlap(victim.point.band, other.point.band)
        distance = math.hypot(victim.rx[0] - other.tx[0], victim.rx[1] - other.tx[1])
        noise += _received(other, distance, overlap, tolerances)
    if noise <= 0:
        return SIR_NO_INTERFERENCE
    return 10 * math.log10(signal / noise)


def interference_matrix(
    links: Sequence[ActiveLink], tolerances: Tolerances = DEFAULT_TOLERANCES
) -> tuple[np.ndarray, np.ndarray]:
    """
    `(signal[v], interference[v, i])`: received power of each link and the
    power each other link leaks into its band. A node's own transmissions
    and transmissions from the victim's receiver are not counted.
    """
    signal = np.asarray([_received(link, link.distance, link.point.band, tolerances) for link in links])
    matrix = np.zeros((len(links), len(links)))
    for vidx, victim in enumerate(links):
        for idx, other in enumerate(links):
            if other.tx_id in (victim.tx_id, victim.rx_id):
                continue
            overlap = band_overlap(victim.point.band, other.point.band)
            distance = math.hypot(victim.rx[0] - other.tx[0], victim.rx[1] - other.tx[1])
            matrix[vidx, idx] = _received(other, distance, overlap, tolerances)
    return signal, matrix


def _sir_from_matrix(signal: np.ndarray, matrix: np.ndarray, active: np.ndarray) -> np.ndarray:
    """SIR (dB) of every active link among the active ones; +inf elsewhere"""
    noise = matrix[:, active].sum(axis=1)
    with np.errstate(divide="ignore"):
        sir = np.where(noise > 0, 10 * np.log10(signal / np.where(noise > 0, noise, 1.0)), np.inf)
    return np.where(active, sir, np.inf)


@dataclasses.dataclass(frozen=True)
class InterferenceScenario:
    """
    scheme 1: continuous transmission sized by capacity; scheme 2: duty
    cycle `theta` < 1 with independent activity per transmission and epoch;
    scheme 3: scheme-1 paths with every link at `snr_db`.
    """

    scheme: int = 1
    side_km: float = 5.0
    node_counts: tuple[int, ...] = (3, 4, 5, 6, 7, 8)
    rate: float = 0.1
    theta: float = 1.0
    snr_db: float | None = None
    epochs: int = 100
    threshold_db: float = SEVERE_SIR_DB
    env: EnvironmentParams = EnvironmentParams()

    def __post_init__(self) -> None:
        if self.scheme not in (1, 2, 3):
            raise DomainError(f"interference schemes are 1, 2 and 3, got {self.scheme!r}")
        if self.scheme == 3 and self.snr_db is None:
            raise DomainError("scheme 3 needs an SNR target")
        if self.scheme != 2 and self.theta != 1.0:
            raise DomainError(f"scheme {self.scheme} transmits continuously (theta = 1)")
        if not 0 < self.theta <= 1:
            raise DomainError(f"duty cycle must be within (0, 1], got {self.theta!r}")
        if self.side_km <= 0 or self.rate <= 0 or self.epochs < 1:
            raise DomainError("side, rate and epochs must be positive")
        if any(count < 2 for count in self.node_counts):
            raise DomainError("every node count must be at least 2")

    @property
    def theta_or_snr(self) -> float:
        return float(self.snr_db) if self.scheme == 3 else self.theta


@memoize(digits=10, maxsize=100_000)
def _capacity_point(l: float, capacity: float, env: EnvironmentParams, tolerances: Tolerances) -> LinkOperatingPoint:
    return solve_capacity_point(l, capacity, env, tolerances)


@memoize(digits=10, maxsize=100_000)
def _snr_point(l: float, snr_db: float, env: EnvironmentParams, tolerances: Tolerances) -> LinkOperatingPoint:
    return solve_snr_point(l, snr_db, env, tolerances)


def scheme_links(
    scenario: InterferenceScenario,
    deployment: Deployment,
    source: int,
    sink: int,
    cost_model: CostModel,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    solver_params: SolverParams = SolverParams(),
) -> list[ActiveLink]:
    """Directed links carrying flow in the scheme's solved subgraph"""
    graph = build_hypergraph(deployment)
    request = MulticastRequest(source=source, sinks=(sink,), rate=scenario.rate, theta=scenario.theta)
    solution = solve_min_power_multicast(graph, request, cost_model, solver_params)
    links: dict[tuple[int, int], ActiveLink] = {}
    for (_, arc, head), _flow in solution.x.items():
        if (arc.tail, head) in links:
            continue
        if scenario.scheme == 3:
            distance = deployment.distance(arc.tail, head)
            point = _snr_point(distance, float(scenario.snr_db), scenario.env, tolerances)  # type: ignore[arg-type]
        else:
            point = _capacity_point(arc.distance, solution.z[arc] / scenario.theta, scenario.env, tolerances)
        links[(arc.tail, head)] = ActiveLink(
            tx_id=arc.tail,
            rx_id=head,
            tx=deployment.position(arc.tail),
            rx=deployment.position(head),
            point=point,
            theta=scenario.theta,
            arc=arc if scenario.scheme != 3 else None,
        )
    return list(links.values())


def _is_severe(
    links: Sequence[ActiveLink], scenario: InterferenceScenario, rng: np.random.Generator, tolerances: Tolerances
) -> bool:
    if len(links) < 2:
        return False
    signal, matrix = interference_matrix(links, tolerances)
    if scenario.scheme != 2:
        return bool(np.any(_sir_from_matrix(signal, matrix, np.ones(len(links), dtype=bool)) < scenario.threshold_db))
    # Activity is drawn per transmission; the links of one hyperarc switch together.
    groups = sorted({(link.arc, link.tx_id) for link in links}, key=repr)
    group_index = np.asarray([groups.index((link.arc, link.tx_id)) for link in links])
    for _ in range(scenario.epochs):
        on = rng.random(len(groups)) < scenario.theta
        active = on[group_index]
        if active.sum() >= 2 and np.any(_sir_from_matrix(signal, matrix, active) < scenario.threshold_db):
            return True
    return False


@exclogwrap
def _run_trial(item: tuple[InterferenceScenario, int, int, int, CostModel, Tolerances]) -> tuple[int, str]:
    scenario, n_nodes, seed, trial, cost_model, tolerances = item
    rng = np.random.default_rng(np.random.SeedSequence([seed, n_nodes, trial]))
    deployment = Deployment.random(n_nodes, scenario.side_km, rng)
    source, sink = (int(value) for value in rng.choice(n_nodes, size=2, replace=False))
    try:
        links = scheme_links(scenario, deployment, source, sink, cost_model, tolerances)
        severe = _is_severe(links, scenario, rng, tolerances)
    except UwacnetError as exc:
        _log.debug("trial %d with %d nodes discarded: %r", trial, n_nodes, exc)
        return n_nodes, f"discarded: {type(exc).__name__}: {exc}"
    return n_nodes, "severe" if severe else "clear"


def scenario_cost_model(
    scenario: InterferenceScenario, tolerances: Tolerances = DEFAULT_TOLERANCES, threads: int = 1
) -> TabulatedCostModel:
    """Power table covering the scenario's distances and per-link rates"""
    max_rate = scenario.rate / scenario.theta
    l_grid = log_grid(0.005, scenario.side_km * math.sqrt(2) * 1.05, 24)
    c_grid = log_grid(max_rate / 200, max_rate * 1.05, 12)
    return TabulatedCostModel.build(scenario.env, l_grid, c_grid, tolerances, threads=threads)


def severe_interference_rate(
    scenario: InterferenceScenario,
    n_trials: int,
    seed: int,
    cost_model: CostModel | None = None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    threads: int = 1,
) -> list[dict[str, Any]]:
    """
    Percent of random deployments with a link below the SIR threshold, per
    node count, with a Wilson interval over the trials that did not fail.
    """
    if n_trials < 1:
        raise DomainError(f"need at least one trial, got {n_trials!r}")
    if n_trials < 100:
        _log.warning("%d trials per node count; reported rates want at least 100", n_trials)
    if cost_model is None:
        cost_model = scenario_cost_model(scenario, tolerances, threads)
    items = [
        (scenario, n_nodes, seed, trial, cost_model, tolerances)
        for n_nodes in scenario.node_counts
        for trial in range(n_trials)
    ]
    outcomes = map_ordered(_run_trial, items, threads=threads, chunksize=4)
    rows = []
    for n_nodes in scenario.node_counts:
        results = [outcome for count, outcome in outcomes if count == n_nodes]
        severe = sum(1 for outcome in results if outcome == "severe")
        discarded = sum(1 for outcome in results if outcome.startswith("discarded"))
        valid = len(results) - discarded
        ci_low, ci_high = binomial_ci(severe, valid)
        rows.append(
            dict(
                scheme=scenario.scheme,
                theta_or_snr=scenario.theta_or_snr,
                n_nodes=n_nodes,
                trials=valid,
                severe=severe,
                discarded=discarded,
                severe_percent=100.0 * severe / valid if valid else math.nan,
                ci_low=100.0 * ci_low,
                ci_high=100.0 * ci_high,
            )
        )
        if discarded:
            _log.warning("%d of %d trials with %d nodes discarded", discarded, len(results), n_nodes)
        _log.info(
            "scheme %d, %d nodes: %.3g%% severe over %d trials", scenario.scheme, n_nodes, rows[-1]["severe_percent"], valid
        )
    return rows


DEFAULT_THETA_SERIES = (1.0, 0.5, 0.2, 0.1, 0.05, 0.01)
DEFAULT_SNR_SERIES = (-20.0, -10.0, 0.0, 10.0)


def scenario_series(
    scheme: int, base: InterferenceScenario | None = None, values: Sequence[float] | None = None
) -> list[InterferenceScenario]:
    """The default sweep of a scheme: one scenario, duty cycles or SNR targets"""
    base = base or InterferenceScenario()
    if scheme == 1:
        return [dataclasses.replace(base, scheme=1, theta=1.0, snr_db=None)]
    if scheme == 2:
        return [dataclasses.replace(base, scheme=2, theta=float(theta), snr_db=None) for theta in values or DEFAULT_THETA_SERIES]
    if scheme == 3:
        return [dataclasses.replace(base, scheme=3, theta=1.0, snr_db=float(snr)) for snr in values or DEFAULT_SNR_SERIES]
    raise DomainError(f"interference schemes are 1, 2 and 3, got {scheme!r}")
