"""
Minimum-power multicast with network coding over broadcast hyperarcs.

A node `i` transmitting over range `l` reaches every node within `l`, so the
hyperarcs of `i` are the nested nearest-neighbor prefixes. The cost of a
hyperarc carrying rate `z` with duty cycle `θ` is `θ P(l, z / θ)`; costs are
separable (no interference), so the problem is a convex flow problem:

* one sink: successive shortest augmenting paths over marginal costs;
* several sinks: conditional gradient (Frank-Wolfe) over the per-sink flows
  with the max over sinks smoothed by an l_p norm, and a line search on
  the exact objective.
"""
from __future__ import annotations

import dataclasses
import functools
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from typing import Any

import networkx as nx
import numpy as np
from scipy import interpolate, optimize

from .approxfit import CASE_CAPACITY_CAP_KBPS, ApproxModelCoeffs, eval_power_model
from .channel import EnvironmentParams
from .errors import DomainError, Infeasible, RateCapExceeded, UwacnetError
from .memo import memoize_method
from .stats import pair_window
from .waterfill import DEFAULT_TOLERANCES, HZ_PER_KHZ, LN2, Tolerances, solve_capacity_point, sweep_surface

__all__ = (
    "Node",
    "Deployment",
    "Hyperarc",
    "Hypergraph",
    "MulticastRequest",
    "SolverParams",
    "SubgraphSolution",
    "CostModel",
    "WaterfillCostModel",
    "ApproxCostModel",
    "TabulatedCostModel",
    "build_hypergraph",
    "hyperarc_cost",
    "solve_min_power_multicast",
    "check_feasibility",
    "lower_bound_power",
    "duty_cycle_sweep",
    "request_from_document",
    "NO_INTERFERENCE_SCALE_KM",
)

_log = logging.getLogger(__name__)

NO_INTERFERENCE_SCALE_KM = 10.0


# Deployments


@dataclasses.dataclass(frozen=True)
class Node:
    id: int
    x: float
    y: float


@dataclasses.dataclass(frozen=True)
class Deployment:
    """Node positions in km"""

    nodes: tuple[Node, ...]

    def __post_init__(self) -> None:
        nodes = tuple(self.nodes)
        object.__setattr__(self, "nodes", nodes)
        ids = [node.id for node in nodes]
        if len(set(ids)) != len(ids):
            raise DomainError(f"node ids must be unique: {ids!r}")
        positions = np.asarray([(node.x, node.y) for node in nodes], dtype=float).reshape(-1, 2)
        distances = np.hypot(*(positions[:, None, :] - positions[None, :, :]).transpose(2, 0, 1))
        np.fill_diagonal(distances, np.inf)
        if nodes and np.any(distances <= 0):
            raise DomainError("coincident nodes in the deployment")
        np.fill_diagonal(distances, 0.0)
        distances.setflags(write=False)
        object.__setattr__(self, "_distances", distances)
        object.__setattr__(self, "_index", {node_id: idx for idx, node_id in enumerate(ids)})
        if nodes and distances.max() > NO_INTERFERENCE_SCALE_KM:
            _log.warning(
                "deployment spans %.3g km, beyond the %g km no-interference scale",
                distances.max(),
                NO_INTERFERENCE_SCALE_KM,
            )

    @classmethod
    def from_positions(cls, positions: Sequence[tuple[float, float]], ids: Sequence[int] | None = None) -> Deployment:
        ids = list(ids) if ids is not None else list(range(len(positions)))
        return cls(tuple(Node(int(node_id), float(x), float(y)) for node_id, (x, y) in zip(ids, positions)))

    @classmethod
    def random(cls, count: int, side_km: float, rng: np.random.Generator) -> Deployment:
        """Uniform in a `side_km` square; ids 0..count-1"""
        if count < 2:
            raise DomainError(f"a deployment needs at least 2 nodes, got {count}")
        return cls.from_positions([tuple(pos) for pos in rng.uniform(0.0, side_km, size=(count, 2))])

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(node.id for node in self.nodes)

    @property
    def distances(self) -> np.ndarray:
        return self._distances  # type: ignore[attr-defined]

    def distance(self, i: int, j: int) -> float:
        index = self._index  # type: ignore[attr-defined]
        try:
            return float(self.distances[index[i], index[j]])
        except KeyError as exc:
            raise DomainError(f"unknown node {exc.args[0]!r}") from exc

    def position(self, i: int) -> tuple[float, float]:
        node = self.nodes[self._index[i]]  # type: ignore[attr-defined]
        return node.x, node.y

    def scaled(self, factor: float) -> Deployment:
        return Deployment(tuple(Node(node.id, node.x * factor, node.y * factor) for node in self.nodes))

    def relabeled(self, mapping: Mapping[int, int]) -> Deployment:
        return Deployment(tuple(Node(mapping[node.id], node.x, node.y) for node in self.nodes))

    def to_document(self) -> dict[str, Any]:
        return dict(nodes=[dict(id=node.id, x_km=node.x, y_km=node.y) for node in self.nodes])

    @classmethod
    def from_document(cls, doc: Mapping[str, Any]) -> Deployment:
        try:
            return cls(tuple(Node(int(item["id"]), float(item["x_km"]), float(item["y_km"])) for item in doc["nodes"]))
        except (KeyError, TypeError) as exc:
            raise DomainError(f"bad deployment document: {exc!r}") from exc


# Hypergraph


@dataclasses.dataclass(frozen=True, order=True)
class Hyperarc:
    """Broadcast from `tail` reaching `heads` (nearest first); `distance` to the farthest"""

    tail: int
    heads: tuple[int, ...]
    distance: float = dataclasses.field(compare=False)

    def __str__(self) -> str:
        return f"{self.tail}{{{','.join(str(head) for head in sorted(self.heads))}}}"


@dataclasses.dataclass(frozen=True)
class Hypergraph:
    deployment: Deployment
    neighbors: Mapping[int, tuple[int, ...]]
    hyperarcs: tuple[Hyperarc, ...]

    @functools.cached_property
    def out_arcs(self) -> dict[int, tuple[Hyperarc, ...]]:
        result: dict[int, list[Hyperarc]] = {node_id: [] for node_id in self.deployment.ids}
        for arc in self.hyperarcs:
            result[arc.tail].append(arc)
        return {key: tuple(value) for key, value in result.items()}

    def smallest_arc_reaching(self, tail: int, head: int) -> Hyperarc:
        for arc in self.out_arcs[tail]:
            if head in arc.heads:
                return arc
        raise DomainError(f"no hyperarc from {tail} reaches {head}")


def build_hypergraph(deployment: Deployment) -> Hypergraph:
    """
    Nested nearest-neighbor prefixes for every node; neighbors at tied
    distances share one hyperarc, so cost-distances strictly increase.

    >>> graph = build_hypergraph(Deployment.from_positions([(0, 0), (1, 0)]))
    >>> [str(arc) for arc in graph.hyperarcs]
    ['0{1}', '1{0}']
    """
    if len(deployment.nodes) < 2:
        raise DomainError("a hypergraph needs at least 2 nodes")
    neighbors: dict[int, tuple[int, ...]] = {}
    hyperarcs: list[Hyperarc] = []
    for tail in deployment.ids:
        ordered = sorted(
            (other for other in deployment.ids if other != tail),
            key=lambda other: (deployment.distance(tail, other), other),
        )
        neighbors[tail] = tuple(ordered)
        for idx, head in enumerate(ordered):
            distance = deployment.distance(tail, head)
            if idx + 1 < len(ordered) and deployment.distance(tail, ordered[idx + 1]) == distance:
                continue
            hyperarcs.append(Hyperarc(tail, tuple(ordered[: idx + 1]), distance))
    return Hypergraph(deployment=deployment, neighbors=neighbors, hyperarcs=tuple(hyperarcs))


# Cost models


class CostModel:
    """`power(l, rate)`: linear power of a link of `l` km carrying `rate` kbps"""

    name = "abstract"
    cap_kbps: float = math.inf

    def power(self, l: float, rate: float) -> float:
        raise NotImplementedError

    def marginal(self, l: float, rate: float) -> float:
        """d power / d rate, per kbps"""
        step = max(rate, self.cap_kbps * 1e-3 if math.isfinite(self.cap_kbps) else 1e-3) * 1e-4
        lo = max(rate - step, 0.0)
        hi = min(rate + step, self.cap_kbps)
        return (self.power(l, hi) - self.power(l, lo)) / (hi - lo)

    def check_rate(self, rate: float) -> None:
        if rate > self.cap_kbps * (1 + 1e-12):
            raise RateCapExceeded(rate, self.cap_kbps)


class WaterfillCostModel(CostModel):
    """The complete model, solved per (l, rate) and cached"""

    name = "waterfill"

    def __init__(
        self,
        env: EnvironmentParams | None = None,
        tolerances: Tolerances = DEFAULT_TOLERANCES,
        cap_kbps: float = 100.0,
    ) -> None:
        self.env = env or EnvironmentParams()
        self.tolerances = tolerances
        self.cap_kbps = cap_kbps

    @memoize_method(digits=10, maxsize=200_000)
    def _point(self, l: float, rate: float):
        return solve_capacity_point(l, rate, self.env, self.tolerances)

    def power(self, l: float, rate: float) -> float:
        self.check_rate(rate)
        return self._point(l, rate).power if rate > 0 else 0.0

    def marginal(self, l: float, rate: float) -> float:
        """1000 ln(2) K per kbps"""
        point = self._point(l, min(rate, self.cap_kbps))
        return HZ_PER_KHZ * LN2 * point.level


class ApproxCostModel(CostModel):
    """The closed-form power model; rates capped at the fitted range"""

    name = "approx"

    def __init__(self, coeffs: ApproxModelCoeffs, cap_kbps: float | None = None) -> None:
        self.coeffs = coeffs
        self.cap_kbps = cap_kbps if cap_kbps is not None else CASE_CAPACITY_CAP_KBPS.get(coeffs.case, 2.0)

    def power(self, l: float, rate: float) -> float:
        self.check_rate(rate)
        return float(eval_power_model(l, rate, self.coeffs))  # type: ignore[arg-type]


class TabulatedCostModel(CostModel):
    """
    Log-log interpolation of a solved power surface. Below the smallest
    tabulated rate the power is taken as proportional to the rate.
    """

    name = "tabulated"

    def __init__(self, l_grid: Sequence[float], c_grid: Sequence[float], power_db: np.ndarray) -> None:
        self.l_grid = np.asarray(l_grid, dtype=float)
        self.c_grid = np.asarray(c_grid, dtype=float)
        power_db = np.asarray(power_db, dtype=float)
        if power_db.shape != (self.l_grid.size, self.c_grid.size):
            raise DomainError("tabulated power shape does not match the grids")
        if self.l_grid.size < 2 or self.c_grid.size < 2:
            raise DomainError("tabulated cost model needs at least two points per axis")
        if not np.all(np.isfinite(power_db)):
            raise DomainError("tabulated power surface has holes")
        self.cap_kbps = float(self.c_grid[-1])
        self._interp = interpolate.RegularGridInterpolator(
            (np.log(self.l_grid), np.log(self.c_grid)), power_db, bounds_error=False, fill_value=None
        )

    @classmethod
    def from_surface(cls, surface: Any) -> TabulatedCostModel:
        import pandas as pd

        frame = surface if isinstance(surface, pd.DataFrame) else pd.DataFrame(list(surface))
        if "interval" in frame.columns:
            frame = frame[frame["interval"] == 0]
        table = frame.pivot_table(index="l_km", columns="C_kbps", values="P_dB", aggfunc="first")
        return cls(table.index.to_numpy(), table.columns.to_numpy(), table.to_numpy())

    @classmethod
    def build(
        cls,
        env: EnvironmentParams,
        l_grid: Sequence[float],
        c_grid: Sequence[float],
        tolerances: Tolerances = DEFAULT_TOLERANCES,
        threads: int = 1,
    ) -> TabulatedCostModel:
        return cls.from_surface(sweep_surface(l_grid, c_grid, env, tolerances, threads=threads))

    def power(self, l: float, rate: float) -> float:
        self.check_rate(rate)
        if rate <= 0:
            return 0.0
        c_min = float(self.c_grid[0])
        value_db = float(self._interp([[math.log(l), math.log(max(rate, c_min))]])[0])
        power = 10 ** (value_db / 10)
        return power * rate / c_min if rate < c_min else power


def hyperarc_cost(l: float, z: float, theta: float, cost_model: CostModel) -> float:
    """`θ P(l, z / θ)`; 0 for `z = 0`"""
    if z < 0:
        raise DomainError(f"hyperarc rate must be non-negative, got {z!r}")
    if not 0 < theta <= 1:
        raise DomainError(f"duty cycle must be within (0, 1], got {theta!r}")
    if z == 0:
        return 0.0
    rate = z / theta
    cost_model.check_rate(rate)
    return theta * cost_model.power(l, rate)


# Requests and solutions


@dataclasses.dataclass(frozen=True)
class MulticastRequest:
    source: int
    sinks: tuple[int, ...]
    rate: float  # kbps
    theta: float = 1.0

    def __post_init__(self) -> None:
        sinks = tuple(sorted(set(int(sink) for sink in self.sinks)))
        object.__setattr__(self, "sinks", sinks)
        if not sinks:
            raise DomainError("at least one sink is required")
        if self.source in sinks:
            raise DomainError("the source cannot be a sink")
        if not self.rate > 0:
            raise DomainError(f"rate must be positive, got {self.rate!r}")
        if not 0 < self.theta <= 1:
            raise DomainError(f"duty cycle must be within (0, 1], got {self.theta!r}")


def request_from_document(doc: Mapping[str, Any]) -> tuple[Deployment, MulticastRequest]:
    """`{nodes: [{id, x_km, y_km}], source, sinks[], rate_kbps, theta}`"""
    deployment = Deployment.from_document(doc)
    try:
        request = MulticastRequest(
            source=int(doc["source"]),
            sinks=tuple(int(sink) for sink in doc["sinks"]),
            rate=float(doc["rate_kbps"]),
            theta=float(doc.get("theta", 1.0)),
        )
    except (KeyError, TypeError) as exc:
        raise DomainError(f"bad request document: {exc!r}") from exc
    unknown = {request.source, *request.sinks} - set(deployment.ids)
    if unknown:
        raise DomainError(f"request names unknown nodes {sorted(unknown)}")
    return deployment, request


@dataclasses.dataclass(frozen=True)
class SolverParams:
    # Augmentation step of the unicast solver, as a fraction of R.
    delta_fraction: float = 0.01
    # Relative optimality gap of the multicast solver.
    gap: float = 0.01
    max_iter: int = 200
    smoothing_p: float = 20.0


@dataclasses.dataclass
class SubgraphSolution:
    request: MulticastRequest
    z: dict[Hyperarc, float]
    # (terminal, hyperarc, head) -> flow
    x: dict[tuple[int, Hyperarc, int], float]
    arc_power: dict[Hyperarc, float]
    total_power: float
    gap: float = 0.0
    iterations: int = 0
    converged: bool = True
    cost_model: str = dataclasses.field(default="", compare=False)

    @property
    def total_power_db(self) -> float:
        return 10 * math.log10(self.total_power) if self.total_power > 0 else -math.inf

    def active_arcs(self, threshold: float = 0.0) -> list[Hyperarc]:
        return sorted(arc for arc, rate in self.z.items() if rate > threshold)

    def to_document(self) -> dict[str, Any]:
        return dict(
            source=self.request.source,
            sinks=list(self.request.sinks),
            rate_kbps=self.request.rate,
            theta=self.request.theta,
            cost_model=self.cost_model,
            total_power_dB=self.total_power_db,
            gap=self.gap,
            iterations=self.iterations,
            converged=self.converged,
            z=[
                dict(
                    tail=arc.tail,
                    heads=sorted(arc.heads),
                    distance_km=arc.distance,
                    rate_kbps=rate,
                    power_dB=10 * math.log10(self.arc_power[arc]) if self.arc_power.get(arc, 0) > 0 else None,
                )
                for arc, rate in sorted(self.z.items())
            ],
            x=[
                dict(terminal=terminal, tail=arc.tail, heads=sorted(arc.heads), head=head, flow=flow)
                for (terminal, arc, head), flow in sorted(self.x.items())
            ],
        )


def _finish(
    graph: Hypergraph,
    request: MulticastRequest,
    cost_model: CostModel,
    z: Mapping[Hyperarc, float],
    x: Mapping[tuple[int, Hyperarc, int], float],
    **extra: Any,
) -> SubgraphSolution:
    z = {arc: rate for arc, rate in z.items() if rate > 0}
    arc_power = {arc: hyperarc_cost(arc.distance, rate, request.theta, cost_model) for arc, rate in z.items()}
    return SubgraphSolution(
        request=request,
        z=dict(sorted(z.items())),
        x={key: flow for key, flow in sorted(x.items()) if flow > 0},
        arc_power=arc_power,
        total_power=float(sum(arc_power.values())),
        cost_model=cost_model.name,
        **extra,
    )


# Shortest paths


def _digraph(nodes: Iterable[int], edges: Mapping[tuple[int, int], Mapping[str, Any]]) -> nx.DiGraph:
    """Nodes and edges inserted in sorted order, so equal-cost ties resolve the same way on every run"""
    graph = nx.DiGraph()
    graph.add_nodes_from(sorted(nodes))
    graph.add_edges_from((i, j, dict(attrs)) for (i, j), attrs in sorted(edges.items()))
    return graph


# Unicast: successive shortest paths


class _UnicastFlow:
    """
    Flow in units of `delta` on the complete directed graph of the deployment.

    Each augmentation runs Dijkstra over reduced costs `c + π_i - π_j`; the
    potentials `π` are the accumulated shortest distances, which keeps the
    reduced costs of the residual graph non-negative for convex arc costs.
    """

    def __init__(self, graph: Hypergraph, request: MulticastRequest, sink: int, cost_model: CostModel, params: SolverParams):
        self.graph = graph
        self.request = request
        self.sink = sink
        self.cost_model = cost_model
        self.params = params
        self.units = max(1, int(round(1 / params.delta_fraction)))
        self.delta = request.rate / self.units
        self.flow: dict[tuple[int, int], int] = {}
        self.potential: dict[int, float] = {node_id: 0.0 for node_id in graph.deployment.ids}
        self._costs: dict[tuple[int, int, int], float] = {}

    def cost(self, i: int, j: int, units: int) -> float:
        key = (i, j, units)
        if key not in self._costs:
            self._costs[key] = hyperarc_cost(
                self.graph.deployment.distance(i, j), units * self.delta, self.request.theta, self.cost_model
            )
        return self._costs[key]

    def residual_costs(self) -> dict[tuple[int, int], tuple[float, bool]]:
        """edge -> (marginal cost, is a cancellation of the opposite flow)"""
        result: dict[tuple[int, int], tuple[float, bool]] = {}
        ids = self.graph.deployment.ids
        cap_units = self.cost_model.cap_kbps * self.request.theta / self.delta
        for i in ids:
            for j in ids:
                if i == j:
                    continue
                units = self.flow.get((i, j), 0)
                options = []
                if units + 1 <= cap_units * (1 + 1e-12):
                    options.append((self.cost(i, j, units + 1) - self.cost(i, j, units), False))
                back = self.flow.get((j, i), 0)
                if back > 0:
                    options.append((self.cost(j, i, back - 1) - self.cost(j, i, back), True))
                if options:
                    result[(i, j)] = min(options)
        return result

    def residual_graph(self) -> tuple[nx.DiGraph, dict[tuple[int, int], tuple[float, bool]]]:
        residual = self.residual_costs()
        pot = self.potential
        # Rounding can leave reduced costs a hair below zero.
        edges = {(i, j): {"weight": max(0.0, cost + pot[i] - pot[j])} for (i, j), (cost, _) in residual.items()}
        return _digraph(self.graph.deployment.ids, edges), residual

    def augment(self) -> None:
        graph, residual = self.residual_graph()
        source = self.request.source
        dist, paths = nx.single_source_dijkstra(graph, source, weight="weight")
        if self.sink not in paths:
            raise Infeasible(
                f"no augmenting path from {source} to {self.sink}"
                f" within the {self.cost_model.cap_kbps:g} kbps rate cap"
            )
        far = max(dist.values())
        for node_id in self.potential:
            self.potential[node_id] += dist.get(node_id, far)
        path = paths[self.sink]
        for i, j in pair_window(path):
            if residual[(i, j)][1]:
                self.flow[(j, i)] -= 1
            else:
                self.flow[(i, j)] = self.flow.get((i, j), 0) + 1

    def solve(self) -> dict[tuple[int, int], float]:
        for _ in range(self.units):
            self.augment()
        return {edge: units * self.delta for edge, units in self.flow.items() if units > 0}


def _unicast_edges_to_arcs(graph: Hypergraph, edges: Mapping[tuple[int, int], float]) -> dict[tuple[Hyperarc, int], float]:
    return {(graph.smallest_arc_reaching(i, j), j): flow for (i, j), flow in edges.items()}


def _solve_unicast(graph: Hypergraph, request: MulticastRequest, cost_model: CostModel, params: SolverParams) -> SubgraphSolution:
    sink = request.sinks[0]
    edges = _UnicastFlow(graph, request, sink, cost_model, params).solve()
    arc_flows = _unicast_edges_to_arcs(graph, edges)
    z: dict[Hyperarc, float] = {}
    for (arc, _), flow in arc_flows.items():
        z[arc] = z.get(arc, 0.0) + flow
    x = {(sink, arc, head): flow for (arc, head), flow in arc_flows.items()}
    return _finish(graph, request, cost_model, z, x, iterations=max(1, int(round(1 / params.delta_fraction))))


# Multicast: conditional gradient


class _MulticastProblem:
    def __init__(self, graph: Hypergraph, request: MulticastRequest, cost_model: CostModel, params: SolverParams):
        self.graph = graph
        self.request = request
        self.cost_model = cost_model
        self.params = params
        self.arcs = list(graph.hyperarcs)
        self.arc_index = {arc: idx for idx, arc in enumerate(self.arcs)}
        self.pairs = [(idx, head) for idx, arc in enumerate(self.arcs) for head in arc.heads]
        self.pair_index = {pair: idx for idx, pair in enumerate(self.pairs)}
        # arcs x pairs aggregation
        self.aggregate = np.zeros((len(self.arcs), len(self.pairs)))
        for pidx, (aidx, _) in enumerate(self.pairs):
            self.aggregate[aidx, pidx] = 1.0
        self.distances = np.asarray([arc.distance for arc in self.arcs])

    def arc_rates(self, flows: np.ndarray) -> np.ndarray:
        """flows: terminals x pairs -> per-terminal arc loads, arcs x terminals"""
        return self.aggregate @ flows.T

    def objective(self, flows: np.ndarray) -> float:
        z = self.arc_rates(flows).max(axis=1)
        total = 0.0
        try:
            for idx in np.flatnonzero(z > 0):
                total += hyperarc_cost(self.distances[idx], float(z[idx]), self.request.theta, self.cost_model)
        except RateCapExceeded:
            return math.inf
        return total

    def gradients(self, flows: np.ndarray) -> np.ndarray:
        """d(smoothed objective)/d(arc load) per terminal: terminals x arcs"""
        loads = np.maximum(self.arc_rates(flows), 0.0)
        p = self.params.smoothing_p
        peak = loads.max(axis=1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(peak > 0, loads / peak, 1.0)
        norm = np.sum(ratio**p, axis=1, keepdims=True) ** (1 / p)
        smooth = peak[:, 0] * norm[:, 0]
        share = np.where(peak > 0, (ratio / norm) ** (p - 1), 1.0)
        theta = self.request.theta
        cap = self.cost_model.cap_kbps
        marginal = np.asarray(
            [self.cost_model.marginal(self.distances[idx], min(smooth[idx] / theta, cap)) for idx in range(len(self.arcs))]
        )
        return (share * marginal[:, None]).T

    def vertex(self, gradients: np.ndarray) -> np.ndarray:
        """All of R on each terminal's shortest path under the linearized costs"""
        ids = self.graph.deployment.ids
        result = np.zeros((len(self.request.sinks), len(self.pairs)))
        for tidx, terminal in enumerate(self.request.sinks):
            edges: dict[tuple[int, int], dict[str, Any]] = {}
            for pidx, (aidx, head) in enumerate(self.pairs):
                edge = (self.arcs[aidx].tail, head)
                cost = float(gradients[tidx, aidx])
                # Nearest-first arcs: on ties the smaller hyperarc is kept.
                if edge not in edges or cost < edges[edge]["weight"]:
                    edges[edge] = {"weight": cost, "pair": pidx}
            graph = _digraph(ids, edges)
            try:
                path = nx.shortest_path(graph, self.request.source, terminal, weight="weight")
            except nx.NetworkXNoPath as exc:
                raise Infeasible(f"sink {terminal} is unreachable from {self.request.source}") from exc
            for i, j in pair_window(path):
                result[tidx, graph.edges[i, j]["pair"]] += self.request.rate
        return result

    def initial(self) -> np.ndarray:
        """Per-terminal unicast optima"""
        flows = np.zeros((len(self.request.sinks), len(self.pairs)))
        for tidx, terminal in enumerate(self.request.sinks):
            single = dataclasses.replace(self.request, sinks=(terminal,))
            edges = _UnicastFlow(self.graph, single, terminal, self.cost_model, self.params).solve()
            for (arc, head), flow in _unicast_edges_to_arcs(self.graph, edges).items():
                flows[tidx, self.pair_index[(self.arc_index[arc], head)]] += flow
        return flows

    def solve(self) -> SubgraphSolution:
        flows = self.initial()
        value = self.objective(flows)
        gap = math.inf
        iterations = 0
        converged = False
        for iterations in range(1, self.params.max_iter + 1):
            grads = self.gradients(flows)
            target = self.vertex(grads)
            direction = target - flows
            pair_grads = grads[:, [aidx for aidx, _ in self.pairs]]
            gap = float(np.sum(pair_grads * -direction))
            if gap <= self.params.gap * value:
                converged = True
                break
            res = optimize.minimize_scalar(
                lambda step: self.objective(flows + step * direction),
                bounds=(0.0, 1.0),
                method="bounded",
                options={"xatol": 1e-4},
            )
            candidates = [(float(res.fun), float(res.x)), (self.objective(target), 1.0)]
            new_value, step = min(candidates)
            if not new_value < value * (1 - 1e-12):
                # No descent along the smoothed direction; the gap stands as reported.
                converged = gap <= self.params.gap * value
                break
            flows = flows + step * direction
            value = new_value
            _log.debug("multicast iteration %d: objective %.6g, gap %.3g", iterations, value, gap)
        if not converged:
            _log.warning("multicast solver stopped with relative gap %.3g after %d iterations", gap / value, iterations)
        loads = self.arc_rates(flows)
        z = {self.arcs[idx]: float(loads[idx].max()) for idx in range(len(self.arcs)) if loads[idx].max() > 0}
        x = {
            (terminal, self.arcs[aidx], head): float(flows[tidx, pidx])
            for tidx, terminal in enumerate(self.request.sinks)
            for pidx, (aidx, head) in enumerate(self.pairs)
            if flows[tidx, pidx] > self.request.rate * 1e-12
        }
        return _finish(
            self.graph,
            self.request,
            self.cost_model,
            z,
            x,
            gap=max(gap, 0.0) / value if value > 0 else 0.0,
            iterations=iterations,
            converged=converged,
        )


def solve_min_power_multicast(
    hypergraph: Hypergraph,
    request: MulticastRequest,
    cost_model: CostModel,
    solver_params: SolverParams = SolverParams(),
) -> SubgraphSolution:
    """Minimum total `Σ θ P(l, z / θ)` supporting rate R to every sink"""
    ids = set(hypergraph.deployment.ids)
    unknown = {request.source, *request.sinks} - ids
    if unknown:
        raise Infeasible(f"request names nodes outside the deployment: {sorted(unknown)}")
    if len(request.sinks) == 1:
        return _solve_unicast(hypergraph, request, cost_model, solver_params)
    return _MulticastProblem(hypergraph, request, cost_model, solver_params).solve()


def check_feasibility(
    solution: SubgraphSolution, hypergraph: Hypergraph, request: MulticastRequest, tol: float = 1e-9
) -> tuple[bool, list[str]]:
    """
    Coupling `z ≥ Σ_j x`, non-negativity and per-terminal conservation.
    The terminal's own conservation row is implied by the others and is
    not checked.
    """
    violations: list[str] = []
    scale = tol * max(request.rate, 1.0)
    arcs = set(hypergraph.hyperarcs)
    for (terminal, arc, head), flow in solution.x.items():
        if arc not in arcs or head not in arc.heads:
            violations.append(f"flow on unknown hyperarc/head {arc}->{head}")
        if flow < -scale:
            violations.append(f"negative flow {flow!r} on {arc}->{head} for {terminal}")
    for terminal in request.sinks:
        loads: dict[Hyperarc, float] = {}
        divergence = {node_id: 0.0 for node_id in hypergraph.deployment.ids}
        for (term, arc, head), flow in solution.x.items():
            if term != terminal:
                continue
            loads[arc] = loads.get(arc, 0.0) + flow
            divergence[arc.tail] = divergence.get(arc.tail, 0.0) + flow
            divergence[head] = divergence.get(head, 0.0) - flow
        for arc, load in sorted(loads.items()):
            if solution.z.get(arc, 0.0) < load - scale:
                violations.append(f"z[{arc}] = {solution.z.get(arc, 0.0)!r} < {load!r} for terminal {terminal}")
        for node_id, value in sorted(divergence.items()):
            if node_id == terminal:
                continue
            expected = request.rate if node_id == request.source else 0.0
            if abs(value - expected) > scale:
                violations.append(
                    f"conservation at node {node_id} for terminal {terminal}: {value!r} != {expected!r}"
                )
    return not violations, violations


def lower_bound_power(
    deployment: Deployment,
    source: int,
    sinks: Iterable[int],
    rate: float,
    cost_model: CostModel | None = None,
    solver_params: SolverParams = SolverParams(),
) -> float:
    """Minimum continuous-transmission (θ = 1) power, dB"""
    request = MulticastRequest(source=source, sinks=tuple(sinks), rate=rate, theta=1.0)
    solution = solve_min_power_multicast(
        build_hypergraph(deployment), request, cost_model or WaterfillCostModel(), solver_params
    )
    return solution.total_power_db


def duty_cycle_sweep(
    hypergraph: Hypergraph,
    request: MulticastRequest,
    thetas: Iterable[float],
    cost_model: CostModel,
    solver_params: SolverParams = SolverParams(),
) -> list[dict[str, Any]]:
    """Optimal power per duty cycle; rows `theta`, `power_dB`, `error`"""
    rows = []
    for theta in thetas:
        try:
            solution = solve_min_power_multicast(
                hypergraph, dataclasses.replace(request, theta=float(theta)), cost_model, solver_params
            )
            rows.append(dict(theta=float(theta), power_dB=solution.total_power_db, error=""))
        except UwacnetError as exc:
            rows.append(dict(theta=float(theta), power_dB=math.nan, error=f"{type(exc).__name__}: {exc}"))
    return rows
