#!/usr/bin/env python
""" Batch experiments: channel surfaces, fits, bounds, interference and MAC simulations """

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import os
import sys
from collections.abc import Callable, Sequence
from typing import Any

import numpy as np

from uwacnet import approxfit, convexity, interference, netopt, simulator, waterfill
from uwacnet.config import ExperimentConfig, load_config, resolve_config
from uwacnet.errors import (
    Bailout,
    BadConfig,
    DomainError,
    Infeasible,
    NotConverged,
    RateCapExceeded,
    Unreachable,
)
from uwacnet.grids import log_grid, parse_grid
from uwacnet.jsonio import read_csv, write_csv, write_json, write_manifest
from uwacnet.runlib import init_logging

_log = logging.getLogger("uwacnet.experiments")

COMMANDS = ("sweep", "fit", "convexity", "bound", "interference", "simulate", "gap")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FAILED = 3
EXIT_IO = 4

GAP_COLUMNS = (
    "scheme",
    "signaling",
    "n_nodes",
    "R_kbps",
    "deployments",
    "power_dB",
    "bound_dB",
    "gap_dB",
    "ci_low",
    "ci_high",
)
THRESHOLD_COLUMNS = ("z", "log_km", "distance_m", "discriminant")
DUTY_CYCLE_COLUMNS = ("theta", "power_dB", "error")


def cmd_make_parser(**kwa):
    parser = argparse.ArgumentParser(description="Underwater acoustic network experiments", **kwa)
    parser.add_argument("command", choices=COMMANDS, help="Experiment to run")
    parser.add_argument(
        "-c",
        "--config",
        default=None,
        help="Configuration file (JSON, or YAML by the .yaml / .yml extension)",
    )
    parser.add_argument("--seed", type=int, default=None, help="Global seed; overrides the configured one")
    parser.add_argument("-o", "--out", default=None, help="Output directory (default: output.dir or '.')")
    parser.add_argument("-j", "--threads", type=int, default=1, help="Worker processes for grids and trials")
    parser.add_argument(
        "--snr",
        action="store_true",
        help="sweep: solve the (l, SNR) surface instead of (l, C)",
    )
    parser.add_argument("--surface", default=None, help="fit: surface CSV; overrides fit.surface")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="More logging; repeatable")
    parser.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only")
    parser.add_argument("--log-td", action="store_true", help="Add the time-since-previous-line column")
    parser.add_argument("--no-color", dest="colored", action="store_false", help="Plain log output")
    return parser


def _log_level(params: argparse.Namespace) -> int:
    if params.quiet:
        return logging.WARNING
    return logging.DEBUG if params.verbose else logging.INFO


def main(argv: Sequence[str] | None = None) -> int:
    parser = cmd_make_parser()
    params = parser.parse_args(argv)
    init_logging(
        level=_log_level(params),
        colored=params.colored,
        time_diff=params.log_td,
        run_context=(params.command, params.seed),
    )
    try:
        return main_i(params)
    except Bailout as exc:
        _log.error("%s", exc)
        return exc.exit_code
    except (BadConfig, DomainError) as exc:
        _log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_USAGE
    except (Infeasible, Unreachable, NotConverged, RateCapExceeded) as exc:
        _log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_FAILED
    except OSError as exc:
        _log.error("I/O error: %s", exc)
        return EXIT_IO


def _load(loader: Callable[[str], Any], path: str, what: str) -> Any:
    """Read an input file; unreadable or malformed input is an I/O failure"""
    try:
        return loader(path)
    except (BadConfig, DomainError):
        raise
    except Exception as exc:  # pylint: disable=broad-except
        raise Bailout(f"cannot read {what} {path!r}: {exc}", exit_code=EXIT_IO) from exc


def main_i(params: argparse.Namespace) -> int:
    raw = _load(load_config, params.config, "config") if params.config else {}
    overrides: dict[str, Any] = {}
    if params.seed is not None:
        overrides["seed"] = params.seed
    if params.surface is not None:
        if params.command != "fit":
            raise BadConfig("--surface applies to the fit command only")
        overrides["fit"] = {"surface": params.surface}
    if params.snr and params.command != "sweep":
        raise BadConfig("--snr applies to the sweep command only")
    if params.threads < 1:
        raise BadConfig(f"--threads must be positive, got {params.threads}")
    config = resolve_config(params.command, raw, overrides)
    out_dir = params.out or config["output"]["dir"]
    os.makedirs(out_dir, exist_ok=True)
    write_manifest(out_dir, params.command, config.to_document(), config.seed)
    _log.info("Running %s, seed %d, output to %s", params.command, config.seed, out_dir)
    handler = COMMAND_HANDLERS[params.command]
    return handler(config, out_dir, params)


def _out(out_dir: str, name: str) -> str:
    path = os.path.join(out_dir, name)
    _log.info("Writing %s", path)
    return path


# Shared pieces


def _solver_params(config: ExperimentConfig) -> netopt.SolverParams:
    return netopt.SolverParams(**config["solver"])


def _deployment(config: ExperimentConfig) -> netopt.Deployment:
    block = config["deployment"]
    nodes = block["nodes"]
    if nodes is None:
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, int(block["count"])]))
        return netopt.Deployment.random(int(block["count"]), float(block["side_km"]), rng)
    if not isinstance(nodes, list) or not nodes:
        raise BadConfig("deployment.nodes must be a non-empty list")
    if isinstance(nodes[0], dict):
        return netopt.Deployment.from_document({"nodes": nodes})
    return netopt.Deployment.from_positions([(float(x), float(y)) for x, y in nodes])


def _request(config: ExperimentConfig, theta: float | None = None) -> netopt.MulticastRequest:
    block = config["request"]
    return netopt.MulticastRequest(
        source=int(block["source"]),
        sinks=tuple(int(sink) for sink in block["sinks"]),
        rate=float(block["rate_kbps"]),
        theta=float(block["theta"] if theta is None else theta),
    )


def _cost_model(
    config: ExperimentConfig, max_distance: float, max_rate: float, threads: int
) -> netopt.CostModel | None:
    """`None` leaves the choice to the experiment (a per-scenario table)"""
    block = config["cost_model"]
    kind = block["kind"]
    env = config.environment()
    tolerances = config.tolerances()
    if kind == "auto":
        return None
    if kind == "waterfill":
        cap = block["cap_kbps"]
        return netopt.WaterfillCostModel(env, tolerances, cap_kbps=100.0 if cap is None else float(cap))
    if kind == "approx":
        return netopt.ApproxCostModel(approxfit.published_coeffs(block["case"], "power"), cap_kbps=block["cap_kbps"])
    if kind == "tabulated":
        l_grid = log_grid(0.005, max_distance * 1.05, int(block["l_points"]))
        c_grid = log_grid(max_rate / 200, max_rate * 1.05, int(block["c_points"]))
        return netopt.TabulatedCostModel.build(env, l_grid, c_grid, tolerances, threads=threads)
    raise BadConfig(f"cost_model.kind must be auto, waterfill, approx or tabulated, got {kind!r}")


def _sim_config(config: ExperimentConfig, seed: int | None = None) -> simulator.SimConfig:
    block = dict(config["sim"])
    for key in ("scheme", "links", "runs"):
        block.pop(key)
    return simulator.SimConfig(seed=config.seed if seed is None else seed, **block)


def _sim_links(config: ExperimentConfig, max_distance: float, threads: int) -> simulator.LinkModel:
    block = config["sim"]
    env = config.environment()
    tolerances = config.tolerances()
    snr_db = float(block["snr_db"])
    if block["links"] == "exact":
        return simulator.ExactSnrLinks(snr_db, env, tolerances)
    if block["links"] == "fitted":
        surface = waterfill.sweep_snr_surface(
            log_grid(approxfit.FIT_MIN_DISTANCE_KM, max(max_distance * 1.05, 0.1), 20),
            np.linspace(snr_db - 10.0, snr_db + 10.0, 11),
            env,
            tolerances,
            threads=threads,
        )
        return simulator.FittedSnrLinks(approxfit.fit_snr_models(surface, env), snr_db, env)
    raise BadConfig(f"sim.links must be exact or fitted, got {block['links']!r}")


# Commands


def cmd_sweep(config: ExperimentConfig, out_dir: str, params: argparse.Namespace) -> int:
    env = config.environment()
    tolerances = config.tolerances()
    l_grid = parse_grid(config["grid"]["l_km"], "grid.l_km")
    if params.snr:
        snr_grid = parse_grid(config["grid"]["snr_db"], "grid.snr_db")
        rows = waterfill.sweep_snr_surface(l_grid, snr_grid, env, tolerances, threads=params.threads)
        name = "snr_surface.csv"
    else:
        c_grid = parse_grid(config["grid"]["C_kbps"], "grid.C_kbps")
        if np.any(c_grid < 0):
            raise BadConfig("grid.C_kbps must be non-negative")
        rows = waterfill.sweep_surface(l_grid, c_grid, env, tolerances, threads=params.threads)
        name = "surface.csv"
    write_csv(_out(out_dir, name), rows, waterfill.SURFACE_COLUMNS)
    return EXIT_OK


def cmd_fit(config: ExperimentConfig, out_dir: str, params: argparse.Namespace) -> int:
    block = config["fit"]
    if not block["surface"]:
        raise BadConfig("fit needs a surface CSV (fit.surface or --surface)")
    surface = _load(read_csv, block["surface"], "surface")
    env = config.environment()
    coeffs = approxfit.fit_models(
        surface, template=block["template"], case=block["case"] or "", env=env, linear_a1=bool(block["linear_a1"])
    )
    doc: dict[str, Any] = dict(
        coefficients=coeffs.to_document(),
        refit=dataclasses.asdict(approxfit.compare_surface(surface, coeffs)),
    )
    try:
        published = approxfit.published_coeffs(block["case"], block["template"])
    except DomainError:
        published = None
    if published is not None:
        offset_db = approxfit.published_reference_offset_db(block["template"])
        doc["published"] = dict(
            coefficients=published.to_document(),
            reference_offset_dB=offset_db,
            comparison=dataclasses.asdict(approxfit.compare_surface(surface, published, offset_db)),
        )
    write_json(_out(out_dir, "coefficients.json"), doc)
    return EXIT_OK


def cmd_convexity(config: ExperimentConfig, out_dir: str, params: argparse.Namespace) -> int:
    block = config["convexity"]
    report = convexity.verify_complete_model_convexity(
        parse_grid(config["grid"]["l_km"], "grid.l_km"),
        parse_grid(config["grid"]["C_kbps"], "grid.C_kbps"),
        config.environment(),
        tol=float(block["tol"]),
        tolerances=config.tolerances(),
        threads=params.threads,
    )
    coeffs = approxfit.published_coeffs(block["case"], "power")
    z_max = float(block["z_max"])
    points = int(block["points"])
    report.min_convex_distance_m = convexity.min_convex_distance((0.0, z_max), coeffs, points=points)
    profile = convexity.threshold_profile(np.linspace(0.0, z_max, points + 1)[1:], coeffs)
    write_json(_out(out_dir, "convexity.json"), report.to_document())
    write_csv(_out(out_dir, "threshold.csv"), profile, THRESHOLD_COLUMNS)
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_bound(config: ExperimentConfig, out_dir: str, params: argparse.Namespace) -> int:
    deployment = _deployment(config)
    request = _request(config)
    graph = netopt.build_hypergraph(deployment)
    thetas = config["request"]["thetas"]
    min_theta = min([request.theta, *(float(theta) for theta in thetas or ())])
    cost_model = _cost_model(
        config, float(deployment.distances.max()), request.rate / min_theta, params.threads
    ) or netopt.WaterfillCostModel(config.environment(), config.tolerances())
    solver_params = _solver_params(config)
    solution = netopt.solve_min_power_multicast(graph, request, cost_model, solver_params)
    feasible, violations = netopt.check_feasibility(solution, graph, request)
    doc = dict(
        deployment=deployment.to_document(),
        solution=solution.to_document(),
        feasible=feasible,
        violations=violations,
    )
    write_json(_out(out_dir, "solution.json"), doc)
    if thetas:
        rows = netopt.duty_cycle_sweep(graph, request, thetas, cost_model, solver_params)
        write_csv(_out(out_dir, "duty_cycle.csv"), rows, DUTY_CYCLE_COLUMNS)
    if not feasible:
        _log.error("solution violates %d constraints", len(violations))
        return EXIT_FAILED
    if not solution.converged:
        _log.error("solver stopped at gap %.3g after %d iterations", solution.gap, solution.iterations)
        return EXIT_FAILED
    _log.info("bound %.4g dB over %d active hyperarcs", solution.total_power_db, len(solution.active_arcs()))
    return EXIT_OK


def cmd_interference(config: ExperimentConfig, out_dir: str, params: argparse.Namespace) -> int:
    block = dict(config["scenario"])
    scheme = int(block.pop("scheme"))
    trials = int(block.pop("trials"))
    series = block.pop("series")
    block["node_counts"] = tuple(int(count) for count in block["node_counts"])
    base = interference.InterferenceScenario(env=config.environment(), **block)
    tolerances = config.tolerances()
    rows = []
    for scenario in interference.scenario_series(scheme, base, series):
        cost_model = _cost_model(
            config, scenario.side_km * math.sqrt(2), scenario.rate / scenario.theta, params.threads
        )
        rows.extend(
            interference.severe_interference_rate(
                scenario, trials, config.seed, cost_model, tolerances, threads=params.threads
            )
        )
    write_csv(_out(out_dir, "interference.csv"), rows, interference.INTERFERENCE_COLUMNS)
    return EXIT_OK


def cmd_simulate(config: ExperimentConfig, out_dir: str, params: argparse.Namespace) -> int:
    deployment = _deployment(config)
    request = _request(config)
    if len(request.sinks) != 1:
        raise BadConfig("the simulated schemes serve a single sink")
    sink = request.sinks[0]
    links = _sim_links(config, float(deployment.distances.max()), params.threads)
    scheme = int(config["sim"]["scheme"])
    runner = simulator.scheme_runner(scheme)
    rows = []
    incomplete = 0
    for run in range(int(config["sim"]["runs"])):
        metrics = runner(deployment, request.source, sink, _sim_config(config, config.seed + run), links)
        incomplete += not metrics.complete
        rows.append(metrics.to_row())
    write_csv(_out(out_dir, "simulate.csv"), rows, simulator.SIM_METRICS_COLUMNS)
    if incomplete:
        _log.error("%d runs hit the event cap before completion", incomplete)
        return EXIT_FAILED
    return EXIT_OK


def _rates(value: Any) -> list[float]:
    """A single rate or a rate series"""
    rates = [float(rate) for rate in value] if isinstance(value, list) else [float(value)]
    if not rates or min(rates) <= 0:
        raise BadConfig(f"gap.rate_kbps must be positive, got {value!r}")
    return rates


def cmd_gap(config: ExperimentConfig, out_dir: str, params: argparse.Namespace) -> int:
    block = config["gap"]
    side_km = float(block["side_km"])
    rates = _rates(block["rate_kbps"])
    links = _sim_links(config, side_km * math.sqrt(2), params.threads)
    cost_model = _cost_model(config, side_km * math.sqrt(2), max(rates), params.threads) or netopt.WaterfillCostModel(
        config.environment(), config.tolerances()
    )
    sim_config = _sim_config(config)
    rows = []
    for n_nodes in block["node_counts"]:
        instances = []
        for idx in range(int(block["deployments"])):
            rng = np.random.default_rng(np.random.SeedSequence([config.seed, int(n_nodes), idx]))
            deployment = netopt.Deployment.random(int(n_nodes), side_km, rng)
            source, sink = (int(value) for value in rng.choice(int(n_nodes), size=2, replace=False))
            instances.append((deployment, source, sink))
        for rate in rates:
            for row in simulator.measure_gap(
                instances, sim_config, rate, links, cost_model, calibrate=bool(block["calibrate"])
            ):
                rows.append(dict(row, n_nodes=int(n_nodes)))
    write_csv(_out(out_dir, "gap.csv"), rows, GAP_COLUMNS)
    return EXIT_OK


COMMAND_HANDLERS: dict[str, Callable[[ExperimentConfig, str, argparse.Namespace], int]] = dict(
    sweep=cmd_sweep,
    fit=cmd_fit,
    convexity=cmd_convexity,
    bound=cmd_bound,
    interference=cmd_interference,
    simulate=cmd_simulate,
    gap=cmd_gap,
)


if __name__ == "__main__":
    sys.exit(main())
