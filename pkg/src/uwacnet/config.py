"""
Experiment configuration: per-command blocks with defaults, loaded from
JSON or YAML and checked for unknown keys.
"""
from __future__ import annotations

import copy
import dataclasses
import os
from collections.abc import Mapping
from typing import Any

from .channel import EnvironmentParams
from .errors import BadConfig, DomainError
from .jsonio import load_document
from .waterfill import Tolerances

__all__ = (
    "DEFAULTS",
    "COMMAND_BLOCKS",
    "ExperimentConfig",
    "load_config",
    "resolve_config",
    "get_env_flag",
)


_TOLERANCE_DEFAULTS = {
    field.name: (list(field.default) if isinstance(field.default, tuple) else field.default)
    for field in dataclasses.fields(Tolerances)
}

DEFAULTS: dict[str, dict[str, Any]] = {
    "environment": dict(k=1.5, s=0.5, w=0.0, l_ref=1.0),
    "tolerances": _TOLERANCE_DEFAULTS,
    "grid": dict(
        l_km=dict(start=0.013, stop=10.0, count=50, scale="log"),
        C_kbps=dict(start=0.04, stop=2.0, count=50, scale="linear"),
        snr_db=dict(start=-20.0, stop=20.0, count=9, scale="linear"),
    ),
    "fit": dict(surface=None, template="power", case="case1", linear_a1=False),
    "convexity": dict(tol=1e-6, z_max=2.0, case="case1", points=400),
    "deployment": dict(nodes=None, count=4, side_km=1.0),
    "request": dict(source=0, sinks=[1], rate_kbps=1.0, theta=1.0, thetas=None),
    "solver": dict(delta_fraction=0.01, gap=0.01, max_iter=200, smoothing_p=20.0),
    "cost_model": dict(kind="auto", case="case1", cap_kbps=None, l_points=24, c_points=16),
    "scenario": dict(
        scheme=1,
        side_km=5.0,
        node_counts=[3, 4, 5, 6, 7, 8],
        rate=0.1,
        epochs=100,
        threshold_db=3.0,
        trials=100,
        series=None,
    ),
    "sim": dict(
        scheme=4,
        links="exact",
        slot=1.0,
        access_probability=0.5,
        packet_bits=256,
        ack_bits=None,
        snr_db=10.0,
        signaling="gaussian",
        sound_speed=1500.0,
        generation_size=20,
        bits_per_symbol=1.0,
        event_cap=1_000_000,
        runs=1,
    ),
    "gap": dict(deployments=20, side_km=1.0, node_counts=[3, 4, 5, 6, 7, 8], rate_kbps=1.0, calibrate=True),
    "output": dict(dir="."),
}

# Free-form values: checked by the consumer, not by key.
_OPAQUE_BLOCKS = {"grid"}
_OPAQUE = {("deployment", "nodes"), ("request", "sinks"), ("request", "thetas"), ("scenario", "series")}

COMMAND_BLOCKS: dict[str, tuple[str, ...]] = {
    "sweep": ("environment", "tolerances", "grid", "output"),
    "fit": ("environment", "fit", "output"),
    "convexity": ("environment", "tolerances", "grid", "convexity", "output"),
    "bound": ("environment", "tolerances", "deployment", "request", "solver", "cost_model", "output"),
    "interference": ("environment", "tolerances", "scenario", "cost_model", "output"),
    "simulate": ("environment", "tolerances", "deployment", "request", "sim", "output"),
    "gap": ("environment", "tolerances", "sim", "gap", "solver", "cost_model", "output"),
}


def get_env_flag(name: str, default: bool = False) -> bool:
    """
    >>> get_env_flag("UWACNET_SURELY_UNSET_FLAG", default=True)
    True
    """
    value = os.environ.get(name)
    if value is None:
        return default
    return value.strip().lower() in ("1", "true", "yes", "y", "on")


def load_config(path: str | os.PathLike) -> dict[str, Any]:
    """JSON or YAML by extension; I/O problems propagate as `OSError`"""
    data = load_document(path)
    if data is None:
        return {}
    if not isinstance(data, Mapping):
        raise BadConfig(f"{os.fspath(path)}: the configuration must be a mapping")
    return dict(data)


def _merge(path: str, defaults: Mapping[str, Any], value: Any, opaque: bool) -> Any:
    if opaque or not isinstance(defaults, Mapping):
        return copy.deepcopy(value)
    if not isinstance(value, Mapping):
        raise BadConfig(f"{path}: expected a mapping, got {value!r}")
    unknown = sorted(set(value) - set(defaults))
    if unknown:
        raise BadConfig(f"{path}: unknown keys {unknown}")
    result = copy.deepcopy(dict(defaults))
    for key, item in value.items():
        opaque = path in _OPAQUE_BLOCKS or (path, key) in _OPAQUE
        result[key] = _merge(f"{path}.{key}", defaults[key], item, opaque)
    return result


@dataclasses.dataclass
class ExperimentConfig:
    command: str
    seed: int
    blocks: dict[str, dict[str, Any]]

    def __getitem__(self, name: str) -> dict[str, Any]:
        return self.blocks[name]

    def environment(self) -> EnvironmentParams:
        try:
            return EnvironmentParams(**self.blocks["environment"])
        except DomainError as exc:
            raise BadConfig(f"environment: {exc}") from exc

    def tolerances(self) -> Tolerances:
        values = dict(self.blocks["tolerances"])
        values["search_khz"] = tuple(values["search_khz"])
        try:
            return Tolerances(**values)
        except DomainError as exc:
            raise BadConfig(f"tolerances: {exc}") from exc

    def to_document(self) -> dict[str, Any]:
        return dict(command=self.command, seed=self.seed, **self.blocks)


def resolve_config(command: str, raw: Mapping[str, Any] | None = None, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """
    Defaults of the command's blocks updated by `raw`, then by `overrides`
    (`{"seed": ..., "block": {...}}`). Blocks of other commands may be
    present in `raw` (a shared file) but are not resolved.

    >>> resolve_config("sweep", {"environment": {"k": 2.0}}).blocks["environment"]["k"]
    2.0
    >>> resolve_config("sweep", {"environment": {"spreading": 2.0}})
    Traceback (most recent call last):
    ...
    uwacnet.errors.BadConfig: environment: unknown keys ['spreading']
    """
    if command not in COMMAND_BLOCKS:
        raise BadConfig(f"unknown command {command!r}")
    raw = dict(raw or {})
    overrides = dict(overrides or {})
    seed = overrides.pop("seed", None)
    if seed is None:
        seed = raw.pop("seed", 0)
    else:
        raw.pop("seed", None)
    unknown = sorted(set(raw) - set(DEFAULTS))
    if unknown:
        raise BadConfig(f"unknown configuration blocks {unknown}")
    blocks: dict[str, dict[str, Any]] = {}
    for name in COMMAND_BLOCKS[command]:
        block = _merge(name, DEFAULTS[name], raw.get(name, {}), False)
        if name in overrides:
            block = _merge(name, block, overrides.pop(name), False)
        blocks[name] = block
    if overrides:
        raise BadConfig(f"overrides for blocks {sorted(overrides)} not used by {command!r}")
    try:
        seed = int(seed)
    except (TypeError, ValueError) as exc:
        raise BadConfig(f"seed must be an integer, got {seed!r}") from exc
    if seed < 0:
        raise BadConfig(f"seed must be non-negative, got {seed}")
    return ExperimentConfig(command=command, seed=seed, blocks=blocks)
