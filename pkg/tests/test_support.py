from __future__ import annotations

import dataclasses
import logging
import math

import numpy as np
import pytest

from uwacnet.config import DEFAULTS, get_env_flag, load_config, resolve_config
from uwacnet.errors import BadConfig, exclogwrap
from uwacnet.grids import frange, linear_grid, log_grid, parse_grid
from uwacnet.jsonio import json_dumps, load_document, read_csv, to_builtin, write_csv, write_json, write_manifest
from uwacnet.logging_annotators import Annotator, RunContextAnnotator, TimeDiffAnnotator
from uwacnet.memo import Memoize, memoize, memoize_method
from uwacnet.parallel import map_ordered
from uwacnet.runlib import init_logging
from uwacnet.stats import IterStat, binomial_ci, mean_ci, pair_window


# memo


def test_memoize_counts_hits():
    calls = []

    @memoize
    def double(value):
        calls.append(value)
        return 2 * value

    assert double(1.5) == double(1.5) == 3.0
    assert (double.hits, double.misses) == (1, 1)
    double(1.5, _memoize_force_new=True)
    assert len(calls) == 2
    double.memoize_clear_mem()
    double(1.5)
    assert len(calls) == 3


def test_memoize_evicts_the_oldest_entry():
    cache = Memoize(lambda value: value, maxsize=2)
    for value in (1, 2, 3):
        cache(value)
    assert len(cache.mem) == 2
    cache(1)
    assert cache.misses == 4


def test_memoize_rounds_float_keys():
    cache = Memoize(lambda value: value, digits=6)
    cache(0.3)
    cache(0.1 + 0.2)
    assert cache.hits == 1


def test_memoize_passes_unhashable_arguments_through():
    cache = Memoize(len)
    assert cache({1, 2}) == 2
    assert not cache.mem


@dataclasses.dataclass
class _Squarer:
    offset: float
    calls: int = 0

    @memoize_method
    def square(self, value):
        self.calls += 1
        return value * value + self.offset


def test_memoize_method_is_per_instance():
    first, second = _Squarer(0.0), _Squarer(1.0)
    assert first.square(2.0) == first.square(2.0) == 4.0
    assert second.square(2.0) == 5.0
    assert (first.calls, second.calls) == (1, 1)


# grids


def test_frange():
    assert frange(3) == [0.0, 1.0, 2.0]
    assert frange(1, 0, -0.5) == [1.0, 0.5]


def test_grids():
    assert linear_grid(0, 1, 3).tolist() == [0.0, 0.5, 1.0]
    assert log_grid(1, 100, 3).tolist() == pytest.approx([1.0, 10.0, 100.0])
    with pytest.raises(BadConfig):
        linear_grid(0, 1, 0)
    with pytest.raises(BadConfig):
        log_grid(0, 1, 3)


def test_parse_grid():
    assert parse_grid({"start": 0.1, "stop": 10, "count": 3, "scale": "log"}).tolist() == pytest.approx([0.1, 1.0, 10.0])
    assert parse_grid({"start": 0, "stop": 1, "step": 0.3}).tolist() == pytest.approx([0.0, 0.3, 0.6, 0.9])
    assert parse_grid((2, 4)).tolist() == [2.0, 4.0]


@pytest.mark.parametrize(
    "descriptor",
    [
        [],
        "1,2",
        {"start": 1, "stop": 2, "count": 2, "step": 0.5, "size": 2},
        {"stop": 2, "count": 2},
        {"start": 1, "stop": 2, "count": 2, "scale": "cubic"},
        {"start": 1, "stop": 2, "step": -1},
        {"start": 2, "stop": 1, "step": 1},
    ],
)
def test_parse_grid_errors(descriptor):
    with pytest.raises(BadConfig):
        parse_grid(descriptor, "grid.l_km")


# stats


def test_pair_window():
    assert list(pair_window([])) == []
    assert list(pair_window([1])) == []


def test_iter_stat_matches_numpy(rng):
    values = rng.normal(3.0, 2.0, size=500)
    stat = IterStat(values)
    assert stat.mean == pytest.approx(values.mean())
    assert stat.variance == pytest.approx(values.var())
    assert stat.sample_variance == pytest.approx(values.var(ddof=1))
    assert stat.std == pytest.approx(values.std())


def test_mean_ci():
    assert all(math.isnan(value) for value in mean_ci([]))
    assert mean_ci([2.0]) == (2.0, 2.0, 2.0)
    mean, low, high = mean_ci([1.0, 2.0, 3.0, 4.0])
    assert mean == 2.5
    assert low < mean < high
    assert high - mean == pytest.approx(mean - low)
    # t(0.975, 3) times the standard error.
    assert high - mean == pytest.approx(3.1824 * math.sqrt(1.6666667 / 4), rel=1e-4)
    assert mean_ci([1.0, 2.0, 3.0, 4.0], level=0.5)[2] < high


def test_binomial_ci():
    low, high = binomial_ci(5, 10)
    assert low < 0.5 < high
    assert low == pytest.approx(1 - high)
    assert binomial_ci(0, 20)[0] == pytest.approx(0.0, abs=1e-12)
    assert all(math.isnan(value) for value in binomial_ci(0, 0))


# jsonio


def test_to_builtin():
    @dataclasses.dataclass
    class Point:
        x: float
        tags: frozenset
        hidden: int = dataclasses.field(default=0, repr=False)

    doc = to_builtin({(1, 2): Point(np.float64(-math.inf), frozenset({"b", "a"})), "n": np.int64(3)})
    assert doc == {"1|2": {"x": "-inf", "tags": ["a", "b"]}, "n": 3}
    assert to_builtin(np.asarray([1.0, math.nan])) == [1.0, "nan"]
    assert to_builtin(np.bool_(True)) is True


def test_json_is_sorted_and_stable():
    assert json_dumps({"b": 1, "a": [1.5]}) == '{\n  "a": [\n    1.5\n  ],\n  "b": 1\n}'


def test_json_file_round_trip(tmp_path):
    path = tmp_path / "doc.json"
    write_json(path, {"k": 1.5, "grid": (1, 2)})
    assert load_document(path) == {"k": 1.5, "grid": [1, 2]}


def test_csv_columns_and_formatting(tmp_path):
    path = tmp_path / "rows.csv"
    write_csv(path, [dict(a=1 / 3, b="x", extra=1), dict(a=2.0)], ["b", "a"])
    lines = path.read_text().splitlines()
    assert lines == ["b,a", "x,0.3333333333", ",2"]
    frame = read_csv(path)
    assert list(frame.columns) == ["b", "a"]


def test_manifest(tmp_path):
    path = write_manifest(tmp_path, "bound", {"seed": 4}, 4)
    doc = load_document(path)
    assert doc["package"] == "uwacnet"
    assert (doc["command"], doc["seed"], doc["config"]) == ("bound", 4, {"seed": 4})
    assert doc["created_utc"]


# config


def test_resolve_config_merges_defaults():
    config = resolve_config("bound", {"solver": {"gap": 0.05}, "grid": {"l_km": [1.0]}}, {"seed": 8})
    assert config.seed == 8
    assert config["solver"]["gap"] == 0.05
    assert config["solver"]["max_iter"] == DEFAULTS["solver"]["max_iter"]
    # Blocks of other commands are accepted but not resolved.
    assert "grid" not in config.blocks
    assert config.environment().k == 1.5
    assert config.tolerances() == config.tolerances()


def test_resolve_config_keeps_defaults_pristine():
    resolve_config("sweep", {"grid": {"l_km": [1.0]}})
    assert isinstance(DEFAULTS["grid"]["l_km"], dict)
    assert resolve_config("sweep").blocks["grid"]["l_km"]["scale"] == "log"


def test_grid_values_are_free_form():
    config = resolve_config("sweep", {"grid": {"l_km": {"start": 1, "stop": 2, "step": 0.5}}})
    assert config["grid"]["l_km"] == {"start": 1, "stop": 2, "step": 0.5}


@pytest.mark.parametrize(
    "command, raw, overrides",
    [
        ("teleport", {}, None),
        ("sweep", {"grid": {"x_km": [1.0]}}, None),
        ("sweep", {"environment": 1.5}, None),
        ("sweep", {"seed": "x"}, None),
        ("sweep", {}, {"solver": {"gap": 0.1}}),
    ],
)
def test_resolve_config_errors(command, raw, overrides):
    with pytest.raises(BadConfig):
        resolve_config(command, raw, overrides)


def test_environment_errors_are_config_errors():
    with pytest.raises(BadConfig):
        resolve_config("sweep", {"environment": {"k": 0.5}}).environment()


def test_load_config(tmp_path):
    path = tmp_path / "empty.json"
    path.write_text("null")
    assert load_config(path) == {}
    path.write_text("[1, 2]")
    with pytest.raises(BadConfig):
        load_config(path)
    with pytest.raises(OSError):
        load_config(tmp_path / "absent.json")


def test_env_flag(monkeypatch):
    monkeypatch.setenv("UWACNET_TEST_FLAG", " Yes ")
    assert get_env_flag("UWACNET_TEST_FLAG")
    monkeypatch.setenv("UWACNET_TEST_FLAG", "0")
    assert not get_env_flag("UWACNET_TEST_FLAG", default=True)


# logging


def _record(msg="message"):
    return logging.LogRecord("uwacnet.test", logging.INFO, __file__, 1, msg, None, None)


def test_annotators():
    record = _record()
    assert RunContextAnnotator("bound", 3).filter(record)
    assert record.run_context == "bound#3"
    record = _record()
    RunContextAnnotator("sweep", None).filter(record)
    assert record.run_context == "sweep"
    timer = TimeDiffAnnotator()
    record = _record()
    timer.filter(record)
    assert record.time_diff >= 0
    with pytest.raises(Exception, match="attribute_name"):
        Annotator()


def test_exclogwrap_logs_and_reraises(caplog):
    @exclogwrap(name="trial")
    def fail():
        raise ValueError("boom")

    with caplog.at_level(logging.ERROR):
        with pytest.raises(ValueError):
            fail()
    assert "'trial' failed" in caplog.text


# parallel


def test_map_ordered_keeps_order():
    items = [-3, 1, -2, 5]
    assert map_ordered(abs, items) == [3, 1, 2, 5]
    assert map_ordered(abs, items, threads=2) == [3, 1, 2, 5]
    assert map_ordered(abs, []) == []


def test_init_logging_annotates_every_handler():
    init_logging(level=logging.DEBUG, colored=False, time_diff=True, run_context=("bound", 2))
    try:
        handler = logging.root.handlers[0]
        kinds = {type(flt) for flt in handler.filters}
        assert {TimeDiffAnnotator, RunContextAnnotator} <= kinds
        assert "[%(run_context)s]" in handler.formatter._fmt
        assert logging.getLevelName(logging.WARNING) == "WARN"
    finally:
        init_logging(level=logging.WARNING, colored=False)
