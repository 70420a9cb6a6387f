"""
Deterministic JSON / YAML / CSV input and output.
"""
from __future__ import annotations

import dataclasses
import datetime
import enum
import math
import os
from collections.abc import Mapping, Sequence
from typing import Any

import numpy as np
import pandas as pd

try:
    import simplejson as json
except Exception:  # pylint: disable=broad-except
    import json  # type: ignore[no-redef]

from . import __version__

__all__ = (
    "to_builtin",
    "json_dumps",
    "json_loads",
    "load_document",
    "write_json",
    "write_csv",
    "read_csv",
    "write_manifest",
    "CSV_FLOAT_FORMAT",
)


CSV_FLOAT_FORMAT = "%.10g"


def to_builtin(value: Any) -> Any:
    """
    Convert results (dataclasses, numpy scalars, tuples, infinities) into
    plain JSON-able values.

    >>> to_builtin({"b": (1, np.float64(2.5)), "a": float("inf")})
    {'b': [1, 2.5], 'a': 'inf'}
    """
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {
            field.name: to_builtin(getattr(value, field.name))
            for field in dataclasses.fields(value)
            if field.repr
        }
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, Mapping):
        return {_key_to_str(key): to_builtin(val) for key, val in value.items()}
    if isinstance(value, np.ndarray):
        return [to_builtin(item) for item in value.tolist()]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, (set, frozenset)):
        return sorted(to_builtin(item) for item in value)
    if isinstance(value, Sequence) and not isinstance(value, (str, bytes)):
        return [to_builtin(item) for item in value]
    return value


def _key_to_str(key: Any) -> str:
    if isinstance(key, str):
        return key
    if isinstance(key, tuple):
        return "|".join(str(to_builtin(item)) for item in key)
    return str(key)


def json_dumps(value: Any, **kwargs: Any) -> str:
    kwargs.setdefault("sort_keys", True)
    kwargs.setdefault("indent", 2)
    return json.dumps(to_builtin(value), **kwargs)


json_loads = json.loads  # pylint: disable=invalid-name


def load_document(path: str | os.PathLike) -> Any:
    """Load a JSON or YAML document, chosen by the file extension"""
    path = os.fspath(path)
    with open(path, "rb") as fobj:
        data = fobj.read()
    if path.endswith((".yaml", ".yml")):
        import yaml

        loader = getattr(yaml, "CSafeLoader", None) or yaml.SafeLoader
        return yaml.load(data, Loader=loader)
    return json_loads(data.decode("utf-8"))


def write_json(path: str | os.PathLike, value: Any) -> None:
    with open(path, "w", encoding="utf-8") as fobj:
        fobj.write(json_dumps(value))
        fobj.write("\n")


def write_csv(path: str | os.PathLike, rows: Sequence[Mapping[str, Any]], columns: Sequence[str]):
    frame = pd.DataFrame([{col: to_builtin(row.get(col)) for col in columns} for row in rows])
    frame = frame.reindex(columns=list(columns))
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")


def read_csv(path: str | os.PathLike) -> pd.DataFrame:
    return pd.read_csv(path)


def write_manifest(
    out_dir: str | os.PathLike, command: str, config: Any, seed: int | None
) -> str:
    """The manifest is the only output carrying a timestamp"""
    path = os.path.join(out_dir, "manifest.json")
    write_json(
        path,
        dict(
            package="uwacnet",
            version=__version__,
            command=command,
            seed=seed,
            config=config,
            created_utc=datetime.datetime.now(datetime.timezone.utc).isoformat(),
        ),
    )
    return path
