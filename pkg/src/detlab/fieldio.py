"""Text serialization: the field container, CSV reports and JSON summaries.

Floats are written with 17 significant digits so every double round-trips
exactly.

Field container layout::

    {"header": {"schema_version": 1, "n": 2, "m": 8, "field_kind": "matrix",
                "psd_flag": true},
     "values": [[a11, a12, a22], ...]}

Values are listed in row-major node order (last axis fastest); matrix nodes
store their upper triangle row-wise, vector nodes their components.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .torus import MatrixField, ScalarField, TorusGrid, VectorField

SCHEMA_VERSION = 1


def fmt(x) -> str:
    x = float(x)
    if not math.isfinite(x):
        return "null"
    if x == 0.0 and math.copysign(1.0, x) < 0:
        return "-0.0"
    return format(x, ".17g")


def dumps(obj, indent: int = 0, _level: int = 0) -> str:
    """JSON text with 17-significant-digit floats."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    sep = ",\n" if indent else ","
    nl = "\n" if indent else ""
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (float, np.floating)):
        return fmt(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [pad + json.dumps(str(k)) + ": " + dumps(v, indent, _level + 1)
                 for k, v in obj.items()]
        return "{" + nl + sep.join(items) + nl + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [pad + dumps(v, indent, _level + 1) for v in obj]
        return "[" + nl + sep.join(items) + nl + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def field_to_text(F) -> str:
    grid = F.grid
    n = grid.n
    v = np.asarray(F.values)
    if isinstance(F, MatrixField):
        iu = np.triu_indices(n)
        flat = v[..., iu[0], iu[1]].reshape(grid.size, -1)
        kind, psd = "matrix", bool(F.psd)
    elif isinstance(F, VectorField):
        flat = v.reshape(grid.size, n)
        kind, psd = "vector", False
    else:
        flat = v.reshape(grid.size)
        kind, psd = "scalar", False
    header = {"schema_version": SCHEMA_VERSION, "n": n, "m": grid.m,
              "field_kind": kind, "psd_flag": psd}
    if flat.ndim == 1:
        body = ",\n".join(fmt(x) for x in flat)
    else:
        body = ",\n".join("[" + ",".join(fmt(x) for x in row) + "]" for row in flat)
    return '{"header": ' + json.dumps(header) + ',\n"values": [\n' + body + "\n]}\n"


def field_from_text(text: str):
    doc = json.loads(text)
    try:
        h = doc["header"]
        values = doc["values"]
        version, n, m, kind = h["schema_version"], int(h["n"]), int(h["m"]), h["field_kind"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed field container: missing {exc}") from exc
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {version}")
    grid = TorusGrid(n, m)
    arr = np.array(values, dtype=float)
    if arr.shape[0] != grid.size:
        raise ValueError(f"expected {grid.size} nodes, got {arr.shape[0]}")
    if kind == "scalar":
        return ScalarField(grid, arr.reshape(grid.shape))
    if kind == "vector":
        return VectorField(grid, arr.reshape(grid.shape + (n,)))
    if kind == "matrix":
        iu = np.triu_indices(n)
        full = np.zeros((grid.size, n, n))
        full[:, iu[0], iu[1]] = arr
        full[:, iu[1], iu[0]] = arr
        return MatrixField(grid, full.reshape(grid.shape + (n, n)), psd=bool(h.get("psd_flag")))
    raise ValueError(f"unknown field_kind {kind!r}")


def write_field(path, F) -> None:
    Path(path).write_text(field_to_text(F), encoding="utf-8")


def read_field(path):
    return field_from_text(Path(path).read_text(encoding="utf-8"))


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else
                    ("" if v is None else v) for v in row])
    return buf.getvalue()


def write_csv(path, columns, rows) -> None:
    Path(path).write_text(csv_text(columns, rows), encoding="utf-8")


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj, indent=2) + "\n", encoding="utf-8")


def write_ma_result(directory, result, stem: str = "phi") -> None:
    """phi as a field container plus a sidecar summary object."""
    d = Path(directory)
    write_field(d / f"{stem}.json", result.phi)
    write_json(d / f"{stem}.summary.json", result.summary())
