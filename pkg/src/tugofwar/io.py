"""Artifact writers.  Every float is printed with 17 significant digits."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .grid import REGION_NAMES, ValueField


def fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        # JSON has no NaN or infinity
        return fmt(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    return _encode(obj, indent, 0) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj))
    return path


def _write_rows(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(c if isinstance(c, str) else fmt(c) if isinstance(c, float) else str(c) for c in row) + "\n")
    return path


def write_value_field(path, v: ValueField, include_outside: bool = False) -> Path:
    """CSV with one row per node: coordinates, region name, value."""
    grid = v.grid
    nodes = np.arange(grid.size) if include_outside else np.sort(np.concatenate([grid.interior, grid.layer]))
    header = [f"x{d + 1}" for d in range(grid.n)] + ["region", "value"]
    coords = grid.coords[nodes]
    rows = (
        [*(float(c) for c in coords[r]), REGION_NAMES[int(grid.region[node])], float(v.values[node])]
        for r, node in enumerate(nodes)
    )
    return _write_rows(path, header, rows)


def write_trajectories(path, trajectories, n: int) -> Path:
    """CSV rows ``trajectory, step, x1..xn, move_kind``; step 0 has an empty move kind."""
    header = ["trajectory", "step"] + [f"x{d + 1}" for d in range(n)] + ["move_kind"]

    def rows():
        for t, tr in enumerate(trajectories):
            for k, pos in enumerate(tr.positions):
                kind = tr.move_kinds[k - 1] if k else ""
                yield [t, k, *(float(c) for c in pos), kind]

    return _write_rows(path, header, rows())


def write_study(path, study) -> Path:
    """CSV with ``parameter, distance, order_so_far``."""
    rows = ([float(p), float(d), float(o)] for p, d, o in zip(study.values, study.distances, study.order_so_far()))
    return _write_rows(path, [study.parameter, "distance", "order_so_far"], rows)


def write_table(path, header, rows) -> Path:
    return _write_rows(path, header, ([float(c) if isinstance(c, (float, np.floating)) else c for c in r] for r in rows))
