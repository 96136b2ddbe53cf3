"""Deterministic JSON/CSV emission with round-trip-exact floats.

Floats are written with 17 significant digits, enough to reproduce the
exact IEEE-754 double on re-parse, so files regenerate byte-identically
and read-write round trips are lossless.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np


def format_float(value) -> str:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError("cannot serialize non-finite float")
    s = format(value, ".17g")
    if "." not in s and "e" not in s and "E" not in s:
        s += ".0"
    return s


def _emit(obj, parts: list):
    if isinstance(obj, dict):
        parts.append("{")
        for i, (key, value) in enumerate(obj.items()):
            if i:
                parts.append(",")
            if not isinstance(key, str):
                raise TypeError(f"JSON object keys must be str, got {type(key).__name__}")
            parts.append(json.dumps(key))
            parts.append(":")
            _emit(value, parts)
        parts.append("}")
    elif isinstance(obj, (list, tuple)):
        parts.append("[")
        for i, value in enumerate(obj):
            if i:
                parts.append(",")
            _emit(value, parts)
        parts.append("]")
    elif isinstance(obj, bool) or isinstance(obj, np.bool_):
        parts.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        parts.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        parts.append(format_float(obj))
    elif isinstance(obj, str):
        parts.append(json.dumps(obj))
    elif obj is None:
        parts.append("null")
    elif isinstance(obj, np.ndarray):
        _emit(obj.tolist(), parts)
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj) -> str:
    parts: list = []
    _emit(obj, parts)
    return "".join(parts)


def write_json(path, obj):
    Path(path).write_text(dumps(obj) + "\n", encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def csv_cell(value) -> str:
    if isinstance(value, str):
        if any(ch in value for ch in ",\"\n"):
            return '"' + value.replace('"', '""') + '"'
        return value
    if value is None:
        return ""
    if isinstance(value, bool) or isinstance(value, np.bool_):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    raise TypeError(f"cannot place {type(value).__name__} in a CSV cell")


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(csv_cell(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_csv(path):
    """Parse a CSV written by write_csv back into (header, list-of-str-rows)."""
    text = Path(path).read_text(encoding="utf-8")
    import csv as _csv
    import io

    rows = list(_csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError(f"empty CSV: {path}")
    return rows[0], rows[1:]
