"""Deterministic CSV/JSON writers: floats always carry 17 significant digits."""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def fmt_float(x: float) -> str:
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _scalar(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        # JSON has no inf/nan; keep them as strings
        return fmt_float(x) if math.isfinite(x) else _string(fmt_float(x))
    if isinstance(x, Fraction):
        return _string(str(x))
    if x is None:
        return "null"
    return _string(str(x))


def _string(s: str) -> str:
    out = ['"']
    for ch in s:
        if ch in '"\\':
            out.append("\\" + ch)
        elif ch == "\n":
            out.append("\\n")
        elif ord(ch) < 0x20:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    out.append('"')
    return "".join(out)


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with stable key order as given and 17-digit floats."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_string(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [f"{pad}{dumps(v, indent, _level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    return _scalar(obj)


def csv_cell(x) -> str:
    if isinstance(x, (float, np.floating)):
        return fmt_float(float(x))
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    s = str(x)
    if any(c in s for c in ',"\n'):
        s = '"' + s.replace('"', '""') + '"'
    return s


def write_csv(path: str, header, rows) -> int:
    n = 0
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(csv_cell(x) for x in row) + "\n")
            n += 1
    return n


def write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(obj) + "\n")
