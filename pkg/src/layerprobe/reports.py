"""Plot-ready report tables as CSV or JSON lines."""

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError

FORMATS = ("csv", "json-lines")
EXTENSIONS = {"csv": ".csv", "json-lines": ".jsonl"}


def format_real(x):
    """Nine significant digits; non-finite values as inf, -inf, nan."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.9g}"


def _cell(value):
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_real(value)
    return str(value)


def _json_value(value):
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        text = format_real(value)
        return float(text) if math.isfinite(float(value)) else text
    return str(value)


def render_report(records, fmt="csv", columns=None):
    records = list(records)
    if fmt not in FORMATS:
        raise InvalidArgumentError(f"report format must be one of {FORMATS}, got {fmt!r}")
    if columns is None:
        if not records:
            raise InvalidArgumentError("cannot infer report columns from zero records")
        columns = list(records[0])
    columns = list(columns)
    for r in records:
        if list(r) != columns:
            raise InvalidArgumentError(f"record keys {list(r)} differ from report columns {columns}")
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for r in records:
            writer.writerow([_cell(r[c]) for c in columns])
        return buf.getvalue()
    return "".join(json.dumps({c: _json_value(r[c]) for c in columns}) + "\n" for r in records)


def write_report(records, path, fmt="csv", columns=None):
    text = render_report(records, fmt, columns)
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write report: {exc.strerror}", str(path)) from exc
    return path
