"""CSV tables with ``#``-prefixed metadata headers."""

from __future__ import annotations

import csv
import io
import json
import os
from typing import Mapping

import numpy as np


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _meta_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer, str)):
        return str(v)
    return json.dumps(v, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def format_table(columns: Mapping[str, object], meta: Mapping[str, object] | None = None) -> str:
    """Render columns (equal-length sequences or scalars) as CSV text."""
    names = list(columns)
    cols = [np.atleast_1d(np.asarray(columns[n], dtype=object)) for n in names]
    n = max((c.size for c in cols), default=0)
    for name, c in zip(names, cols):
        if c.size not in (1, n):
            raise ValueError(f"column {name!r} has {c.size} rows, expected {n}")
    buf = io.StringIO()
    for k, v in (meta or {}).items():
        buf.write(f"# {k}: {_meta_value(v)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for i in range(n):
        w.writerow([_fmt(c[i] if c.size == n else c[0]) for c in cols])
    return buf.getvalue()


def write_table(path: str | os.PathLike, columns: Mapping[str, object], meta: Mapping[str, object] | None = None) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(format_table(columns, meta))


def read_table(path: str | os.PathLike) -> tuple[dict, dict[str, np.ndarray]]:
    """Return (metadata, columns); numeric columns come back as float arrays."""
    meta = {}
    body = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition(":")
                meta[key.strip()] = val.strip()
            else:
                body.append(line)
    rows = list(csv.reader(body))
    if not rows:
        return meta, {}
    names, data = rows[0], rows[1:]
    cols = {}
    for j, name in enumerate(names):
        raw = [r[j] for r in data]
        try:
            cols[name] = np.array([float(x) for x in raw])
        except ValueError:
            cols[name] = np.array(raw, dtype=object)
    return meta, cols
