"""CSV and JSON emission with a header block echoing config, seed and version.

Files are written deterministically: fixed column order, ``repr`` floats,
sorted JSON keys and ``\\n`` line endings, so identical runs give identical
bytes.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from .. import __version__

HEADER_PREFIX = "# "


def plain(value: Any) -> Any:
    """Convert numpy scalars and arrays to JSON-friendly Python values."""
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return [plain(v) for v in value.tolist()]
    if isinstance(value, Mapping):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    return value


def _cell(value: Any) -> str:
    value = plain(value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value)
    if isinstance(value, (list, dict)):
        return json.dumps(value, sort_keys=True, separators=(",", ":"))
    if value is None:
        return ""
    return str(value)


def header_lines(header: Mapping[str, Any]) -> list[str]:
    meta = {"version": __version__, **header}
    return [f"{HEADER_PREFIX}{k}: {json.dumps(plain(v), sort_keys=True, separators=(',', ':'))}"
            for k, v in meta.items()]


def csv_text(rows: Iterable[Mapping[str, Any]], header: Mapping[str, Any]) -> str:
    rows = list(rows)
    cols: list[str] = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    buf = io.StringIO()
    for line in header_lines(header):
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in cols])
    return buf.getvalue()


def write_csv(path: str | Path, rows: Iterable[Mapping[str, Any]], header: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(rows, header), newline="")
    return path


def read_csv(path: str | Path) -> tuple[dict[str, Any], list[dict[str, str]]]:
    """Header block (decoded JSON values) and the data rows as strings."""
    header: dict[str, Any] = {}
    body = []
    for line in Path(path).read_text().splitlines():
        if line.startswith(HEADER_PREFIX):
            key, _, val = line[len(HEADER_PREFIX):].partition(": ")
            header[key] = json.loads(val)
        else:
            body.append(line)
    return header, list(csv.DictReader(body))


def json_text(obj: Mapping[str, Any], header: Mapping[str, Any]) -> str:
    doc = {"header": plain({"version": __version__, **header}), "result": plain(obj)}
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=True) + "\n"


def write_json(path: str | Path, obj: Mapping[str, Any], header: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json_text(obj, header), newline="")
    return path


__all__ = ["csv_text", "header_lines", "json_text", "plain", "read_csv", "write_csv", "write_json"]
