"""CSV and JSON report writers.

CSV columns appear in the caller's documented order.  JSON documents carry
``schema_version: 1`` plus a ``meta`` block, and their ``rows`` mirror the CSV
columns.  Floats are written with 17 significant digits in both formats so
that a parse of either yields identical values.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

from .errors import OvershootLabError

SCHEMA_VERSION = 1


class ReportIOError(OvershootLabError, OSError):
    pass


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, ".17g")
    if value is None:
        return ""
    return str(value)


def _json_value(value: Any) -> str:
    if isinstance(value, bool) or value is None:
        return json.dumps(value)
    if isinstance(value, float):
        # JSON has no NaN/inf literals
        return format(value, ".17g") if math.isfinite(value) else "null"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, Mapping):
        items = (f"{json.dumps(str(k))}: {_json_value(v)}" for k, v in value.items())
        return "{" + ", ".join(items) + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_json_value(v) for v in value) + "]"
    return json.dumps(str(value))


def _as_mapping(row: Any) -> Mapping[str, Any]:
    if dataclasses.is_dataclass(row):
        return dataclasses.asdict(row)
    return row


def render_csv(rows: Sequence[Any], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        m = _as_mapping(row)
        writer.writerow([_fmt(m.get(c)) for c in columns])
    return buf.getvalue()


def render_json(rows: Sequence[Any], columns: Sequence[str],
                meta: Optional[Mapping[str, Any]] = None) -> str:
    lines = ["{", f'  "schema_version": {SCHEMA_VERSION},',
             f'  "meta": {_json_value(dict(meta or {}))},',
             f'  "columns": {_json_value(list(columns))},', '  "rows": [']
    body = []
    for row in rows:
        m = _as_mapping(row)
        body.append("    " + _json_value({c: m.get(c) for c in columns}))
    lines.append(",\n".join(body))
    lines.append("  ]")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise ReportIOError(f"cannot write {path}: {exc}") from exc


def emit_report(rows: Sequence[Any], fmt: str, out_dir, stem: str,
                columns: Sequence[str], meta: Optional[Mapping[str, Any]] = None) -> List[Path]:
    """Write ``rows`` as ``<stem>.csv`` and/or ``<stem>.json`` under ``out_dir``.

    ``fmt`` is ``csv``, ``json`` or ``both``.  Meta entries are appended to
    every CSV row as extra columns so each file is self-describing.
    """
    if not rows:
        raise ValueError("refusing to write an empty report")
    if fmt not in ("csv", "json", "both"):
        raise ValueError(f"unknown format {fmt!r}")
    out_dir = Path(out_dir)
    meta = dict(meta or {})
    written = []
    if fmt in ("csv", "both"):
        extra = [k for k in meta if k not in columns]
        flat = [{**_as_mapping(r), **{k: meta[k] for k in extra}} for r in rows]
        path = out_dir / f"{stem}.csv"
        _write(path, render_csv(flat, list(columns) + extra))
        written.append(path)
    if fmt in ("json", "both"):
        path = out_dir / f"{stem}.json"
        _write(path, render_json(rows, columns, meta))
        written.append(path)
    return written


def read_csv(path) -> List[Dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def read_json(path) -> Dict[str, Any]:
    with open(path) as fh:
        return json.load(fh)
