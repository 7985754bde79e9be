"""Result files: CSV tables with a commented header and JSON summaries.

Every file starts with the experiment configuration.  Floats are written with
``repr`` so that parsing a file gives back the exact values that were written.
Writes go to a temporary file in the target directory and are renamed into
place, so a crash never leaves a half-written result.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, is_dataclass
from pathlib import Path

HEADER_PREFIX = "# "


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _cell(v) -> str:
    if hasattr(v, "item") and callable(v.item):  # numpy scalar
        v = v.item()
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


def _parse_cell(s: str):
    if s == "":
        return None
    if s in ("true", "false"):
        return s == "true"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def render_csv(header: dict, columns, rows) -> str:
    """``header`` becomes ``# key=value`` lines (values JSON-encoded)."""
    buf = io.StringIO()
    for k in sorted(header):
        buf.write(f"{HEADER_PREFIX}{k}={json.dumps(header[k], sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(row[c] if isinstance(row, dict) else getattr(row, c)) for c in columns])
    return buf.getvalue()


def write_csv(path, header: dict, columns, rows) -> Path:
    return atomic_write_text(path, render_csv(header, columns, rows))


def read_csv(path) -> tuple[dict, list[dict]]:
    """Inverse of :func:`write_csv`: (header dict, typed rows)."""
    header, body = {}, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith(HEADER_PREFIX):
                k, v = line[len(HEADER_PREFIX):].rstrip("\n").split("=", 1)
                header[k] = json.loads(v)
            else:
                body.append(line)
    reader = csv.reader(body)
    cols = next(reader)
    rows = [{c: _parse_cell(v) for c, v in zip(cols, r)} for r in reader]
    return header, rows


def to_jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if hasattr(obj, "item") and callable(obj.item):  # numpy scalar
        return obj.item()
    return obj


def render_json(doc: dict) -> str:
    # NaN/Infinity are emitted as the JSON extensions understood by json.loads
    return json.dumps(to_jsonable(doc), sort_keys=True, indent=2) + "\n"


def write_json(path, doc: dict) -> Path:
    return atomic_write_text(path, render_json(doc))


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def same_float(a, b) -> bool:
    return a == b or (isinstance(a, float) and isinstance(b, float) and math.isnan(a) and math.isnan(b))
