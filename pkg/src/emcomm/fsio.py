"""Deterministic file output helpers.

All writers go through a temp-file-plus-rename so a crash never leaves a
half-written artifact. Floats are serialized with repr, the shortest
round-tripping decimal form, which keeps re-runs byte-identical.
"""

from __future__ import annotations

import json
import os
import tempfile

from .errors import ParseError


def fmt_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (int,)):
        return str(v)
    return str(v)


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_csv(path, columns, rows, meta=None) -> None:
    """CSV with a leading '# key: value' metadata block.

    rows may be dicts (looked up by column) or sequences in column order.
    """
    lines = []
    for k in sorted(meta or {}):
        lines.append(f"# {k}: {meta[k]}")
    lines.append(",".join(columns))
    for row in rows:
        if isinstance(row, dict):
            vals = [fmt_value(row[c]) for c in columns]
        else:
            vals = [fmt_value(v) for v in row]
        lines.append(",".join(vals))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_csv(path):
    """Parse a metadata-block CSV; returns (meta, columns, rows-as-dicts)."""
    meta, columns, rows = {}, None, []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for ln, raw in enumerate(fh, start=1):
                line = raw.rstrip("\n")
                if not line.strip():
                    continue
                if line.startswith("#"):
                    body = line[1:].strip()
                    if ":" in body:
                        k, v = body.split(":", 1)
                        meta[k.strip()] = v.strip()
                    continue
                cells = line.split(",")
                if columns is None:
                    columns = cells
                    continue
                if len(cells) != len(columns):
                    raise ParseError(f"{path}: line {ln}: expected {len(columns)} cells, got {len(cells)}")
                rows.append(dict(zip(columns, cells)))
    except OSError as e:
        raise ParseError(f"cannot read csv {path}: {e}") from e
    if columns is None:
        raise ParseError(f"{path}: no header row found")
    return meta, columns, rows
