"""JSON-lines manifest IO, schema-tolerant.

First line may be a `{"manifest": {...}}` header; every other line is one clip
object. Clips are kept as raw dicts so unknown fields survive the round trip.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import ExportError


def read_manifest(path) -> tuple[dict | None, list[dict]]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ExportError(f"cannot read manifest {path}: {err}") from err
    header = None
    rows: list[dict] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as err:
            raise ExportError(f"{path}:{lineno}: bad JSON: {err}") from err
        if not isinstance(obj, dict):
            raise ExportError(f"{path}:{lineno}: expected an object, got {type(obj).__name__}")
        if "manifest" in obj and lineno == 1:
            header = obj
        else:
            rows.append(obj)
    return header, rows


def write_manifest(path, header: dict, rows: list[dict]) -> None:
    path = Path(path)
    lines = [json.dumps(header, sort_keys=True)]
    lines += [json.dumps(row, sort_keys=True) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
