"""Deterministic CSV and atomic JSON output."""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np


def _format(v) -> str:
    return repr(float(v))


def write_csv(path, header, rows, meta: dict | None = None) -> None:
    """Write ``rows`` under a ``#``-comment block of ``key: value`` metadata.

    Floats are written with ``repr`` so output is byte-identical for equal
    inputs.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    lines = [f"# {k}: {meta[k]}" for k in sorted(meta or {})]
    lines.append(",".join(header))
    lines.extend(",".join(_format(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def read_csv(path):
    """Return ``(meta, header, rows)`` from a file written by `write_csv`."""
    meta = {}
    header = None
    data = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition(":")
            meta[key.strip()] = val.strip()
        elif header is None:
            header = line.split(",")
        elif line:
            data.append([float(x) for x in line.split(",")])
    return meta, header, np.array(data)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json_atomic(path, data) -> None:
    """Write JSON to a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
