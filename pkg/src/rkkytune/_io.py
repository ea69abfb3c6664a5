"""Deterministic CSV/JSON output and resumable scan files."""
from __future__ import annotations

import json
import math
import os
import tempfile

from . import __version__


def fmt(x) -> str:
    """Fixed text form of one value: floats in 12-digit scientific notation."""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.11e}"
    if hasattr(x, "dtype"):
        return fmt(x.item())
    return str(x)


def header_lines(command: str, config: dict) -> list[str]:
    lines = [f"# rkkytune {__version__}", f"# command: {command}"]
    for key in sorted(config):
        lines.append(f"# config {key} = {json.dumps(config[key], sort_keys=True)}")
    return lines


def _atomic_write(path: str, text: str):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    with os.fdopen(fd, "w", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_csv(path: str, command: str, config: dict, columns, rows):
    lines = header_lines(command, config)
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def write_json(path: str, command: str, config: dict, payload: dict):
    doc = {"rkkytune": __version__, "command": command, "config": config}
    doc.update(_json_safe(payload))
    _atomic_write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if hasattr(obj, "dtype"):
        obj = obj.item()
    if isinstance(obj, float):
        if math.isnan(obj) or math.isinf(obj):
            return None
        return float(fmt(obj))
    return obj


class ScanFile:
    """CSV whose rows are scan cells, written as they complete.

    On open, rows of an existing file with the same header are loaded and
    their cells count as done. ``finish`` rewrites the file with rows in
    key order, so the final bytes do not depend on completion order or on
    how many runs it took.
    """

    def __init__(self, path: str, command: str, config: dict, columns, n_key: int):
        self.path = path
        self.head = header_lines(command, config) + [",".join(columns)]
        self.n_key = n_key
        self.rows: dict[tuple, list[str]] = {}
        if os.path.exists(path):
            with open(path) as fh:
                lines = fh.read().splitlines()
            if lines[:len(self.head)] != self.head:
                raise ExistingOutputMismatch(path)
            for line in lines[len(self.head):]:
                parts = line.split(",")
                if len(parts) == len(columns):
                    self.rows[tuple(parts[:n_key])] = parts
        else:
            _atomic_write(path, "\n".join(self.head) + "\n")

    def key(self, values) -> tuple:
        return tuple(fmt(v) for v in values[:self.n_key])

    def done(self, values) -> bool:
        return self.key(values) in self.rows

    def add(self, values):
        parts = [fmt(v) for v in values]
        self.rows[tuple(parts[:self.n_key])] = parts
        with open(self.path, "a", newline="\n") as fh:
            fh.write(",".join(parts) + "\n")

    def finish(self, order):
        """Rewrite in the order of ``order`` (a list of key value tuples)."""
        lines = list(self.head)
        for k in order:
            parts = self.rows.get(self.key(k))
            if parts is not None:
                lines.append(",".join(parts))
        _atomic_write(self.path, "\n".join(lines) + "\n")

    def value_rows(self):
        return list(self.rows.values())


class ExistingOutputMismatch(Exception):
    pass
