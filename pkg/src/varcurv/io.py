"""Atomic, byte-stable result files and the run manifest."""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

__all__ = [
    "fmt",
    "atomic_write_text",
    "write_csv",
    "read_csv",
    "write_json",
    "read_json",
    "write_matrix_csv",
    "read_matrix_csv",
    "file_digest",
    "Manifest",
]


def fmt(x) -> str:
    """Round-trip text for a CSV cell; floats use ``repr`` of a Python float."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if x is None:
        return ""
    return str(x)


def atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows, comment=None):
    lines = []
    if comment:
        lines.append(f"# {comment}")
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _parse(cell: str):
    if cell == "":
        return None
    if cell in ("true", "false"):
        return cell == "true"
    try:
        return int(cell)
    except ValueError:
        pass
    try:
        return float(cell)
    except ValueError:
        return cell


def read_csv(path):
    """Returns ``(header, rows)`` with cells parsed back to int/float/bool/str."""
    header, rows = None, []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            cells = line.split(",")
            if header is None:
                header = cells
            else:
                rows.append([_parse(c) for c in cells])
    return header, rows


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def write_json(path, obj):
    atomic_write_text(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_matrix_csv(path, M):
    M = np.asarray(M, dtype=float)
    sym = bool(M.shape[0] == M.shape[1] and np.array_equal(M, M.T))
    write_csv(path, [f"c{j}" for j in range(M.shape[1])], M.tolist(),
              comment=f"dim={M.shape[0]} symmetric={'true' if sym else 'false'}")


def read_matrix_csv(path):
    _, rows = read_csv(path)
    return np.array(rows, dtype=float)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Manifest:
    """Records every output file with its size, sha256 and producing module."""

    NAME = "manifest.json"

    def __init__(self, root):
        self.root = Path(root)
        self.entries = {}

    def add(self, name, producer):
        p = self.root / name
        self.entries[name] = {"file": name, "bytes": p.stat().st_size, "hash": file_digest(p), "producer": producer}

    def write(self):
        files = [self.entries[k] for k in sorted(self.entries)]
        write_json(self.root / self.NAME, {"files": files})

    @classmethod
    def load(cls, root):
        data = read_json(Path(root) / cls.NAME)
        m = cls(root)
        m.entries = {e["file"]: e for e in data["files"]}
        return m
