"""Deterministic, atomic report writing."""
import hashlib
import json
import math
import os
import tempfile

import numpy as np

from . import __version__

__all__ = ["jsonable", "canonical_json", "config_hash", "header", "write_atomic", "write_json", "write_csv"]

TOOL = "ucimpact"


def jsonable(obj):
    """Convert numpy scalars/arrays and non-finite floats to plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def canonical_json(obj, indent=None):
    return json.dumps(jsonable(obj), sort_keys=True, indent=indent, separators=(",", ": ") if indent else (",", ":"))


def config_hash(config):
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


def header(chash):
    return {"tool": TOOL, "version": __version__, "config_hash": chash}


def write_atomic(path, text):
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, payload, chash):
    doc = dict(header(chash))
    doc.update(payload)
    return write_atomic(path, canonical_json(doc, indent=2) + "\n")


def _cell(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return "" if math.isnan(x) else repr(float(x))
    return str(x)


def write_csv(path, columns, rows, chash):
    """CSV with a leading ``# tool=... version=... config_hash=...`` line."""
    h = header(chash)
    lines = [f"# tool={h['tool']} version={h['version']} config_hash={h['config_hash']}", ",".join(columns)]
    lines.extend(",".join(_cell(v) for v in row) for row in rows)
    return write_atomic(path, "\n".join(lines) + "\n")
