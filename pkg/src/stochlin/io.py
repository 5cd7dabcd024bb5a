"""CSV and JSON writers with a versioned schema."""

from __future__ import annotations

import hashlib
import json
import math
import os

import numpy as np

from .sde import Ensemble, SdePath

SCHEMA_VERSION = 1


def _clean(obj):
    """JSON-safe copy: numpy scalars and arrays become Python, non-finite floats become None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps_report(payload):
    body = dict(_clean(payload))
    body["schema_version"] = SCHEMA_VERSION
    return json.dumps(body, sort_keys=True, indent=2) + "\n"


def write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_report(payload))


def write_csv(path, header, rows, comment=None):
    """Write ``rows`` with full double precision (``%.17g``)."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64)) if len(rows) else np.zeros((0, len(header)))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION}\n")
        if comment:
            fh.write(f"# {comment}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join("%.17g" % v for v in row) + "\n")


def read_csv(path):
    """Inverse of :func:`write_csv`; returns ``(header, rows)``."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if not ln.startswith("#")]
    header = lines[0].split(",")
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]]).reshape(-1, len(header))
    return header, rows


def write_path_csv(path, sde_path: SdePath):
    n = sde_path.states.shape[1]
    header = ["t"] + [f"x_{i + 1}" for i in range(n)]
    write_csv(path, header, np.column_stack([sde_path.grid.times, sde_path.states]))


def write_ensemble_csv(path, ens: Ensemble, max_paths=None):
    """Long format: one row per (path, recorded node)."""
    M = ens.M if max_paths is None else min(ens.M, max_paths)
    n = ens.states.shape[2]
    t = ens.grid.times[ens.nodes]
    blocks = [np.column_stack([np.full(t.shape, ens.path_indices[i]), t, ens.states[i]]) for i in range(M)]
    header = ["path_index", "t"] + [f"x_{i + 1}" for i in range(n)]
    write_csv(path, header, np.vstack(blocks) if blocks else [])


def content_hash(data: bytes) -> str:
    """Git-style blob SHA-1 of ``data``."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def file_hash(path) -> str:
    with open(path, "rb") as fh:
        return content_hash(fh.read())


def write_manifest(out_dir, seed, grid_dict, system_id, files):
    """``manifest.json`` listing output files with their content hashes."""
    entries = {os.path.basename(p): file_hash(p) for p in sorted(files)}
    write_json(os.path.join(out_dir, "manifest.json"),
               {"seed": int(seed), "grid": grid_dict, "system_id": system_id, "files": entries})
