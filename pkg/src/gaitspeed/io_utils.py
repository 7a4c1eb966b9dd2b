"""Serialization: checkpoints, CSV reports, trajectory dumps, hashing.

Checkpoint container: a JSON manifest next to a raw little-endian float32
parameter blob. Policy, value, and estimator checkpoints share the container
and differ only in the manifest's `kind` tag. CSV files carry the
configuration hash in a leading comment row so every artifact is traceable
to the exact configuration that produced it.
"""

from __future__ import annotations

import hashlib
import json
import subprocess
from pathlib import Path

import numpy as np

from .errors import CompatibilityError, ConfigError


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:12]


def git_commit() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"],
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def fmt(x) -> str:
    """Round-trip float formatting; empty string for missing values."""
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, columns: list[str], rows: list[list], comments: list[str] = ()):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# {c}" for c in comments]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


# -- checkpoint container ----------------------------------------------------

def save_network(directory, name: str, module, kind: str, manifest_extra: dict):
    """Write <name>.json + <name>.bin for a FlatModule-like object."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    params = module.flat_params().astype("<f4")
    manifest = {
        "format_version": 1,
        "kind": kind,
        "dtype": "float32",
        "param_count": int(params.size),
        "architecture": module.architecture,
    }
    manifest.update(manifest_extra)
    (directory / f"{name}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    params.tofile(directory / f"{name}.bin")


def load_network(directory, name: str) -> tuple[dict, np.ndarray]:
    directory = Path(directory)
    mpath = directory / f"{name}.json"
    bpath = directory / f"{name}.bin"
    if not mpath.exists() or not bpath.exists():
        raise ConfigError(f"checkpoint part {name!r} missing under {directory}")
    manifest = json.loads(mpath.read_text())
    params = np.fromfile(bpath, dtype="<f4").astype(np.float64)
    if params.size != manifest.get("param_count"):
        raise CompatibilityError(
            f"{name}: blob has {params.size} parameters, manifest says {manifest.get('param_count')}")
    return manifest, params


# -- trajectory record stream -------------------------------------------------

def dump_trajectory(prefix, fields: dict[str, np.ndarray], meta: dict):
    """Binary record stream (little-endian float32) + JSON sidecar manifest.

    Fields are stored back to back in manifest order with their shapes, so a
    reader needs only the sidecar to slice the stream.
    """
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    order = list(fields.keys())
    blobs = [np.ascontiguousarray(fields[k], dtype="<f4") for k in order]
    manifest = {
        "format_version": 1,
        "field_order": order,
        "shapes": {k: list(fields[k].shape) for k in order},
        **meta,
    }
    with open(prefix.with_suffix(".bin"), "wb") as f:
        for b in blobs:
            f.write(b.tobytes())
    prefix.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_trajectory(prefix) -> tuple[dict, dict[str, np.ndarray]]:
    prefix = Path(prefix)
    manifest = json.loads(prefix.with_suffix(".json").read_text())
    raw = np.fromfile(prefix.with_suffix(".bin"), dtype="<f4")
    fields = {}
    off = 0
    for k in manifest["field_order"]:
        shape = tuple(manifest["shapes"][k])
        size = int(np.prod(shape)) if shape else 1
        fields[k] = raw[off:off + size].reshape(shape).astype(np.float64)
        off += size
    if off != raw.size:
        raise CompatibilityError("trajectory blob size does not match manifest shapes")
    return manifest, fields
