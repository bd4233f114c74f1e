"""Binary field snapshots, experiment configs, and run manifests.

Snapshot layout: 4-byte magic, u32 version, u32 grid size N, f64 time stamp,
then N*N little-endian f64 samples row-major (x2 fastest).  Round trips are
bitwise.  Configs are JSON with a closed schema (unknown keys rejected);
manifests record the canonical config, its hash, and library versions so a
run can be reproduced bit for bit.  All files are written atomically.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile

import numpy as np

from .errors import ConfigError
from .spectral import GridField

SNAPSHOT_MAGIC = b"SQGF"
SNAPSHOT_VERSION = 1


def write_atomic(path, data: bytes):
    path = os.fspath(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def write_text_atomic(path, text: str):
    write_atomic(path, text.encode())


def save_snapshot(field: GridField, t: float, path):
    header = SNAPSHOT_MAGIC + struct.pack("<IId", SNAPSHOT_VERSION,
                                          field.n_grid, float(t))
    payload = np.ascontiguousarray(field.values, dtype="<f8").tobytes(order="C")
    write_atomic(path, header + payload)


def load_snapshot(path) -> tuple[GridField, float]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SNAPSHOT_MAGIC:
            raise ValueError(f"not a field snapshot (magic {magic!r})")
        version, n, t = struct.unpack("<IId", fh.read(16))
        if version != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        payload = fh.read(8 * n * n)
        if len(payload) != 8 * n * n:
            raise ValueError("snapshot payload truncated")
    values = np.frombuffer(payload, dtype="<f8").reshape(n, n).copy()
    return GridField(values), t


# ---------------------------------------------------------------------------
# experiment configs


EXPERIMENT_KINDS = ("verify-ops", "sqg-convergence", "pinn-train",
                    "pinn-report", "bound-check")

_COMMON_KEYS = {"kind", "seed", "output_dir"}
_KIND_KEYS = {
    "verify-ops": {"tolerances", "probes", "quad_level", "m", "n_grid",
                   "debug_tamper_kernel", "debug_zero_tolerance"},
    "sqg-convergence": {"n_grid", "t_final", "dt_levels", "preset",
                        "out_every"},
    "pinn-train": {"preset", "layer_sizes", "steps", "learning_rate",
                   "lambda_penalty", "t_final", "n_grid", "s_index",
                   "time_budget_s", "checkpoint_every", "n_interior"},
    "pinn-report": {"checkpoint", "reference_dir", "lambda_penalty",
                    "t_final", "n_grid", "s_index"},
    "bound-check": {"reports"},
}


def validate_config(cfg: dict) -> dict:
    """Schema-check an experiment config; unknown fields are errors."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    kind = cfg.get("kind")
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    allowed = _COMMON_KEYS | _KIND_KEYS[kind]
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    if not isinstance(cfg.get("seed", 0), int):
        raise ConfigError("seed must be an integer")
    return cfg


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def write_manifest(cfg: dict, out_dir, extra: dict | None = None):
    manifest = {"config": cfg, "config_sha256": config_hash(cfg),
                "seed": cfg.get("seed"), "numpy_version": np.__version__,
                "format_versions": {"snapshot": SNAPSHOT_VERSION}}
    if extra:
        manifest.update(extra)
    write_text_atomic(os.path.join(out_dir, "manifest.json"),
                      canonical_json(manifest) + "\n")
    return manifest


def save_trajectory(trajectory, out_dir):
    """Snapshots plus telemetry CSV with columns t, L2, H1, Hs, dissipation."""
    os.makedirs(out_dir, exist_ok=True)
    for t, f in zip(trajectory.times, trajectory.fields):
        save_snapshot(f, t, os.path.join(out_dir, f"field_{t:012.6f}.sqgf"))
    rows = ["t,l2,h1,hs,lambda_s_half"]
    for (t, h1, hs, lam_s, l2) in trajectory.telemetry:
        rows.append(f"{t!r},{l2!r},{h1!r},{hs!r},{lam_s!r}")
    write_text_atomic(os.path.join(out_dir, "telemetry.csv"),
                      "\n".join(rows) + "\n")


def load_trajectory(out_dir):
    from . import solver as sv

    names = sorted(fn for fn in os.listdir(out_dir) if fn.endswith(".sqgf"))
    times, fields = [], []
    for fn in names:
        f, t = load_snapshot(os.path.join(out_dir, fn))
        times.append(t)
        fields.append(f)
    dt = times[1] - times[0] if len(times) > 1 else float("nan")
    return sv.Trajectory(times=times, fields=fields, telemetry=[],
                         config=sv.SolverConfig(n_grid=fields[0].n_grid),
                         dt=dt)
