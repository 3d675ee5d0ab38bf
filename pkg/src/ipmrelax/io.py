"""Configuration files, field snapshots and JSON reports."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .cintegration import RunConfig
from .waves import Field, Grid

SCHEMA_VERSION = 1
CSV_HEADER = ["x1", "x2", "t", "rho", "u1", "u2", "m1", "m2", "mask"]


class InputError(ValueError):
    """Malformed user input (configuration, vectors or files)."""


# ------------------------------------------------------------------ config

_CONFIG_KEYS = {
    "domain.type": ("domain", str),
    "domain.lengths": ("lengths", "floats3"),
    "domain.T": ("T", float),
    "grid.nx": ("nx", int),
    "grid.ny": ("ny", int),
    "grid.nt": ("nt", int),
    "hull.gamma": ("gamma", "optfloat"),
    "run.eta0": ("eta0", float),
    "run.budget_decay": ("budget_decay", float),
    "run.max_iters": ("max_iters", int),
    "run.stop_tol": ("stop_tol", "optfloat"),
    "run.stop_fraction": ("stop_fraction", float),
    "run.seed": ("seed", int),
    "run.directions": ("directions", int),
    "subsolution.alpha": ("alpha", float),
    "subsolution.nx": ("profile_nx", int),
}
_OUTPUT_KEYS = {
    "output.dir": str,
    "output.snapshot_every": int,
    "output.export_final": bool,
    "output.export_initial": bool,
}
OUTPUT_DEFAULTS = {"output.dir": None, "output.snapshot_every": 0, "output.export_final": True,
                   "output.export_initial": False}


def _convert(raw, kind, key):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "optfloat":
            return None if raw.lower() in ("", "none") else float(raw)
        if kind == "floats3":
            vals = tuple(float(x) for x in raw.split(","))
            if len(vals) != 3:
                raise ValueError(raw)
            return vals
        return raw
    except ValueError:
        raise InputError(f"bad value for {key}: {raw!r}") from None


def parse_config(text: str):
    """Parse ``key = value`` lines into ``(RunConfig, output options)``.

    Blank lines and ``#`` comments are ignored; unknown or repeated keys
    are rejected.
    """
    run_kwargs, out = {}, dict(OUTPUT_DEFAULTS)
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise InputError(f"line {lineno}: repeated key {key}")
        seen.add(key)
        if key in _CONFIG_KEYS:
            name, kind = _CONFIG_KEYS[key]
            run_kwargs[name] = _convert(raw, kind, key)
        elif key in _OUTPUT_KEYS:
            out[key] = _convert(raw, _OUTPUT_KEYS[key], key)
        else:
            raise InputError(f"line {lineno}: unknown key {key}")
    try:
        config = RunConfig(**run_kwargs)
        config.grid()
    except ValueError as exc:
        raise InputError(str(exc)) from None
    return config, out


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read config: {exc}") from None
    return parse_config(text)


def parse_vector(text: str, n: int):
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise InputError(f"malformed vector {text!r}") from None
    if len(vals) != n or not all(math.isfinite(v) for v in vals):
        raise InputError(f"expected {n} finite comma-separated numbers, got {text!r}")
    return vals


# ---------------------------------------------------------------- snapshots


def grid_meta(grid: Grid) -> dict:
    return {"kind": grid.kind, "nx": grid.nx, "ny": grid.ny, "nt": grid.nt,
            "lower": list(grid.lower), "upper": list(grid.upper)}


def _meta_path(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_field(field: Field, path) -> None:
    """CSV snapshot (rows in (t, x2, x1) order) plus a ``.json`` sidecar
    holding the grid description."""
    path = Path(path)
    X1, X2, T = field.grid.mesh()
    coords = np.stack([X1.ravel(), X2.ravel(), T.ravel()], axis=1)
    z = field.z.reshape(-1, 5)
    mask = None if field.mask is None else field.mask.ravel()
    with path.open("w", newline="") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for i in range(coords.shape[0]):
            vals = [repr(float(v)) for v in coords[i]] + [repr(float(v)) for v in z[i]]
            vals.append("" if mask is None else ("1" if mask[i] else "0"))
            fh.write(",".join(vals) + "\n")
    meta = {"schema_version": SCHEMA_VERSION, "grid": grid_meta(field.grid),
            "max_frequency": field.max_frequency, "has_mask": mask is not None}
    _meta_path(path).write_text(json.dumps(meta, indent=2) + "\n")


def _infer_grid(coords):
    axes = [np.unique(coords[:, i]) for i in range(3)]
    counts = [len(a) for a in axes]
    if min(counts) < 2:
        raise InputError("cannot infer grid from fewer than two nodes per axis")
    h = [a[1] - a[0] for a in axes]
    if axes[0][0] == 0.0:
        upper = tuple(n * s for n, s in zip(counts, h))
        return Grid("torus", *counts, (0.0, 0.0, 0.0), upper)
    T = axes[2][-1] + h[2] / 2
    return Grid.box(counts[0], counts[1], counts[2], T)


def read_field(path) -> Field:
    """Parse a snapshot written by ``write_field``; bit-identical round trip."""
    path = Path(path)
    meta = None
    if _meta_path(path).exists():
        try:
            meta = json.loads(_meta_path(path).read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"corrupted sidecar: {exc}") from None
    try:
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != CSV_HEADER:
                raise InputError(f"bad header in {path}")
            rows = list(reader)
    except OSError as exc:
        raise InputError(f"cannot read snapshot: {exc}") from None
    if not rows:
        raise InputError("snapshot has no rows")
    try:
        num = np.array([[float(v) for v in r[:8]] for r in rows])
        mask_col = [r[8] for r in rows]
    except (ValueError, IndexError):
        raise InputError(f"corrupted row in {path}") from None
    if any(len(r) != 9 for r in rows) or not np.all(np.isfinite(num)):
        raise InputError(f"corrupted row in {path}")
    if meta is not None:
        g = meta["grid"]
        grid = Grid(g["kind"], g["nx"], g["ny"], g["nt"], tuple(g["lower"]), tuple(g["upper"]))
        freq = float(meta.get("max_frequency", 0.0))
    else:
        grid = _infer_grid(num[:, :3])
        freq = 0.0
    if num.shape[0] != int(np.prod(grid.shape)):
        raise InputError("row count does not match the grid")
    X1, X2, T = grid.mesh()
    expect = np.stack([X1.ravel(), X2.ravel(), T.ravel()], axis=1)
    if not np.allclose(num[:, :3], expect, rtol=0, atol=1e-9):
        raise InputError("node coordinates do not match the grid")
    if all(m == "" for m in mask_col):
        mask = None
    elif all(m in ("0", "1") for m in mask_col):
        mask = np.array([m == "1" for m in mask_col]).reshape(grid.shape)
    else:
        raise InputError("mask column must hold 0/1 or be empty")
    return Field(grid, num[:, 3:].reshape(grid.shape + (5,)), mask, freq)


# ------------------------------------------------------------------ reports


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def report_json(kind: str, body: dict) -> str:
    """Stable JSON text: schema version and kind first, then ``body`` in order."""
    doc = {"schema_version": SCHEMA_VERSION, "kind": kind}
    doc.update(_clean(body))
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def write_report(path, kind, body):
    Path(path).write_text(report_json(kind, body))
