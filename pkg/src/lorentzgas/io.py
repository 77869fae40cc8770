"""File formats: scene JSON, trajectory CSV, curve polyline CSV and report JSON."""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import math
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .errors import SchemaError
from .geometry import Disk
from .scene import Bounds, GasConfig, LatticeSpec, build_finite, build_periodic, finite_modification

_VEC2 = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_DISK = {
    "type": "object",
    "properties": {"center": _VEC2, "radius": {"type": "number", "exclusiveMinimum": 0}},
    "required": ["center", "radius"],
    "additionalProperties": False,
}
SCENE_SCHEMA = {
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "lattice": {
            "type": "object",
            "properties": {
                "basis": {"type": "array", "items": _VEC2, "minItems": 2, "maxItems": 2},
                "motif": {"type": "array", "items": _DISK, "minItems": 1},
            },
            "required": ["basis", "motif"],
            "additionalProperties": False,
        },
        "removed": {"type": "array", "items": {"type": "array", "items": {"type": "integer"},
                                               "minItems": 3, "maxItems": 3}},
        "added": {"type": "array", "items": _DISK},
        "origin": _VEC2,
        "declared_bounds": {
            "type": "object",
            "properties": {k: {"type": "number", "minimum": 0} for k in ("k_m", "k_M", "tau_m", "tau_M")},
            "required": ["k_m", "k_M", "tau_m", "tau_M"],
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

TRAJECTORY_COLUMNS = ("step", "alpha", "r", "phi", "x", "y", "tau", "grazing_margin")
CURVE_COLUMNS = ("kind", "base", "neighbor", "branch", "index", "r", "phi")


def fmt(v: float) -> str:
    """17 significant digits (round-trips every double)."""
    return format(float(v), ".17g")


def fmt_id(sid) -> str:
    return ":".join(str(int(v)) for v in sid)


def parse_id(text: str) -> tuple:
    parts = text.strip().split(":")
    if len(parts) != 3:
        raise ValueError(f"scatterer id must look like i:j:m, got {text!r}")
    return tuple(int(p) for p in parts)


def parse_id_list(text: str) -> list:
    return [parse_id(t) for t in text.replace(";", ",").split(",") if t.strip()]


# ---------------------------------------------------------------------------
# scene JSON


def validate_scene_dict(data) -> None:
    v = jsonschema.Draft202012Validator(SCENE_SCHEMA)
    errors = sorted(v.iter_errors(data), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        e = errors[-1]
        raise SchemaError(e.json_path, e.message)
    if "lattice" not in data and not data.get("added"):
        raise SchemaError("$", "a scene needs a lattice or at least one added disk")
    if "lattice" not in data and data.get("removed"):
        raise SchemaError("$.removed", "removed entries need a lattice")
    for q, sid in enumerate(data.get("removed", [])):
        if "lattice" in data and not 0 <= sid[2] < len(data["lattice"]["motif"]):
            raise SchemaError(f"$.removed[{q}]", f"motif index {sid[2]} out of range")


def _disk(d) -> Disk:
    return Disk(tuple(d["center"]), d["radius"])


def scene_from_dict(data, *, horizon_samples: int = 20000) -> GasConfig:
    validate_scene_dict(data)
    declared = None
    if "declared_bounds" in data:
        b = data["declared_bounds"]
        declared = Bounds(b["k_m"], b["k_M"], b["tau_m"], b["tau_M"], "declared")
    origin = tuple(data["origin"]) if "origin" in data else None
    added = [_disk(d) for d in data.get("added", [])]
    if "lattice" in data:
        lat = data["lattice"]
        spec = LatticeSpec(tuple(tuple(v) for v in lat["basis"]), tuple(_disk(d) for d in lat["motif"]))
        removed = [tuple(s) for s in data.get("removed", [])]
        if removed or added:
            base = build_periodic(spec, origin=origin, horizon_samples=horizon_samples)
            return finite_modification(base, removed, added, declared=declared)
        return build_periodic(spec, origin=origin, declared=declared, horizon_samples=horizon_samples)
    return build_finite(added, origin=origin, declared=declared)


def parse_scene(text: str, **kw) -> GasConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON: {exc}") from None
    return scene_from_dict(data, **kw)


def load_scene(path, **kw) -> GasConfig:
    return parse_scene(Path(path).read_text(), **kw)


def scene_to_dict(config: GasConfig, *, include_bounds: bool = True) -> dict:
    out: dict = {}
    if config.lattice is not None:
        lat = config.lattice
        out["lattice"] = {"basis": [list(v) for v in lat.basis],
                          "motif": [{"center": list(d.center), "radius": d.radius} for d in lat.motif]}
        out["removed"] = [list(s) for s in sorted(config.removed)]
    out["added"] = [{"center": list(config.added[s].center), "radius": config.added[s].radius}
                    for s in config.alive_added]
    out["origin"] = list(config.origin)
    if include_bounds and config.bounds is not None and config.bounds.provenance == "declared":
        b = config.bounds
        out["declared_bounds"] = {"k_m": b.k_m, "k_M": b.k_M, "tau_m": b.tau_m, "tau_M": b.tau_M}
    return out


# ---------------------------------------------------------------------------
# CSV


def trajectory_rows(orbit):
    """Rows for collisions 1..n of a :class:`~lorentzgas.dynamics.Orbit`."""
    for k in range(1, orbit.steps + 1):
        yield (str(k), fmt_id(orbit.ids[k]), fmt(orbit.r[k]), fmt(orbit.phi[k]), fmt(orbit.x[k]),
               fmt(orbit.y[k]), fmt(orbit.tau[k - 1]), fmt(orbit.margin[k - 1]))


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def export_trajectory(orbit, path) -> None:
    _write_csv(path, TRAJECTORY_COLUMNS, trajectory_rows(orbit))


def trajectory_text(orbit) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAJECTORY_COLUMNS)
    w.writerows(trajectory_rows(orbit))
    return buf.getvalue()


def read_trajectory(path) -> list[dict]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != TRAJECTORY_COLUMNS:
            raise ValueError(f"unexpected trajectory header {rd.fieldnames}")
        out = []
        for row in rd:
            out.append({"step": int(row["step"]), "alpha": parse_id(row["alpha"]),
                        **{k: float(row[k]) for k in TRAJECTORY_COLUMNS[2:]}})
        return out


def export_curves(curves, path) -> None:
    rows = []
    for c in curves:
        for q, (r, p) in enumerate(zip(c.r, c.phi)):
            rows.append((c.kind, fmt_id(c.base), fmt_id(c.neighbor), c.branch, str(q), fmt(r), fmt(p)))
    _write_csv(path, CURVE_COLUMNS, rows)


def export_series(path, header, columns) -> None:
    rows = zip(*[[fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in col] for col in columns])
    _write_csv(path, header, rows)


# ---------------------------------------------------------------------------
# reports


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    return v


def spec_hash(spec: dict) -> str:
    canon = json.dumps(_clean(spec), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def build_report(command: str, spec: dict, seed: int, payload: dict, *, exit_code: int = 0) -> dict:
    """Report with a fixed top-level key order; contains no timestamps."""
    return {
        "command": command,
        "version": __version__,
        "seed": int(seed),
        "spec_hash": spec_hash(spec),
        "spec": _clean(spec),
        "exit_code": int(exit_code),
        "result": _clean(payload),
    }


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, allow_nan=False) + "\n"


def write_report(report: dict, path) -> None:
    Path(path).write_text(dumps_report(report), newline="\n")
