"""Persistence of trajectories and check reports.

Layout of a run directory::

    timeseries.csv     one row per accepted state
    states.csv         every accepted state (t followed by all cell values)
    snapshots/*.csv    selected states as (r, u) or (x, y, u) columns
    run.json           grid, parameters and flux data needed to re-run checks
    report.json        check reports (written by :func:`write_report`)

CSV floats use 17 significant digits so that read-back is bit-exact.
``report.json`` carries ``schema_version``; its ``reports`` list holds objects
with the keys ``name, tolerance, worst_margin, location, passed, samples,
details``.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import IoError
from .flux import FluxSchedule, flux_from_dict, flux_to_dict
from .radial import RadialGrid, Trajectory

SCHEMA_VERSION = 1
TIMESERIES_COLUMNS = (
    "t", "mass", "min", "max", "dt", "newton_iters",
    "inflow_outer", "inflow_inner", "cumulative_outer", "cumulative_inner",
)


def fmt(x):
    """17-significant-digit text for a float (round-trips exactly)."""
    return format(float(x), ".17g")


def _mkdir(path):
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {path}: {exc}") from None
    return path


def _write_rows(path, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from None


def schedule_to_dict(schedule: FluxSchedule):
    return {
        "outer": flux_to_dict(schedule.f),
        "holes": [flux_to_dict(g) for g in schedule.g],
        "scaling_mode": schedule.scaling_mode,
        "monotone_decreasing": schedule.monotone_decreasing,
    }


def schedule_from_dict(d):
    return FluxSchedule(
        flux_from_dict(d["outer"]),
        tuple(flux_from_dict(g) for g in d["holes"]),
        d["scaling_mode"],
        d.get("monotone_decreasing"),
    )


def _grid_to_dict(grid):
    if isinstance(grid, RadialGrid):
        return {"kind": "radial", "n": grid.n, "grading": grid.grading, "faces": [fmt(f) for f in grid.faces]}
    outer = grid.outer
    return {
        "kind": "planar",
        "h": fmt(grid.h),
        "outer": {"type": type(outer).__name__, **{k: v for k, v in vars(outer).items()}},
        "holes": [{"center": list(h.center), "radius": h.radius} for h in grid.holes],
    }


def _grid_from_dict(d):
    if d["kind"] == "radial":
        return RadialGrid(int(d["n"]), np.array([float(f) for f in d["faces"]]), d["grading"])
    from .model import Hole
    from .planar import Disk, Rectangle, build_masked_grid

    o = dict(d["outer"])
    kind = o.pop("type")
    outer = Disk(o["radius"], tuple(o["center"])) if kind == "Disk" else Rectangle(**o)
    holes = [Hole(tuple(h["center"]), h["radius"]) for h in d["holes"]]
    return build_masked_grid(outer, holes, float(d["h"]))


def write_trajectory(traj: Trajectory, out_dir, snapshot_times=None, full=True):
    """Write the time series, snapshots and (with ``full``) every state.

    ``snapshot_times`` defaults to the first and last accepted times; every
    requested time must be a recorded time.
    """
    out = _mkdir(out_dir)
    masses = traj.masses if len(traj) else []
    co = traj.cumulative_outer if len(traj) else []
    ci = traj.cumulative_inner if len(traj) else []
    rows = []
    for k in range(len(traj)):
        u = traj.values[k]
        rows.append([
            fmt(traj.times[k]), fmt(masses[k]), fmt(np.min(u)), fmt(np.max(u)), fmt(traj.dts[k]),
            str(traj.newton_iters[k]), fmt(traj.inflow_outer[k]), fmt(traj.inflow_inner[k]), fmt(co[k]), fmt(ci[k]),
        ])
    _write_rows(out / "timeseries.csv", TIMESERIES_COLUMNS, rows)
    if not len(traj):
        return out
    grid = traj.grid
    radial = isinstance(grid, RadialGrid)
    if snapshot_times is None:
        snapshot_times = sorted({traj.times[0], traj.times[-1]})
    snap = _mkdir(out / "snapshots")
    for t in snapshot_times:
        k = traj.index_at(t)
        u = traj.values[k]
        if radial:
            header, cols = ("r", "u"), (grid.centers, u)
        else:
            header, cols = ("x", "y", "u"), (grid.xc, grid.yc, u)
        _write_rows(snap / f"t_{traj.times[k]:.6f}.csv", header, ([fmt(v) for v in row] for row in zip(*cols)))
    if full:
        _write_rows(
            out / "states.csv", ["t"] + [f"u{i}" for i in range(grid.size)],
            ([fmt(t)] + [fmt(v) for v in u] for t, u in zip(traj.times, traj.values)),
        )
        meta = {"schema_version": SCHEMA_VERSION, "grid": _grid_to_dict(grid)}
        for key in ("m", "q", "n", "delta", "R", "label"):
            if traj.meta.get(key) is not None:
                meta[key] = traj.meta[key]
        if traj.meta.get("schedule") is not None:
            meta["schedule"] = schedule_to_dict(traj.meta["schedule"])
        _write_json(out / "run.json", meta)
    return out


def read_snapshot(path):
    """Columns of a snapshot CSV as a dict of float arrays."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from None
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in row] for row in body]) if body else np.zeros((0, len(header)))
    return {name: data[:, i].copy() for i, name in enumerate(header)}


def read_timeseries(path):
    return read_snapshot(path)


def read_trajectory(run_dir):
    """Rebuild a :class:`Trajectory` from ``states.csv``, ``timeseries.csv`` and ``run.json``."""
    run_dir = Path(run_dir)
    meta = read_json(run_dir / "run.json")
    grid = _grid_from_dict(meta.pop("grid"))
    if "schedule" in meta:
        meta["schedule"] = schedule_from_dict(meta["schedule"])
    ts = read_timeseries(run_dir / "timeseries.csv")
    try:
        with open(run_dir / "states.csv", newline="") as fh:
            rows = list(csv.reader(fh))[1:]
    except OSError as exc:
        raise IoError(f"cannot read states: {exc}") from None
    traj = Trajectory(grid, meta=meta)
    for k, row in enumerate(rows):
        traj.append(
            float(row[0]), np.array([float(v) for v in row[1:]]), ts["dt"][k], int(ts["newton_iters"][k]),
            ts["inflow_outer"][k], ts["inflow_inner"][k],
        )
    return traj


def _write_json(path, obj):
    try:
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True, default=_default)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from None


def _default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (set, tuple)):
        return list(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _clean(x):
    """Replace non-finite floats with strings so the JSON stays standard."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if x != x:
            return "nan"
        if x in (float("inf"), float("-inf")):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_report(reports, out_dir, meta=None, filename="report.json"):
    """Write every report (objects with ``to_dict`` or plain dicts) to one JSON file."""
    out = _mkdir(out_dir)
    body = {
        "schema_version": SCHEMA_VERSION,
        "meta": _clean(meta or {}),
        "reports": [_clean(r.to_dict() if hasattr(r, "to_dict") else r) for r in reports],
    }
    body["all_passed"] = all(r.get("passed", True) for r in body["reports"])
    _write_json(out / filename, body)
    return out / filename


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise IoError(f"cannot read {path}: {exc}") from None


def read_report(path):
    data = read_json(path)
    if data.get("schema_version") != SCHEMA_VERSION:
        raise IoError(f"unsupported report schema {data.get('schema_version')!r}")
    return data
