"""Pass/fail checks of the inequalities and identities satisfied by solutions.

Every check is a pure function of stored trajectories and returns a
:class:`CheckReport`.  Margins are signed so that a negative value is a
violation; a report passes iff ``worst_margin >= -tolerance``.  Relative
margins divide by ``scale = max(1, sup of the field over the check region)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import GridMismatch, PreconditionError
from .model import (
    BarrierLower,
    BarrierUpper,
    barrier_lower_value,
    barrier_upper_value,
    global_bound_value,
    lower_flux_threshold,
)
from .radial import RadialGrid, boundary_rates, project


@dataclass
class CheckReport:
    name: str
    tolerance: float
    worst_margin: float
    location: dict
    passed: bool
    samples: int
    details: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["worst_margin"] = _json_float(self.worst_margin)
        return d

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: worst margin {self.worst_margin:.3e} (tol {self.tolerance:.1e}, {self.samples} samples)"


def _json_float(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    return x


def _report(name, tol, margins_with_loc, samples, details=None, strict_positive=False):
    if margins_with_loc:
        worst, loc = min(margins_with_loc, key=lambda ml: ml[0])
    else:
        worst, loc = math.inf, {}
    passed = worst > 0 if strict_positive else worst >= -tol
    return CheckReport(name, float(tol), float(worst), loc, bool(passed), int(samples), details or {})


def _meta(traj, key, default=None):
    val = traj.meta.get(key, default)
    if val is None:
        raise PreconditionError(f"trajectory metadata lacks {key!r}")
    return val


def _piece_rates(grid, schedule, t, m, q):
    """Injection rate of every boundary piece (outer first, then holes)."""
    if isinstance(grid, RadialGrid):
        return np.array(boundary_rates(schedule, grid, t, m, q if q is not None else 0.0))
    return grid.boundary_rates(schedule, t, m, q)


def _location(grid, i):
    if isinstance(grid, RadialGrid):
        return {"cell": i, "r": float(grid.centers[i])}
    return {"cell": i, "x": float(grid.xc[i]), "y": float(grid.yc[i])}


def _inflows_from_schedule(traj, schedule):
    """Per-step injected masses recomputed from ``schedule`` (implicit endpoint rule)."""
    m = _meta(traj, "m")
    q = traj.meta.get("q")
    out = np.zeros(len(traj))
    for k in range(1, len(traj)):
        t0, t1 = traj.times[k - 1], traj.times[k]
        out[k] = float(np.sum(_piece_rates(traj.grid, schedule, t1, m, q))) * (t1 - t0)
    return out


def check_mass_balance(traj, schedule=None, grid=None, tol=1e-8):
    """Relative error of ``mass(t) - mass(0) - injected(0..t)`` per snapshot.

    With ``schedule`` the injected mass is recomputed from the flux data;
    otherwise the per-step inflows recorded by the stepper are used.
    """
    grid = grid or traj.grid
    if grid != traj.grid:
        raise GridMismatch("grid does not match trajectory")
    masses = np.array([float(np.dot(u, grid.volumes)) for u in traj.values])
    if schedule is not None:
        inflow = np.cumsum(_inflows_from_schedule(traj, schedule))
    else:
        inflow = np.cumsum(traj.inflow_outer) + np.cumsum(traj.inflow_inner)
    denom = np.maximum(np.maximum(masses[0], masses), 1e-300)
    err = np.abs(masses - masses[0] - inflow) / denom
    margins = [(-float(e), {"snapshot": k, "time": traj.times[k]}) for k, e in enumerate(err)]
    return _report(
        "mass_balance", tol, margins, len(err), {"max_relative_error": float(err.max()) if err.size else 0.0}
    )


def check_l1_contraction(trajA, trajB, schedules, tol=1e-8):
    """Discrete L1 comparison: ``int (uA-uB)_+ <= int (u0A-u0B)_+ + int int (fluxA-fluxB)_+``.

    Both boundaries carry Neumann data, so the flux term includes the outer
    and the hole boundary.  ``scale = max(1, ||uA||_1, ||uB||_1)``.
    """
    if trajA.grid != trajB.grid:
        raise GridMismatch("trajectories live on different grids")
    if len(trajA) != len(trajB) or not np.array_equal(trajA.times, trajB.times):
        raise GridMismatch("trajectories have different step times")
    schA, schB = schedules
    grid = trajA.grid
    vol = grid.volumes
    m = _meta(trajA, "m")
    q = trajA.meta.get("q") or 0.0
    rhs = float(np.dot(np.maximum(trajA.values[0] - trajB.values[0], 0.0), vol))
    margins = []
    for k in range(len(trajA)):
        if k > 0:
            t0, t1 = trajA.times[k - 1], trajA.times[k]
            gap = _piece_rates(grid, schA, t1, m, q) - _piece_rates(grid, schB, t1, m, q)
            rhs += float(np.sum(np.maximum(gap, 0.0))) * (t1 - t0)
        uA, uB = trajA.values[k], trajB.values[k]
        lhs = float(np.dot(np.maximum(uA - uB, 0.0), vol))
        scale = max(1.0, float(np.dot(uA, vol)), float(np.dot(uB, vol)))
        margins.append(((rhs - lhs) / scale, {"snapshot": k, "time": trajA.times[k], "lhs": lhs, "rhs": rhs}))
    return _report("l1_contraction", tol, margins, len(margins))


def check_aronson_benilan(traj, tol=1e-6, schedule=None, t_min=0.1):
    """``u_t <= u / ((1-m) t)`` with the backward difference at ``t = t_k``.

    Raises
    ------
    PreconditionError
        Unless the outer flux vanishes and every hole flux is declared and
        sampled nonincreasing in time.
    """
    schedule = schedule or _meta(traj, "schedule")
    m = _meta(traj, "m")
    t_end = traj.times[-1]
    if not schedule.sample_outer_zero(0.0, t_end):
        raise PreconditionError("Aronson-Benilan needs zero outer flux")
    if not schedule.monotone_decreasing:
        raise PreconditionError("hole fluxes are not declared monotone nonincreasing")
    if not schedule.sample_monotone(0.0, t_end):
        raise PreconditionError("hole fluxes increase on sampled times")
    margins = []
    for k in range(1, len(traj)):
        t = traj.times[k]
        if t < t_min:
            continue
        u = traj.values[k]
        ut = (u - traj.values[k - 1]) / (t - traj.times[k - 1])
        scale = max(1.0, float(np.max(u)))
        excess = (ut - u / ((1.0 - m) * t)) / scale
        i = int(np.argmax(excess))
        margins.append((-float(excess[i]), {"snapshot": k, "time": t, **_location(traj.grid, i)}))
    return _report("aronson_benilan", tol, margins, len(margins), {"t_min": t_min})


def check_barrier_sandwich(
    traj,
    lower: BarrierLower | None,
    upper: BarrierUpper | None,
    region=None,
    tol=1e-8,
    *,
    t_range=None,
    schedule=None,
    C2=None,
    required_A1=None,
):
    """Pointwise ``lower(r) <= u(r, t) <= upper(r, t)`` on cell centres in ``region``.

    ``tol`` is a float or a ``(lower_tol, upper_tol)`` pair.  When
    ``required_A1`` is given and ``upper.A1`` is smaller, the report fails and
    is flagged ``a1_conforming=False``: such an amplitude is not covered by
    the comparison argument, whatever the observed margin.

    Raises
    ------
    PreconditionError
        If ``schedule`` is given and its hole flux is not above the lower
        barrier threshold, or if ``C2`` is given and the initial data exceeds
        ``C2 r^-q``.
    """
    if lower is None and upper is None:
        raise ValueError("need at least one barrier")
    tol_lo, tol_hi = (tol, tol) if np.isscalar(tol) else tol
    barrier = lower or upper
    d1 = barrier.delta1
    grid = traj.grid
    lo_r, hi_r = region or (grid.inner, d1)
    c = grid.centers
    cells = np.where((c >= lo_r) & (c < min(hi_r, d1)))[0]
    if cells.size == 0:
        raise PreconditionError("no cells in the sandwich region")
    r = c[cells]
    if schedule is not None and lower is not None:
        m = _meta(traj, "m")
        thr = lower_flux_threshold(m, lower.q, d1)
        ts = np.linspace(0.0, traj.times[-1], 65)
        inf_g = min(schedule.hole_raw(0, t) for t in ts)
        if not inf_g > thr:
            raise PreconditionError(f"hole flux inf {inf_g} not above lower threshold {thr}")
        if grid.inner > d1 / 2:
            raise PreconditionError("hole radius must be at most delta1/2")
    if C2 is not None and upper is not None:
        cap = C2 * project(lambda rr: rr ** (-upper.q), grid)
        if np.any(traj.values[0][cells] > cap[cells] * (1 + 1e-12)):
            raise PreconditionError("initial data exceeds C2 r^-q")
    t0, t1 = t_range or (0.0, math.inf)
    lo_m, hi_m = [], []
    lo_vals = barrier_lower_value(lower, r) if lower is not None else None
    samples = 0
    for k, t in enumerate(traj.times):
        if t < t0 - 1e-12 or t > t1 + 1e-12:
            continue
        u = traj.values[k][cells]
        scale = max(1.0, float(np.max(u)))
        samples += u.size
        if lower is not None:
            mg = (u - lo_vals) / scale
            i = int(np.argmin(mg))
            lo_m.append((float(mg[i]), {"snapshot": k, "time": t, "r": float(r[i]), "side": "lower"}))
        if upper is not None:
            mg = (barrier_upper_value(upper, r, t) - u) / scale
            i = int(np.argmin(mg))
            hi_m.append((float(mg[i]), {"snapshot": k, "time": t, "r": float(r[i]), "side": "upper"}))
    worst_lo = min(lo_m, key=lambda x: x[0]) if lo_m else (math.inf, {})
    worst_hi = min(hi_m, key=lambda x: x[0]) if hi_m else (math.inf, {})
    details = {"lower_margin": _json_float(worst_lo[0]), "upper_margin": _json_float(worst_hi[0])}
    # the binding side is the one furthest below its own tolerance
    if worst_lo[0] / tol_lo <= worst_hi[0] / tol_hi:
        (worst, loc), tol_rep = worst_lo, tol_lo
    else:
        (worst, loc), tol_rep = worst_hi, tol_hi
    passed = worst >= -tol_rep
    if required_A1 is not None and upper is not None:
        conforming = upper.A1 >= required_A1 * (1 - 1e-12)
        details["a1_conforming"] = conforming
        details["required_A1"] = required_A1
        details["A1"] = upper.A1
        if not conforming:
            passed = False
            worst = min(worst, (upper.A1 - required_A1) / required_A1)
            loc = {"side": "upper", "reason": "A1 below required amplitude"}
            tol_rep = tol_hi
    return CheckReport("barrier_sandwich", tol_rep, float(worst), loc, bool(passed), samples, details)


def check_positivity(traj, t_min=0.1):
    """Minimum cell value over snapshots with ``t >= t_min``; passes iff strictly positive."""
    vol = traj.grid.volumes
    if not any(float(np.dot(u, vol)) > 0 for u in traj.values):
        return CheckReport("positivity", 0.0, 0.0, {"reason": "zero mass"}, False, 0, {"min_value": 0.0})
    margins = []
    for k, t in enumerate(traj.times):
        if t < t_min:
            continue
        u = traj.values[k]
        i = int(np.argmin(u))
        margins.append((float(u[i]), {"snapshot": k, "time": t, "cell": i}))
    rep = _report("positivity", 0.0, margins, len(margins), strict_positive=True)
    rep.details["min_value"] = rep.worst_margin
    return rep


def check_global_bound(traj, A2, delta2, tol=1e-8):
    """``u(r, t) <= A2 (1+t)^{1/(1-m)} exp(r/delta2)`` on ``r >= delta2``."""
    if A2 < 0:
        raise PreconditionError("A2 must be nonnegative")
    if not delta2 > traj.grid.inner:
        raise PreconditionError("delta2 must exceed the hole radius")
    if not np.all(np.isfinite(traj.values[0])):
        raise PreconditionError("initial data must be bounded")
    m = _meta(traj, "m")
    c = traj.grid.centers
    cells = np.where(c >= delta2)[0]
    margins = []
    for k, t in enumerate(traj.times):
        u = traj.values[k][cells]
        bound = global_bound_value(A2, m, delta2, c[cells], t)
        scale = max(1.0, float(np.max(u)))
        mg = (bound - u) / scale
        i = int(np.argmin(mg))
        margins.append((float(mg[i]), {"snapshot": k, "time": t, "r": float(c[cells][i])}))
    return _report("global_bound", tol, margins, len(margins) * cells.size, {"A2": A2, "delta2": delta2})


def sup_on_sphere(traj, radius):
    """Largest value over time in the cell containing ``radius``."""
    k = int(np.searchsorted(traj.grid.faces, radius) - 1)
    k = min(max(k, 0), traj.grid.size - 1)
    return float(max(u[k] for u in traj.values))


def check_clamp_insensitivity(trajA, trajB, tol=1e-8, mobilities=None):
    """Sup-norm distance of two runs that differ only in inactive clamp windows.

    Raises
    ------
    PreconditionError
        If ``mobilities`` are given and some value of either run has
        ``u^m`` outside a clamp window.
    """
    if trajA.grid != trajB.grid or not np.array_equal(trajA.times, trajB.times):
        raise GridMismatch("runs must share grid and step times")
    if mobilities is not None:
        mA = _meta(trajA, "m")
        for traj in (trajA, trajB):
            lo = min(float(np.min(u)) for u in traj.values) ** mA
            hi = max(float(np.max(u)) for u in traj.values) ** mA
            for H in mobilities:
                if not H.inside_window(np.array([lo, hi])):
                    raise PreconditionError(
                        f"value range [{lo:.3g}, {hi:.3g}] of u^m leaves clamp window of {H}"
                    )
    margins = []
    for k, t in enumerate(trajA.times):
        d = np.abs(trajA.values[k] - trajB.values[k])
        i = int(np.argmax(d))
        margins.append((-float(d[i]), {"snapshot": k, "time": t, "cell": i}))
    return _report("clamp_insensitivity", tol, margins, len(margins))
