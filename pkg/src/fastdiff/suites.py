"""Randomized and refinement studies built on the radial solver.

``run_contraction_suite`` draws seeded ordered pairs of bounded data and
flux schedules and applies the L1 comparison check in both orientations.
``spatial_convergence`` and ``temporal_convergence`` measure observed orders
on a zero-flux benchmark with smooth bounded data.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .flux import ConstantFlux, FluxSchedule, random_piecewise, shifted
from .radial import BareMobility, RadialGrid, StepperConfig, build_radial_grid, integrate, project
from .verify import CheckReport, check_l1_contraction


@dataclass(frozen=True)
class PairSetup:
    seed: int
    n: int = 3
    m: float = 1.0 / 3.0
    delta: float = 0.1
    R: float = 1.0
    N: int = 100
    t_end: float = 0.5
    dt: float = 0.01
    pieces: int = 5


def _bumps(rng, k, amp):
    centres = rng.uniform(0.15, 0.95, size=k)
    widths = rng.uniform(0.05, 0.2, size=k)
    amps = rng.uniform(0.0, amp, size=k)

    def f(r):
        r = np.asarray(r, dtype=float)
        return sum(a * np.exp(-(((r - c) / w) ** 2)) for a, c, w in zip(amps, centres, widths))

    return f


def random_ordered_pair(setup: PairSetup, grid: RadialGrid):
    """Data and schedules with ``u0A <= u0B`` and every flux of A at most that of B."""
    rng = np.random.default_rng(setup.seed)
    base = 0.5 + rng.uniform(0.0, 1.0)
    bump = _bumps(rng, 3, 4.0)
    gap = _bumps(rng, 2, 1.0)
    u0A = project(lambda r: base + bump(r), grid)
    u0B = u0A + project(gap, grid)
    fA = random_piecewise(rng, setup.t_end, setup.pieces, 0.0, 2.0)
    gA = random_piecewise(rng, setup.t_end, setup.pieces, 0.0, 5.0)
    fB = shifted(fA, rng.uniform(0.0, 1.0, size=setup.pieces) * (rng.random(setup.pieces) < 0.5))
    gB = shifted(gA, rng.uniform(0.0, 2.0, size=setup.pieces) * (rng.random(setup.pieces) < 0.5))
    return u0A, u0B, FluxSchedule(fA, (gA,), "raw"), FluxSchedule(fB, (gB,), "raw")


def run_contraction_pair(setup: PairSetup, tol=1e-8):
    """Both orientations of the L1 check for one seeded pair."""
    grid = build_radial_grid(setup.delta, setup.R, setup.N, "geometric", n=setup.n)
    u0A, u0B, sA, sB = random_ordered_pair(setup, grid)
    cfg = StepperConfig.fixed(setup.dt)
    H = BareMobility(setup.m)
    tA = integrate(grid, u0A, sA, H, cfg, setup.t_end)
    tB = integrate(grid, u0B, sB, H, cfg, setup.t_end)
    out = []
    for name, (a, b, s) in {"A-B": (tA, tB, (sA, sB)), "B-A": (tB, tA, (sB, sA))}.items():
        rep = check_l1_contraction(a, b, s, tol)
        rep.details.update({"seed": setup.seed, "orientation": name})
        out.append(rep)
    return out


def run_contraction_suite(pairs=100, seed=0, jobs=1, tol=1e-8, **setup_kw):
    """``pairs`` seeded ordered pairs; returns ``(summary, per_pair_reports)``."""
    setups = [PairSetup(seed=seed * 100_003 + i, **setup_kw) for i in range(pairs)]
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(run_contraction_pair, setups, [tol] * len(setups)))
    else:
        results = [run_contraction_pair(s, tol) for s in setups]
    reports = [r for pair in results for r in pair]
    worst = min(reports, key=lambda r: r.worst_margin)
    violations = sum(not r.passed for r in reports)
    summary = CheckReport(
        "l1_contraction_suite", tol, worst.worst_margin, dict(worst.location, **worst.details),
        violations == 0, sum(r.samples for r in reports), {"pairs": pairs, "seed": seed, "violations": violations},
    )
    return summary, reports


# ---------------------------------------------------------------------------
# convergence


def benchmark_profile(delta=0.1, R=1.0):
    """Smooth bounded data with zero slope at both ends."""

    def f(r):
        return 1.0 + 0.5 * np.cos(math.pi * (np.asarray(r) - delta) / (R - delta))

    return f


def _restrict(u_fine, fine: RadialGrid, coarse: RadialGrid):
    """Volume-weighted average of fine cells onto nested coarse cells."""
    k = fine.size // coarse.size
    if k * coarse.size != fine.size or not np.allclose(fine.faces[::k], coarse.faces, rtol=1e-12, atol=0):
        raise ValueError("grids are not nested")
    w = fine.volumes.reshape(coarse.size, k)
    return np.sum(u_fine.reshape(coarse.size, k) * w, axis=1) / np.sum(w, axis=1)


def _l1_error(u, ref, grid):
    return float(np.dot(np.abs(u - ref), grid.volumes))


def _orders(errors):
    return [math.log2(e0 / e1) for e0, e1 in zip(errors, errors[1:])]


def spatial_convergence(Ns=(100, 200, 400), N_ref=1600, m=1.0 / 3.0, n=3, t_end=0.2, dt=1e-3, delta=0.1, R=1.0):
    """L1 errors against the ``N_ref`` solution (same fixed time steps) and observed orders."""
    cfg = StepperConfig.fixed(dt)
    prof = benchmark_profile(delta, R)
    H = BareMobility(m)
    fine = build_radial_grid(delta, R, N_ref, "uniform", n=n)
    zero = FluxSchedule()
    ref = integrate(fine, project(prof, fine), zero, H, cfg, t_end).values[-1]
    errors = []
    for N in Ns:
        g = build_radial_grid(delta, R, N, "uniform", n=n)
        u = integrate(g, project(prof, g), zero, H, cfg, t_end).values[-1]
        errors.append(_l1_error(u, _restrict(ref, fine, g), g))
    return errors, _orders(errors)


def temporal_convergence(dts=(0.02, 0.01, 0.005), dt_ref=0.00125, N=200, m=1.0 / 3.0, n=3, t_end=0.2, delta=0.1, R=1.0):
    """L1 errors at ``t_end`` against the ``dt_ref`` solution (same grid) and observed orders."""
    prof = benchmark_profile(delta, R)
    H = BareMobility(m)
    g = build_radial_grid(delta, R, N, "uniform", n=n)
    u0 = project(prof, g)
    zero = FluxSchedule()
    ref = integrate(g, u0, zero, H, StepperConfig.fixed(dt_ref), t_end).values[-1]
    errors = [
        _l1_error(integrate(g, u0, zero, H, StepperConfig.fixed(dt), t_end).values[-1], ref, g) for dt in dts
    ]
    return errors, _orders(errors)


# ---------------------------------------------------------------------------
# planar versus radial


def planar_radial_agreement(delta=0.2, R=1.0, h=None, m=1.0 / 3.0, g=3.0, f=0.5, t_end=0.5, N=400, margin_cells=3):
    """Centred hole in a disk on the masked grid against the ``n = 2`` radial solver.

    Both runs start from :func:`benchmark_profile` with raw fluxes ``f`` and
    ``g``.  Returns a dict with the sup-relative difference at ``t_end`` over
    fluid cells at least ``margin_cells * h`` from the exact boundary, the
    largest relative gap of the mass histories, and the planar mass error.
    """
    from .model import Hole
    from .planar import Disk, build_masked_grid, project2d, radial_profile2d, solve2d
    from .verify import check_mass_balance

    h = delta / 8 if h is None else h
    prof = benchmark_profile(delta, R)
    sched = FluxSchedule(ConstantFlux(f), (ConstantFlux(g),), "raw")
    pg = build_masked_grid(Disk(R), [Hole((0.0, 0.0), delta)], h)
    stops = tuple(np.round(np.linspace(0.0, t_end, 11)[1:], 12))
    pt = solve2d(pg, project2d(radial_profile2d(prof), pg), sched, m, StepperConfig(), t_end, stop_times=stops)
    rg = build_radial_grid(delta, R, N, "uniform", n=2)
    rt = integrate(rg, project(prof, rg), sched, BareMobility(m), StepperConfig(), t_end, stop_times=stops)
    rr = np.hypot(pg.xc, pg.yc)
    keep = pg.distance_to_boundary() >= margin_cells * h
    ur = np.interp(rr[keep], rg.centers, rt.values[-1])
    up = pt.values[-1][keep]
    sup_rel = float(np.max(np.abs(up - ur)) / np.max(np.abs(ur)))
    mass_gap = max(
        abs(pt.masses[pt.index_at(t)] - rt.masses[rt.index_at(t)]) / rt.masses[rt.index_at(t)] for t in (0.0,) + stops
    )
    return {
        "sup_rel": sup_rel,
        "mass_gap": float(mass_gap),
        "mass_error": check_mass_balance(pt).details["max_relative_error"],
        "cells_compared": int(np.count_nonzero(keep)),
        "planar": pt,
        "radial": rt,
    }
