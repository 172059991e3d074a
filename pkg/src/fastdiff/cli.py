"""Command-line interface.

Subcommands: ``solve``, ``continue``, ``expand``, ``verify``, ``barrier``
and ``sweep``.  Exit codes: 0 all checks pass, 1 some check fails,
2 configuration or I/O error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import itertools
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import apply_override, config_from_dict, parse_config, reference_config_path
from .continuation import GridPolicy, run_domain_expansion, run_hole_continuation, shrink_schedule
from .errors import FastDiffError, IoError, NewtonDivergence, PreconditionError, StepFailure
from .io import read_trajectory, write_report, write_trajectory
from .model import (
    BarrierLower,
    BarrierUpper,
    SingularProfile,
    alpha_flux,
    barrier_lower_laplacian_factor,
    barrier_upper_coefficient,
    delta1_max,
    global_bound_coefficient,
    hole_separation,
    lower_flux_threshold,
    q_min,
    shrink_bound,
    validate_spec,
)
from .radial import RadialGrid, build_radial_grid, solve
from .verify import (
    CheckReport,
    check_aronson_benilan,
    check_barrier_sandwich,
    check_global_bound,
    check_mass_balance,
    check_positivity,
    sup_on_sphere,
)

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


def _parse_tol(items):
    out = {}
    for item in items or ():
        name, sep, val = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"--tol expects NAME=VALUE, got {item!r}")
        out[name.strip()] = float(val)
    return out


def _load(args):
    cfg = parse_config(args.config or reference_config_path())
    cfg = cfg.with_tolerances(_parse_tol(args.tol))
    for note in cfg.notices:
        print(f"notice: {note}", file=sys.stderr)
    return cfg


def _out_dir(args, cfg):
    return Path(args.out or cfg.out_dir)


def _skipped(name, reason):
    return {"name": name, "passed": True, "skipped": True, "reason": str(reason)}


def _radial_grid(cfg):
    spec = cfg.spec
    return build_radial_grid(
        spec.delta, spec.outer_radius, cfg.grid.N, cfg.grid.grading, n=spec.n, delta1=spec.delta1
    )


def _upper_amplitude(spec, t_end):
    sup_g = max(spec.schedule.hole_raw(0, t) for t in np.linspace(0, t_end, 65))
    return barrier_upper_coefficient(spec.C2, spec.m, spec.n, spec.q, sup_g)


def standard_checks(traj, cfg):
    """Checks that apply to a single radial run of ``cfg``."""
    spec = cfg.spec
    tol = cfg.checks
    reports = [check_mass_balance(traj, spec.schedule, tol=tol["mass_balance"])]
    try:
        reports.append(check_aronson_benilan(traj, tol["aronson_benilan"], spec.schedule))
    except PreconditionError as exc:
        reports.append(_skipped("aronson_benilan", exc))
    reports.append(check_positivity(traj))
    if isinstance(spec.profile(), SingularProfile):
        A1 = _upper_amplitude(spec, traj.times[-1])
        try:
            reports.append(
                check_barrier_sandwich(
                    traj, BarrierLower(spec.C1, spec.q, spec.delta1), BarrierUpper(A1, spec.q, spec.m, spec.delta1),
                    tol=(tol["barrier_lower"], tol["barrier_upper"]), schedule=spec.schedule, C2=spec.C2,
                    required_A1=A1,
                )
            )
        except PreconditionError as exc:
            reports.append(_skipped("barrier_sandwich", exc))
    delta2 = spec.delta1
    if delta2 > traj.grid.inner:
        sup_f = max(spec.schedule.outer(t) for t in np.linspace(0, traj.times[-1], 65))
        M = sup_on_sphere(traj, delta2)
        A2 = global_bound_coefficient(spec.m, spec.n, delta2, sup_f, M, float(np.max(traj.values[0])))
        try:
            reports.append(check_global_bound(traj, A2, delta2, tol["global_bound"]))
        except PreconditionError as exc:
            reports.append(_skipped("global_bound", exc))
    return reports


def _passed(reports):
    return all((r.passed if isinstance(r, CheckReport) else r.get("passed", True)) for r in reports)


def _print(reports):
    for r in reports:
        if isinstance(r, CheckReport):
            print(r.line())
        elif r.get("skipped"):
            print(f"[SKIP] {r['name']}: {r['reason']}")
        else:
            print(f"[{'PASS' if r['passed'] else 'FAIL'}] {r['name']}: {r.get('summary', '')}")


def _solve_planar(cfg, out):
    from .model import Hole
    from .planar import Disk, Rectangle, build_masked_grid, project2d, solve2d

    spec = cfg.spec
    pl = cfg.planar
    holes = [Hole(tuple(h.center[:2]), h.radius) for h in spec.holes]
    h = pl.h or min(hole.radius for hole in holes) / 8
    if pl.outer == "rectangle":
        outer = Rectangle(*pl.rectangle)
    else:
        outer = Disk(pl.outer_radius or spec.outer_radius)
    grid = build_masked_grid(outer, holes, h)
    prof = spec.profile()

    def u0(x, y):
        d = np.min([np.hypot(x - hole.center[0], y - hole.center[1]) for hole in holes], axis=0)
        return prof(d)

    traj = solve2d(grid, project2d(u0, grid), spec.schedule, spec.m, cfg.stepper, cfg.t_end, q=spec.q)
    reports = [check_mass_balance(traj, spec.schedule, tol=cfg.checks["mass_balance"]), check_positivity(traj)]
    write_trajectory(traj, out)
    write_report(reports, out, {"command": "solve", "planar": True, "cells": grid.size,
                                "perimeter_ratio": grid.perimeter_ratio.tolist()})
    if cfg.plots:
        from .plots import emit_plots

        emit_plots(traj, out, timestamps=cfg.timestamps)
    _print(reports)
    return EXIT_OK if _passed(reports) else EXIT_CHECK


def cmd_solve(args):
    cfg = _load(args)
    out = _out_dir(args, cfg)
    if args.planar:
        return _solve_planar(cfg, out)
    grid = _radial_grid(cfg)
    traj = solve(cfg.spec, grid, cfg=cfg.stepper, t_end=cfg.t_end)
    reports = standard_checks(traj, cfg)
    write_trajectory(traj, out)
    write_report(reports, out, {"command": "solve", "cells": grid.size, "steps": len(traj) - 1})
    if cfg.plots:
        from .plots import emit_plots

        spec = cfg.spec
        A1 = _upper_amplitude(spec, cfg.t_end)
        emit_plots(
            traj, out, barriers=(BarrierLower(spec.C1, spec.q, spec.delta1), BarrierUpper(A1, spec.q, spec.m, spec.delta1)),
            ab_t_min=0.1 if spec.schedule.monotone_decreasing else None, timestamps=cfg.timestamps,
        )
    _print(reports)
    return EXIT_OK if _passed(reports) else EXIT_CHECK


def _ratio_report(name, diffs, factor, summary):
    ratios = [a / b if b > 0 else (math.nan if a == 0 else math.inf) for a, b in zip(diffs, diffs[1:])]
    if factor is None:
        ok = all(b <= a for a, b in zip(diffs, diffs[1:]))
        margin = min((a - b for a, b in zip(diffs, diffs[1:])), default=math.inf)
    else:
        ok = all(r >= factor for r in ratios)
        margin = min((r - factor for r in ratios), default=math.inf)
    return {
        "name": name, "passed": bool(ok), "worst_margin": margin, "differences": diffs,
        "ratios": ratios, "summary": f"{summary}; ratios {', '.join(f'{r:.3g}' for r in ratios)}",
    }


def exponent_report(rep, q, j, t_from=0.25, rel=0.05):
    series = [(t, qh) for t, qh, _ in rep.qhat.get(j, []) if t >= t_from - 1e-12]
    if not series:
        return _skipped("blowup_exponent", f"no fit window for run {j}")
    worst = min(rel * q - abs(qh - q) for _, qh in series)
    return {
        "name": "blowup_exponent", "passed": bool(worst >= 0), "worst_margin": worst,
        "series": series, "window": list(rep.fit_windows[j]),
        "summary": f"q-hat in [{min(s[1] for s in series):.4g}, {max(s[1] for s in series):.4g}], target {q:g} +/- {rel:.0%}",
    }


def cmd_continue(args):
    cfg = _load(args)
    out = _out_dir(args, cfg)
    spec = cfg.spec
    c = cfg.continuation
    sched = shrink_schedule(spec, c.j_max, c.ratio, c.eps0)
    rep = run_hole_continuation(
        spec, sched, GridPolicy(cfg.grid.N, cfg.grid.per_octave), cfg.t_end, cfg=cfg.stepper,
        sample_dt=c.sample_dt, jobs=args.jobs,
    )
    reports = list(rep.sandwich)
    reports.append(_ratio_report("continuation_cauchy", rep.differences, 1.5, "pairwise sup differences"))
    reports.append(exponent_report(rep, spec.q, len(sched.eps) - 1))
    finest = rep.trajectories[-1]
    write_trajectory(finest, out / "finest", snapshot_times=rep.compare_times[:1] + (finest.times[-1],))
    write_report(reports, out, {"command": "continue", "continuation": rep.to_dict()})
    if cfg.plots:
        from .plots import emit_plots

        A1 = barrier_upper_coefficient(spec.C2, spec.m, spec.n, spec.q, sched.alpha)
        emit_plots(
            finest, out / "finest", barriers=(BarrierLower(spec.C1, spec.q, spec.delta1), BarrierUpper(A1, spec.q, spec.m, spec.delta1)),
            qhat=rep.qhat, q=spec.q, timestamps=cfg.timestamps,
        )
    _print(reports)
    return EXIT_OK if _passed(reports) else EXIT_CHECK


def cmd_expand(args):
    cfg = _load(args)
    out = _out_dir(args, cfg)
    rep = run_domain_expansion(
        cfg.spec, cfg.radii, cfg.t_end, policy=GridPolicy(cfg.grid.N, cfg.grid.per_octave), cfg=cfg.stepper,
        jobs=args.jobs,
    )
    reports = [check_mass_balance(t, tol=cfg.checks["mass_balance"]) for t in rep.trajectories]
    for r, s in zip(reports, rep.summaries):
        r.details["run"] = s.label
    reports.append(_ratio_report("expansion_monotone", rep.differences, None, "differences on the fixed annulus"))
    for s, t in zip(rep.summaries, rep.trajectories):
        write_trajectory(t, out / s.label)
    write_report(reports, out, {"command": "expand", "expansion": rep.to_dict()})
    _print(reports)
    return EXIT_OK if _passed(reports) else EXIT_CHECK


def cmd_verify(args):
    cfg = _load(args)
    out = _out_dir(args, cfg)
    reports = []
    if args.pairs:
        from .suites import run_contraction_suite

        seed = cfg.seed if args.seed is None else args.seed
        summary, _ = run_contraction_suite(args.pairs, seed, args.jobs, cfg.checks["l1_contraction"])
        reports.append(summary)
    if args.run:
        traj = read_trajectory(args.run)
        reports.append(check_mass_balance(traj, tol=cfg.checks["mass_balance"]))
        if isinstance(traj.grid, RadialGrid) and "schedule" in traj.meta:
            try:
                reports.append(check_aronson_benilan(traj, cfg.checks["aronson_benilan"]))
            except PreconditionError as exc:
                reports.append(_skipped("aronson_benilan", exc))
        reports.append(check_positivity(traj))
    if not reports:
        raise FastDiffError("verify needs --run DIR and/or --pairs K")
    write_report(reports, out, {"command": "verify", "run": str(args.run) if args.run else None}, "verify_report.json")
    _print(reports)
    return EXIT_OK if _passed(reports) else EXIT_CHECK


def barrier_audit(spec, samples=2000):
    """Closed-form constants and sign audit of the lower-barrier subsolution inequality."""
    v = validate_spec(spec)
    m, n, q, d1 = spec.m, spec.n, spec.q, spec.delta1
    r = np.linspace(d1 * 1e-3, d1 * (1 - 1e-3), samples)
    factor = barrier_lower_laplacian_factor(m, n, q, d1, r)
    alpha = alpha_flux(m, q, d1)
    return {
        "q_min": q_min(n, m),
        "delta1_max": delta1_max(m, q),
        "delta0": hole_separation(spec.holes, spec.outer_radius),
        "alpha": alpha,
        "lower_flux_threshold": lower_flux_threshold(m, q, d1),
        "A1": barrier_upper_coefficient(spec.C2, m, n, q, alpha),
        "shrink_bound": shrink_bound(m, q, v.delta0, d1),
        "lower_laplacian_factor_min": float(np.min(factor)),
        "lower_is_subsolution": bool(np.all(factor >= 0)),
    }


def cmd_barrier(args):
    cfg = _load(args)
    audit = barrier_audit(cfg.spec)
    if args.r is not None:
        spec = cfg.spec
        lo = BarrierLower(spec.C1, spec.q, spec.delta1)
        up = BarrierUpper(audit["A1"], spec.q, spec.m, spec.delta1)
        audit["at"] = {"r": args.r, "t": args.t, "lower": lo(args.r), "upper": up(args.r, args.t)}
    print(json.dumps(audit, indent=2, sort_keys=True))
    rep = {"name": "lower_barrier_subsolution", "passed": audit["lower_is_subsolution"],
           "worst_margin": audit["lower_laplacian_factor_min"], "details": audit}
    write_report([rep], _out_dir(args, cfg), {"command": "barrier"}, "barrier_report.json")
    return EXIT_OK if audit["lower_is_subsolution"] else EXIT_CHECK


def _sweep_one(task):
    data, out = task
    try:
        cfg = config_from_dict(data)
        traj = solve(cfg.spec, _radial_grid(cfg), cfg=cfg.stepper, t_end=cfg.t_end)
        reports = standard_checks(traj, cfg)
        write_trajectory(traj, out)
        write_report(reports, out, {"command": "sweep"})
        return {"dir": str(out), "passed": _passed(reports), "status": "ok"}
    except (StepFailure, NewtonDivergence) as exc:
        return {"dir": str(out), "passed": False, "status": f"solver failure: {exc}"}
    except FastDiffError as exc:
        return {"dir": str(out), "passed": False, "status": f"configuration error: {exc}"}


def cmd_sweep(args):
    cfg = _load(args)
    out = _out_dir(args, cfg)
    if not cfg.sweep:
        raise FastDiffError("config has no [sweep] table")
    keys = sorted(cfg.sweep)
    base = {k: v for k, v in cfg.source.items() if k != "sweep"}
    tasks, combos = [], []
    for i, combo in enumerate(itertools.product(*(cfg.sweep[k] for k in keys))):
        data = base
        for k, val in zip(keys, combo):
            data = apply_override(data, k, val)
        chk = dict(data.get("checks", {}))
        chk.update(cfg.checks)
        data = dict(data, checks=chk)
        tasks.append((data, out / f"run_{i:03d}"))
        combos.append(dict(zip(keys, combo)))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(_sweep_one, tasks))
    else:
        results = [_sweep_one(t) for t in tasks]
    for c, r in zip(combos, results):
        r["parameters"] = c
        print(f"[{'PASS' if r['passed'] else 'FAIL'}] {r['dir']} {c} {r['status']}")
    write_report(
        [{"name": f"sweep_{i:03d}", **r} for i, r in enumerate(results)], out, {"command": "sweep"}, "sweep_report.json"
    )
    if any(r["status"].startswith("solver") for r in results):
        return EXIT_SOLVER
    return EXIT_OK if all(r["passed"] for r in results) else EXIT_CHECK


def build_parser():
    p = argparse.ArgumentParser(prog="fastdiff", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration (default: shipped reference)")
    common.add_argument("--out", help="output directory (default: [output].dir)")
    common.add_argument("--tol", action="append", metavar="NAME=VALUE", help="override a check tolerance")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--seed", type=int, default=None, help="seed for randomized suites")
    sub = p.add_subparsers(dest="command", required=True)
    so = sub.add_parser("solve", parents=[common], help="run one problem and its checks")
    so.add_argument("--planar", action="store_true", help="use the 2D masked-grid solver ([planar] table)")
    so.set_defaults(fn=cmd_solve)
    sub.add_parser("continue", parents=[common], help="shrinking-hole continuation").set_defaults(fn=cmd_continue)
    sub.add_parser("expand", parents=[common], help="expanding outer domain").set_defaults(fn=cmd_expand)
    v = sub.add_parser("verify", parents=[common], help="re-run checks on stored output or randomized suites")
    v.add_argument("--run", help="run directory written by solve")
    v.add_argument("--pairs", type=int, default=0, help="number of random ordered pairs for the L1 suite")
    v.set_defaults(fn=cmd_verify)
    b = sub.add_parser("barrier", parents=[common], help="evaluate and audit the closed-form barriers")
    b.add_argument("--r", type=float, default=None, help="evaluate both barriers at this radius")
    b.add_argument("--t", type=float, default=0.0)
    b.set_defaults(fn=cmd_barrier)
    sub.add_parser("sweep", parents=[common], help="parallel parameter grid").set_defaults(fn=cmd_sweep)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (StepFailure, NewtonDivergence) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (FastDiffError, argparse.ArgumentTypeError, IoError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
