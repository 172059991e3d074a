"""Compare the compiled and numpy Newton kernels.

Times one backward-Euler solve of the standard singular-data problem on
geometric grids of several sizes, then a full adaptive run, for each
available backend.  Also checks that both backends agree.

    python benchmarks/bench_kernels.py [--repeat 20]
"""
import argparse
import time

import numpy as np

from fastdiff import kernels
from fastdiff.flux import ConstantFlux, FluxSchedule
from fastdiff.model import ProblemSpec, alpha_flux
from fastdiff.radial import BareMobility, StepperConfig, build_radial_grid, integrate, project


def _setup(N):
    spec = ProblemSpec()
    grid = build_radial_grid(spec.delta, spec.outer_radius, N, "geometric")
    u0 = project(spec.profile(), grid)
    u0 = np.maximum(u0, 1e-12 * u0.max())
    src = np.zeros(grid.size)
    src[0] = grid.areas[0] * alpha_flux(spec.m, spec.q, spec.delta1) / spec.delta ** (spec.m * spec.q + 1)
    return spec, grid, u0, src


def time_step(backend, N, repeat):
    spec, grid, u0, src = _setup(N)
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        u, it, status, _ = backend.newton_solve(u0, u0, grid.volumes, grid.trans, src, 1e-3, spec.m, 1e-10, 40)
        best = min(best, time.perf_counter() - t)
    return best, u, it, status


def time_run(name):
    spec = ProblemSpec()
    grid = build_radial_grid(spec.delta, spec.outer_radius, 400, "geometric")
    sched = FluxSchedule(ConstantFlux(0.0), (ConstantFlux(alpha_flux(spec.m, spec.q, spec.delta1)),), "paper_scaled")
    saved = kernels.newton_solve
    kernels.newton_solve = kernels.get_backend(name).newton_solve
    try:
        t = time.perf_counter()
        traj = integrate(grid, project(spec.profile(), grid), sched, BareMobility(spec.m), StepperConfig(), 1.0, q=spec.q)
        return time.perf_counter() - t, traj
    finally:
        kernels.newton_solve = saved


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    names = ["python"]
    try:
        kernels.get_backend("cython")
        names.insert(0, "cython")
    except ImportError:
        print("compiled extension not built; timing the numpy kernel only")
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'N':>6} " + " ".join(f"{n + ' [ms]':>14}" for n in names) + "  speedup  max rel diff")
    for N in (100, 400, 1600, 6400):
        res = {n: time_step(kernels.get_backend(n), N, args.repeat) for n in names}
        row = f"{N:>6} " + " ".join(f"{res[n][0] * 1e3:>14.3f}" for n in names)
        if len(names) == 2:
            a, b = res["cython"][1], res["python"][1]
            row += f"  {res['python'][0] / res['cython'][0]:7.1f}  {np.max(np.abs(a - b) / b):.2e}"
        print(row)
    print("full adaptive run, N=400, t in [0, 1]:")
    for n in names:
        dt, traj = time_run(n)
        print(f"  {n:>7}: {dt:.3f} s, {len(traj) - 1} steps")


if __name__ == "__main__":
    main()
