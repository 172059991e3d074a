"""Shrinking-hole and expanding-domain limit procedures.

Singular solutions are manufactured by solving on ``eps_j <= r <= R`` with
hole flux ``alpha / eps_j**(q m + 1)`` for a decreasing sequence ``eps_j``,
or on growing balls ``B_R`` with zero outer flux.  Grids for the different
runs share their faces on the common region so that fields are compared cell
by cell.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstraintViolation, StepFailure, WindowTooSmall
from .flux import ConstantFlux, FluxSchedule
from .model import (
    BarrierLower,
    BarrierUpper,
    ProblemSpec,
    alpha_flux,
    barrier_upper_coefficient,
    hole_separation,
    shrink_bound,
    validate_spec,
)
from .radial import BareMobility, RadialGrid, StepperConfig, integrate, nested_log_faces, project
from .verify import check_barrier_sandwich, check_mass_balance


@dataclass(frozen=True)
class ShrinkSchedule:
    eps: tuple
    alpha: float
    rule: str = "paper_scaled"

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps)
        if not eps or any(e <= 0 for e in eps):
            raise ValueError("radii must be positive")
        if any(b > a for a, b in zip(eps, eps[1:])):
            raise ValueError("radii must be nonincreasing")
        object.__setattr__(self, "eps", eps)

    def flux_schedule(self, outer=None):
        return FluxSchedule(outer or ConstantFlux(0.0), (ConstantFlux(self.alpha),), self.rule, True)


@dataclass(frozen=True)
class GridPolicy:
    """Nested log-spaced faces: ``per_octave`` cells per factor 2 in radius.

    With ``per_octave=None`` it is derived from ``N`` cells on the base
    annulus ``[anchor, R]``.
    """

    N: int = 400
    per_octave: int | None = None

    def resolve(self, anchor, R):
        if self.per_octave is not None:
            return int(self.per_octave)
        return max(4, round(self.N * math.log(2.0) / math.log(R / anchor)))

    def grid(self, n, inner, outer, anchor, per_octave):
        return RadialGrid(n, nested_log_faces(inner, outer, per_octave, anchor), "geometric")


@dataclass
class RunSummary:
    label: str
    inner: float
    outer: float
    cells: int
    steps: int
    mass_error: float
    sandwich: dict | None = None


@dataclass
class ContinuationReport:
    kind: str
    summaries: list
    differences: list
    compare_region: tuple
    compare_times: tuple
    qhat: dict = field(default_factory=dict)
    fit_windows: dict = field(default_factory=dict)
    sandwich: list = field(default_factory=list)
    trajectories: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            "kind": self.kind,
            "runs": [vars(s) for s in self.summaries],
            "differences": list(self.differences),
            "compare_region": list(self.compare_region),
            "compare_times": list(self.compare_times),
            "qhat": {str(k): v for k, v in self.qhat.items()},
            "fit_windows": {str(k): list(v) for k, v in self.fit_windows.items()},
            "sandwich": [r.to_dict() for r in self.sandwich],
        }


def shrink_schedule(spec: ProblemSpec, j_max, ratio=0.5, eps0=None):
    """``eps_j = eps0 * ratio**j`` for ``j = 0..j_max``, all below the admissible bound.

    ``eps0`` defaults to the radius of the first hole in ``spec``.
    """
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    eps0 = spec.delta if eps0 is None else eps0
    d0 = hole_separation(spec.holes, spec.outer_radius)
    bound = shrink_bound(spec.m, spec.q, d0, spec.delta1)
    if not eps0 < bound:
        raise ConstraintViolation("eps_0 < min(delta1/2, ((1-m)q/(4+(1-m)q))^2, (1-m)q delta0/(4+(1-m)q))", eps0, bound)
    eps = tuple(eps0 * ratio**j for j in range(j_max + 1))
    return ShrinkSchedule(eps, alpha_flux(spec.m, spec.q, spec.delta1))


def fit_blowup_exponent(field, grid, r_lo, r_hi, min_cells=8):
    """Least-squares slope of ``log u`` against ``log r`` on ``[r_lo, r_hi]``, negated.

    Returns ``(qhat, rms_residual)``.
    """
    u = getattr(field, "values", field)
    c = grid.centers
    sel = (c >= r_lo) & (c <= r_hi)
    if not r_lo < r_hi or np.count_nonzero(sel) < min_cells:
        raise WindowTooSmall(f"fewer than {min_cells} cells in [{r_lo}, {r_hi}]")
    x = np.log(c[sel])
    y = np.log(u[sel])
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return float(-coef[0]), float(np.sqrt(np.mean(resid**2)))


def _run_one(args):
    grid, u0, schedule, m, q, cfg, t_end, stops, label = args
    try:
        return integrate(grid, u0, schedule, BareMobility(m), cfg, t_end, q=q, stop_times=stops, meta={"label": label})
    except StepFailure as exc:
        raise StepFailure(f"run {label}: {exc}", exc.t, exc.dt) from None


def _map(fn, items, jobs):
    if jobs and jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(it) for it in items]


def _common_cells(ga, gb, r_lo, r_hi):
    ca, cb = ga.centers, gb.centers
    ia = np.where((ca >= r_lo) & (ca <= r_hi))[0]
    ib = np.where((cb >= r_lo) & (cb <= r_hi))[0]
    if ia.size != ib.size or not np.allclose(ca[ia], cb[ib], rtol=1e-13, atol=0):
        raise ValueError("grids are not nested on the comparison region")
    return ia, ib


def pairwise_differences(trajs, r_lo, r_hi, times):
    """Sup-norm differences of consecutive runs on cells in ``[r_lo, r_hi]`` at ``times``."""
    out = []
    for a, b in zip(trajs, trajs[1:]):
        ia, ib = _common_cells(a.grid, b.grid, r_lo, r_hi)
        d = 0.0
        for t in times:
            ua = a.values[a.index_at(t)][ia]
            ub = b.values[b.index_at(t)][ib]
            d = max(d, float(np.max(np.abs(ua - ub))) if ia.size else 0.0)
        out.append(d)
    return out


def run_hole_continuation(
    spec: ProblemSpec,
    schedule: ShrinkSchedule,
    policy: GridPolicy | None = None,
    t_end=1.0,
    *,
    cfg: StepperConfig | None = None,
    sample_dt=0.05,
    compare_from=0.5,
    fit_from=0.25,
    exclude_cells=2,
    jobs=1,
    keep_trajectories=True,
):
    """Solve on ``[eps_j, R]`` for every ``eps_j`` and collect limit diagnostics.

    For each run: mass balance, the barrier sandwich on ``eps_j <= r <
    delta1`` (upper amplitude from the closed-form coefficient with
    ``sup g = alpha``), and, when the window ``[2 eps_j, delta1/4]`` holds
    enough cells, the fitted blow-up exponent at the sample times in
    ``[fit_from, t_end]``.  Consecutive runs are compared on
    ``r >= delta1/2`` at the sample times in ``[compare_from, t_end]``.
    """
    validate_spec(spec.with_(holes=(spec.holes[0].__class__(spec.holes[0].center, schedule.eps[0]),)))
    policy = policy or GridPolicy()
    cfg = cfg or StepperConfig()
    R = spec.outer_radius
    anchor = schedule.eps[0]
    per_oct = policy.resolve(anchor, R)
    profile = spec.profile()
    flux = schedule.flux_schedule(outer=spec.schedule.f)
    stops = tuple(float(s) for s in np.round(np.arange(sample_dt, t_end + 1e-12, sample_dt), 12))
    jobs_in = []
    grids = []
    for j, eps in enumerate(schedule.eps):
        g = policy.grid(spec.n, eps, R, anchor, per_oct)
        grids.append(g)
        jobs_in.append((g, project(profile, g), flux, spec.m, spec.q, cfg, t_end, stops, f"eps_{j}"))
    trajs = _map(_run_one, jobs_in, jobs)

    A1 = barrier_upper_coefficient(spec.C2, spec.m, spec.n, spec.q, schedule.alpha)
    upper = BarrierUpper(A1, spec.q, spec.m, spec.delta1)
    lower = BarrierLower(spec.C1, spec.q, spec.delta1)
    summaries, sandwiches, qhat, windows = [], [], {}, {}
    for j, (eps, tr) in enumerate(zip(schedule.eps, trajs)):
        mb = check_mass_balance(tr)
        sw = check_barrier_sandwich(
            tr, lower, upper, (eps, spec.delta1), tol=(1e-10, 1e-8), schedule=flux, C2=spec.C2, required_A1=A1
        )
        sandwiches.append(sw)
        summaries.append(
            RunSummary(f"eps_{j}", eps, R, tr.grid.size, len(tr) - 1, mb.details["max_relative_error"], sw.to_dict())
        )
        c = tr.grid.centers
        r_lo = max(2 * eps, c[exclude_cells])
        r_hi = spec.delta1 / 4
        try:
            fits = []
            for t in stops:
                if t >= fit_from - 1e-12:
                    qh, res = fit_blowup_exponent(tr.values[tr.index_at(t)], tr.grid, r_lo, r_hi)
                    fits.append((t, qh, res))
            qhat[j] = fits
            windows[j] = (r_lo, r_hi)
        except WindowTooSmall:
            pass
    cmp_times = tuple(t for t in stops if t >= compare_from - 1e-12)
    region = (spec.delta1 / 2, R)
    diffs = pairwise_differences(trajs, region[0], region[1], cmp_times)
    return ContinuationReport(
        "hole", summaries, diffs, region, cmp_times, qhat, windows, sandwiches, trajs if keep_trajectories else []
    )


def run_domain_expansion(
    spec: ProblemSpec,
    radii,
    t_end=1.0,
    *,
    policy: GridPolicy | None = None,
    cfg: StepperConfig | None = None,
    compare_region=None,
    jobs=1,
    keep_trajectories=True,
):
    """Solve with zero outer flux on balls of increasing radius.

    The hole (radius and flux rule) comes from ``spec``; consecutive runs are
    compared at ``t_end`` on ``compare_region`` (default
    ``[delta1/2, 1.5]``).
    """
    radii = [float(R) for R in radii]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be increasing")
    max_a = max(float(np.linalg.norm(h.center)) for h in spec.holes)
    if not radii[0] > 3 * max_a:
        raise ConstraintViolation("R_0 > 3 max|a_i|", radii[0], 3 * max_a, ">")
    policy = policy or GridPolicy()
    cfg = cfg or StepperConfig()
    delta = spec.delta
    per_oct = policy.resolve(delta, radii[0])
    schedule = FluxSchedule(ConstantFlux(0.0), spec.schedule.g, spec.schedule.scaling_mode)
    profile = spec.profile()
    jobs_in = []
    for R in radii:
        g = policy.grid(spec.n, delta, R, delta, per_oct)
        jobs_in.append((g, project(profile, g), schedule, spec.m, spec.q, cfg, t_end, (), f"R_{R:g}"))
    trajs = _map(_run_one, jobs_in, jobs)
    summaries = []
    for R, tr in zip(radii, trajs):
        mb = check_mass_balance(tr, schedule)
        summaries.append(RunSummary(f"R_{R:g}", delta, R, tr.grid.size, len(tr) - 1, mb.details["max_relative_error"]))
    region = compare_region or (spec.delta1 / 2, 1.5)
    diffs = pairwise_differences(trajs, region[0], region[1], (t_end,))
    return ContinuationReport(
        "domain", summaries, diffs, tuple(region), (t_end,), trajectories=trajs if keep_trajectories else []
    )
