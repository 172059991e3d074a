import numpy as np
import pytest

from fastdiff.continuation import (
    GridPolicy,
    ShrinkSchedule,
    fit_blowup_exponent,
    pairwise_differences,
    run_domain_expansion,
    run_hole_continuation,
    shrink_schedule,
)
from fastdiff.errors import ConstraintViolation, WindowTooSmall
from fastdiff.model import BarrierLower, Hole, alpha_flux, barrier_lower_value, shrink_bound
from fastdiff.radial import build_radial_grid


class ExpProfile:
    """Data that varies out to large radii, so the outer boundary matters."""

    def __call__(self, r):
        return 1.0 + 3.0 * np.exp(-np.asarray(r, dtype=float))


# -- schedules ------------------------------------------------------------------


def test_shrink_bound_standard():
    # min(0.2, (3/7)^2, 3*0.5/7) computed by hand
    assert shrink_bound(1 / 3, 4.5, 0.5, 0.4) == pytest.approx(9 / 49, rel=1e-14)


def test_shrink_schedule_halving(spec):
    s = shrink_schedule(spec, 5, 0.5)
    assert len(s.eps) == 6
    assert np.allclose(np.array(s.eps[:-1]) / np.array(s.eps[1:]), 2.0, rtol=1e-14)
    assert s.eps[0] == spec.delta
    assert s.alpha == pytest.approx(alpha_flux(spec.m, spec.q, spec.delta1))


def test_shrink_schedule_errors(spec):
    with pytest.raises(ConstraintViolation):
        shrink_schedule(spec, 3, eps0=0.19)
    shrink_schedule(spec, 3, eps0=0.18)
    for ratio in (0.0, 1.0, 1.5):
        with pytest.raises(ValueError):
            shrink_schedule(spec, 3, ratio)
    with pytest.raises(ValueError):
        ShrinkSchedule((0.1, 0.2), 1.0)
    with pytest.raises(ValueError):
        ShrinkSchedule((), 1.0)


def test_grid_policy_nesting():
    pol = GridPolicy(N=200)
    k = pol.resolve(0.1, 1.0)
    assert k == round(200 * np.log(2) / np.log(10))
    a = pol.grid(3, 0.1, 1.0, 0.1, k)
    b = pol.grid(3, 0.05, 1.0, 0.1, k)
    assert np.all(np.isin(a.faces, b.faces))
    assert GridPolicy(per_octave=17).resolve(0.1, 1.0) == 17


# -- exponent fit ---------------------------------------------------------------


def test_fit_exact_power_law():
    g = build_radial_grid(0.01, 1.0, 200, "geometric")
    q, res = fit_blowup_exponent(g.centers**-4.5, g, 0.02, 0.1)
    assert q == pytest.approx(4.5, abs=1e-10) and res < 1e-10


def test_fit_constant_field():
    g = build_radial_grid(0.01, 1.0, 200, "geometric")
    q, _ = fit_blowup_exponent(np.full(g.size, 3.0), g, 0.02, 0.1)
    assert abs(q) < 1e-12


def test_fit_lower_barrier_bias():
    # log phi = -q log r - 1/(d1^2 - r^2): the extra slope is 2 r^2 / (d1^2 - r^2)^2 in (0, max]
    q, d1, lo, hi = 4.5, 0.4, 0.02, 0.1
    g = build_radial_grid(0.01, 1.0, 400, "geometric")
    u = np.ones(g.size)
    inside = g.centers < d1
    u[inside] = barrier_lower_value(BarrierLower(1.0, q, d1), g.centers[inside])
    qh, _ = fit_blowup_exponent(u, g, lo, hi)
    assert q < qh < q + 2 * hi**2 / (d1**2 - hi**2) ** 2


def test_fit_window_too_small():
    g = build_radial_grid(0.01, 1.0, 40, "geometric")
    with pytest.raises(WindowTooSmall):
        fit_blowup_exponent(np.ones(g.size), g, 0.02, 0.025)
    with pytest.raises(WindowTooSmall):
        fit_blowup_exponent(np.ones(g.size), g, 0.1, 0.05)


# -- differences ----------------------------------------------------------------


def test_pairwise_differences_need_nested_grids(small_grid):
    from fastdiff.radial import Trajectory

    other = build_radial_grid(0.1, 1.0, 61, "geometric")
    a, b = Trajectory(small_grid), Trajectory(other)
    a.append(0.0, np.ones(small_grid.size))
    b.append(0.0, np.ones(other.size))
    with pytest.raises(ValueError):
        pairwise_differences([a, b], 0.2, 1.0, (0.0,))


def test_degenerate_schedule_gives_zero_difference(spec, alpha):
    s = ShrinkSchedule((0.1, 0.1), alpha)
    rep = run_hole_continuation(spec, s, GridPolicy(N=120), 0.5, sample_dt=0.1, compare_from=0.2)
    assert rep.differences == [0.0]


@pytest.fixture(scope="module")
def continuation(spec):
    sched = shrink_schedule(spec, 4)
    return run_hole_continuation(spec, sched, GridPolicy(N=400), 1.0)


def test_continuation_sandwich_and_mass(continuation):
    assert len(continuation.summaries) == 5
    for sw, s in zip(continuation.sandwich, continuation.summaries):
        assert sw.passed, sw.line()
        assert s.mass_error < 1e-8


def test_continuation_differences_decrease(continuation):
    d = continuation.differences
    assert all(x >= 0 for x in d)
    assert all(a > b for a, b in zip(d, d[1:]))


def test_continuation_exponent(continuation, spec):
    finest = max(continuation.qhat)
    fits = continuation.qhat[finest]
    assert fits and all(0.25 - 1e-12 <= t <= 1.0 for t, _, _ in fits)
    assert all(abs(q - spec.q) <= 0.05 * spec.q for _, q, _ in fits)
    lo, hi = continuation.fit_windows[finest]
    assert lo >= 2 * continuation.summaries[finest].inner and hi == spec.delta1 / 4


def test_continuation_report_dict(continuation):
    d = continuation.to_dict()
    assert d["kind"] == "hole" and len(d["runs"]) == 5 and len(d["differences"]) == 4
    assert d["compare_region"][0] == pytest.approx(0.2)


# -- domain expansion --------------------------------------------------------------


def test_expansion_single_radius(spec):
    rep = run_domain_expansion(spec, (2.0,), 0.2, policy=GridPolicy(N=60))
    assert rep.differences == [] and len(rep.summaries) == 1


def test_expansion_differences_decrease(spec):
    s = spec.with_(initial_data=ExpProfile())
    rep = run_domain_expansion(s, (1.0, 2.0, 4.0), 1.0, policy=GridPolicy(N=80), compare_region=(0.2, 0.9))
    d = rep.differences
    assert d[0] > 0 and d[1] < d[0]
    for summ, tr in zip(rep.summaries, rep.trajectories):
        assert summ.mass_error < 1e-8
        assert np.all(np.asarray(tr.inflow_outer) == 0.0)


def test_expansion_preconditions(spec):
    with pytest.raises(ValueError):
        run_domain_expansion(spec, (2.0, 1.5), 0.1)
    off = spec.with_(holes=(Hole((0.5, 0.0, 0.0), 0.1),))
    with pytest.raises(ConstraintViolation):
        run_domain_expansion(off, (1.2, 2.4), 0.1)
