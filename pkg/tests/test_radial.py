import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fastdiff import kernels
from fastdiff.errors import BadGeometry, NegativeValue, NewtonDivergence, SizeMismatch, StepFailure
from fastdiff.flux import ConstantFlux, DecayingFlux, FluxSchedule, PiecewiseConstantFlux
from fastdiff.model import ConstantProfile
from fastdiff.radial import (
    BareMobility,
    RadialField,
    RadialGrid,
    RegularizedMobility,
    StepperConfig,
    Trajectory,
    boundary_inflow,
    boundary_rates,
    build_radial_grid,
    discrete_time_derivative,
    integrate,
    mass,
    mobility_value,
    nested_log_faces,
    project,
    solve,
    sphere_area,
    step,
)

SHELL_3D = 4 * math.pi / 3 * (1 - 1e-3)


# -- grids ------------------------------------------------------------------


def test_uniform_faces():
    g = build_radial_grid(0.1, 1.0, 10, "uniform")
    assert np.allclose(g.faces, 0.1 + 0.09 * np.arange(11), rtol=0, atol=1e-15)


@pytest.mark.parametrize("grading", ["uniform", "geometric"])
def test_volume_sum(grading):
    g = build_radial_grid(0.1, 1.0, 137, grading)
    assert g.total_volume() == pytest.approx(SHELL_3D, rel=1e-12)
    assert np.all(g.volumes > 0) and np.all(np.diff(g.faces) > 0)


def test_volume_sum_ratio_grid_and_other_dimensions():
    g = build_radial_grid(0.1, 1.0, 50, "geometric", ratio=1.05)
    assert g.total_volume() == pytest.approx(SHELL_3D, rel=1e-12)
    w = g.widths()
    assert np.allclose(w[1:] / w[:-1], 1.05)
    g2 = build_radial_grid(0.2, 1.0, 40, "uniform", n=2)
    assert g2.total_volume() == pytest.approx(math.pi * (1 - 0.04), rel=1e-12)
    assert sphere_area(3) == pytest.approx(4 * math.pi)
    assert sphere_area(2) == pytest.approx(2 * math.pi)


def test_delta1_guarantee():
    g = build_radial_grid(0.1, 10.0, 100, "geometric", delta1=0.15)
    assert np.count_nonzero(g.centers < 0.15) >= 25


@pytest.mark.parametrize("args", [(0.5, 0.5, 10), (1.0, 0.5, 10), (0.0, 1.0, 10), (0.1, 1.0, 7)])
def test_bad_geometry(args):
    with pytest.raises(BadGeometry):
        build_radial_grid(*args)


def test_unknown_grading():
    with pytest.raises(BadGeometry):
        build_radial_grid(0.1, 1.0, 20, "chebyshev")


def test_grid_arrays_read_only_and_equality():
    g = build_radial_grid(0.1, 1.0, 20, "geometric")
    with pytest.raises(ValueError):
        g.volumes[0] = 1.0
    assert g == build_radial_grid(0.1, 1.0, 20, "geometric")
    assert g != build_radial_grid(0.1, 1.0, 21, "geometric")
    assert g.trans[0] == 0 and g.trans[-1] == 0


def test_nested_faces_share_common_region():
    a = nested_log_faces(0.1, 1.0, 40, 0.1)
    b = nested_log_faces(0.025, 1.0, 40, 0.1)
    common = a[(a > 0.11) & (a < 0.95)]
    assert np.all(np.isin(common, b))


# -- mobility -----------------------------------------------------------------


def test_mobility_examples():
    H = RegularizedMobility(0.5, 0.1, 10.0)
    assert mobility_value(H, 1.0) == pytest.approx(0.5)
    tail = 0.5 * (0.1 / 4) ** (1 - 2)
    assert mobility_value(H, 0.01) == pytest.approx(tail)
    assert mobility_value(H, 0.001) == pytest.approx(tail)
    assert mobility_value(H, 1e3) == pytest.approx(0.5 * 40.0 ** (1 - 2))


def test_mobility_monotone_continuous_positive(rng):
    H = RegularizedMobility(1 / 3, 0.2, 5.0)
    s = np.sort(rng.uniform(0.0, 30.0, 10_000))
    h = mobility_value(H, s)
    assert np.all(h > 0)
    assert np.all(np.diff(h) <= 1e-12 * h[:-1])
    # continuity: the largest jump shrinks with the sampling step
    jumps = [np.abs(np.diff(mobility_value(H, np.linspace(0.01, 25.0, k)))).max() for k in (20_001, 200_001)]
    assert jumps[1] < 0.2 * jumps[0]


def test_regularized_phi_equals_power_inside_window():
    H = RegularizedMobility(1 / 3, 0.1, 10.0)
    u = np.geomspace(0.06**3, 19.0**3, 200)  # u^m inside [n1/2, 2 n2]
    assert np.allclose(H.phi(u), u ** (1 / 3), rtol=1e-13)
    assert np.all(np.diff(H.phi(np.geomspace(1e-8, 1e8, 500))) > 0)
    with pytest.raises(ValueError):
        RegularizedMobility(1 / 3, 2.0, 1.0)


# -- kernels ------------------------------------------------------------------


def _random_problem(seed, N=40):
    rng = np.random.default_rng(seed)
    g = build_radial_grid(0.1, 1.0, N, "geometric")
    u_old = rng.uniform(0.2, 3.0, N)
    src = np.zeros(N)
    src[0] = rng.uniform(0, 2)
    src[-1] = rng.uniform(0, 2)
    return g, u_old, src


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-4, 1e-1))
def test_backends_agree(seed, dt):
    try:
        cy = kernels.get_backend("cython")
    except ImportError:
        pytest.skip("compiled extension not built")
    py = kernels.get_backend("python")
    g, u_old, src = _random_problem(seed)
    a = cy.newton_solve(u_old, u_old, g.volumes, g.trans, src, dt, 1 / 3, 1e-12, 40)
    b = py.newton_solve(u_old, u_old, g.volumes, g.trans, src, dt, 1 / 3, 1e-12, 40)
    assert a[2] == b[2] == 0
    assert np.allclose(a[0], b[0], rtol=1e-12, atol=0)
    v = u_old ** (1 / 3)
    da, ra = cy.tridiag_update(u_old, u_old, v, v / (3 * u_old), g.volumes, g.trans, src, dt)
    db, rb = py.tridiag_update(u_old, u_old, v, v / (3 * u_old), g.volumes, g.trans, src, dt)
    assert np.allclose(da, db, rtol=1e-11, atol=1e-300) and ra == pytest.approx(rb, rel=1e-12)


def test_backend_selection():
    assert kernels.BACKEND in ("cython", "python")
    assert kernels.get_backend("python").newton_solve is not None
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


# -- steps --------------------------------------------------------------------


def test_constant_state_is_steady(small_grid):
    cfg = StepperConfig()
    s = RadialField(np.full(small_grid.size, 2.5), 0.0)
    new = step(s, FluxSchedule(), small_grid, BareMobility(1 / 3), cfg, 0.1)
    assert np.array_equal(new.values, s.values)
    assert new.newton_iters == 1
    new = step(s, FluxSchedule(), small_grid, RegularizedMobility(1 / 3, 0.1, 10.0), cfg, 0.1)
    assert np.allclose(new.values, s.values, rtol=1e-14)


def test_single_cell_conserves_mass():
    g = RadialGrid(3, np.array([0.1, 1.0]))
    s = RadialField(np.array([3.0]), 0.0)
    new = step(s, FluxSchedule(), g, BareMobility(1 / 3), StepperConfig(), 5.0)
    assert mass(new, g) == pytest.approx(mass(s, g), rel=1e-14)


def test_step_errors(small_grid):
    cfg = StepperConfig()
    with pytest.raises(SizeMismatch):
        step(RadialField(np.ones(3)), FluxSchedule(), small_grid, BareMobility(1 / 3), cfg, 0.1)
    with pytest.raises(ValueError):
        step(RadialField(np.ones(small_grid.size)), FluxSchedule(), small_grid, BareMobility(1 / 3), cfg, 0.0)


def test_strong_extraction_is_divergence(small_grid):
    # a large outward flux empties the outer cell: reported, never clipped
    sched = FluxSchedule(ConstantFlux(-1e6), (ConstantFlux(0.0),))
    with pytest.raises(NewtonDivergence):
        step(RadialField(np.ones(small_grid.size)), sched, small_grid, BareMobility(1 / 3), StepperConfig(), 1.0)
    assert issubclass(NegativeValue, NewtonDivergence)


def test_constant_inner_flux_mass_identity():
    g = build_radial_grid(0.1, 1.0, 200, "geometric")
    m, q, gval = 1 / 3, 4.5, 1.0
    sched = FluxSchedule(ConstantFlux(0.0), (ConstantFlux(gval),), "paper_scaled")
    traj = integrate(g, np.ones(g.size), sched, BareMobility(m), StepperConfig(), 1.0, q=q)
    g_scaled = gval / 0.1 ** (m * q + 1)
    expected = 4 * math.pi * 0.01 * g_scaled * np.asarray(traj.times)
    assert np.allclose(traj.masses - traj.masses[0], expected, rtol=1e-8, atol=0)
    # per-step identity
    dm = np.diff(traj.masses)
    inflow = np.asarray(traj.inflow_inner[1:]) + np.asarray(traj.inflow_outer[1:])
    assert np.all(np.abs(dm - inflow) <= 1e-9 * traj.masses[1:])


def test_boundary_inflow():
    g = build_radial_grid(0.1, 1.0, 20, "uniform")
    assert boundary_inflow(FluxSchedule(), g, 0.0, 1.0) == (0.0, 0.0)
    sched = FluxSchedule(ConstantFlux(0.5), (ConstantFlux(2.0),), "paper_scaled")
    o, i = boundary_inflow(sched, g, 0.2, 0.7, m=1 / 3, q=4.5)
    assert i == pytest.approx(4 * math.pi * 0.01 * 2.0 / 0.1**2.5 * 0.5)
    assert o == pytest.approx(4 * math.pi * 0.5 * 0.5)
    pw = FluxSchedule(PiecewiseConstantFlux((0.5,), (1.0, 3.0)), (ConstantFlux(0.0),))
    a = boundary_inflow(pw, g, 0.0, 0.25)
    b = boundary_inflow(pw, g, 0.25, 0.5)
    assert a[0] + b[0] == pytest.approx(boundary_inflow(pw, g, 0.0, 0.5)[0])
    with pytest.raises(ValueError):
        boundary_inflow(sched, g, 1.0, 0.5)
    with pytest.raises(ValueError):
        boundary_rates(sched, g, 0.0, 1 / 3)


# -- runs ---------------------------------------------------------------------


def test_constant_run(spec, small_grid):
    traj = solve(spec.with_(initial_data=ConstantProfile(1.0)), small_grid, t_end=0.5)
    assert traj.times[-1] == 0.5
    assert all(np.allclose(u, 1.0, rtol=1e-14) for u in traj.values)
    assert np.all(np.diff(traj.times) > 0)


def test_stop_times_are_hit(small_grid):
    traj = integrate(small_grid, np.ones(small_grid.size), FluxSchedule(), BareMobility(0.3), StepperConfig(), 1.0,
                     stop_times=(0.3, 0.7, 2.0))
    for t in (0.3, 0.7, 1.0):
        assert traj.times[traj.index_at(t)] == t
    with pytest.raises(KeyError):
        traj.index_at(0.123456)


def test_run_validation(small_grid):
    H = BareMobility(1 / 3)
    with pytest.raises(SizeMismatch):
        integrate(small_grid, np.ones(3), FluxSchedule(), H)
    with pytest.raises(ValueError):
        integrate(small_grid, -np.ones(small_grid.size), FluxSchedule(), H)
    with pytest.raises(ValueError):
        integrate(small_grid, np.zeros(small_grid.size), FluxSchedule(), H)
    with pytest.raises(ValueError):
        StepperConfig(dt_init=1.0, dt_max=0.1)
    with pytest.raises(ValueError):
        StepperConfig(newton_tol=0.0)


def test_step_failure_when_dt_cannot_shrink(small_grid):
    sched = FluxSchedule(ConstantFlux(-1e6), (ConstantFlux(0.0),))
    cfg = StepperConfig(dt_init=0.1, dt_min=0.05, dt_max=0.1)
    with pytest.raises(StepFailure) as exc:
        integrate(small_grid, np.ones(small_grid.size), sched, BareMobility(1 / 3), cfg, 1.0)
    assert exc.value.t == 0.0


def test_zero_cells_are_lifted(small_grid):
    u0 = np.ones(small_grid.size)
    u0[: small_grid.size // 2] = 0.0
    traj = integrate(small_grid, u0, FluxSchedule(), BareMobility(1 / 3), StepperConfig(), 0.2)
    assert np.all(traj.values[0] > 0)
    assert traj.masses[-1] == pytest.approx(traj.masses[0], rel=1e-12)


def test_positivity_and_cumulative_inflow(decaying_run):
    assert all(np.all(u > 0) for u in decaying_run.values)
    assert np.all(np.diff(decaying_run.cumulative_inner) >= 0)
    assert decaying_run.meta["m"] == pytest.approx(1 / 3)


def test_comparison_is_cellwise(small_grid):
    H = BareMobility(1 / 3)
    cfg = StepperConfig.fixed(0.01)
    r = small_grid.centers
    u1 = 1.0 + np.exp(-((r - 0.5) / 0.1) ** 2)
    u2 = u1 + 0.3 * np.exp(-((r - 0.3) / 0.1) ** 2)
    s1 = FluxSchedule(ConstantFlux(0.1), (DecayingFlux(1.0),))
    s2 = FluxSchedule(ConstantFlux(0.2), (DecayingFlux(1.5),))
    a = integrate(small_grid, u1, s1, H, cfg, 0.5)
    b = integrate(small_grid, u2, s2, H, cfg, 0.5)
    for ua, ub in zip(a.values, b.values):
        assert np.all(ua <= ub + 10 * 1e-10 * np.maximum(1.0, ub))


def test_refinement_trend():
    # N and N/2 against a 4x finer run: sup errors shrink like N^-2
    from fastdiff.suites import _restrict, benchmark_profile

    cfg = StepperConfig.fixed(2e-3)
    prof = benchmark_profile()
    H = BareMobility(1 / 3)

    def run(N):
        g = build_radial_grid(0.1, 1.0, N, "uniform")
        return g, integrate(g, project(prof, g), FluxSchedule(), H, cfg, 0.1).values[-1]

    gf, uf = run(400)
    errs = []
    for N in (50, 100):
        g, u = run(N)
        errs.append(np.max(np.abs(u - _restrict(uf, gf, g))))
    assert errs[0] / errs[1] > 3.0


def test_discrete_time_derivative():
    g = build_radial_grid(0.1, 1.0, 10, "uniform")
    tr = Trajectory(g)
    for k, t in enumerate([0.0, 0.1, 0.3]):
        tr.append(t, np.full(g.size, 1.0 + 2.0 * t))
    d = discrete_time_derivative(tr, 2)
    assert np.allclose(d.values, 2.0) and d.time == 0.3
    const = Trajectory(g)
    const.append(0.0, np.ones(g.size))
    const.append(0.5, np.ones(g.size))
    assert np.all(discrete_time_derivative(const, 1).values == 0)
    with pytest.raises(IndexError):
        discrete_time_derivative(tr, 0)
    with pytest.raises(IndexError):
        discrete_time_derivative(tr, 3)


def test_time_derivative_against_finer_run(small_grid):
    from fastdiff.suites import benchmark_profile

    H = BareMobility(1 / 3)
    u0 = project(benchmark_profile(), small_grid)
    coarse = integrate(small_grid, u0, FluxSchedule(), H, StepperConfig.fixed(0.01), 0.1)
    fine = integrate(small_grid, u0, FluxSchedule(), H, StepperConfig.fixed(0.001), 0.1)
    errs = []
    for t in (0.05, 0.1):
        dc = discrete_time_derivative(coarse, coarse.index_at(t)).values
        df = discrete_time_derivative(fine, fine.index_at(t)).values
        errs.append(np.max(np.abs(dc - df)) / np.max(np.abs(df)))
    assert max(errs) < 0.2


def test_mass_examples(small_grid, rng):
    g = build_radial_grid(0.1, 1.0, 30, "uniform")
    assert mass(np.ones(g.size), g) == pytest.approx(4.18460, abs=5e-6)
    assert mass(np.full(g.size, 2.0), g) == pytest.approx(2 * SHELL_3D)
    u, v = rng.random(g.size), rng.random(g.size)
    assert mass(u + v, g) == pytest.approx(mass(u, g) + mass(v, g))
    with pytest.raises(SizeMismatch):
        mass(np.ones(3), g)


def test_projection_is_exact_for_polynomials():
    g = build_radial_grid(0.1, 1.0, 7 * 8, "uniform")
    u = project(lambda r: r**2, g)
    # exact cell average of r^2 with weight r^2: (r^5/5)/(r^3/3)
    a, b = g.faces[:-1], g.faces[1:]
    exact = 3 * (b**5 - a**5) / (5 * (b**3 - a**3))
    assert np.allclose(u, exact, rtol=1e-14)
