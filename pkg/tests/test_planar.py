import math

import numpy as np
import pytest

from fastdiff.errors import BadGeometry, ResolutionError, SizeMismatch
from fastdiff.flux import ConstantFlux, FluxSchedule, random_piecewise
from fastdiff.model import Hole
from fastdiff.planar import (
    Disk,
    Rectangle,
    build_masked_grid,
    mass2d,
    project2d,
    radial_profile2d,
    solve2d,
    step2d,
)
from fastdiff.radial import RadialField, StepperConfig
from fastdiff.suites import planar_radial_agreement
from fastdiff.verify import check_l1_contraction, check_mass_balance, check_positivity

M = 1.0 / 3.0


@pytest.fixture(scope="module")
def disk_grid():
    return build_masked_grid(Disk(1.0), [Hole((0.0, 0.0), 0.2)], 0.04)


@pytest.fixture(scope="module")
def two_holes():
    return build_masked_grid(Rectangle(-1.0, -0.5, 1.0, 0.5), [Hole((-0.5, 0.0), 0.1), Hole((0.5, 0.1), 0.12)], 0.02)


# -- grid -------------------------------------------------------------------


def test_hole_area_count():
    g = build_masked_grid(Rectangle(-1, -1, 1, 1), [Hole((0.0, 0.0), 0.1)], 0.02)
    assert abs(g.solid_cells_in_hole(0) - math.pi * 0.1**2 / 0.02**2) <= 3


@pytest.mark.parametrize("delta", [0.1, 0.2])
def test_fluid_area_at_eighth_radius(delta):
    h = delta / 8
    g = build_masked_grid(Disk(1.0), [Hole((0.0, 0.0), delta)], h)
    exact = math.pi * (1 - delta**2)
    assert abs(g.total_volume() - exact) / exact < 0.05
    assert mass2d(np.full(g.size, 2.0), g) == pytest.approx(2.0 * g.total_volume())


def test_perimeter_bookkeeping(two_holes):
    g = two_holes
    assert g.exact_perimeter[1] == pytest.approx(2 * math.pi * 0.1)
    assert g.exact_perimeter[0] == pytest.approx(6.0)
    # exact faces for the rectangle; staircase holes are inflated towards 4/pi
    assert g.perimeter_ratio[0] == pytest.approx(1.0)
    assert np.all((g.perimeter_ratio[1:] > 1.0) & (g.perimeter_ratio[1:] < 1.35))
    # flux weights per piece sum to one share of the exact perimeter
    for piece in range(3):
        e = np.zeros(3)
        e[piece] = 1.0
        assert np.sum(g.weights @ e) == pytest.approx(g.exact_perimeter[piece], rel=1e-12)


def test_grid_errors():
    with pytest.raises(ResolutionError):
        build_masked_grid(Disk(1.0), [Hole((0.0, 0.0), 0.1)], 0.03)
    with pytest.raises(BadGeometry):
        build_masked_grid(Disk(1.0), [Hole((2.0, 0.0), 0.1)], 0.02)
    with pytest.raises(BadGeometry):
        build_masked_grid(Disk(1.0), [Hole((0.0, 0.0), 0.2), Hole((0.25, 0.0), 0.2)], 0.02)


def test_mass2d(disk_grid, rng):
    u, v = rng.random(disk_grid.size), rng.random(disk_grid.size)
    assert mass2d(u + v, disk_grid) == pytest.approx(mass2d(u, disk_grid) + mass2d(v, disk_grid))
    with pytest.raises(SizeMismatch):
        mass2d(np.ones(5), disk_grid)


# -- solver -----------------------------------------------------------------


def test_constant_trajectory(disk_grid):
    tr = solve2d(disk_grid, np.full(disk_grid.size, 1.5), FluxSchedule(), M, t_end=0.3)
    assert all(np.allclose(u, 1.5, rtol=1e-13) for u in tr.values)


def test_step_conserves_with_flux(two_holes):
    sched = FluxSchedule(ConstantFlux(0.5), (ConstantFlux(2.0), ConstantFlux(1.0)), "raw")
    s = RadialField(np.ones(two_holes.size), 0.0)
    new = step2d(s, sched, two_holes, M, StepperConfig(), 0.05)
    injected = 0.05 * (6.0 * 0.5 + 2 * math.pi * (0.1 * 2.0 + 0.12 * 1.0))
    assert mass2d(new, two_holes) - mass2d(s, two_holes) == pytest.approx(injected, rel=1e-10)
    with pytest.raises(SizeMismatch):
        step2d(RadialField(np.ones(3), 0.0), sched, two_holes, M, StepperConfig(), 0.05)


def test_mass_identity_random_schedule(two_holes):
    rng = np.random.default_rng(4)
    sched = FluxSchedule(
        random_piecewise(rng, 0.3, 3, 0.0, 1.0),
        (random_piecewise(rng, 0.3, 3, 0.0, 4.0), random_piecewise(rng, 0.3, 3, 0.0, 4.0)),
        "raw",
    )
    tr = solve2d(two_holes, np.ones(two_holes.size), sched, M, t_end=0.3)
    rep = check_mass_balance(tr, sched, tol=10 * StepperConfig().newton_tol)
    assert rep.passed, rep.line()
    assert check_positivity(tr).passed


def test_comparison_two_holes(two_holes):
    cfg = StepperConfig.fixed(0.01)
    bump = project2d(lambda x, y: np.exp(-((x - 0.2) ** 2 + y**2) / 0.02), two_holes)
    sA = FluxSchedule(ConstantFlux(0.1), (ConstantFlux(1.0), ConstantFlux(0.5)), "raw")
    sB = FluxSchedule(ConstantFlux(0.2), (ConstantFlux(1.0), ConstantFlux(1.5)), "raw")
    a = solve2d(two_holes, 1.0 + bump, sA, M, cfg, 0.2)
    b = solve2d(two_holes, 1.2 + bump, sB, M, cfg, 0.2)
    for ua, ub in zip(a.values, b.values):
        assert np.all(ua <= ub + 10 * cfg.newton_tol * np.maximum(1.0, ub))
    assert check_l1_contraction(a, b, (sA, sB)).passed
    assert check_l1_contraction(b, a, (sB, sA)).passed


def test_radial_profile_projection(disk_grid):
    u = project2d(radial_profile2d(lambda r: r**2), disk_grid)
    r2 = disk_grid.xc**2 + disk_grid.yc**2
    # midpoint sampling of x^2 + y^2 on 3x3 points: exact mean minus h^2/54 per axis
    assert np.allclose(u, r2 + 2 * disk_grid.h**2 * (1 / 12 - 1 / 108), rtol=1e-12)


@pytest.fixture(scope="module")
def agreement():
    return planar_radial_agreement(delta=0.2, t_end=0.5)


def test_radial_agreement(agreement):
    assert agreement["sup_rel"] <= 0.05
    assert agreement["cells_compared"] > 1000


def test_mass_histories_agree(agreement):
    assert agreement["mass_gap"] <= 0.02
    assert agreement["mass_error"] <= 1e-8
