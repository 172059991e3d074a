import numpy as np
import pytest

from fastdiff.flux import ConstantFlux, DecayingFlux, FluxSchedule
from fastdiff.model import ProblemSpec, alpha_flux
from fastdiff.radial import BareMobility, StepperConfig, build_radial_grid, integrate, project


@pytest.fixture(scope="session")
def spec():
    return ProblemSpec()


@pytest.fixture(scope="session")
def alpha(spec):
    return alpha_flux(spec.m, spec.q, spec.delta1)


@pytest.fixture(scope="session")
def std_grid(spec):
    return build_radial_grid(spec.delta, spec.outer_radius, 400, "geometric")


@pytest.fixture(scope="session")
def std_schedule(alpha):
    return FluxSchedule(ConstantFlux(0.0), (ConstantFlux(alpha),), "paper_scaled")


@pytest.fixture(scope="session")
def std_run(spec, std_grid, std_schedule):
    """Standard configuration, constant unscaled hole flux alpha, t in [0, 1]."""
    u0 = project(spec.profile(), std_grid)
    return integrate(std_grid, u0, std_schedule, BareMobility(spec.m), StepperConfig(), 1.0, q=spec.q)


@pytest.fixture(scope="session")
def decaying_run(spec, std_grid, alpha):
    sched = FluxSchedule(ConstantFlux(0.0), (DecayingFlux(alpha, 0.5),), "paper_scaled")
    u0 = project(spec.profile(), std_grid)
    return integrate(std_grid, u0, sched, BareMobility(spec.m), StepperConfig(), 1.0, q=spec.q)


@pytest.fixture
def small_grid():
    return build_radial_grid(0.1, 1.0, 60, "geometric")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
