"""Time-dependent Neumann data for the outer boundary and the holes.

All flux functions are picklable value objects so that schedules can be sent
to worker processes.  A flux value is the prescribed conormal derivative
``d(u^m)/d(nu)`` with ``nu`` the outward normal of the computational domain;
a positive value therefore injects mass.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


@dataclass(frozen=True)
class ConstantFlux:
    value: float = 0.0

    def __call__(self, t):
        return float(self.value)

    @property
    def monotone_decreasing(self):
        return True


@dataclass(frozen=True)
class DecayingFlux:
    """``amplitude * (1 + t) ** (-exponent)``."""

    amplitude: float
    exponent: float = 0.5

    def __call__(self, t):
        return float(self.amplitude * (1.0 + t) ** (-self.exponent))

    @property
    def monotone_decreasing(self):
        return self.exponent >= 0 or self.amplitude == 0


@dataclass(frozen=True)
class PiecewiseConstantFlux:
    """Value ``values[i]`` on ``(breaks[i], breaks[i+1]]``.

    ``breaks`` has ``len(values) - 1`` interior entries; the first interval
    starts at ``-inf`` and the last extends to ``+inf``.  Right-closed
    intervals match the implicit-endpoint time quadrature of the steppers.
    """

    breaks: tuple
    values: tuple

    def __post_init__(self):
        if len(self.values) != len(self.breaks) + 1:
            raise ValueError("need len(values) == len(breaks) + 1")
        if any(b1 <= b0 for b0, b1 in zip(self.breaks, self.breaks[1:])):
            raise ValueError("breaks must be strictly increasing")

    def __call__(self, t):
        i = int(np.searchsorted(self.breaks, t, side="left"))
        return float(self.values[i])

    @property
    def monotone_decreasing(self):
        return all(b <= a for a, b in zip(self.values, self.values[1:]))


@dataclass(frozen=True)
class LinearRampFlux:
    """``value0 + slope * t``; used to build increasing (non-monotone) controls."""

    value0: float
    slope: float

    def __call__(self, t):
        return float(self.value0 + self.slope * t)

    @property
    def monotone_decreasing(self):
        return self.slope <= 0


def _declared_monotone(fn):
    return bool(getattr(fn, "monotone_decreasing", False))


@dataclass(frozen=True)
class FluxSchedule:
    """Outer flux ``f(t)`` and per-hole fluxes ``g_i(t)``.

    With ``scaling_mode="paper_scaled"`` the hole flux actually imposed on a
    hole of radius ``delta`` is ``g_i(t) / delta**(m*q + 1)``; with ``"raw"``
    it is ``g_i(t)`` itself.

    ``monotone_decreasing`` is a declaration that every ``g_i`` is
    nonincreasing in time.  When left as ``None`` it is inferred from the
    flux objects.
    """

    f: Callable = field(default_factory=ConstantFlux)
    g: tuple = (ConstantFlux(),)
    scaling_mode: str = "raw"
    monotone_decreasing: bool | None = None

    def __post_init__(self):
        if self.scaling_mode not in ("raw", "paper_scaled"):
            raise ValueError(f"unknown scaling_mode {self.scaling_mode!r}")
        if callable(self.g):
            object.__setattr__(self, "g", (self.g,))
        else:
            object.__setattr__(self, "g", tuple(self.g))
        if self.monotone_decreasing is None:
            object.__setattr__(
                self, "monotone_decreasing", all(_declared_monotone(gi) for gi in self.g)
            )

    def outer(self, t):
        return float(self.f(t))

    def hole_raw(self, i, t):
        return float(self.g[i](t))

    def hole(self, i, t, delta, m, q):
        """Flux imposed on hole ``i`` of radius ``delta`` at time ``t``."""
        g = self.hole_raw(i, t)
        if self.scaling_mode == "paper_scaled":
            return scaled_hole_flux(g, delta, m, q)
        return g

    def hole_factor(self, delta, m, q):
        if self.scaling_mode == "paper_scaled":
            return delta ** (-(m * q + 1.0))
        return 1.0

    def sample_monotone(self, t0, t1, samples=257):
        """True when every ``g_i`` is nonincreasing on a uniform sample."""
        ts = np.linspace(t0, t1, samples)
        for gi in self.g:
            vals = np.array([gi(t) for t in ts])
            if np.any(np.diff(vals) > 1e-14 * max(1.0, np.max(np.abs(vals)))):
                return False
        return True

    def sample_outer_zero(self, t0, t1, samples=257):
        ts = np.linspace(t0, t1, samples)
        return all(self.f(t) == 0.0 for t in ts)


def scaled_hole_flux(g, delta, m, q):
    """Hole flux ``g / delta**(m q + 1)``."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    return g / delta ** (m * q + 1.0)


def zero_schedule(n_holes=1):
    return FluxSchedule(ConstantFlux(0.0), tuple(ConstantFlux(0.0) for _ in range(n_holes)))


def flux_to_dict(fn):
    """Serialize a flux object to a plain dict (for configs and reports)."""
    if isinstance(fn, ConstantFlux):
        return {"kind": "constant", "value": fn.value}
    if isinstance(fn, DecayingFlux):
        return {"kind": "decaying", "amplitude": fn.amplitude, "exponent": fn.exponent}
    if isinstance(fn, PiecewiseConstantFlux):
        return {"kind": "piecewise", "breaks": list(fn.breaks), "values": list(fn.values)}
    if isinstance(fn, LinearRampFlux):
        return {"kind": "ramp", "value0": fn.value0, "slope": fn.slope}
    raise TypeError(f"cannot serialize flux {fn!r}")


def flux_from_dict(d):
    if isinstance(d, (int, float)):
        return ConstantFlux(float(d))
    kind = d.get("kind", "constant")
    if kind == "constant":
        return ConstantFlux(float(d.get("value", 0.0)))
    if kind == "decaying":
        return DecayingFlux(float(d["amplitude"]), float(d.get("exponent", 0.5)))
    if kind == "piecewise":
        return PiecewiseConstantFlux(tuple(map(float, d["breaks"])), tuple(map(float, d["values"])))
    if kind == "ramp":
        return LinearRampFlux(float(d["value0"]), float(d["slope"]))
    raise ValueError(f"unknown flux kind {kind!r}")


def random_piecewise(rng, t_end, pieces, low, high):
    """Random piecewise-constant flux with ``pieces`` equal-length pieces."""
    breaks = tuple(float(b) for b in np.linspace(0.0, t_end, pieces + 1)[1:-1])
    values = tuple(float(v) for v in rng.uniform(low, high, size=pieces))
    return PiecewiseConstantFlux(breaks, values)


def shifted(fn: PiecewiseConstantFlux, offsets: Sequence[float]):
    """Add nonnegative per-piece offsets; returns a pointwise larger flux."""
    return PiecewiseConstantFlux(fn.breaks, tuple(v + o for v, o in zip(fn.values, offsets)))


def is_finite_schedule(schedule, t_end):
    ts = np.linspace(0.0, t_end, 33)
    vals = [schedule.outer(t) for t in ts]
    for i in range(len(schedule.g)):
        vals.extend(schedule.hole_raw(i, t) for t in ts)
    return all(math.isfinite(v) for v in vals)
