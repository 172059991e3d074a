"""Problem parameters, hypothesis checks, barriers and closed-form constants.

Everything here is plain double-precision arithmetic on immutable values.
Radial quantities take ``r = |x - a_i|``, the distance to a hole centre.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import ConstraintViolation, DomainError, EnvelopeError
from .flux import FluxSchedule, scaled_hole_flux  # noqa: F401  (re-export)

__all__ = [
    "Hole",
    "ProblemSpec",
    "ValidatedSpec",
    "SingularDataParams",
    "SingularProfile",
    "ConstantProfile",
    "BarrierUpper",
    "BarrierLower",
    "q_min",
    "delta1_max",
    "hole_separation",
    "validate_spec",
    "barrier_upper_coefficient",
    "barrier_upper_value",
    "barrier_lower_value",
    "barrier_lower_laplacian_margin",
    "lower_flux_threshold",
    "alpha_flux",
    "scaled_hole_flux",
    "make_singular_initial_data",
    "global_bound_coefficient",
    "global_bound_value",
    "shrink_bound",
]


# ---------------------------------------------------------------------------
# initial data


@dataclass(frozen=True)
class SingularDataParams:
    C1: float
    C2: float
    q: float
    delta1: float

    def lower(self, r):
        return self.C1 * _lower_shape(np.asarray(r, dtype=float), self.q, self.delta1)

    def upper(self, r):
        r = np.asarray(r, dtype=float)
        return self.C2 * r ** (-self.q)


def _lower_shape(r, q, delta1):
    """``r**-q * exp(-1/(delta1**2 - r**2))`` on ``r < delta1``, 0 beyond."""
    out = np.zeros_like(r, dtype=float)
    inside = r < delta1
    ri = r[inside]
    out[inside] = ri ** (-q) * np.exp(-1.0 / (delta1**2 - ri**2))
    return out


@dataclass(frozen=True)
class ConstantProfile:
    value: float

    def __call__(self, r):
        return np.full(np.shape(r), float(self.value))


@dataclass(frozen=True)
class SingularProfile:
    """Radial initial datum lying between the two envelopes on ``(0, delta1]``.

    ``weight`` selects the log-interpolation ``lower**(1-w) * upper**w``;
    ``w = 0.5`` is the geometric mean.  For ``r >= delta1`` the profile is the
    constant ``C2 * delta1**-q`` (upper envelope at ``delta1``).  A user
    callable, when given, replaces the interpolation on ``(0, delta1)``.
    """

    params: SingularDataParams
    weight: float = 0.5
    custom: Callable | None = None

    @property
    def outside_value(self):
        return self.params.C2 * self.params.delta1 ** (-self.params.q)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        p = self.params
        out = np.full(r.shape, self.outside_value)
        inside = r < p.delta1
        ri = r[inside]
        if self.custom is not None:
            out[inside] = np.asarray(self.custom(ri), dtype=float)
        else:
            w = self.weight
            if w == 0.0:
                out[inside] = p.lower(ri)
                return out
            if w == 1.0:
                out[inside] = p.upper(ri)
                return out
            # log form avoids 0 * inf for the geometric mean near r = delta1
            log_lower = math.log(p.C1) - p.q * np.log(ri) - 1.0 / (p.delta1**2 - ri**2)
            log_upper = math.log(p.C2) - p.q * np.log(ri)
            out[inside] = np.exp((1.0 - w) * log_lower + w * log_upper)
        return out

    def envelope_violations(self, samples=10_000):
        """Number of sample points in ``(0, delta1]`` outside the envelopes."""
        p = self.params
        r = np.linspace(p.delta1 / samples, p.delta1, samples)
        u = self(r)
        lo = p.lower(r)
        hi = p.upper(r)
        tol = 1e-12
        return int(np.count_nonzero((u < lo * (1 - tol)) | (u > hi * (1 + tol))))


def make_singular_initial_data(params: SingularDataParams, envelope_choice="geometric"):
    """Build a radial datum between ``C1/(r^q e^{1/(d1^2-r^2)})`` and ``C2/r^q``.

    Parameters
    ----------
    params : SingularDataParams
    envelope_choice : {"geometric", "lower", "upper"}, float or callable
        A float is the log-interpolation weight toward the upper envelope.
        A callable is a user profile on ``(0, delta1)``; it is checked on a
        dense sample and rejected with :class:`EnvelopeError` if it leaves
        the envelopes.

    Raises
    ------
    EnvelopeError
        If ``C1 > C2 * exp(1/delta1**2)``, i.e. the envelopes cross near 0.
    """
    p = params
    if p.C1 <= 0 or p.C2 <= 0:
        raise EnvelopeError("C1 and C2 must be positive")
    if not 0 < p.delta1:
        raise EnvelopeError("delta1 must be positive")
    # C2 * exp(1/(d1^2 - r^2)) is smallest at r = 0
    if p.C1 > p.C2 * math.exp(1.0 / p.delta1**2):
        raise EnvelopeError(
            f"envelopes cross: C1={p.C1} > C2*exp(1/delta1^2)={p.C2 * math.exp(1 / p.delta1**2)}"
        )
    if callable(envelope_choice):
        prof = SingularProfile(p, custom=envelope_choice)
        if prof.envelope_violations() > 0:
            raise EnvelopeError("user profile leaves the envelopes")
        return prof
    weights = {"geometric": 0.5, "lower": 0.0, "upper": 1.0}
    if isinstance(envelope_choice, str):
        try:
            w = weights[envelope_choice]
        except KeyError:
            raise ValueError(f"unknown envelope_choice {envelope_choice!r}") from None
    else:
        w = float(envelope_choice)
        if not 0.0 <= w <= 1.0:
            raise ValueError("envelope weight must lie in [0, 1]")
    return SingularProfile(p, weight=w)


# ---------------------------------------------------------------------------
# problem description


@dataclass(frozen=True)
class Hole:
    center: tuple
    radius: float


@dataclass(frozen=True)
class ProblemSpec:
    """Full problem description.

    The outer domain is the ball of radius ``outer_radius`` centred at the
    origin.  ``initial_data`` is a radial profile in the distance to the
    nearest hole centre.
    """

    n: int = 3
    m: float = 1.0 / 3.0
    q: float = 4.5
    p: float = 2.0
    outer_radius: float = 1.0
    holes: tuple = (Hole((0.0, 0.0, 0.0), 0.1),)
    delta1: float = 0.4
    initial_data: Callable | None = None
    schedule: FluxSchedule = field(default_factory=FluxSchedule)
    C1: float = 1.0
    C2: float = 1.0

    def with_(self, **kw):
        return replace(self, **kw)

    @property
    def delta(self):
        """Radius of the first hole (the radial solver's inner radius)."""
        return self.holes[0].radius

    def data_params(self):
        return SingularDataParams(self.C1, self.C2, self.q, self.delta1)

    def profile(self):
        if self.initial_data is not None:
            return self.initial_data
        return make_singular_initial_data(self.data_params())


@dataclass(frozen=True)
class ValidatedSpec:
    spec: ProblemSpec
    delta0: float
    alpha: float
    q_min: float
    delta1_max: float


def q_min(n, m):
    """Smallest admissible blow-up exponent ``max(n/(2m), (n-2)/m)``."""
    return max(n / (2.0 * m), (n - 2.0) / m)


def delta1_max(m, q):
    """``(1-m)q / (4 + (1-m)q)``."""
    a = (1.0 - m) * q
    return a / (4.0 + a)


def hole_separation(holes, outer_radius):
    """``min_{i,j}(dist(a_i, boundary), |a_i - a_j|) / 2`` for a ball domain."""
    centers = [np.asarray(h.center, dtype=float) for h in holes]
    vals = [outer_radius - float(np.linalg.norm(c)) for c in centers]
    for i in range(len(centers)):
        for j in range(i + 1, len(centers)):
            vals.append(float(np.linalg.norm(centers[i] - centers[j])))
    return min(vals) / 2.0


def _need(name, lhs, rhs, relation="<"):
    ok = {"<": lhs < rhs, "<=": lhs <= rhs, ">": lhs > rhs, ">=": lhs >= rhs}[relation]
    if not ok:
        raise ConstraintViolation(name, lhs, rhs, relation)


def validate_spec(spec: ProblemSpec) -> ValidatedSpec:
    """Check every hypothesis on the parameters and attach derived constants.

    Raises
    ------
    ConstraintViolation
        Naming the first violated inequality with both sides.
    """
    n, m, q = spec.n, spec.m, spec.q
    if int(n) != n:
        raise ConstraintViolation("n integer", n, int(n), "==")
    _need("n >= 3", n, 3, ">=")
    _need("m > 0", m, 0.0, ">")
    # tiny slack so m = (n-2)/n typed as a decimal is accepted
    _need("m <= (n-2)/n", m, (n - 2.0) / n * (1 + 1e-14), "<=")
    _need("p > n(1-m)/2", spec.p, n * (1.0 - m) / 2.0, ">")
    qm = q_min(n, m)
    _need("q >= max(n/(2m), (n-2)/m)", q, qm * (1 - 1e-14), ">=")
    if not spec.holes:
        raise ConstraintViolation("at least one hole", 0, 1, ">=")
    for h in spec.holes:
        if len(h.center) > n:
            raise ConstraintViolation("hole centre dimension <= n", len(h.center), n, "<=")
        _need("hole radius > 0", h.radius, 0.0, ">")
    d0 = hole_separation(spec.holes, spec.outer_radius)
    _need("delta0 > 0", d0, 0.0, ">")
    d1max = delta1_max(m, q)
    _need("delta1 > 0", spec.delta1, 0.0, ">")
    _need("delta1 < (1-m)q/(4+(1-m)q)", spec.delta1, d1max)
    _need("delta1 < delta0", spec.delta1, d0)
    # sufficient for the sign of the lower-barrier Laplacian
    _need("delta1^2 < m/2", spec.delta1**2, m / 2.0)
    for h in spec.holes:
        _need("delta < delta1/2", h.radius, spec.delta1 / 2.0)
    _need("C1 > 0", spec.C1, 0.0, ">")
    _need("C2 > 0", spec.C2, 0.0, ">")
    return ValidatedSpec(spec, d0, alpha_flux(m, q, spec.delta1), qm, d1max)


# ---------------------------------------------------------------------------
# closed-form constants


def barrier_upper_coefficient(C2, m, n, q, sup_g):
    """Amplitude of the upper barrier: the max of the three admissible terms."""
    t1 = float(C2)
    t2 = (m * (m * q * q + 2 * q + 2 * n + 4) / (1 - m)) ** (1 / (1 - m))
    t3 = (2 * max(sup_g, 0.0) / (m * q)) ** (1 / m)
    return max(t1, t2, t3)


def alpha_flux(m, q, delta1):
    """Hole flux factor ``2 m (q + 4/delta1^2)``, twice the lower-barrier threshold."""
    return 2.0 * lower_flux_threshold(m, q, delta1)


def lower_flux_threshold(m, q, delta1):
    return m * (q + 4.0 / delta1**2)


def global_bound_coefficient(m, n, delta2, sup_f, M, sup_u0, c0=1.0):
    """Amplitude of the exponential supersolution on a ball (``c0 = 1``)."""
    t1 = (m * (1 - m) * (m + n - 1) / delta2**2) ** (1 / (1 - m))
    t2 = (delta2 / (m * c0) * max(sup_f, 0.0)) ** (1 / m)
    return max(t1, t2, float(M), float(sup_u0))


def global_bound_value(A2, m, delta2, r, t):
    r = np.asarray(r, dtype=float)
    return A2 * (1.0 + t) ** (1.0 / (1.0 - m)) * np.exp(r / delta2)


def shrink_bound(m, q, delta0, delta1):
    """Upper bound on admissible shrinking-hole radii."""
    a = (1.0 - m) * q
    return min(delta1 / 2.0, a * a / (4.0 + a) ** 2, a * delta0 / (4.0 + a))


# ---------------------------------------------------------------------------
# barriers


@dataclass(frozen=True)
class BarrierUpper:
    A1: float
    q: float
    m: float
    delta1: float

    def __call__(self, r, t):
        return barrier_upper_value(self, r, t)


@dataclass(frozen=True)
class BarrierLower:
    C1: float
    q: float
    delta1: float

    def __call__(self, r, extended=True):
        return barrier_lower_value(self, r, extended=extended)


def _check_open(r, delta1):
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0) or np.any(r >= delta1):
        raise DomainError(f"radius outside (0, {delta1})")
    return r


def barrier_upper_value(b: BarrierUpper, r, t):
    """``A1 (1+t)^{1/(1-m)} / (r^q (delta1 - r)^{2/(1-m)})`` for ``0 < r < delta1``."""
    r = _check_open(r, b.delta1)
    val = b.A1 * (1.0 + t) ** (1.0 / (1.0 - b.m)) / (r**b.q * (b.delta1 - r) ** (2.0 / (1.0 - b.m)))
    return val if val.ndim else float(val)


def barrier_lower_value(b: BarrierLower, r, extended=False):
    """``C1 r^{-q} exp(-1/(delta1^2 - r^2))``.

    With ``extended=True`` the value is 0 for ``r >= delta1`` instead of an
    error; ``r <= 0`` is always an error.
    """
    r = np.asarray(r, dtype=float)
    if extended:
        if np.any(r <= 0):
            raise DomainError("radius must be positive")
    else:
        _check_open(r, b.delta1)
    val = b.C1 * _lower_shape(np.atleast_1d(r), b.q, b.delta1)
    return val.reshape(r.shape) if r.ndim else float(val[0])


def barrier_lower_laplacian_factor(m, n, q, delta1, r):
    """``Lap(phi^m) / phi^m`` for the lower barrier; its sign is that of the Laplacian.

    Free of the exponential weight, so it stays finite where ``phi^m``
    underflows near ``delta1``.
    """
    r = _check_open(r, delta1)
    D = delta1 * delta1 - r * r
    return (
        m * q * (m * q + 2 - n) / r**2
        + 4 * m * m * q / D**2
        + (2 * m / D**4) * (2 * m * r * r - 4 * r * r * D - n * D * D)
    )


def barrier_lower_laplacian_margin(b: BarrierLower, m, n, r):
    """Radial Laplacian of ``phi^m`` for the lower barrier ``phi``.

    Uses the product expansion
    ``psi^m Lap(r^{-mq}) + 2 grad(psi^m).grad(r^{-mq}) + r^{-mq} Lap(psi^m)``
    with ``psi = exp(-1/(delta1^2 - r^2))``.  Nonnegative when
    ``q >= max(n/(2m), (n-2)/m)`` and ``delta1^2 <= m/2``.
    """
    r = _check_open(r, b.delta1)
    D = b.delta1 * b.delta1 - r * r
    w = b.C1**m * r ** (-m * b.q) * np.exp(-m / D)
    with np.errstate(over="ignore", invalid="ignore"):
        bracket = barrier_lower_laplacian_factor(m, n, b.q, b.delta1, r)
        val = np.where(w == 0.0, 0.0, w * bracket)
    return val if val.ndim else float(val)
