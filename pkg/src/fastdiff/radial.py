"""Implicit finite-volume solver for radial solutions on an annulus.

Solves ``u_t = r^{1-n} (r^{n-1} (u^m)_r)_r`` on ``delta <= r <= R`` with a
prescribed conormal flux on both boundaries.  Each backward-Euler step is a
nonlinear system in the cell averages ``u``; fluxes telescope, so the mass
change of a step equals the injected boundary mass up to the Newton residual.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import BadGeometry, NegativeValue, NewtonDivergence, SizeMismatch, StepFailure
from .flux import FluxSchedule

_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(6)


def sphere_area(n):
    """Surface measure of the unit sphere in R^n."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True, eq=False)
class RadialGrid:
    n: int
    faces: np.ndarray
    grading: str = "custom"

    def __post_init__(self):
        f = np.asarray(self.faces, dtype=float)
        if f.ndim != 1 or f.size < 2:
            raise BadGeometry("need at least two faces")
        if not np.all(np.diff(f) > 0) or f[0] <= 0:
            raise BadGeometry("faces must be positive and strictly increasing")
        f.setflags(write=False)
        object.__setattr__(self, "faces", f)
        omega = sphere_area(self.n)
        centers = 0.5 * (f[1:] + f[:-1])
        volumes = omega / self.n * np.diff(f**self.n)
        areas = omega * f ** (self.n - 1)
        trans = np.zeros(f.size)
        trans[1:-1] = areas[1:-1] / np.diff(centers)
        for name, arr in (("centers", centers), ("volumes", volumes), ("areas", areas), ("trans", trans)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def size(self):
        return self.faces.size - 1

    @property
    def inner(self):
        return float(self.faces[0])

    @property
    def outer(self):
        return float(self.faces[-1])

    def total_volume(self):
        return sphere_area(self.n) / self.n * (self.outer**self.n - self.inner**self.n)

    def widths(self):
        return np.diff(self.faces)

    def __eq__(self, other):
        return (
            isinstance(other, RadialGrid)
            and self.n == other.n
            and self.faces.shape == other.faces.shape
            and bool(np.all(self.faces == other.faces))
        )

    __hash__ = None


def build_radial_grid(delta, R, N, grading="uniform", n=3, ratio=None, delta1=None):
    """Faces ``delta = r_0 < ... < r_N = R``.

    ``grading="geometric"`` without ``ratio`` gives log-uniform faces (a
    constant width ratio ``(R/delta)**(1/N)``), which resolves ``r**-q``
    profiles uniformly in relative terms.  With ``ratio`` the widths grow by
    that factor from the hole outward.  Passing ``delta1`` guarantees at least
    ``N // 4`` cells in ``[delta, delta1]``.
    """
    if not (0 < delta < R):
        raise BadGeometry(f"need 0 < delta < R, got delta={delta}, R={R}")
    if N < 8:
        raise BadGeometry("need N >= 8 cells")
    if grading == "uniform":
        faces = np.linspace(delta, R, N + 1)
    elif grading == "geometric":
        if ratio is None:
            faces = np.geomspace(delta, R, N + 1)
            if delta1 is not None and delta < delta1 < R:
                inside = int(np.count_nonzero(faces[1:] <= delta1))
                if inside < N // 4:
                    n1 = N // 4
                    faces = np.concatenate(
                        [np.geomspace(delta, delta1, n1 + 1), np.geomspace(delta1, R, N - n1 + 1)[1:]]
                    )
        else:
            if ratio <= 0:
                raise BadGeometry("ratio must be positive")
            widths = ratio ** np.arange(N)
            widths *= (R - delta) / widths.sum()
            faces = delta + np.concatenate([[0.0], np.cumsum(widths)])
    else:
        raise BadGeometry(f"unknown grading {grading!r}")
    faces[0] = delta
    faces[-1] = R
    return RadialGrid(n, faces, grading)


def nested_log_faces(inner, outer, per_octave, anchor):
    """Faces ``anchor * 2**(k/per_octave)`` clipped to ``[inner, outer]``.

    Grids built with the same ``anchor`` and ``per_octave`` share every face
    away from their two ends, so fields on them can be compared cell by cell
    without interpolation.  A clipped end cell thinner than half its
    neighbour is merged into it.
    """
    k_lo = math.floor(per_octave * math.log2(inner / anchor) + 1e-9)
    k_hi = math.ceil(per_octave * math.log2(outer / anchor) - 1e-9)
    ks = np.arange(k_lo, k_hi + 1)
    faces = anchor * 2.0 ** (ks / per_octave)
    faces = faces[(faces > inner * (1 + 1e-12)) & (faces < outer * (1 - 1e-12))]
    faces = np.concatenate([[inner], faces, [outer]])
    w = np.diff(faces)
    if w.size > 2 and w[0] < 0.5 * w[1]:
        faces = np.delete(faces, 1)
    w = np.diff(faces)
    if w.size > 2 and w[-1] < 0.5 * w[-2]:
        faces = np.delete(faces, -2)
    return faces


# ---------------------------------------------------------------------------
# mobility


@dataclass(frozen=True)
class BareMobility:
    """Constitutive law ``v = u**m`` with no clamping."""

    m: float

    def H(self, s):
        s = np.asarray(s, dtype=float)
        return self.m * s ** (1.0 - 1.0 / self.m)

    def phi(self, u):
        return u**self.m

    def dphi(self, u):
        return self.m * u ** (self.m - 1.0)


@dataclass(frozen=True)
class RegularizedMobility:
    """Clamped mobility ``H(s)`` in the variable ``s = u**m``.

    ``H(s) = m s^{1-1/m}`` on ``[n1/2, 2 n2]``, constant below ``n1/4`` and
    above ``4 n2``, with monotone cubic Hermite blends in between.  The
    regularized equation ``s_t = H(s) Lap(s)`` is solved in conservative form
    ``u_t = Lap(Phi(u))`` where ``Phi`` is the inverse of
    ``beta(s) = int ds / H(s)``, normalised so ``beta(s) = s**(1/m)`` on the
    window.  Inside the window ``Phi(u) = u**m`` exactly.
    """

    m: float
    n1: float
    n2: float

    def __post_init__(self):
        if not (0 < self.n1 <= self.n2):
            raise ValueError("need 0 < n1 <= n2")

    # breakpoints in s
    @property
    def _knots(self):
        return self.n1 / 4.0, self.n1 / 2.0, 2.0 * self.n2, 4.0 * self.n2

    def _power(self, s):
        return self.m * s ** (1.0 - 1.0 / self.m)

    def _dpower(self, s):
        m = self.m
        return m * (1.0 - 1.0 / m) * s ** (-1.0 / m)

    def _hermite(self, s, a, b, ya, yb, da, db):
        h = b - a
        x = (s - a) / h
        h00 = 2 * x**3 - 3 * x**2 + 1
        h10 = x**3 - 2 * x**2 + x
        h01 = -2 * x**3 + 3 * x**2
        h11 = x**3 - x**2
        return h00 * ya + h10 * h * da + h01 * yb + h11 * h * db

    def H(self, s):
        s = np.asarray(s, dtype=float)
        a0, a1, b0, b1 = self._knots
        H_lo = self._power(a0)
        H_hi = self._power(b1)
        out = np.empty_like(s)
        lo = s <= a0
        tl = (s > a0) & (s < a1)
        win = (s >= a1) & (s <= b0)
        th = (s > b0) & (s < b1)
        hi = s >= b1
        out[lo] = H_lo
        out[hi] = H_hi
        out[win] = self._power(s[win])
        out[tl] = self._hermite(s[tl], a0, a1, H_lo, self._power(a1), 0.0, self._dpower(a1))
        out[th] = self._hermite(s[th], b0, b1, self._power(b0), H_hi, self._dpower(b0), 0.0)
        return out if out.ndim else float(out)

    def _int_inv_H(self, lo, hi):
        """``int_lo^hi ds/H(s)`` elementwise by 16-point Gauss-Legendre."""
        x, w = np.polynomial.legendre.leggauss(16)
        lo = np.asarray(lo, dtype=float)[..., None]
        hi = np.asarray(hi, dtype=float)[..., None]
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        s = mid + half * x
        return np.sum(w / self.H(s), axis=-1) * half[..., 0]

    def beta(self, s):
        s = np.asarray(s, dtype=float)
        m = self.m
        a0, a1, b0, b1 = self._knots
        beta_a1 = a1 ** (1 / m)
        beta_b0 = b0 ** (1 / m)
        beta_a0 = beta_a1 - float(self._int_inv_H(a0, a1))
        beta_b1 = beta_b0 + float(self._int_inv_H(b0, b1))
        out = np.empty_like(s)
        lo = s <= a0
        tl = (s > a0) & (s < a1)
        win = (s >= a1) & (s <= b0)
        th = (s > b0) & (s < b1)
        hi = s >= b1
        out[win] = s[win] ** (1 / m)
        out[lo] = beta_a0 - (a0 - s[lo]) / self._power(a0)
        out[hi] = beta_b1 + (s[hi] - b1) / self._power(b1)
        out[tl] = beta_a1 - self._int_inv_H(s[tl], a1)
        out[th] = beta_b0 + self._int_inv_H(b0, s[th])
        return out

    def phi(self, u):
        u = np.asarray(u, dtype=float)
        m = self.m
        a0, a1, b0, b1 = self._knots
        ba0, ba1, bb0, bb1 = self.beta(np.array([a0, a1, b0, b1]))
        out = np.empty_like(u)
        win = (u >= ba1) & (u <= bb0)
        out[win] = u[win] ** m
        lo = u <= ba0
        hi = u >= bb1
        out[lo] = a0 - (ba0 - u[lo]) * self._power(a0)
        out[hi] = b1 + (u[hi] - bb1) * self._power(b1)
        for mask, a, b in (((u > ba0) & (u < ba1), a0, a1), ((u > bb0) & (u < bb1), b0, b1)):
            if np.any(mask):
                target = u[mask]
                left = np.full(target.shape, a)
                right = np.full(target.shape, b)
                for _ in range(64):
                    mid = 0.5 * (left + right)
                    below = self.beta(mid) < target
                    left = np.where(below, mid, left)
                    right = np.where(below, right, mid)
                out[mask] = 0.5 * (left + right)
        return out

    def dphi(self, u):
        return self.H(self.phi(u))

    def inside_window(self, s):
        s = np.asarray(s, dtype=float)
        a0, a1, b0, b1 = self._knots
        return bool(np.all((s >= a1) & (s <= b0)))


def mobility_value(H, s):
    """Evaluate the mobility ``H(s)`` (bare or regularized)."""
    return H.H(s)


# ---------------------------------------------------------------------------
# state and configuration


@dataclass
class RadialField:
    values: np.ndarray
    time: float = 0.0
    newton_iters: int = 0
    inflow: tuple = (0.0, 0.0)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)


@dataclass(frozen=True)
class StepperConfig:
    """Adaptive backward-Euler controls.

    ``change_floor`` sets the absolute part of the relative-change test as a
    fraction of the domain-mean of ``u``; ``data_floor`` lifts zero initial
    cells to ``data_floor * max(u0)`` when the bare mobility is used.
    """

    dt_init: float = 1e-4
    dt_min: float = 1e-12
    dt_max: float = 0.02
    newton_tol: float = 1e-10
    newton_max_iter: int = 40
    grow: float = 1.25
    shrink: float = 0.5
    max_rel_change: float = 0.1
    easy_steps: int = 3
    easy_newton_iters: int = 6
    change_floor: float = 1e-2
    data_floor: float = 1e-12

    def __post_init__(self):
        if not (self.dt_min <= self.dt_init <= self.dt_max):
            raise ValueError("need dt_min <= dt_init <= dt_max")
        if self.newton_tol <= 0:
            raise ValueError("newton_tol must be positive")

    @classmethod
    def fixed(cls, dt, **kw):
        """Constant step ``dt`` with the change test disabled."""
        return cls(dt_init=dt, dt_min=dt, dt_max=dt, max_rel_change=math.inf, **kw)


@dataclass
class Trajectory:
    """Accepted states of one run with per-step bookkeeping.

    ``inflow_outer[k]`` and ``inflow_inner[k]`` are the boundary masses
    injected during step ``k`` (from ``times[k-1]`` to ``times[k]``); entry 0
    is zero.
    """

    grid: RadialGrid
    times: list = field(default_factory=list)
    values: list = field(default_factory=list)
    dts: list = field(default_factory=list)
    newton_iters: list = field(default_factory=list)
    inflow_outer: list = field(default_factory=list)
    inflow_inner: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, t, u, dt=0.0, iters=0, outer=0.0, inner=0.0):
        self.times.append(float(t))
        self.values.append(np.array(u, dtype=float))
        self.dts.append(float(dt))
        self.newton_iters.append(int(iters))
        self.inflow_outer.append(float(outer))
        self.inflow_inner.append(float(inner))

    def __len__(self):
        return len(self.times)

    def field(self, k):
        return RadialField(self.values[k], self.times[k])

    @property
    def masses(self):
        vol = self.grid.volumes
        return np.array([float(np.dot(u, vol)) for u in self.values])

    @property
    def cumulative_outer(self):
        return np.cumsum(self.inflow_outer)

    @property
    def cumulative_inner(self):
        return np.cumsum(self.inflow_inner)

    def index_at(self, t, tol=1e-12):
        """Index of the snapshot at time ``t`` (must exist)."""
        times = np.asarray(self.times)
        k = int(np.argmin(np.abs(times - t)))
        if abs(times[k] - t) > tol * max(1.0, abs(t)):
            raise KeyError(f"no snapshot at t={t}")
        return k

    def final(self):
        return self.field(len(self) - 1)


# ---------------------------------------------------------------------------
# operations


def project(profile, grid: RadialGrid):
    """Cell averages of a radial profile (6-point Gauss in each cell)."""
    f = grid.faces
    a = f[:-1, None]
    b = f[1:, None]
    r = 0.5 * (a + b) + 0.5 * (b - a) * _GAUSS_X
    w = _GAUSS_W * r ** (grid.n - 1)
    vals = np.asarray(profile(r.ravel()), dtype=float).reshape(r.shape)
    return np.sum(w * vals, axis=1) / np.sum(w, axis=1)


def mass(field, grid: RadialGrid):
    """Total mass ``sum u_k vol_k``."""
    u = field.values if isinstance(field, RadialField) else np.asarray(field, dtype=float)
    if u.shape != grid.volumes.shape:
        raise SizeMismatch(f"field has {u.shape}, grid has {grid.volumes.shape}")
    return float(np.dot(u, grid.volumes))


def boundary_rates(schedule: FluxSchedule, grid: RadialGrid, t, m, q=None):
    """Mass injection rates ``(outer, inner)`` at time ``t``."""
    outer = grid.areas[-1] * schedule.outer(t)
    if schedule.scaling_mode == "paper_scaled" and q is None:
        raise ValueError("paper_scaled schedules need q")
    inner = grid.areas[0] * schedule.hole(0, t, grid.inner, m, q if q is not None else 0.0)
    return float(outer), float(inner)


def boundary_inflow(schedule: FluxSchedule, grid: RadialGrid, t0, t1, m=None, q=None):
    """Injected masses ``(outer, inner)`` over ``[t0, t1]``.

    Rectangle rule at the implicit endpoint ``t1``, the same rule the stepper
    uses for one step.
    """
    if t1 < t0:
        raise ValueError("need t0 <= t1")
    if t1 == t0:
        return 0.0, 0.0
    if m is None and schedule.scaling_mode == "paper_scaled":
        raise ValueError("paper_scaled schedules need m and q")
    o, i = boundary_rates(schedule, grid, t1, m if m is not None else 1.0, q)
    return o * (t1 - t0), i * (t1 - t0)


def step(state: RadialField, schedule: FluxSchedule, grid: RadialGrid, H, cfg: StepperConfig, dt, q=None):
    """One backward-Euler step of length ``dt``.

    Raises
    ------
    NewtonDivergence
        Newton did not reach ``cfg.newton_tol`` (or produced non-finite values).
    NegativeValue
        The converged state has a non-positive cell.
    """
    u_old = state.values
    if u_old.shape != grid.volumes.shape:
        raise SizeMismatch("state does not match grid")
    if dt <= 0:
        raise ValueError("dt must be positive")
    t1 = state.time + dt
    ro, ri = boundary_rates(schedule, grid, t1, H.m, q)
    src = np.zeros(grid.size)
    src[0] += ri
    src[-1] += ro
    if isinstance(H, BareMobility):
        u, iters, status, res = kernels.newton_solve(
            u_old, u_old, grid.volumes, grid.trans, src, dt, H.m, cfg.newton_tol, cfg.newton_max_iter
        )
    else:
        u, iters, status, res = _newton_general(u_old, grid, src, dt, H, cfg)
    if status != 0:
        raise NewtonDivergence(f"Newton failed at t={t1:.6g}, dt={dt:.3g}: residual {res:.3g}")
    if np.any(u <= 0) or not np.all(np.isfinite(u)):
        raise NegativeValue(f"non-positive state at t={t1:.6g}")
    return RadialField(u, t1, iters, (ro * dt, ri * dt))


def _newton_general(u_old, grid, src, dt, H, cfg):
    u = u_old.copy()
    prev = math.inf
    last_upd = 1.0
    res = math.inf
    for it in range(1, cfg.newton_max_iter + 1):
        v = H.phi(u)
        dv = H.dphi(u)
        du, res = kernels.tridiag_update(u, u_old, v, dv, grid.volumes, grid.trans, src, dt)
        if not math.isfinite(res):
            return u, it, 2, res
        if res <= cfg.newton_tol or (it > 2 and res >= prev and last_upd <= 1e-13):
            return u, it, 0, res
        prev = res
        neg = du < 0
        lam = min(1.0, float(np.min(0.9 * u[neg] / -du[neg]))) if np.any(neg) else 1.0
        upd = lam * du
        last_upd = float(np.max(np.abs(upd) / np.abs(u)))
        u = u + upd
    return u, cfg.newton_max_iter, 1, res


def integrate(grid, u0, schedule, H, cfg=None, t_end=1.0, q=None, stop_times=(), meta=None):
    """Adaptive time stepping from ``t = 0`` to ``t_end``.

    Every accepted step is recorded.  Steps are clipped so that ``t_end`` and
    each entry of ``stop_times`` are hit exactly.

    Raises
    ------
    StepFailure
        When ``dt`` would drop below ``cfg.dt_min``.
    """
    cfg = cfg or StepperConfig()
    u0 = np.array(u0, dtype=float)
    if u0.shape != grid.volumes.shape:
        raise SizeMismatch("initial data does not match grid")
    if np.any(u0 < 0) or not np.all(np.isfinite(u0)):
        raise ValueError("initial data must be finite and nonnegative")
    if isinstance(H, BareMobility) and np.any(u0 <= 0):
        if not np.any(u0 > 0):
            raise ValueError("the bare mobility needs some positive initial data")
        # strictly positive approximating data, as in the existence construction
        u0 = np.maximum(u0, cfg.data_floor * float(np.max(u0)))
    meta = dict(meta or {})
    meta.setdefault("m", H.m)
    meta.setdefault("q", q)
    meta.setdefault("schedule", schedule)
    meta.setdefault("mobility", H)
    traj = Trajectory(grid, meta=meta)
    atol = cfg.change_floor * mass(u0, grid) / grid.total_volume()

    def advance(state, dt):
        return step(state, schedule, grid, H, cfg, dt, q=q)

    march(traj, u0, advance, cfg, t_end, stop_times, atol)
    return traj


def march(traj, u0, advance, cfg, t_end, stop_times=(), atol=0.0):
    """Adaptive backward-Euler driver shared by the radial and planar solvers.

    ``advance(state, dt)`` returns the new :class:`RadialField` or raises
    :class:`NewtonDivergence`.  A step is rejected and ``dt`` halved on
    divergence or when ``max |du| / (u_old + atol)`` exceeds
    ``cfg.max_rel_change``; ``dt`` grows after ``cfg.easy_steps`` easy steps.
    Accepted states are appended to ``traj``.
    """
    traj.append(0.0, u0)
    stops = sorted({float(s) for s in stop_times if 0 < s < t_end} | {float(t_end)})
    t = 0.0
    dt = cfg.dt_init
    easy = 0
    state = RadialField(u0, 0.0)
    for target in stops:
        while t < target:
            dt_try = min(dt, cfg.dt_max, target - t)
            if target - (t + dt_try) <= 1e-3 * dt_try:
                dt_try = target - t
            try:
                new = advance(state, dt_try)
            except NewtonDivergence:
                dt = dt_try * cfg.shrink
                easy = 0
                if dt < cfg.dt_min:
                    raise StepFailure(f"dt underflow at t={t:.6g}", t=t, dt=dt) from None
                continue
            change = float(np.max(np.abs(new.values - state.values) / (state.values + atol)))
            if change > cfg.max_rel_change:
                dt = dt_try * cfg.shrink
                easy = 0
                if dt < cfg.dt_min:
                    raise StepFailure(f"dt underflow at t={t:.6g} (change control)", t=t, dt=dt)
                continue
            t = target if dt_try == target - t else t + dt_try
            new.time = t
            traj.append(t, new.values, dt_try, new.newton_iters, *new.inflow)
            state = new
            if new.newton_iters <= cfg.easy_newton_iters and change <= 0.5 * cfg.max_rel_change:
                easy += 1
                if easy >= cfg.easy_steps:
                    dt = min(dt * cfg.grow, cfg.dt_max)
                    easy = 0
            else:
                easy = 0
    return traj


def solve(spec, grid, H=None, cfg=None, t_end=1.0, stop_times=(), u0=None):
    """Run a radial problem described by a :class:`~fastdiff.model.ProblemSpec`.

    ``H`` defaults to the bare mobility; ``u0`` (cell values) overrides the
    spec's initial profile.
    """
    H = H or BareMobility(spec.m)
    if u0 is None:
        u0 = project(spec.profile(), grid)
    meta = {"n": grid.n, "m": spec.m, "q": spec.q, "delta": grid.inner, "R": grid.outer}
    return integrate(grid, u0, spec.schedule, H, cfg, t_end, q=spec.q, stop_times=stop_times, meta=meta)


def discrete_time_derivative(traj: Trajectory, k):
    """Backward difference ``(u_k - u_{k-1}) / dt_k`` at the implicit endpoint."""
    if not 1 <= k < len(traj):
        raise IndexError(f"snapshot index {k} out of range 1..{len(traj) - 1}")
    dt = traj.times[k] - traj.times[k - 1]
    return RadialField((traj.values[k] - traj.values[k - 1]) / dt, traj.times[k])
