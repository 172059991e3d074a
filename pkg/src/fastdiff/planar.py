"""Two-dimensional masked-Cartesian finite-volume solver.

Cells of side ``h`` whose centres lie in the fluid region (inside the outer
boundary, outside every hole) carry unknowns.  Faces between fluid cells use
the 5-point flux ``v_b - v_a`` with ``v = u^m``; faces between a fluid cell
and a solid cell are boundary faces attributed to the outer boundary or to a
hole.  Boundary geometry is stair-stepped, with no cut cells.

Prescribed fluxes are applied per unit of *exact* perimeter: a boundary
piece of exact length ``P`` receives ``P * flux`` in total, distributed over
its faces in proportion to face length.  Injected mass is therefore the same
as on the smooth domain, whatever the stair-step inflation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import ndimage
from scipy.sparse.linalg import splu

from .errors import BadGeometry, NewtonDivergence, NegativeValue, ResolutionError, SizeMismatch
from .flux import FluxSchedule
from .radial import RadialField, StepperConfig, Trajectory, march


@dataclass(frozen=True)
class Disk:
    radius: float
    center: tuple = (0.0, 0.0)

    def contains(self, x, y):
        return (x - self.center[0]) ** 2 + (y - self.center[1]) ** 2 < self.radius**2

    @property
    def perimeter(self):
        return 2.0 * math.pi * self.radius

    @property
    def area(self):
        return math.pi * self.radius**2

    @property
    def bbox(self):
        cx, cy = self.center
        r = self.radius
        return cx - r, cy - r, cx + r, cy + r


@dataclass(frozen=True)
class Rectangle:
    x0: float
    y0: float
    x1: float
    y1: float

    def contains(self, x, y):
        return (x > self.x0) & (x < self.x1) & (y > self.y0) & (y < self.y1)

    @property
    def perimeter(self):
        return 2.0 * ((self.x1 - self.x0) + (self.y1 - self.y0))

    @property
    def area(self):
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    @property
    def bbox(self):
        return self.x0, self.y0, self.x1, self.y1


@dataclass(eq=False)
class MaskedGrid:
    """Fluid cells of a uniform Cartesian grid.

    ``pieces`` lists boundary pieces: index 0 is the outer boundary and
    index ``i + 1`` is hole ``i``.  ``weights`` maps per-piece flux values to
    per-cell mass rates.
    """

    outer: object
    holes: tuple
    h: float
    origin: tuple
    shape: tuple
    mask: np.ndarray
    index: np.ndarray
    xc: np.ndarray
    yc: np.ndarray
    pairs: np.ndarray
    face_cell: np.ndarray
    face_piece: np.ndarray
    exact_perimeter: np.ndarray
    weights: sp.csr_matrix = field(repr=False)
    laplacian: sp.csr_matrix = field(repr=False)

    @property
    def size(self):
        return self.xc.size

    @property
    def volumes(self):
        return np.full(self.size, self.h**2)

    def total_volume(self):
        return self.size * self.h**2

    @property
    def stair_length(self):
        """Total boundary face length per piece."""
        return np.bincount(self.face_piece, minlength=len(self.holes) + 1) * self.h

    @property
    def perimeter_ratio(self):
        """Stair-step over exact length, per piece (outer first)."""
        return self.stair_length / self.exact_perimeter

    def solid_cells_in_hole(self, i):
        """Number of grid cells whose centre lies inside hole ``i``."""
        X, Y = self._all_centres()
        hole = self.holes[i]
        return int(np.count_nonzero((X - hole.center[0]) ** 2 + (Y - hole.center[1]) ** 2 < hole.radius**2))

    def _all_centres(self):
        ny, nx = self.shape
        x = self.origin[0] + (np.arange(nx) + 0.5) * self.h
        y = self.origin[1] + (np.arange(ny) + 0.5) * self.h
        return np.meshgrid(x, y)

    def boundary_rates(self, schedule: FluxSchedule, t, m, q=None):
        """Mass injection rate of every boundary piece at time ``t``."""
        vals = np.empty(len(self.holes) + 1)
        vals[0] = schedule.outer(t)
        for i, hole in enumerate(self.holes):
            vals[i + 1] = schedule.hole(i, t, hole.radius, m, q if q is not None else 0.0)
        return vals * self.exact_perimeter

    def source(self, schedule, t, m, q=None):
        flux = self.boundary_rates(schedule, t, m, q) / self.exact_perimeter
        return self.weights @ flux

    def to_image(self, values, fill=np.nan):
        img = np.full(self.shape, fill)
        img[self.mask] = values
        return img

    def distance_to_boundary(self):
        """Distance from each fluid cell centre to the nearest exact boundary."""
        d = np.full(self.size, np.inf)
        for hole in self.holes:
            d = np.minimum(d, np.hypot(self.xc - hole.center[0], self.yc - hole.center[1]) - hole.radius)
        o = self.outer
        if isinstance(o, Disk):
            d = np.minimum(d, o.radius - np.hypot(self.xc - o.center[0], self.yc - o.center[1]))
        else:
            d = np.minimum.reduce([d, self.xc - o.x0, o.x1 - self.xc, self.yc - o.y0, o.y1 - self.yc])
        return d

    def __eq__(self, other):
        if not isinstance(other, MaskedGrid):
            return NotImplemented
        return self.h == other.h and self.shape == other.shape and np.array_equal(self.mask, other.mask)

    __hash__ = None


def build_masked_grid(outer, holes, h):
    """Rasterize ``outer`` minus the hole disks on a grid of spacing ``h``.

    ``holes`` are objects with ``center`` (2-tuple) and ``radius``.

    Raises
    ------
    ResolutionError
        If ``h >= radius / 4`` for some hole.
    BadGeometry
        If a hole is not inside the outer domain, holes overlap, or the fluid
        region is not connected.
    """
    holes = tuple(holes)
    if h <= 0:
        raise ValueError("h must be positive")
    for hole in holes:
        if len(hole.center) != 2:
            raise BadGeometry("planar holes need 2D centres")
        if not h < hole.radius / 4:
            raise ResolutionError(f"h={h} must be below radius/4={hole.radius / 4} (hole spans {2 * hole.radius / h:.1f} cells)")
        if not outer.contains(*np.asarray(hole.center, dtype=float)):
            raise BadGeometry("hole centre outside the outer domain")
    for i in range(len(holes)):
        for j in range(i + 1, len(holes)):
            gap = math.dist(holes[i].center, holes[j].center)
            if gap <= holes[i].radius + holes[j].radius:
                raise BadGeometry(f"holes {i} and {j} overlap")

    x0, y0, x1, y1 = outer.bbox
    nx = int(math.ceil((x1 - x0) / h - 1e-9))
    ny = int(math.ceil((y1 - y0) / h - 1e-9))
    # centre the raster on the bounding box
    ox = 0.5 * (x0 + x1) - 0.5 * nx * h
    oy = 0.5 * (y0 + y1) - 0.5 * ny * h
    x = ox + (np.arange(nx) + 0.5) * h
    y = oy + (np.arange(ny) + 0.5) * h
    X, Y = np.meshgrid(x, y)
    inside = outer.contains(X, Y)
    owner = np.full(X.shape, -1)
    for i, hole in enumerate(holes):
        owner[(X - hole.center[0]) ** 2 + (Y - hole.center[1]) ** 2 < hole.radius**2] = i
    fluid = inside & (owner < 0)
    labels, ncomp = ndimage.label(fluid)
    if ncomp != 1:
        raise BadGeometry(f"fluid region has {ncomp} connected components")
    for i, hole in enumerate(holes):
        ci = int((hole.center[0] - ox) // h)
        cj = int((hole.center[1] - oy) // h)
        if fluid[cj, ci]:
            raise BadGeometry(f"hole {i} does not cover its centre cell")

    index = np.full(X.shape, -1)
    index[fluid] = np.arange(np.count_nonzero(fluid))
    ncell = int(np.count_nonzero(fluid))

    pairs = []
    face_cell, face_piece = [], []
    padded_owner = np.pad(owner, 1, constant_values=-1)
    padded_fluid = np.pad(fluid, 1, constant_values=False)
    padded_index = np.pad(index, 1, constant_values=-1)
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nb_fluid = padded_fluid[1 + dj : 1 + dj + ny, 1 + di : 1 + di + nx]
        nb_index = padded_index[1 + dj : 1 + dj + ny, 1 + di : 1 + di + nx]
        nb_owner = padded_owner[1 + dj : 1 + dj + ny, 1 + di : 1 + di + nx]
        if di + dj > 0:
            both = fluid & nb_fluid
            pairs.append(np.column_stack([index[both], nb_index[both]]))
        edge = fluid & ~nb_fluid
        face_cell.append(index[edge])
        face_piece.append(nb_owner[edge] + 1)
    pairs = np.concatenate(pairs)
    face_cell = np.concatenate(face_cell)
    face_piece = np.concatenate(face_piece)

    npieces = len(holes) + 1
    exact = np.array([outer.perimeter] + [2.0 * math.pi * hole.radius for hole in holes])
    stair = np.bincount(face_piece, minlength=npieces) * h
    if np.any(stair == 0):
        raise BadGeometry("a boundary piece has no faces on the grid")
    w = sp.coo_matrix(
        (exact[face_piece] * h / stair[face_piece], (face_cell, face_piece)), shape=(ncell, npieces)
    ).tocsr()
    a, b = pairs[:, 0], pairs[:, 1]
    ones = np.ones(a.size)
    lap = sp.coo_matrix(
        (np.concatenate([ones, ones, -ones, -ones]), (np.concatenate([a, b, a, b]), np.concatenate([b, a, a, b]))),
        shape=(ncell, ncell),
    ).tocsr()
    return MaskedGrid(
        outer, holes, float(h), (ox, oy), (ny, nx), fluid, index, X[fluid], Y[fluid],
        pairs, face_cell, face_piece, exact, w, lap,
    )


def project2d(profile, grid: MaskedGrid, sub=3):
    """Cell averages of ``profile(x, y)`` by ``sub x sub`` midpoint sampling."""
    offs = (np.arange(sub) + 0.5) / sub - 0.5
    acc = np.zeros(grid.size)
    for ox in offs:
        for oy in offs:
            acc += np.asarray(profile(grid.xc + ox * grid.h, grid.yc + oy * grid.h), dtype=float)
    return acc / sub**2


def radial_profile2d(profile, center=(0.0, 0.0)):
    """Turn a profile of the distance to ``center`` into a profile of ``(x, y)``."""
    cx, cy = center

    def f(x, y):
        return profile(np.hypot(x - cx, y - cy))

    return f


def mass2d(field, grid: MaskedGrid):
    """``sum u h^2`` over fluid cells."""
    u = field.values if isinstance(field, RadialField) else np.asarray(field, dtype=float)
    if u.shape != (grid.size,):
        raise SizeMismatch(f"field has {u.shape}, grid has {grid.size} fluid cells")
    return float(np.sum(u)) * grid.h**2


def _residual(u, u_old, v, grid, src, dt):
    vol = grid.h**2
    div = grid.laplacian @ v
    F = vol * (u - u_old) - dt * (div + src)
    scale = vol * (np.abs(u) + np.abs(u_old)) + dt * (np.abs(grid.laplacian) @ np.abs(v) + np.abs(src)) + 1e-300
    return F, float(np.max(np.abs(F) / scale))


def step2d(state: RadialField, schedule: FluxSchedule, grid: MaskedGrid, m, cfg: StepperConfig, dt, q=None):
    """One backward-Euler step with Newton in ``u`` and sparse LU solves.

    Raises
    ------
    NewtonDivergence, NegativeValue
        As the radial step.
    """
    u_old = state.values
    if u_old.shape != (grid.size,):
        raise SizeMismatch("state does not match grid")
    t1 = state.time + dt
    rates = grid.boundary_rates(schedule, t1, m, q)
    src = grid.weights @ (rates / grid.exact_perimeter)
    u = u_old.copy()
    vol = grid.h**2
    prev = math.inf
    last_upd = 1.0
    for it in range(1, cfg.newton_max_iter + 1):
        v = u**m
        F, res = _residual(u, u_old, v, grid, src, dt)
        if not math.isfinite(res):
            raise NewtonDivergence(f"non-finite residual at t={t1:.6g}")
        if res <= cfg.newton_tol or (it > 2 and res >= prev and last_upd <= 1e-13):
            break
        prev = res
        J = sp.identity(grid.size, format="csc") * vol - dt * (grid.laplacian @ sp.diags(m * v / u)).tocsc()
        du = splu(J).solve(-F)
        neg = du < 0
        lam = min(1.0, float(np.min(0.9 * u[neg] / -du[neg]))) if np.any(neg) else 1.0
        upd = lam * du
        last_upd = float(np.max(np.abs(upd) / u))
        u = u + upd
    else:
        raise NewtonDivergence(f"Newton failed at t={t1:.6g}, dt={dt:.3g}: residual {res:.3g}")
    if np.any(u <= 0) or not np.all(np.isfinite(u)):
        raise NegativeValue(f"non-positive state at t={t1:.6g}")
    return RadialField(u, t1, it, (rates[0] * dt, float(np.sum(rates[1:])) * dt))


def solve2d(grid: MaskedGrid, u0, schedule: FluxSchedule, m, cfg=None, t_end=1.0, q=None, stop_times=(), meta=None):
    """Adaptive run on a masked grid; the same driver as the radial solver."""
    cfg = cfg or StepperConfig()
    u0 = np.array(u0, dtype=float)
    if u0.shape != (grid.size,):
        raise SizeMismatch("initial data does not match grid")
    if np.any(u0 < 0) or not np.all(np.isfinite(u0)):
        raise ValueError("initial data must be finite and nonnegative")
    if not np.any(u0 > 0):
        raise ValueError("the bare mobility needs some positive initial data")
    u0 = np.maximum(u0, cfg.data_floor * float(np.max(u0)))
    meta = dict(meta or {})
    meta.setdefault("m", m)
    meta.setdefault("q", q)
    meta.setdefault("schedule", schedule)
    meta.setdefault("n", 2)
    traj = Trajectory(grid, meta=meta)
    atol = cfg.change_floor * float(np.mean(u0))

    def advance(state, dt):
        return step2d(state, schedule, grid, m, cfg, dt, q=q)

    return march(traj, u0, advance, cfg, t_end, stop_times, atol)
