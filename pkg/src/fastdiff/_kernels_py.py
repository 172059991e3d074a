"""Pure numpy implementation of the radial Newton kernel.

Cell equation (``G_k`` is the mass rate through interior face ``k`` toward
smaller radius, ``T_k`` the face transmissibility)::

    F_i = vol_i (u_i - uold_i) - dt (G_{i+1} - G_i + src_i),
    G_k = T_k (v_k - v_{k-1}),   v = u**m.

The Jacobian is tridiagonal and column diagonally dominant, so the Thomas
algorithm needs no pivoting.
"""
import numpy as np
from scipy.linalg import solve_banded


def _residual(u, u_old, v, vol, trans, src, dt):
    G = np.zeros(u.size + 1)
    G[1:-1] = trans[1:-1] * (v[1:] - v[:-1])
    F = vol * (u - u_old) - dt * (G[1:] - G[:-1] + src)
    scale = vol * (np.abs(u) + np.abs(u_old)) + dt * (np.abs(G[1:]) + np.abs(G[:-1]) + np.abs(src)) + 1e-300
    with np.errstate(invalid="ignore"):
        res = float(np.max(np.abs(F) / scale))
    return F, res


def _solve(u, dv, vol, trans, dt, rhs):
    n = u.size
    ab = np.zeros((3, n))
    ab[0, 1:] = -dt * trans[1:-1] * dv[1:]
    ab[1] = vol + dt * (trans[:-1] + trans[1:]) * dv
    ab[2, :-1] = -dt * trans[1:-1] * dv[:-1]
    return solve_banded((1, 1), ab, rhs, check_finite=False)


def newton_solve(u_guess, u_old, vol, trans, src, dt, m, tol, max_iter):
    u = np.array(u_guess, dtype=float, copy=True)
    prev_res = np.inf
    last_upd = 1.0
    res = 0.0
    for it in range(1, max_iter + 1):
        v = u**m
        dv = m * v / u
        F, res = _residual(u, u_old, v, vol, trans, src, dt)
        if not np.isfinite(res):
            return u, it, 2, res
        if res <= tol or (it > 2 and res >= prev_res and last_upd <= 1e-13):
            return u, it, 0, res
        if it == max_iter:
            break
        prev_res = res
        du = _solve(u, dv, vol, trans, dt, -F)
        neg = du < 0
        lam = min(1.0, float(np.min(0.9 * u[neg] / -du[neg]))) if np.any(neg) else 1.0
        step = lam * du
        last_upd = float(np.max(np.abs(step) / u))
        u += step
    return u, max_iter, 1, res


def tridiag_update(u, u_old, v, dv, vol, trans, src, dt):
    F, res = _residual(u, u_old, v, vol, trans, src, dt)
    return _solve(u, dv, vol, trans, dt, -F), res
