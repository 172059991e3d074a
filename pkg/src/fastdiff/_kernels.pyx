# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Newton kernel for the radial backward-Euler step.

Mirrors :mod:`fastdiff._kernels_py` exactly; see there for the algebra.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport pow, fabs, isfinite

cnp.import_array()


cdef void _thomas(double[::1] a, double[::1] b, double[::1] c, double[::1] d,
                  double[::1] cp, double[::1] x, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double w
    cp[0] = c[0] / b[0]
    x[0] = d[0] / b[0]
    for i in range(1, n):
        w = b[i] - a[i] * cp[i - 1]
        cp[i] = c[i] / w
        x[i] = (d[i] - a[i] * x[i - 1]) / w
    for i in range(n - 2, -1, -1):
        x[i] = x[i] - cp[i] * x[i + 1]


cdef double _residual(const double[::1] u, const double[::1] uo, const double[::1] v,
                      const double[::1] vol, const double[::1] T, const double[::1] src,
                      double dt, double[::1] F, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double gl, gr, s, worst = 0.0, r
    for i in range(n):
        gl = T[i] * (v[i] - v[i - 1]) if i > 0 else 0.0
        gr = T[i + 1] * (v[i + 1] - v[i]) if i < n - 1 else 0.0
        F[i] = vol[i] * (u[i] - uo[i]) - dt * (gr - gl + src[i])
        s = vol[i] * (fabs(u[i]) + fabs(uo[i])) + dt * (fabs(gl) + fabs(gr) + fabs(src[i])) + 1e-300
        r = fabs(F[i]) / s
        if not isfinite(r):
            return r
        if r > worst:
            worst = r
    return worst


def newton_solve(const double[::1] u_guess, const double[::1] u_old, const double[::1] vol,
                 const double[::1] trans, const double[::1] src, double dt, double m,
                 double tol, int max_iter):
    """Solve the bare-mobility backward-Euler system; returns (u, iters, status, resid)."""
    cdef Py_ssize_t n = u_old.shape[0]
    cdef Py_ssize_t i
    cdef int it, status = 1
    cdef double res = 0.0, prev_res = 1e300, lam, upd, lim
    out = np.array(u_guess, dtype=np.float64, copy=True)
    cdef double[::1] u = out
    cdef double[::1] v = np.empty(n)
    cdef double[::1] dv = np.empty(n)
    cdef double[::1] F = np.empty(n)
    cdef double[::1] a = np.empty(n)
    cdef double[::1] b = np.empty(n)
    cdef double[::1] c = np.empty(n)
    cdef double[::1] cp = np.empty(n)
    cdef double[::1] du = np.empty(n)
    cdef double last_upd = 1.0
    with nogil:
        for it in range(1, max_iter + 1):
            for i in range(n):
                v[i] = pow(u[i], m)
                dv[i] = m * v[i] / u[i]
            res = _residual(u, u_old, v, vol, trans, src, dt, F, n)
            if not isfinite(res):
                status = 2
                break
            if res <= tol or (it > 2 and res >= prev_res and last_upd <= 1e-13):
                status = 0
                break
            if it == max_iter:
                break
            prev_res = res
            for i in range(n):
                a[i] = -dt * trans[i] * dv[i - 1] if i > 0 else 0.0
                c[i] = -dt * trans[i + 1] * dv[i + 1] if i < n - 1 else 0.0
                b[i] = vol[i] + dt * (trans[i] + trans[i + 1]) * dv[i]
                F[i] = -F[i]
            _thomas(a, b, c, F, cp, du, n)
            lam = 1.0
            for i in range(n):
                if du[i] < 0.0:
                    lim = 0.9 * u[i] / (-du[i])
                    if lim < lam:
                        lam = lim
            last_upd = 0.0
            for i in range(n):
                upd = fabs(lam * du[i]) / u[i]
                if upd > last_upd:
                    last_upd = upd
                u[i] = u[i] + lam * du[i]
    return out, it, status, res


def tridiag_update(const double[::1] u, const double[::1] u_old, const double[::1] v,
                   const double[::1] dv, const double[::1] vol, const double[::1] trans,
                   const double[::1] src, double dt):
    """One Newton correction for a general constitutive law ``v = Phi(u)``.

    Returns ``(du, scaled_residual)``.
    """
    cdef Py_ssize_t n = u_old.shape[0]
    cdef Py_ssize_t i
    cdef double[::1] F = np.empty(n)
    cdef double[::1] a = np.empty(n)
    cdef double[::1] b = np.empty(n)
    cdef double[::1] c = np.empty(n)
    cdef double[::1] cp = np.empty(n)
    du_arr = np.empty(n)
    cdef double[::1] du = du_arr
    cdef double res
    with nogil:
        res = _residual(u, u_old, v, vol, trans, src, dt, F, n)
        for i in range(n):
            a[i] = -dt * trans[i] * dv[i - 1] if i > 0 else 0.0
            c[i] = -dt * trans[i + 1] * dv[i + 1] if i < n - 1 else 0.0
            b[i] = vol[i] + dt * (trans[i] + trans[i + 1]) * dv[i]
            F[i] = -F[i]
        _thomas(a, b, c, F, cp, du, n)
    return du_arr, res
