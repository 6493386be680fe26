# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for box-constrained affine games.

Leaders live in boxes, followers solve ``B y - d - P x`` over boxes, and the
implicit cost is bilinear, quadratic in ``y`` or zero. Arithmetic follows
``_pykernels`` step for step.
"""

import numpy as np

from libc.math cimport sqrt, log, ceil, isfinite

NAME = "compiled"

DEF COST_ZERO = 0
DEF COST_BILINEAR = 1
DEF COST_QUADRATIC = 2


cdef class CPack:
    cdef public Py_ssize_t N, n, n_comp
    cdef const Py_ssize_t[::1] n_off, m_off, B_off, P_off, A_off, ymax, kind
    cdef const double[::1] B, P, A, d, ylo, yhi, c, gam_y, rho, ytol, ydiam, xlo, xhi
    cdef const double[:, :, ::1] Ms
    cdef const double[:, ::1] qs
    cdef double[::1] ybuf, ytmp

    def __init__(self, dict p):
        self.N = p["N"]
        self.n = p["n"]
        self.n_off = p["n_off"]
        self.m_off = p["m_off"]
        self.B_off = p["B_off"]
        self.P_off = p["P_off"]
        self.A_off = p["A_off"]
        self.ymax = p["ymax"]
        self.kind = p["kind"]
        self.B = p["B"]
        self.P = p["P"]
        self.A = p["A"]
        self.d = p["d"]
        self.ylo = p["ylo"]
        self.yhi = p["yhi"]
        self.c = p["c"]
        self.gam_y = p["gam_y"]
        self.rho = p["rho"]
        self.ytol = p["ytol"]
        self.ydiam = p["ydiam"]
        self.xlo = p["xlo"]
        self.xhi = p["xhi"]
        self.Ms = p["Ms"]
        self.qs = p["qs"]
        self.n_comp = self.Ms.shape[0]
        mmax = max(int(p["m_off"][i + 1] - p["m_off"][i]) for i in range(self.N))
        self.ybuf = np.zeros(mmax)
        self.ytmp = np.zeros(mmax)


cdef inline double _clip(double v, double lo, double hi) nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


cdef double _fp_step(CPack p, Py_ssize_t i, const double* x, double* y, double* out) nogil:
    """out = clip(y - step * (B y - d - P x)); returns ||out - y||."""
    cdef Py_ssize_t m0 = p.m_off[i], m = p.m_off[i + 1] - m0
    cdef Py_ssize_t ni = p.n_off[i + 1] - p.n_off[i]
    cdef Py_ssize_t r, s
    cdef double acc, ax, diff, res = 0.0
    cdef double g = p.gam_y[i]
    for r in range(m):
        acc = 0.0
        for s in range(m):
            acc += p.B[p.B_off[i] + r * m + s] * y[s]
        ax = 0.0
        for s in range(ni):
            ax += p.P[p.P_off[i] + r * ni + s] * x[s]
        acc = acc - p.d[m0 + r] - ax
        out[r] = _clip(y[r] - g * acc, p.ylo[m0 + r], p.yhi[m0 + r])
        diff = out[r] - y[r]
        res += diff * diff
    return sqrt(res)


cdef Py_ssize_t _inexact_count(double rho, double gap0, double eps, double diam) nogil:
    cdef double kk
    if eps >= diam:
        return 0
    if not (gap0 / (1.0 - rho) > eps):
        return 0
    if rho == 0.0:
        return 1
    kk = ceil(log(eps * (1.0 - rho) / gap0) / log(rho))
    if kk < 0:
        return 0
    return <Py_ssize_t>kk


cdef Py_ssize_t _solve(CPack p, Py_ssize_t i, const double* x, double eps, double* y, double* tmp) nogil:
    """Follower solve into ``y``; returns iterations used or -1 on budget overrun."""
    cdef Py_ssize_t m0 = p.m_off[i], m = p.m_off[i + 1] - m0
    cdef Py_ssize_t r, k, kmax
    cdef double res
    for r in range(m):
        y[r] = _clip(0.0, p.ylo[m0 + r], p.yhi[m0 + r])
    if eps == 0.0:
        for k in range(p.ymax[i] + 1):
            res = _fp_step(p, i, x, y, tmp)
            for r in range(m):
                y[r] = tmp[r]
            if res <= p.ytol[i]:
                return k + 1
        return -1
    res = _fp_step(p, i, x, y, tmp)
    kmax = _inexact_count(p.rho[i], res, eps, p.ydiam[i])
    if kmax > p.ymax[i]:
        return -1
    if kmax >= 1:
        for r in range(m):
            y[r] = tmp[r]
    for k in range(2, kmax + 1):
        _fp_step(p, i, x, y, tmp)
        for r in range(m):
            y[r] = tmp[r]
    return kmax


cdef double _cost(CPack p, Py_ssize_t i, const double* x, const double* y) nogil:
    cdef Py_ssize_t m0 = p.m_off[i], m = p.m_off[i + 1] - m0
    cdef Py_ssize_t ni = p.n_off[i + 1] - p.n_off[i]
    cdef Py_ssize_t a, r
    cdef double acc, tot = 0.0, sq = 0.0, lin = 0.0
    if p.kind[i] == COST_BILINEAR:
        for a in range(ni):
            acc = 0.0
            for r in range(m):
                acc += p.A[p.A_off[i] + a * m + r] * y[r]
            tot += x[a] * acc
        return tot
    if p.kind[i] == COST_QUADRATIC:
        for r in range(m):
            sq += y[r] * y[r]
            lin += y[r] * p.c[m0 + r]
        return 0.5 * sq + lin
    return 0.0


cdef int _h(CPack p, Py_ssize_t i, const double* x, double eps, double* val) nogil:
    if _solve(p, i, x, eps, &p.ybuf[0], &p.ytmp[0]) < 0:
        return -1
    val[0] = _cost(p, i, x, &p.ybuf[0])
    return 0


def implicit_values(CPack p, Py_ssize_t i, const double[:, ::1] pts, double eps):
    """``h_i`` or ``h_i^eps`` at each row; ``None`` if a solve overran its budget."""
    cdef Py_ssize_t b = pts.shape[0], s
    out = np.empty(b)
    cdef double[::1] o = out
    with nogil:
        for s in range(b):
            if _h(p, i, &pts[s, 0], eps, &o[s]) < 0:
                with gil:
                    return None
    return out


cdef inline double _oracle(CPack p, Py_ssize_t a, Py_ssize_t j, const double* u, double noise) nogil:
    cdef Py_ssize_t s
    cdef double acc = 0.0
    for s in range(p.n):
        acc += p.Ms[j, a, s] * u[s]
    return acc + p.qs[j, a] + noise


def sfbf_inner(CPack p, const double[::1] xbar, const double[::1] F, double gamma, double eta,
               double delta, double eps, const Py_ssize_t[:, ::1] idx, const double[:, ::1] noise,
               const double[:, ::1] W):
    """Inner forward-backward-forward loop with pre-drawn randomness.

    Returns ``(z_K, z_half, solves, status, bad_step)``; status 0 ok,
    1 non-finite iterate, 2 follower solve overran its budget.
    """
    cdef Py_ssize_t K = noise.shape[0], n = p.n, N = p.N
    cdef Py_ssize_t k, i, a, a0, a1, ni, j
    cdef int status = 0
    cdef Py_ssize_t bad = -1, solves = 0
    cdef double vz, vx, hz_p, hz, hx_p, fz, fx
    z_arr = np.array(xbar, dtype=float)
    zh_arr = np.empty((K, n))
    cdef double[::1] z = z_arr
    cdef double[:, ::1] zh = zh_arr
    cdef double[::1] hbar = np.empty(N)
    cdef double[::1] pt = np.empty(n)
    cdef double[::1] corr = np.empty(n)
    with nogil:
        for i in range(N):
            if _h(p, i, &xbar[p.n_off[i]], eps, &hbar[i]) < 0:
                status = 2
                break
            solves += 1
        k = 0
        while status == 0 and k < K:
            for a in range(n):
                zh[k, a] = _clip(z[a] - gamma * F[a], p.xlo[a], p.xhi[a])
                if not isfinite(zh[k, a]):
                    status = 1
            if status != 0:
                bad = k
                break
            for i in range(N):
                a0 = p.n_off[i]
                a1 = p.n_off[i + 1]
                ni = a1 - a0
                j = idx[k, i]
                for a in range(a0, a1):
                    pt[a] = zh[k, a] + delta * W[k, a]
                if _h(p, i, &pt[a0], eps, &hz_p) < 0:
                    status = 2
                    break
                if _h(p, i, &zh[k, a0], eps, &hz) < 0:
                    status = 2
                    break
                for a in range(a0, a1):
                    pt[a] = xbar[a] + delta * W[k, a]
                if _h(p, i, &pt[a0], eps, &hx_p) < 0:
                    status = 2
                    break
                solves += 3
                fz = (hz_p - hz) / delta
                fx = (hx_p - hbar[i]) / delta
                for a in range(a0, a1):
                    vz = _oracle(p, a, j, &zh[k, 0], noise[k, a]) + eta * zh[k, a]
                    vx = _oracle(p, a, j, &xbar[0], noise[k, a]) + eta * xbar[a]
                    corr[a] = (vz + ni * W[k, a] * fz) - (vx + ni * W[k, a] * fx)
            if status != 0:
                bad = k
                break
            for a in range(n):
                z[a] = zh[k, a] - gamma * corr[a]
                if not isfinite(z[a]):
                    status = 1
            if status != 0:
                bad = k
                break
            k += 1
    return z_arr, zh_arr, solves, status, bad
