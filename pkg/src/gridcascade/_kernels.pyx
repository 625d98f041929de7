# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; see ``_kernels_py`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free, qsort
from libc.string cimport memcpy
from libc.math cimport sqrt

cnp.import_array()


cdef int _cmp_desc(const void* a, const void* b) noexcept nogil:
    cdef double x = (<double*>a)[0]
    cdef double y = (<double*>b)[0]
    if x < y:
        return 1
    if x > y:
        return -1
    return 0


cdef void _project(const double* v, double* out, double* work, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t k, rho = 0
    cdef double css = 0.0, theta = 0.0, csum_rho = 0.0
    memcpy(work, v, n * sizeof(double))
    qsort(work, n, sizeof(double), _cmp_desc)
    for k in range(n):
        css += work[k]
        if work[k] - (css - 1.0) / (k + 1.0) > 0:
            rho = k
            csum_rho = css
    theta = (csum_rho - 1.0) / (rho + 1.0)
    for k in range(n):
        out[k] = v[k] - theta if v[k] > theta else 0.0


def project_simplex(v):
    cdef double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef Py_ssize_t n = vv.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef double* work = <double*>malloc(n * sizeof(double))
    try:
        _project(&vv[0], &o[0], work, n)
    finally:
        free(work)
    return out


cdef double _objective(const double* Q, const double* b, const double* x, double* Qx, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double acc, f = 0.0
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += Q[i * n + j] * x[j]
        Qx[i] = acc
        f += x[i] * acc - 2.0 * b[i] * x[i]
    return f


def pgd_simplex(Q, b, x0, double step0, double tol=1e-10, int max_iter=10000, bint trace=False):
    cdef double[:, ::1] Qm = np.ascontiguousarray(Q, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n = bv.shape[0]
    x_arr = project_simplex(x0)
    cdef double[::1] x = x_arr
    cdef double[::1] xp = np.empty(n, dtype=np.float64)
    cdef double[::1] y = np.empty(n, dtype=np.float64)
    cdef double[::1] z = np.empty(n, dtype=np.float64)
    cdef double[::1] g = np.empty(n, dtype=np.float64)
    cdef double[::1] w = np.empty(n, dtype=np.float64)
    cdef double[::1] Qx = np.empty(n, dtype=np.float64)
    cdef double[::1] Qy = np.empty(n, dtype=np.float64)
    cdef double[::1] Qz = np.empty(n, dtype=np.float64)
    cdef double* work = <double*>malloc(n * sizeof(double))
    cdef double f, fy, fz, step = step0, lin, quad, d, t = 1.0, t_new, mom, gap, gmin, gk
    cdef Py_ssize_t k
    cdef int it = 0
    cdef bint converged = False, restarted = True
    hist = None
    try:
        f = _objective(&Qm[0, 0], &bv[0], &x[0], &Qx[0], n)
        fy = f
        for k in range(n):
            y[k] = x[k]
            Qy[k] = Qx[k]
        if trace:
            hist = [f]
        while it < max_iter:
            it += 1
            for k in range(n):
                g[k] = 2.0 * (Qy[k] - bv[k])
            while True:
                for k in range(n):
                    w[k] = y[k] - step * g[k]
                _project(&w[0], &z[0], work, n)
                fz = _objective(&Qm[0, 0], &bv[0], &z[0], &Qz[0], n)
                lin = 0.0
                quad = 0.0
                for k in range(n):
                    d = z[k] - y[k]
                    lin += g[k] * d
                    quad += d * d
                if fz <= fy + lin + quad / (2.0 * step) + 1e-15 or step < 1e-20:
                    break
                step *= 0.5
            t_new = 0.5 * (1.0 + sqrt(1.0 + 4.0 * t * t))
            if fz <= f:
                mom = (t - 1.0) / t_new
                for k in range(n):
                    xp[k] = x[k]
                    x[k] = z[k]
                    Qx[k] = Qz[k]
                    y[k] = z[k] + mom * (z[k] - xp[k])
                f = fz
                t = t_new
                restarted = False
            elif restarted:
                if trace:
                    hist.append(f)
                converged = True
                break
            else:
                for k in range(n):
                    y[k] = x[k]
                t = 1.0
                restarted = True
            fy = _objective(&Qm[0, 0], &bv[0], &y[0], &Qy[0], n)
            if trace:
                hist.append(f)
            gap = 0.0
            gmin = 0.0
            for k in range(n):
                gk = 2.0 * (Qx[k] - bv[k])
                gap += gk * x[k]
                if k == 0 or gk < gmin:
                    gmin = gk
            if gap - gmin < tol:
                converged = True
                break
    finally:
        free(work)
    return x_arr, f, it, converged, hist


def rollout(W, beta, s0, eps, int max_steps, double tol=1e-9):
    cdef double[:, ::1] Wm = np.ascontiguousarray(W, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(beta, dtype=np.float64)
    cdef double[::1] ev = np.ascontiguousarray(eps, dtype=np.float64)
    cdef Py_ssize_t n = bv.shape[0]
    states = np.zeros((max_steps + 1, n), dtype=np.int8)
    probs = np.zeros((max_steps, n), dtype=np.float64)
    cdef signed char[:, ::1] S = states
    cdef double[:, ::1] P = probs
    cdef Py_ssize_t i, j, t = 0
    cdef double acc
    cdef bint changed
    src = np.ascontiguousarray(s0, dtype=np.int8)
    cdef signed char[::1] s0v = src
    for i in range(n):
        S[0, i] = 1 if s0v[i] else 0
    while t < max_steps:
        changed = False
        for i in range(n):
            acc = bv[i]
            for j in range(n):
                if S[t, j]:
                    acc += Wm[i, j]
            P[t, i] = acc
            if S[t, i] and acc >= ev[i] - tol:
                S[t + 1, i] = 1
            else:
                S[t + 1, i] = 0
                if S[t, i]:
                    changed = True
        t += 1
        if not changed:
            break
    return states[: t + 1].copy(), probs[:t].copy()


def transition_counts(S, C1, C11, C0, C01):
    cdef signed char[:, ::1] Sv = np.ascontiguousarray(S, dtype=np.int8)
    cdef long long[:, ::1] c1 = C1
    cdef long long[:, ::1] c11 = C11
    cdef long long[:, ::1] c0 = C0
    cdef long long[:, ::1] c01 = C01
    cdef Py_ssize_t T = Sv.shape[0], n = Sv.shape[1]
    cdef Py_ssize_t i, j, t, tau
    cdef long long a
    cdef bint fails
    for i in range(n):
        tau = T - 1
        fails = False
        for t in range(T):
            if Sv[t, i] == 0:
                tau = t
                fails = True
                break
        for j in range(n):
            a = 0
            for t in range(tau):
                a += Sv[t, j]
            c1[j, i] += a
            c0[j, i] += tau - a
            if fails and tau > 0:
                if Sv[tau - 1, j]:
                    c11[j, i] += a - 1
                    c01[j, i] += tau - a
                else:
                    c11[j, i] += a
                    c01[j, i] += tau - a - 1
            else:
                c11[j, i] += a
                c01[j, i] += tau - a
