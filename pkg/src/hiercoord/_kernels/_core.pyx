# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled simulation kernel.  Semantics contract documented in pykernels.py."""

from libc.math cimport fabs, isfinite, sqrt

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline double _term(int kind, double a, double b) noexcept nogil:
    cdef double p = a * b
    if kind == 0:  # sqrt_flow
        if a > 0.0:
            return sqrt(fabs(p))
        elif a < 0.0:
            return -sqrt(fabs(p))
        return 0.0
    # kind == 1: bilinear
    return p


def simulate(
    const double[:, ::1] A, const double[:, ::1] Bu, const double[:, ::1] Bv,
    const double[::1] f0,
    const double[:, ::1] Cy, const double[:, ::1] Dyu, const double[:, ::1] Dyv,
    const double[::1] gy0,
    const double[:, ::1] Cw, const double[:, ::1] Dwu, const double[:, ::1] Dwv,
    const double[::1] gw0,
    const int[::1] t_kind, const int[::1] t_space, const int[::1] t_row,
    const double[::1] t_coeff,
    const double[::1] t_a0, const double[:, ::1] t_avec,
    const double[::1] t_b0, const double[:, ::1] t_bvec,
    const double[::1] x0, const double[:, ::1] U, const double[:, ::1] V,
    double[:, ::1] out_Y, double[:, ::1] out_W, double[:, ::1] out_X,
):
    cdef Py_ssize_t N = U.shape[0]
    cdef Py_ssize_t nx = A.shape[0]
    cdef Py_ssize_t nu = Bu.shape[1]
    cdef Py_ssize_t nv = Bv.shape[1]
    cdef Py_ssize_t ny = Cy.shape[0]
    cdef Py_ssize_t nw = Cw.shape[0]
    cdef Py_ssize_t nt = t_kind.shape[0]
    cdef Py_ssize_t k, i, j, t
    cdef double acc, a, b, val
    cdef int bad
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xbuf = np.empty(nx, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xnbuf = np.empty(nx, dtype=np.float64)
    cdef double[::1] x = xbuf
    cdef double[::1] xn = xnbuf

    for i in range(nx):
        x[i] = x0[i]
        out_X[0, i] = x0[i]

    with nogil:
        for k in range(N):
            # outputs
            for i in range(ny):
                acc = gy0[i]
                for j in range(nx):
                    acc += Cy[i, j] * x[j]
                for j in range(nu):
                    acc += Dyu[i, j] * U[k, j]
                for j in range(nv):
                    acc += Dyv[i, j] * V[k, j]
                out_Y[k, i] = acc
            for i in range(nw):
                acc = gw0[i]
                for j in range(nx):
                    acc += Cw[i, j] * x[j]
                for j in range(nu):
                    acc += Dwu[i, j] * U[k, j]
                for j in range(nv):
                    acc += Dwv[i, j] * V[k, j]
                out_W[k, i] = acc
            # state update
            for i in range(nx):
                acc = f0[i]
                for j in range(nx):
                    acc += A[i, j] * x[j]
                for j in range(nu):
                    acc += Bu[i, j] * U[k, j]
                for j in range(nv):
                    acc += Bv[i, j] * V[k, j]
                xn[i] = acc
            # nonlinear terms on z = [x; u; v]
            for t in range(nt):
                a = t_a0[t]
                b = t_b0[t]
                for j in range(nx):
                    a += t_avec[t, j] * x[j]
                    b += t_bvec[t, j] * x[j]
                for j in range(nu):
                    a += t_avec[t, nx + j] * U[k, j]
                    b += t_bvec[t, nx + j] * U[k, j]
                for j in range(nv):
                    a += t_avec[t, nx + nu + j] * V[k, j]
                    b += t_bvec[t, nx + nu + j] * V[k, j]
                val = t_coeff[t] * _term(t_kind[t], a, b)
                if t_space[t] == 0:
                    xn[t_row[t]] += val
                elif t_space[t] == 1:
                    out_Y[k, t_row[t]] += val
                else:
                    out_W[k, t_row[t]] += val
            # blow-up check
            bad = 0
            for i in range(ny):
                if not isfinite(out_Y[k, i]):
                    bad = 1
            for i in range(nw):
                if not isfinite(out_W[k, i]):
                    bad = 1
            for i in range(nx):
                if not isfinite(xn[i]):
                    bad = 1
            if bad:
                with gil:
                    return k + 1
            for i in range(nx):
                x[i] = xn[i]
                out_X[k + 1, i] = xn[i]
    return 0
