# cython: language_level=3
# cython: boundscheck=False
# cython: wraparound=False
# cython: cdivision=True
"""Compiled endpoint loops for the builtin models.

Mirrors the pure loop in schemes.py for models that carry a kernel_code;
dispatch is by small integers so the hot loop contains no Python calls.
Scheme codes use bit 0 for tamed drift and bit 1 for the Milstein
correction (0 euler, 1 tamed euler, 2 milstein, 3 tamed milstein); kernel
codes are 1 poly5, 2 gbm with params (a, b), 3 diag2 with params (c,).

Agreement with the pure loop is at tight relative tolerance, not bitwise:
the expression trees differ by association, so the two backends may part
in the last ulp per step.  Each backend on its own is bitwise
deterministic.
"""

import numpy as np

from libc.math cimport fabs, sqrt


def run_endpoint(int scheme, int kernel, double[::1] params, double[::1] y0,
                 double[:, ::1] increments, double h, double blow_limit):
    """Integrate one path and return (endpoint array, blow_index or None).

    The endpoint is the last computed state; when the trajectory blows up
    that is the offending state and blow_index is its index.
    """
    cdef Py_ssize_t n_steps = increments.shape[0]
    cdef int m = <int> increments.shape[1]
    cdef int d = <int> y0.shape[0]
    cdef bint tamed = (scheme & 1) != 0
    cdef bint milstein = (scheme & 2) != 0
    cdef Py_ssize_t blow = -1
    cdef Py_ssize_t n
    cdef double a = 0.0, b = 0.0, c = 0.0
    cdef double y, w, y2, mu, sig, lco, incr
    cdef double u0, u1, t0, t1, w0, w1, s, mu0, mu1, nrm, den, i0, i1

    if scheme < 0 or scheme > 3:
        raise ValueError("unknown scheme code")

    if kernel == 1 or kernel == 2:
        if d != 1 or m != 1:
            raise ValueError("scalar kernel needs d = m = 1")
        if kernel == 2:
            if params.shape[0] != 2:
                raise ValueError("gbm kernel needs params (a, b)")
            a = params[0]
            b = params[1]
        y = y0[0]
        with nogil:
            for n in range(n_steps):
                w = increments[n, 0]
                if kernel == 1:
                    y2 = y * y
                    mu = -(y2 * y2 * y)
                    sig = y
                    lco = y
                else:
                    mu = a * y
                    sig = b * y
                    lco = b * b * y
                if tamed:
                    incr = h * mu / (1.0 + h * fabs(mu))
                else:
                    incr = h * mu
                y = y + incr + sig * w
                if milstein:
                    y = y + lco * (0.5 * (w * w - h))
                if not (fabs(y) <= blow_limit):
                    blow = n + 1
                    break
        out = np.empty(1)
        out[0] = y
    elif kernel == 3:
        if d != 2 or m != 2:
            raise ValueError("diag2 kernel needs d = m = 2")
        if params.shape[0] != 1:
            raise ValueError("diag2 kernel needs params (c,)")
        c = params[0]
        u0 = y0[0]
        u1 = y0[1]
        with nogil:
            for n in range(n_steps):
                w0 = increments[n, 0]
                w1 = increments[n, 1]
                s = u0 * u0 + u1 * u1
                mu0 = -u0 - u0 * s
                mu1 = -u1 - u1 * s
                if tamed:
                    nrm = sqrt(mu0 * mu0 + mu1 * mu1)
                    den = 1.0 + h * nrm
                    i0 = h * mu0 / den
                    i1 = h * mu1 / den
                else:
                    i0 = h * mu0
                    i1 = h * mu1
                t0 = u0 + i0 + c * u0 * w0
                t1 = u1 + i1 + c * u1 * w1
                if milstein:
                    # Diagonal noise: L^{j1}sigma_{j2} vanishes off the
                    # diagonal, so only the (j, j) pair products enter.
                    t0 = t0 + (c * c * u0) * (0.5 * (w0 * w0 - h))
                    t1 = t1 + (c * c * u1) * (0.5 * (w1 * w1 - h))
                u0 = t0
                u1 = t1
                if not (fabs(u0) <= blow_limit and fabs(u1) <= blow_limit):
                    blow = n + 1
                    break
        out = np.empty(2)
        out[0] = u0
        out[1] = u1
    else:
        raise ValueError("unknown kernel code")

    return out, (None if blow < 0 else int(blow))
