# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled Crank-Nicolson step: assemble the right-hand side, Thomas solve,
solve residual.  Same contract as _kernels_py.cn_step."""
import numpy as np


def cn_step(const double complex[::1] u0, const double complex[::1] pot,
            const double[::1] vol, const double[::1] kd, const double[::1] ko,
            double dt, double complex[::1] out):
    """Solve (i vol/dt - K/2 + vol pot/2) u1 = (i vol/dt + K/2 - vol pot/2) u0.

    K is tridiagonal (diag kd, off-diagonal ko).  Writes u1 into ``out`` and
    returns max|A u1 - b| / max|b|."""
    cdef Py_ssize_t n = u0.shape[0], i
    cdef double complex[::1] a = np.empty(n, dtype=complex)
    cdef double complex[::1] b = np.empty(n, dtype=complex)
    cdef double complex[::1] cp = np.empty(n, dtype=complex)
    cdef double complex[::1] dp = np.empty(n, dtype=complex)
    cdef double complex s, m
    cdef double bmax = 0.0, rmax = 0.0, t
    for i in range(n):
        a[i] = 1j * vol[i] / dt - 0.5 * kd[i] + 0.5 * vol[i] * pot[i]
        s = (2j * vol[i] / dt - a[i]) * u0[i]
        if i > 0:
            s = s + 0.5 * ko[i - 1] * u0[i - 1]
        if i < n - 1:
            s = s + 0.5 * ko[i] * u0[i + 1]
        b[i] = s
        t = abs(s)
        if t > bmax:
            bmax = t
    # Thomas: off-diagonal of A is -ko/2 on both sides
    cp[0] = -0.5 * ko[0] / a[0]
    dp[0] = b[0] / a[0]
    for i in range(1, n):
        m = a[i] + 0.5 * ko[i - 1] * cp[i - 1]
        if i < n - 1:
            cp[i] = -0.5 * ko[i] / m
        dp[i] = (b[i] + 0.5 * ko[i - 1] * dp[i - 1]) / m
    out[n - 1] = dp[n - 1]
    for i in range(n - 2, -1, -1):
        out[i] = dp[i] - cp[i] * out[i + 1]
    for i in range(n):
        s = a[i] * out[i] - b[i]
        if i > 0:
            s = s - 0.5 * ko[i - 1] * out[i - 1]
        if i < n - 1:
            s = s - 0.5 * ko[i] * out[i + 1]
        t = abs(s)
        if t > rmax:
            rmax = t
    return rmax / bmax if bmax > 0 else 0.0
