"""Pure numpy/scipy version of the compiled kernels."""
import numpy as np
from scipy.linalg import solve_banded


def cn_step(u0, pot, vol, kd, ko, dt, out):
    a = 1j * vol / dt - 0.5 * kd + 0.5 * vol * pot
    b = (2j * vol / dt - a) * u0
    b[:-1] += 0.5 * ko * u0[1:]
    b[1:] += 0.5 * ko * u0[:-1]
    ab = np.zeros((3, len(u0)), dtype=complex)
    ab[0, 1:] = -0.5 * ko
    ab[1] = a
    ab[2, :-1] = -0.5 * ko
    out[:] = solve_banded((1, 1), ab, b, check_finite=False)
    res = a * out - b
    res[:-1] -= 0.5 * ko * out[1:]
    res[1:] -= 0.5 * ko * out[:-1]
    bmax = np.max(np.abs(b))
    return float(np.max(np.abs(res)) / bmax) if bmax > 0 else 0.0
