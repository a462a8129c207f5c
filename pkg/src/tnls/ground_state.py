"""The ground state W = (1 + r^2/(N(N-2)))^{-(N-2)/2}, its scaling generator
W1 = (N-2)/2 W + r W', and the energy-type functionals built on them."""
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.optimize import brentq


def p_crit(dim):
    return float(Fraction(dim + 2, dim - 2))


def two_star(dim):
    return float(Fraction(2 * dim, dim - 2))


def W_of(r, dim):
    return (1 + np.asarray(r) ** 2 / (dim * (dim - 2))) ** (-(dim - 2) / 2)


def dW_of(r, dim):
    r = np.asarray(r)
    b = dim * (dim - 2)
    return -(dim - 2) * r / b * (1 + r ** 2 / b) ** (-dim / 2)


def W1_of(r, dim):
    return (dim - 2) / 2 * W_of(r, dim) + np.asarray(r) * dW_of(r, dim)


def eval_W(grid):
    return W_of(grid.r, grid.dim)


def eval_W1(grid):
    return W1_of(grid.r, grid.dim)


def scaled_W(grid, theta, mu, r=None):
    """W_[theta, mu] evaluated in closed form."""
    r = grid.r if r is None else r
    N = grid.dim
    return np.exp(1j * theta) * mu ** (-(N - 2) / 2) * W_of(r / mu, N)


@dataclass
class GroundStateBundle:
    W: np.ndarray
    W1: np.ndarray
    h1_W: float
    energy_W: float
    sobolev_CN: float
    checks: dict = field(default_factory=dict)


def energy(grid, f):
    """E(f) = 1/2 int |grad f|^2 - 1/2* int |f|^{2*}"""
    return 0.5 * grid.h1_norm_sq(f) - grid.lp_pow(f, two_star(grid.dim)) / two_star(grid.dim)


def ground_state(grid):
    """Bundle of W-data on this grid (cached on the grid)."""
    if "gs" in grid.cache:
        return grid.cache["gs"]
    N = grid.dim
    W, W1 = eval_W(grid), eval_W1(grid)
    h1 = grid.h1_norm_sq(W)
    pot = grid.lp_pow(W, two_star(N))
    E = 0.5 * h1 - pot / two_star(N)
    lap_res = grid.laplacian(W) + W ** p_crit(N)
    inner = (grid.r > 0.05 * grid.r_max) & (grid.r < 0.9 * grid.r_max)
    checks = {
        "energy_vs_h1_over_N": abs(E - h1 / N) / (h1 / N),
        "potential_vs_h1": abs(pot - h1) / h1,
        "laplacian_residual_interior": float(np.max(np.abs(lap_res[inner]))),
    }
    gs = GroundStateBundle(W, W1, h1, E, pot ** (1 / two_star(N)) / np.sqrt(h1), checks)
    grid.cache["gs"] = gs
    return gs


def dee(grid, f):
    """(||f||^2 - ||W||^2, |...|) in Hdot^1."""
    s = grid.h1_norm_sq(f) - ground_state(grid).h1_W
    return s, abs(s)


def potential_ratio(grid, f):
    """int |f|^{2*} / int |grad f|^2, with 0 for f = 0."""
    h1 = grid.h1_norm_sq(f)
    if h1 <= 0:
        return 0.0
    return grid.lp_pow(f, two_star(grid.dim)) / h1


def variational_check(grid, f, tol=1e-8):
    """Compare ||f||^2/||W||^2 with E(f)/E(W) and the Sobolev bound."""
    gs = ground_state(grid)
    N = grid.dim
    h1 = grid.h1_norm_sq(f)
    rep = {"h1_ratio": h1 / gs.h1_W, "energy_ratio": energy(grid, f) / gs.energy_W}
    lp = grid.lp_pow(f, two_star(N)) ** (1 / two_star(N))
    rep["sobolev_lhs"] = lp
    rep["sobolev_rhs"] = gs.sobolev_CN * np.sqrt(h1)
    rep["sobolev_ok"] = bool(lp <= rep["sobolev_rhs"] * (1 + tol) + tol)
    if h1 > gs.h1_W * (1 + tol):
        rep["status"] = "not-subcritical"
        rep["holds"] = None
        return rep
    rep["status"] = "ok"
    rep["holds"] = bool(rep["h1_ratio"] <= rep["energy_ratio"] + tol)
    return rep


def balance_potential(grid):
    """q = -(Lap_h W + W^p)/W, so that W solves Lap_h W + q W + W^p = 0 exactly.

    q is O(h^2) and only corrects the truncation error of the discrete
    Laplacian on W; with it W is an exact fixed point of the discrete flow."""
    if "q" not in grid.cache:
        W = eval_W(grid)
        grid.cache["q"] = -(grid.laplacian(W) + W ** p_crit(grid.dim)) / W
    return grid.cache["q"]


def threshold_scale(grid, f, branch="lower"):
    """c > 0 with E(c f) = E(W).  'lower' gives ||c f|| < ||W||, 'upper' the
    other root.  Needs E along the ray to exceed E(W) somewhere."""
    N = grid.dim
    a = grid.h1_norm_sq(f)
    b = grid.lp_pow(f, two_star(N))
    q = two_star(N)
    EW = ground_state(grid).energy_W
    e = lambda c: 0.5 * c * c * a - c ** q * b / q - EW
    cstar = (a / b) ** (1 / (q - 2))
    if e(cstar) < 0:
        raise ValueError("energy along the ray stays below E(W)")
    if branch == "lower":
        return brentq(e, 0.0, cstar, xtol=1e-15, rtol=1e-15)
    hi = 2 * cstar
    while e(hi) > 0:
        hi *= 2
    return brentq(e, cstar, hi, xtol=1e-15, rtol=1e-15)
