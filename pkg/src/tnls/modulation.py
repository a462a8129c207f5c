"""Modulation of near-W fields: u = [(1 + alpha) W + utilde]_[theta, mu]
with utilde orthogonal (Hdot^1) to iW, W1 and W.

f_[theta, mu] = e^{i theta} mu^{-(N-2)/2} f(r/mu).  The group acts unitarily
on Hdot^1, so the two orthogonality conditions on the unscaled field,

    (u, i W_[theta,mu]) = 0,   (u, (W1)_[theta,mu]) = 0,

only need the closed forms of W and W1 at the trial parameters; u itself is
resampled once, after convergence, to form utilde.
"""
import csv
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import NewtonStall, NotNearW, Unsolvable, WindowEmpty
from .ground_state import W1_of, ground_state, scaled_W
from .profiles import loglinear_fit

DELTA0 = 0.1


@dataclass
class ModulationState:
    theta: float
    mu: float
    alpha: float
    utilde: np.ndarray
    dee_mag: float
    ok: bool
    dee_signed: float = 0.0
    ortho_residual: float = 0.0
    iterations: int = 0


def _scaled_W1(grid, theta, mu):
    N = grid.dim
    return np.exp(1j * theta) * mu ** (-(N - 2) / 2) * W1_of(grid.r / mu, N)


def ortho_functionals(grid, u, theta, mu):
    """((u, i W_[theta,mu]), (u, (W1)_[theta,mu])) in Hdot^1."""
    return np.array([grid.h1_inner(u, 1j * scaled_W(grid, theta, mu)),
                     grid.h1_inner(u, _scaled_W1(grid, theta, mu))])


def _cum_density(grid, u):
    df = grid.ddr(u)
    return np.abs(df) ** 2 * grid.surface * grid.r ** (grid.dim - 1) * grid.jac


def concentration_scale(grid, u):
    """Largest lambda with int_{|x| < 1/lambda} |grad u|^2 = E(W).

    Requires ||u||^2 >= 2 E(W), the regime where the level is reached with
    room to spare."""
    EW = ground_state(grid).energy_W
    dens = np.concatenate(([0.0], _cum_density(grid, u)))
    xi = np.concatenate(([0.0], grid.xi))
    cum = np.concatenate(([0.0], grid.cumulative_gradient(u)))
    if cum[-1] < 2 * EW:
        raise Unsolvable("gradient mass %.6g below 2 E(W) = %.6g" % (cum[-1], 2 * EW))
    i = int(np.searchsorted(cum, EW))           # cum[i-1] < EW <= cum[i]
    h = xi[i] - xi[i - 1]
    d0, d1 = dens[i - 1], dens[i]

    def C(x):                                   # exact integral of the linear density
        s = x - xi[i - 1]
        return cum[i - 1] + d0 * s + (d1 - d0) * s * s / (2 * h) - EW

    x = brentq(C, xi[i - 1], xi[i], xtol=1e-15, rtol=1e-15) if C(xi[i]) != 0 else xi[i]
    R, s = grid.r_max, grid.stretch
    rho = R * x / (1 + s * (1 - x))
    return 1.0 / rho


def _lambda_W(grid):
    if "lambda_W" not in grid.cache:
        grid.cache["lambda_W"] = concentration_scale(grid, ground_state(grid).W)
    return grid.cache["lambda_W"]


def _seed(grid, u):
    theta = float(np.angle(u[np.argmax(np.abs(u))]))
    try:
        mu = _lambda_W(grid) / concentration_scale(grid, u)
    except Unsolvable:
        mu = 1.0
    return theta, mu


def fit_modulation(grid, u, delta0=DELTA0, seed=None, tol=1e-10, max_iter=50, fd=1e-6):
    """Newton on (theta, log mu) for the two orthogonality conditions."""
    gs = ground_state(grid)
    hW = gs.h1_W
    u = np.asarray(u, dtype=complex)
    grid.check(u)
    dsig = grid.h1_norm_sq(u) - hW
    if not abs(dsig) < delta0 * hW:
        raise NotNearW("d(u) = %.3g ||W||^2 exceeds %.3g" % (abs(dsig) / hW, delta0))
    th, mu = _seed(grid, u) if seed is None else seed
    x = np.array([th, np.log(mu)])
    F = lambda x: ortho_functionals(grid, u, x[0], np.exp(x[1]))
    f = F(x)
    it = 0
    while np.max(np.abs(f)) >= tol * hW:
        it += 1
        if it > max_iter:
            raise NewtonStall("residual %.2e after %d iterations" % (np.max(np.abs(f)), max_iter))
        J = np.empty((2, 2))
        for k in range(2):
            e = np.zeros(2)
            e[k] = fd
            J[:, k] = (F(x + e) - F(x - e)) / (2 * fd)
        dx = np.linalg.solve(J, -f)
        lam = 1.0
        while True:             # backtrack on the residual
            fn = F(x + lam * dx)
            if np.linalg.norm(fn) < np.linalg.norm(f) or lam < 1e-3:
                break
            lam *= 0.5
        x, f = x + lam * dx, fn
    theta, mu = float(np.angle(np.exp(1j * x[0]))), float(np.exp(x[1]))
    alpha = grid.h1_inner(u, scaled_W(grid, theta, mu)) / hW - 1
    v = grid.rescale_phase(u, -theta, 1 / mu).astype(complex)
    ut = v - (1 + alpha) * gs.W
    # strip what the resampling left along W, iW, W1
    for e in (gs.W.astype(complex), 1j * gs.W, gs.W1.astype(complex)):
        ut = ut - grid.h1_inner(ut, e) / grid.h1_norm_sq(e) * e
    return ModulationState(theta, mu, alpha, ut, abs(dsig), True, dsig,
                           ortho_residual(grid, ut), it)


def ortho_residual(grid, ut):
    """max |(utilde, e)| / (||W|| ||utilde||) over e = W, iW, W1."""
    gs = ground_state(grid)
    n = np.sqrt(grid.h1_norm_sq(ut))
    if n == 0:
        return 0.0
    vals = [grid.h1_inner(ut, e) for e in (gs.W, 1j * gs.W, gs.W1)]
    return float(max(abs(v) for v in vals) / (np.sqrt(gs.h1_W) * n))


def track(grid, times, fields, delta0=DELTA0):
    """ModulationStates along a trajectory, warm-started from the previous
    (theta, mu); snapshots outside the trust region come back with ok=False."""
    states, seed = [], None
    hW = ground_state(grid).h1_W
    for u in fields:
        try:
            st = fit_modulation(grid, u, delta0, seed=seed)
            seed = (st.theta, st.mu)
        except (NotNearW, NewtonStall):
            d = grid.h1_norm_sq(u) - hW
            st = ModulationState(np.nan, np.nan, np.nan, None, abs(d), False, d)
        states.append(st)
    return states


def fit_rate(times, states, lo=1e-8, hi=1e-2, norm=1.0):
    """Slope magnitude and R^2 of log dee_mag against t where
    dee_mag/norm lies in [lo, hi]."""
    t = np.asarray(times, float)
    d = np.array([s.dee_mag for s in states]) / norm
    ok = np.array([s.ok for s in states])
    sel = ok & (d >= lo) & (d <= hi)
    if sel.sum() < 3:
        raise WindowEmpty("%d samples in the fit window" % sel.sum())
    slope, r2 = loglinear_fit(t[sel], d[sel])
    return -slope, r2


def derivative_ratio(times, states):
    """max over consecutive ok states of |d mu_p/dt| / (mu_p^3 dee_mag) with
    mu_p = 1/mu the scale acting on u; an empirical stand-in for the
    modulation-derivative bound."""
    best = 0.0
    for (t0, a), (t1, b) in zip(zip(times, states), zip(times[1:], states[1:])):
        if not (a.ok and b.ok) or min(a.dee_mag, b.dee_mag) <= 0:
            continue
        m0, m1 = 1 / a.mu, 1 / b.mu
        m = 0.5 * (m0 + m1)
        d = 0.5 * (a.dee_mag + b.dee_mag)
        best = max(best, abs(m1 - m0) / (t1 - t0) / (m ** 3 * d))
    return best


def write_series(path, times, states):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "theta", "mu", "alpha", "dee_mag", "ortho_residual", "ok"])
        for t, s in zip(times, states):
            w.writerow([repr(float(t)), repr(s.theta), repr(s.mu), repr(s.alpha),
                        repr(s.dee_mag), repr(s.ortho_residual), int(s.ok)])
