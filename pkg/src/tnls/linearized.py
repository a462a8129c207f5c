"""Linearization of the flow at W.

With v = u - W = v1 + i v2 the flow reads dv/dt + L v + R(v) = 0 where

    L v = (Lap + V) v2 - i (Lap + p V) v1,      V = W^{p-1}.

A_minus = Lap + V and A_plus = Lap + p V are tridiagonal (the discrete
Laplacian of the grid, optionally with the O(h^2) balancing potential that
makes W an exact discrete equilibrium).  Both are symmetric for the
cell-volume inner product.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import solve_banded, LinAlgError

from .errors import (NoNegativeMode, SpectralCollision, SingularSolve,
                     DegenerateProjection)
from .ground_state import W_of, eval_W, eval_W1, p_crit, balance_potential
from .grid import make_grid


class LinearizedOperator:
    def __init__(self, grid, balanced=True):
        self.grid = grid
        self.balanced = balanced
        N = grid.dim
        self.p = p_crit(N)
        self.W = eval_W(grid)
        self.V = self.W ** (self.p - 1)
        lap = grid.laplacian_matrix()
        if balanced:
            lap = lap + sp.diags(balance_potential(grid))
        self.lap = lap.tocsr()
        self.A_minus = (lap + sp.diags(self.V)).tocsr()
        self.A_plus = (lap + sp.diags(self.p * self.V)).tocsr()

    def V_of(self, r):
        return W_of(r, self.grid.dim) ** (self.p - 1)

    def apply(self, f):
        f = np.asarray(f)
        self.grid.check(f)
        return self.A_minus @ f.imag - 1j * (self.A_plus @ f.real)


def apply_L(op, f):
    return op.apply(f)


def bilinear_B(op, f, g):
    """B(f,g) from its integral form (gradient + potential terms)."""
    grid, p = op.grid, op.p
    f, g = np.asarray(f, dtype=complex), np.asarray(g, dtype=complex)
    f1, f2, g1, g2 = f.real, f.imag, g.real, g.imag
    grad = grid.h1_inner(f1, g1) + grid.h1_inner(f2, g2)
    Vf = lambda r, a, b, c, d: op.V_of(r) * (p * a * b + c * d)
    pot = grid.integral(Vf, f1, g1, f2, g2)
    return 0.5 * grad - 0.5 * float(pot)


def quadratic_Q(op, f):
    return bilinear_B(op, f, f)


def discrete_B(op, f, g):
    """Pairing for the discrete operator: 1/2 Im sum vol (L f) conj(g).

    The discrete L is exactly antisymmetric for it, so it measures mode
    amplitudes of the discrete linear flow without quadrature error."""
    Lf = op.apply(f)
    return 0.5 * float(np.sum(op.grid.vol * np.imag(Lf * np.conj(g))))


@dataclass
class EigenPair:
    e0: float
    Yplus: np.ndarray
    residual: float
    B_pm: float = np.nan
    iterations: int = 0

    @property
    def Yminus(self):
        return np.conj(self.Yplus)

    @property
    def Y1(self):
        return self.Yplus.real

    @property
    def Y2(self):
        return self.Yplus.imag


def _coarse_shift(grid, balanced, M_coarse=600):
    g = make_grid(grid.dim, grid.r_max, min(M_coarse, grid.M), grid.stretch,
                  boundary=grid.boundary)
    op = LinearizedOperator(g, balanced)
    Mc = (op.A_minus @ op.A_plus).toarray()
    ev = np.linalg.eigvals(Mc)
    ev = ev[np.abs(ev.imag) < 1e-8 * np.abs(ev).max()].real
    return ev.min()


def _rq(op, x):
    y = op.A_plus @ x
    return (y @ (op.grid.vol * (op.A_minus @ y))) / (y @ (op.grid.vol * x))


def eigenpair(op, tol=1e-12, max_iter=200, shift=None, polish=2):
    """Most negative eigenvalue -e0^2 of M = A_minus A_plus by shifted inverse
    iteration; Y2 = -A_plus Y1 / e0."""
    grid = op.grid
    Mop = (op.A_minus @ op.A_plus).tocsc()
    sigma = _coarse_shift(grid, op.balanced) if shift is None else shift
    if sigma > -1e-8:
        raise NoNegativeMode("coarse spectrum has no negative eigenvalue")
    sigma *= 1 + 1e-3
    I = sp.identity(grid.M, format="csc")
    lu = spla.splu(Mop - sigma * I)
    x = np.exp(-grid.r / 4.0)
    x /= np.linalg.norm(x)
    lam_old = np.inf
    for it in range(1, max_iter + 1):
        x = lu.solve(x)
        x /= np.linalg.norm(x)
        lam = _rq(op, x)
        if abs(lam - lam_old) < tol * abs(lam):
            break
        lam_old = lam
        if it % 40 == 0:
            sigma = lam * (1 + 1e-6)
            lu = spla.splu(Mop - sigma * I)
    if not lam < -1e-8:
        raise NoNegativeMode("inverse iteration converged to %g" % lam)
    e0 = np.sqrt(-lam)
    Y1 = x
    Y2 = -(op.A_plus @ Y1) / e0
    Y = Y1 + 1j * Y2
    # polish on the first-order system: applying M to Y1 amplifies rounding
    # by ~dr^-4, (L - e0) only by dr^-2
    ab = _interleaved_banded(op, e0 * (1 + 1e-9))
    for _ in range(polish):
        z = solve_banded((3, 3), ab, np.ravel(np.column_stack((Y.real, Y.imag))))
        Y = z[0::2] + 1j * z[1::2]
        Y /= np.linalg.norm(Y)
    Y /= np.sqrt(grid.h1_norm_sq(Y))
    if grid.h1_inner(eval_W(grid), Y.real) < 0:
        Y = -Y
    pair = EigenPair(float(e0), Y, 0.0, iterations=it)
    pair.residual = eigen_residual(op, pair)
    pair.B_pm = bilinear_B(op, Y, np.conj(Y))
    return pair


def eigen_residual(op, pair):
    Y = pair.Yplus
    return np.sqrt(op.grid.h1_norm_sq(op.apply(Y) - pair.e0 * Y))


def gap_probe(op, pair, factor, iters=60, seed=0):
    """Inverse iteration at shift -(factor e0)^2 with Y1 deflated; returns the
    final Rayleigh quotient (the nearest remaining eigenvalue of M)."""
    grid = op.grid
    Mop = (op.A_minus @ op.A_plus).tocsc()
    sigma = -(factor * pair.e0) ** 2
    lu = spla.splu(Mop - sigma * sp.identity(grid.M, format="csc"))
    Y1 = pair.Y1
    z = grid.vol * (op.A_plus @ Y1)     # left eigenvector of M
    zY = z @ Y1
    x = np.random.default_rng(seed).standard_normal(grid.M) * np.exp(-grid.r / 20)
    lam = np.nan
    for _ in range(iters):
        x = x - (z @ x) / zY * Y1
        x = lu.solve(x)
        x = x - (z @ x) / zY * Y1
        x /= np.linalg.norm(x)
        lam = _rq(op, x)
    return float(lam)


def _interleaved_banded(op, c):
    A1, A2 = op.A_minus.tocoo(), op.A_plus.tocoo()
    n = 2 * op.grid.M
    rows = np.concatenate([2 * A1.row, 2 * A2.row + 1, np.arange(n)])
    cols = np.concatenate([2 * A1.col + 1, 2 * A2.col, np.arange(n)])
    vals = np.concatenate([A1.data, -A2.data, np.full(n, -float(c))])
    S = sp.csr_matrix((vals, (rows, cols)), shape=(n, n)).todia()
    ab = np.zeros((7, n))
    for k, d in zip(S.offsets, S.data):
        if abs(k) > 3:
            raise SingularSolve("unexpected bandwidth")
        ab[3 - k] += d      # dia storage aligns on columns, same as LAPACK band
    return ab


def resolvent_solve(op, c, Psi, e0=None, margin=1e-6):
    """Phi with (L - c) Phi = Psi."""
    if e0 is not None:
        for x in (-e0, 0.0, e0):
            if abs(c - x) <= margin * e0:
                raise SpectralCollision("shift %g too close to %g" % (c, x))
    elif c == 0:
        raise SpectralCollision("shift 0 is in the spectrum")
    Psi = np.asarray(Psi, dtype=complex)
    op.grid.check(Psi)
    if not np.any(Psi):
        return np.zeros(op.grid.M, dtype=complex)
    ab = _interleaved_banded(op, c)
    rhs = np.empty(2 * op.grid.M)
    rhs[0::2], rhs[1::2] = Psi.real, Psi.imag
    try:
        z = solve_banded((3, 3), ab, rhs)
    except (LinAlgError, ValueError) as exc:
        raise SingularSolve(str(exc))
    if not np.all(np.isfinite(z)):
        raise SingularSolve("non-finite solution")
    return z[0::2] + 1j * z[1::2]


def _constraint_rows(op, pair):
    grid = op.grid
    W, W1 = eval_W(grid), eval_W1(grid)
    dirs = [1j * W, W1.astype(complex), pair.Yplus, pair.Yminus]
    funcs = [lambda f: grid.h1_inner(1j * W, f),
             lambda f: grid.h1_inner(W1, f),
             lambda f: bilinear_B(op, pair.Yplus, f),
             lambda f: bilinear_B(op, pair.Yminus, f)]
    return dirs, funcs


def project_Gperp(op, pair, f):
    """Remove the iW, W1 (Hdot^1) and Y+, Y- (B-pairing) components of f."""
    if abs(pair.B_pm) < 1e-8:
        raise DegenerateProjection("|B(Y+,Y-)| = %g" % abs(pair.B_pm))
    key = ("gperp", id(pair))
    cache = op.grid.cache
    if key not in cache:
        dirs, funcs = _constraint_rows(op, pair)
        G = np.array([[fn(d) for d in dirs] for fn in funcs])
        cache[key] = (dirs, funcs, np.linalg.inv(G))
    dirs, funcs, Ginv = cache[key]
    f = np.asarray(f, dtype=complex)
    coef = Ginv @ np.array([fn(f) for fn in funcs])
    return f - sum(c * d for c, d in zip(coef, dirs))


def smooth_basis(grid, n=12, smin=0.5, smax=20.0):
    widths = np.geomspace(smin, smax, n)
    return np.exp(-grid.r[None, :] ** 2 / (2 * widths[:, None] ** 2))


def coercivity_probe(op, pair, trials=200, seed=0):
    """min over random smooth f in G_perp of Q(f)/||f||^2."""
    rng = np.random.default_rng(seed)
    basis = smooth_basis(op.grid)
    best = np.inf
    for _ in range(trials):
        a = rng.standard_normal(len(basis)) + 1j * rng.standard_normal(len(basis))
        f = project_Gperp(op, pair, a @ basis)
        best = min(best, quadratic_Q(op, f) / op.grid.h1_norm_sq(f))
    return float(best)
