"""Localized virial quantities.

phi_R(x) = R^2 phi(|x|/R) with phi(r) = r^2 near the origin,

    G_R = 2 Im int conj(u) grad u . grad phi_R,
    G_R' = 4 int |u_r|^2 phi_R'' - 4/N int |u|^{2*} Lap phi_R - int |u|^2 Lap^2 phi_R
         = 8 (int |grad u|^2 - int |u|^{2*}) + A_R(u).

Cutoffs are piecewise polynomials in r/R; every derivative field is exact.

* sec3: r^2 on [0,1], the degree-7 Hermite blend to 0 on [1,2], 0 beyond;
* sec4: phi' = 2 r chi(r) with chi a C^3 step 1 -> 0 on [1,2], so
  phi'' = 2 chi + 2 r chi' <= 2; phi is then constant and is brought to zero
  by a C^3 taper on [2, 2 + TAPER], long enough that phi'' <= 2 holds there too;
* mass: psi = 1 on [0,1], C^3 step down to 0 on [1,2].
"""
import csv
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial as Poly
from scipy.integrate import quad
from scipy.interpolate import CubicHermiteSpline

from .errors import ConstraintViolated, NotThreshold, SupportExceedsGrid
from .ground_state import energy, ground_state, two_star
from .grid import simpson_weights

TAPER = 3.0
_x = Poly([0.0, 1.0])
SMOOTH7 = 35 * _x ** 4 - 84 * _x ** 5 + 70 * _x ** 6 - 20 * _x ** 7


def _shift(p, a, scale=1.0):
    """q(r) = p((r - a)/scale)"""
    return p(Poly([-a / scale, 1.0 / scale]))


class Piecewise:
    """Polynomials on [b_k, b_{k+1}); zero past the last break."""

    def __init__(self, breaks, polys):
        self.breaks = np.asarray(breaks, float)
        self.polys = list(polys)

    def __call__(self, r, deriv=0):
        r = np.asarray(r, float)
        out = np.zeros_like(r)
        for k, p in enumerate(self.polys):
            lo, hi = self.breaks[k], self.breaks[k + 1]
            m = (r >= lo) & (r < hi)
            if m.any():
                out[m] = p.deriv(deriv)(r[m]) if deriv else p(r[m])
        return out

    @property
    def end(self):
        return self.breaks[-1]


def _sec3():
    # degree-7 q on [1,2]: q, q', q'', q''' = (1, 2, 2, 0) at 1 and 0 at 2
    t = Poly([-1.0, 1.0])
    A = np.zeros((8, 8))
    rhs = np.array([1.0, 2.0, 2.0, 0.0, 0, 0, 0, 0])
    basis = [t ** j for j in range(8)]
    for i, (pt, d) in enumerate([(1, 0), (1, 1), (1, 2), (1, 3), (2, 0), (2, 1), (2, 2), (2, 3)]):
        A[i] = [b.deriv(d)(pt) if d else b(pt) for b in basis]
    c = np.linalg.solve(A, rhs)
    q = sum(cj * b for cj, b in zip(c, basis))
    return Piecewise([0, 1, 2], [Poly([0, 0, 1.0]), q])


def _sec4(taper=TAPER):
    chi = 1 - _shift(SMOOTH7, 1.0)
    dphi = 2 * _x * chi
    phi = dphi.integ()
    phi = phi - phi(1.0) + 1.0
    c = phi(2.0)
    tail = c * (1 - _shift(SMOOTH7, 2.0, taper))
    return Piecewise([0, 1, 2, 2 + taper], [Poly([0, 0, 1.0]), phi, tail])


def _mass():
    return Piecewise([0, 1, 2], [Poly([1.0]), 1 - _shift(SMOOTH7, 1.0)])


_BUILDERS = {"sec3": _sec3, "sec4": _sec4, "mass": _mass}


@dataclass
class Cutoff:
    kind: str
    R: float
    shape: Piecewise
    dim: int
    fields: tuple = None

    def eval(self, r):
        """(phi_R, phi_R', phi_R'', Lap phi_R, Lap^2 phi_R, (Lap phi_R)')
        at radii r > 0."""
        R, N, s = self.R, self.dim, self.shape
        x = np.asarray(r, float) / R
        d = [s(x, k) for k in range(5)]
        lap = d[2] + (N - 1) * d[1] / x
        dlap = d[3] + (N - 1) * (d[2] / x - d[1] / x ** 2)
        bilap = (d[4] + 2 * (N - 1) * d[3] / x
                 + (N - 1) * (N - 3) * (d[2] / x ** 2 - d[1] / x ** 3))
        out = [R * R * d[0], R * d[1], d[2], lap, bilap / (R * R), dlap / R]
        if self.kind != "mass":
            # r^2 piece, written out so it is exact
            r = np.asarray(r, float)
            m = x <= 1
            out[0][m], out[1][m], out[2][m] = r[m] ** 2, 2 * r[m], 2.0
            out[3][m], out[4][m], out[5][m] = 2.0 * N, 0.0, 0.0
        return tuple(out)

    def psi(self, r):
        return self.shape(np.asarray(r, float) / self.R)

    @property
    def support(self):
        return self.shape.end * self.R


def make_cutoff(kind, R, grid):
    if kind not in _BUILDERS:
        raise ValueError("unknown cutoff kind %r" % kind)
    if not R > 0:
        raise ValueError("R must be positive")
    c = Cutoff(kind, float(R), _BUILDERS[kind](), grid.dim)
    if c.support > grid.r_max:
        raise SupportExceedsGrid("support %g beyond r_max %g" % (c.support, grid.r_max))
    c.fields = c.eval(grid.r)
    check_constraints(c, grid)
    return c


def check_constraints(c, grid, tol=1e-12):
    r, R = grid.r, c.R
    if c.kind == "mass":
        psi = c.psi(r)
        bad = np.any(psi < -tol) or np.any(psi > 1 + tol)
        bad |= np.any(psi[r <= R] != 1) or np.any(psi[r >= 2 * R] != 0)
    else:
        phi, _, d2 = c.fields[:3]
        inner = r <= R
        bad = np.any(phi[inner] != r[inner] ** 2)
        if c.kind == "sec3":
            bad |= np.any(phi[r >= 2 * R] != 0)
        else:
            bad |= np.any(phi < -tol * R * R) or np.any(d2 > 2 + tol)
            bad |= np.any(phi[r >= c.support] != 0)
    if bad:
        raise ConstraintViolated("%s cutoff fails its constraints at R=%g" % (c.kind, R))


# --- functionals --------------------------------------------------------------
def G_R(grid, u, c):
    u = np.asarray(u, dtype=complex)
    du = grid.ddr(u)
    return 2 * float(np.sum(grid.w * np.imag(np.conj(u) * du) * c.fields[1]))


def F_R(grid, u, c):
    return float(np.sum(grid.w * np.abs(u) ** 2 * c.psi(grid.r)))


def _splines(grid, u):
    """Hermite interpolant of u through the node values and the sixth-order
    node slopes, extended evenly through the origin, and its exact derivative."""
    rr = np.concatenate((-grid.r[::-1], grid.r))
    du = grid.ddr(u)
    h = CubicHermiteSpline(rr, np.concatenate((u[::-1], u)), np.concatenate((-du[::-1], du)))
    return h, h.derivative()


def _panels(grid, sp, fun, a, b, breaks, n=6):
    """int_a^b fun(r, u, u_r) |S^{N-1}| r^{N-1} dr, Gauss-Legendre on the
    cells between grid nodes and cutoff breaks, so no panel straddles a kink."""
    if b <= a:
        return 0.0
    inner = grid.r[(grid.r > a) & (grid.r < b)]
    brk = [x for x in breaks if a < x < b]
    e = np.unique(np.concatenate(([a, b], inner, brk)))
    t, w = np.polynomial.legendre.leggauss(n)
    mid, half = 0.5 * (e[1:] + e[:-1]), 0.5 * np.diff(e)
    r = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    wt = (half[:, None] * w[None, :]).ravel()
    val = fun(r, sp[0](r), sp[1](r))
    return float(np.real(np.sum(wt * val * grid.surface * r ** (grid.dim - 1))))


def _kink_part(c, N, q):
    """4 phi'' |u_r|^2 - 4/N Lap phi |u|^{2*} + 2 Re(conj(u) u_r) (Lap phi)'"""
    def f(r, v, dv):
        _, _, d2, lap, _, dlap = c.eval(r)
        return (4 * d2 * np.abs(dv) ** 2 - 4.0 / N * lap * np.abs(v) ** q
                + 2 * np.real(np.conj(v) * dv) * dlap)
    return f


def _outer(grid, u, fun, j):
    """int_{r >= r_j} fun(r, u, u_r): Simpson in xi over the nodes j..M-1
    plus the fitted exterior."""
    N, n = grid.dim, grid.M - 1 - j
    val = 0.0
    if n >= 2:
        w = simpson_weights(n) * (n / grid.M)
        r = grid.r[j:]
        w = w * grid.surface * r ** (N - 1) * grid.jac[j:]
        val = w @ fun(r, u[j:], grid.ddr(u)[j:])
    if grid.tails:
        val = val + grid.w_ext @ fun(grid.r_ext, grid.tail_eval(u, grid.r_ext),
                                     grid.tail_eval(u, grid.r_ext, True))
    return float(np.real(val))


def A_R(grid, u, c):
    """Error term of the localized virial identity, integrated over r >= R only.

    The -int |u|^2 Lap^2 phi_R term is used in the form
    int 2 Re(conj(u) u_r) (Lap phi_R)', since Lap^2 phi_R jumps at the breaks.
    Break-aligned Gauss panels cover [R, r_j] with r_j the first node past
    the support; beyond it the integrand is the smooth 8|u|^{2*} - 8|u_r|^2."""
    N, q = grid.dim, two_star(grid.dim)
    u = np.asarray(u, dtype=complex)
    sp = _splines(grid, u)
    brk = list(c.shape.breaks * c.R)
    S = lambda r, v, dv: 8 * np.abs(v) ** q - 8 * np.abs(dv) ** 2
    K = _kink_part(c, N, q)
    j = int(np.searchsorted(grid.r, c.support))
    if j >= grid.M - 2:         # support reaches the last nodes: panels to r_max
        j = grid.M - 1
    return (_panels(grid, sp, lambda r, v, dv: S(r, v, dv) + K(r, v, dv), c.R, c.support, brk)
            + _panels(grid, sp, S, c.support, grid.r[j], brk)
            + _outer(grid, u, S, j))


def A_R_bruteforce(grid, u, c):
    """A_R from its three defining integrals over r >= R, Lap^2 phi_R used as
    is, by adaptive quadrature piece by piece (interior nodes passed as
    breakpoints).  Slow; for cross-checks."""
    N, q, R = grid.dim, two_star(grid.dim), c.R
    u = np.asarray(u, dtype=complex)
    su, sd = _splines(grid, u)
    area = grid.surface

    def dens(r):
        ra = np.array([r])
        _, _, d2, lap, bilap, _ = (x[0] for x in c.eval(ra))
        v, dv = su(r), sd(r)
        return area * r ** (N - 1) * (abs(dv) ** 2 * (4 * d2 - 8)
                                      + abs(v) ** q * (8 - 4.0 / N * lap)
                                      - abs(v) ** 2 * bilap)

    def smooth(r):
        v, dv = su(r), sd(r)
        return area * r ** (N - 1) * (8 * abs(v) ** q - 8 * abs(dv) ** 2)

    def integrate(f, a, b):
        pts = grid.r[(grid.r > a) & (grid.r < b)]
        out = 0.0
        for lo, hi in zip(np.concatenate(([a], pts)), np.concatenate((pts, [b]))):
            out += quad(f, lo, hi, epsabs=1e-15, epsrel=1e-13)[0]
        return out

    brk = c.shape.breaks * R
    total = 0.0
    for lo, hi in zip(brk[:-1], brk[1:]):
        if hi > R:
            total += integrate(dens, max(lo, R), hi)
    # beyond the support only the smooth part remains
    rest = 8 * (grid.lp_pow(u, q) - grid.h1_norm_sq(u)) - integrate(smooth, 0.0, c.support)
    return float(total + rest)


def dGdt_formula(grid, u, c):
    """4 int |u_r|^2 phi_R'' - 4/N int |u|^{2*} Lap phi_R - int |u|^2 Lap^2 phi_R"""
    N, q = grid.dim, two_star(grid.dim)
    u = np.asarray(u, dtype=complex)
    return _panels(grid, _splines(grid, u), _kink_part(c, N, q), 0.0, c.support,
                   list(c.shape.breaks * c.R))


def G_bound_ratio(grid, u, c):
    """|G_R| / (R^2 ||u||^2_{Hdot^1})"""
    h1 = grid.h1_norm_sq(u)
    return abs(G_R(grid, u, c)) / (c.R ** 2 * h1) if h1 > 0 else 0.0


def virial_identity_check(grid, times, fields, c, energy_tol=1e-5, strict=False):
    """Centered differences of G_R against the right-hand side of the identity.

    At threshold energy the right-hand side is -(16/(N-2)) dee_signed + A_R
    (dee_signed = ||u||^2 - ||W||^2).  Otherwise the report carries code
    "not-threshold" and uses 8(int|grad u|^2 - int|u|^{2*}) + A_R."""
    N = grid.dim
    gs = ground_state(grid)
    t = np.asarray(times, float)
    if len(t) < 3:
        raise ValueError("need at least three samples")
    E0 = energy(grid, fields[0])
    threshold = abs(E0 - gs.energy_W) <= energy_tol * abs(gs.energy_W)
    if strict and not threshold:
        raise NotThreshold("E(u0)/E(W) - 1 = %.2e" % (E0 / gs.energy_W - 1))
    G = np.array([G_R(grid, u, c) for u in fields])
    A = np.array([A_R(grid, u, c) for u in fields])
    h1 = np.array([grid.h1_norm_sq(u) for u in fields])
    pot = np.array([grid.lp_pow(u, two_star(N)) for u in fields])
    dee = h1 - gs.h1_W
    if threshold:
        rhs = -16.0 / (N - 2) * dee + A
        scale = 16.0 / (N - 2) * np.max(np.abs(dee))
    else:
        rhs = 8 * (h1 - pot) + A
        scale = float(np.max(np.abs(rhs)))
    dG = np.gradient(G, t)
    mis = (dG - rhs)[1:-1]
    return {
        "form": "threshold" if threshold else "general",
        "code": None if threshold else NotThreshold.code,
        "energy_offset": float(E0 / gs.energy_W - 1),
        "max_mismatch": float(np.max(np.abs(mis))),
        "rms_mismatch": float(np.sqrt(np.mean(mis ** 2))),
        "scale": float(scale),
        "rows": {"t": t, "G_R": G, "dGdt_fd": dG, "rhs_identity": rhs, "A_R": A,
                 "mismatch": dG - rhs},
    }


def write_report(path, report):
    rows = report["rows"]
    keys = ["t", "G_R", "dGdt_fd", "rhs_identity", "A_R", "mismatch"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for i in range(len(rows["t"])):
            w.writerow([repr(float(rows[k][i])) for k in keys])
