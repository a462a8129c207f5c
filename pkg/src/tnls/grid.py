"""Radial grids on [0, r_max] in dimension N = 3, 4, 5.

Nodes are uniform in a mapped coordinate xi in (0, 1],

    r(xi) = r_max * xi / (1 + s*(1 - xi)),

so the spacing near the origin is r_max/((1+s)M) and grows towards r_max.
Fields are plain numpy arrays of length M (real or complex) sampled at the
nodes; every routine takes the grid alongside them.

Three discrete structures live here:

* Simpson weights in xi (``w``) for fourth-order quadrature;
* a conservative three-point Laplacian (finite-volume form, cell volumes
  ``vol``), symmetric for the ``vol`` inner product; used by the flow;
* a sixth-order first derivative for the Hdot^1 products, plus an analytic
  exterior r > r_max built from a fitted tail a0 r^{2-N} + a1 r^{-N} + a2 r^{-N-2}.
"""
import csv
from math import gamma, pi

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline

from .errors import GridError, GridMismatch

DIMS = (3, 4, 5)


def sphere_area(dim):
    """|S^{dim-1}|"""
    return 2 * pi ** (dim / 2) / gamma(dim / 2)


def simpson_weights(M):
    """Composite Simpson weights on M+1 equispaced points of [0,1]; a 3/8 panel
    closes the rule when M is odd."""
    h = 1.0 / M
    w = np.zeros(M + 1)
    m = M if M % 2 == 0 else M - 3
    w[0:m + 1:2] = 2.0
    w[1:m:2] = 4.0
    w[0] = w[m] = 1.0
    w[:m + 1] *= h / 3
    if m < M:
        w[m:] += np.array([1.0, 3.0, 3.0, 1.0]) * 3 * h / 8
    return w


def fd_weights(offsets, order=1):
    """Finite-difference weights at 0 for integer offsets (unit spacing)."""
    x = np.asarray(offsets, dtype=float)
    n = len(x)
    A = np.vander(x, n, increasing=True).T
    b = np.zeros(n)
    b[order] = gamma(order + 1)
    return np.linalg.solve(A, b)


class RadialGrid:
    """Mapped radial grid.

    boundary: "harmonic" (default) closes the Laplacian with the Robin condition
    f' = -(N-2) f / r_max, the one satisfied by r^{2-N}; "dirichlet" puts a zero
    ghost value one cell beyond r_max.
    """

    def __init__(self, dim, r_max, M, stretch=1.0, boundary="harmonic",
                 tails=True, n_ext=40):
        if dim not in DIMS:
            raise GridError("dim must be one of 3, 4, 5")
        if not r_max > 0:
            raise GridError("r_max must be positive")
        if int(M) != M or M < 16:
            raise GridError("need M >= 16")
        if stretch < 0:
            raise GridError("stretch must be nonnegative")
        if boundary not in ("harmonic", "dirichlet"):
            raise GridError("unknown boundary %r" % boundary)
        M = int(M)
        self.dim, self.r_max, self.M = dim, float(r_max), M
        self.stretch = float(stretch)
        self.boundary = boundary
        self.tails = tails
        self.cache = {}
        self.surface = sphere_area(dim)
        N, R, s = dim, self.r_max, self.stretch

        xi = np.arange(1, M + 1) / M
        self.xi = xi
        r = R * xi / (1 + s * (1 - xi))
        r[-1] = R
        self.r = r
        self.jac = R * (1 + s) / (1 + s * (1 - xi)) ** 2
        self.w = simpson_weights(M)[1:] * self.surface * r ** (N - 1) * self.jac

        # finite-volume Laplacian: faces at midpoints, closed face at r = 0,
        # half cell at r_max
        rf = np.concatenate(([0.0], 0.5 * (r[1:] + r[:-1]), [R]))
        self.faces = rf
        self.vol = self.surface / N * (rf[1:] ** N - rf[:-1] ** N)
        c = self.surface * rf[1:-1] ** (N - 1) / np.diff(r)
        kd = np.zeros(M)
        kd[:-1] += c
        kd[1:] += c
        if boundary == "harmonic":
            kd[-1] += (N - 2) * self.surface * R ** (N - 2)
        else:
            kd[-1] += self.surface * R ** (N - 1) / (r[-1] - r[-2])
        self.kdiag = kd
        self.koff = -c

        # sixth-order d/dr
        j = np.arange(M)
        lo = np.clip(j - 3, 0, M - 7)
        cols = lo[:, None] + np.arange(7)[None, :]
        shift = lo - j
        table = {k: fd_weights(np.arange(k, k + 7)) for k in np.unique(shift)}
        vals = np.array([table[k] for k in shift]) * (M / self.jac)[:, None]
        self.D = sp.csr_matrix((vals.ravel(), (np.repeat(j, 7), cols.ravel())),
                               shape=(M, M))

        # tail fit on r >= 3 r_max / 4
        idx = np.nonzero(r >= 0.75 * R)[0]
        if len(idx) < 8:
            idx = np.arange(M - 8, M)
        self._tail_idx = idx
        self._tail_pows = np.array([2 - N, -N, -N - 2], dtype=float)
        B = (r[idx, None] / R) ** self._tail_pows[None, :]
        self._tail_pinv = np.linalg.pinv(B)

        t, gw = np.polynomial.legendre.leggauss(n_ext)
        x = 0.5 * (t + 1)
        self.r_ext = R / x
        self.w_ext = self.surface * self.r_ext ** (N - 1) * (R / x ** 2) * 0.5 * gw

    # --- bookkeeping -----------------------------------------------------
    def params(self):
        return dict(dim=self.dim, r_max=self.r_max, M=self.M,
                    stretch=self.stretch, boundary=self.boundary)

    def check(self, *fields):
        for f in fields:
            if np.shape(f) != (self.M,):
                raise GridMismatch("field of shape %s on grid with M=%d"
                                   % (np.shape(f), self.M))

    def same_as(self, other):
        return self.params() == other.params()

    # --- quadrature ------------------------------------------------------
    def integrate(self, f):
        """sum_i w_i f(r_i)"""
        self.check(f)
        return self.w @ f

    def tail_coeffs(self, f):
        return self._tail_pinv @ np.asarray(f)[self._tail_idx]

    def tail_eval(self, f, rr, deriv=False):
        """Fitted exterior model of f (or of f') at radii rr."""
        c = self.tail_coeffs(f)
        x = np.asarray(rr, dtype=float)[..., None] / self.r_max
        if deriv:
            pw = self._tail_pows
            return (x ** (pw - 1)) @ (c * pw) / self.r_max
        return (x ** self._tail_pows) @ c

    def extend(self, f):
        """Exterior samples (f, f') at the r > r_max quadrature nodes."""
        return self.tail_eval(f, self.r_ext), self.tail_eval(f, self.r_ext, True)

    def integral(self, fun, *fields):
        """Integral over R^N of fun(r, *fields); the exterior part uses the
        fitted tails of the fields when ``tails`` is on."""
        self.check(*fields)
        val = self.w @ fun(self.r, *fields)
        if self.tails:
            ext = [self.tail_eval(f, self.r_ext) for f in fields]
            val = val + self.w_ext @ fun(self.r_ext, *ext)
        return val

    # --- derivatives -----------------------------------------------------
    def ddr(self, f):
        self.check(f)
        return self.D @ f

    def stiffness(self, f):
        """K f with K the symmetric FV stiffness matrix (-vol * Laplacian)."""
        Kf = self.kdiag * f
        Kf[:-1] += self.koff * f[1:]
        Kf[1:] += self.koff * f[:-1]
        return Kf

    def stiffness_matrix(self):
        return sp.diags([self.koff, self.kdiag, self.koff], [-1, 0, 1], format="csr")

    def laplacian_matrix(self):
        return -sp.diags(1.0 / self.vol) @ self.stiffness_matrix()

    def laplacian(self, f):
        self.check(f)
        return -self.stiffness(np.asarray(f)) / self.vol

    def mass_dot(self, f, g):
        """Re sum vol f conj(g): the inner product that makes the Laplacian symmetric."""
        return np.real(np.sum(self.vol * f * np.conj(g)))

    # --- Hdot^1 ----------------------------------------------------------
    def h1_inner(self, f, g):
        """Re int grad f . conj(grad g)."""
        self.check(f, g)
        df, dg = self.D @ f, self.D @ g
        val = np.real(np.sum(self.w * df * np.conj(dg)))
        if self.tails:
            dfe = self.tail_eval(f, self.r_ext, True)
            dge = self.tail_eval(g, self.r_ext, True)
            val += np.real(np.sum(self.w_ext * dfe * np.conj(dge)))
        return float(val)

    def h1_norm_sq(self, f):
        return self.h1_inner(f, f)

    def lp_pow(self, f, q):
        """int |f|^q"""
        return float(self.integral(lambda r, u: np.abs(u) ** q, f))

    def cumulative_gradient(self, f):
        """int_{|x| < r_i} |grad f|^2 at the nodes (trapezoid in xi)."""
        df = self.D @ f
        dens = np.abs(df) ** 2 * self.surface * self.r ** (self.dim - 1) * self.jac
        dens = np.concatenate(([0.0], dens))
        return np.cumsum(0.5 * (dens[1:] + dens[:-1])) / self.M

    # --- symmetries ------------------------------------------------------
    def rescale_phase(self, f, theta, mu):
        """e^{i theta} mu^{-(N-2)/2} f(r/mu) resampled on the grid."""
        if not mu > 0:
            raise GridError("mu must be positive")
        self.check(f)
        f = np.asarray(f)
        if theta == 0 and mu == 1:
            return f.copy()
        rho = self.r / mu
        out = np.empty(self.M, dtype=complex)
        inside = rho <= self.r_max
        # even extension through the origin keeps the spline regular there
        spl = CubicSpline(np.concatenate((-self.r[::-1], self.r)),
                          np.concatenate((f[::-1], f)))
        out[inside] = spl(rho[inside])
        if not inside.all():
            out[~inside] = self.tail_eval(f, rho[~inside])
        out *= np.exp(1j * theta) * mu ** (-(self.dim - 2) / 2)
        if theta == 0 and not np.iscomplexobj(f):
            return out.real
        return out


def make_grid(dim, r_max, M, stretch=1.0, **kw):
    return RadialGrid(dim, r_max, M, stretch, **kw)


def reference_grid(dim, M=4000, r_max=100.0, stretch=8.0, **kw):
    return RadialGrid(dim, r_max, M, stretch, **kw)


# --- CSV --------------------------------------------------------------------
def save_field(path, grid, f):
    f = np.asarray(f)
    grid.check(f)
    with open(path, "w", newline="") as fh:
        fh.write("# dim=%d,r_max=%r,M=%d,stretch=%r,boundary=%s\n"
                 % (grid.dim, grid.r_max, grid.M, grid.stretch, grid.boundary))
        wr = csv.writer(fh)
        wr.writerow(["r", "re", "im"])
        for r, z in zip(grid.r, f.astype(complex)):
            wr.writerow([repr(float(r)), repr(float(z.real)), repr(float(z.imag))])


def load_field(path):
    """Returns (grid, values)."""
    with open(path) as fh:
        head = fh.readline().lstrip("#").strip()
        meta = dict(kv.split("=") for kv in head.split(","))
        rows = list(csv.DictReader(fh))
    grid = RadialGrid(int(meta["dim"]), float(meta["r_max"]), int(meta["M"]),
                      float(meta["stretch"]), boundary=meta.get("boundary", "harmonic"))
    vals = np.array([float(x["re"]) + 1j * float(x["im"]) for x in rows])
    if np.all(vals.imag == 0):
        vals = vals.real
    grid.check(vals)
    return grid, vals
