"""Approximate special solutions W_k^a = W + sum_{j<=k} e^{-j e0 t} Phi_j.

Phi_1 = a Y+, and Phi_{j+1} = -(L - (j+1) e0)^{-1} Psi_j where Psi_j is the
s^{j+1} coefficient (s = e^{-e0 t}) of the residual of W_j^a.  The residual
of W_k^a is then O(s^{k+1}).

Psi_j is read off R(v(s)) by sampling s on a circle |s| = s0 and taking a
discrete Fourier transform.  For complex s the nonlinearity is continued
holomorphically: with z = v/W and z* = (sum s^j conj(Phi_j))/W,

    J(z, z*) = -i [(1+z)^((p+1)/2) (1+z*)^((p-1)/2) - 1 - (p+1)/2 z - (p-1)/2 z*],

which equals J(z) = -i[|1+z|^{p-1}(1+z) - 1 - ...] when s is real.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.special import binom

from .errors import AmplitudeTooLarge, IllConditioned
from .linearized import resolvent_solve

K_MAX = 6


@dataclass
class ProfileSet:
    a: float
    k: int
    phis: list
    e0: float
    op: object = field(repr=False, default=None)

    @property
    def grid(self):
        return self.op.grid


def nonlinear_R(op, v):
    """R(v) = -i|W+v|^{p-1}(W+v) + i W^p + i p V v1 - V v2"""
    W, V, p = op.W, op.V, op.p
    v = np.asarray(v, dtype=complex)
    u = W + v
    Wp = np.abs(W) ** (p - 1) * W       # same rounding as the first term: R(0) == 0
    return (-1j * np.abs(u) ** (p - 1) * u + 1j * Wp
            + 1j * p * V * v.real - V * v.imag)


def J_direct(p, z):
    z = np.asarray(z, dtype=complex)
    return -1j * (np.abs(1 + z) ** (p - 1) * (1 + z) - 1
                  - (p + 1) / 2 * z - (p - 1) / 2 * np.conj(z))


def J_holo(p, z, zs):
    """J with z and conj(z) replaced by independent variables."""
    al, be = (p + 1) / 2, (p - 1) / 2
    return -1j * ((1 + z) ** al * (1 + zs) ** be - 1 - al * z - be * zs)


def J_coeff(p, j1, j2):
    """a_{j1 j2} in J(z) = sum_{j1+j2>=2} a_{j1 j2} z^j1 conj(z)^j2."""
    if j1 + j2 < 2:
        return 0.0
    return -1j * binom((p + 1) / 2, j1) * binom((p - 1) / 2, j2)


def profile_sum(phis, s):
    v = np.zeros_like(phis[0], dtype=complex) if phis else 0.0
    for j, ph in enumerate(phis, start=1):
        v = v + s ** j * ph
    return v


def amplitude_ratio(ps, s):
    """max_r |sum s^j Phi_j| / W"""
    return float(np.max(np.abs(profile_sum(ps.phis, s)) / ps.op.W))


def eval_residual(ps, t, check=True):
    """eps_k(t) = d_t v + L v + R(v), v = sum e^{-j e0 t} Phi_j."""
    s = np.exp(-ps.e0 * t)
    v = profile_sum(ps.phis, s)
    if check and np.max(np.abs(v) / ps.op.W) > 0.5:
        raise AmplitudeTooLarge("max |v|/W > 1/2 at t = %g" % t)
    dv = sum(-j * ps.e0 * s ** j * ph for j, ph in enumerate(ps.phis, start=1))
    return dv + ps.op.apply(v) + nonlinear_R(ps.op, v)


def safe_radius(ps, bound=0.25):
    """Largest s0 with sum_j s0^j |Phi_j| <= bound * W pointwise."""
    mags = [np.abs(ph) / ps.op.W for ph in ps.phis]
    if not any(np.any(m) for m in mags):
        return np.inf
    f = lambda s: max(np.max(sum(s ** j * m for j, m in enumerate(mags, start=1))), 0.0)
    lo, hi = 0.0, 1.0
    while f(hi) < bound:
        hi *= 2
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if f(mid) < bound else (lo, mid)
    return lo


def extract_next_source(ps, n_samples=64, return_info=False):
    """Psi_k: the s^{k+1} coefficient of the residual of W_k^a."""
    k = ps.k
    zero = np.zeros(ps.grid.M, dtype=complex)
    s0 = safe_radius(ps)
    if not np.isfinite(s0):
        return (zero, {"s0": s0}) if return_info else zero
    if n_samples < k + 2:
        raise ValueError("need at least k+2 samples")
    W, p = ps.op.W, ps.op.p
    om = np.exp(2j * np.pi * np.arange(n_samples) / n_samples)
    F = np.empty((n_samples, ps.grid.M), dtype=complex)
    for m, w in enumerate(om):
        s = s0 * w
        z = profile_sum(ps.phis, s) / W
        zs = profile_sum([np.conj(ph) for ph in ps.phis], s) / W
        F[m] = W ** p * J_holo(p, z, zs)
    C = np.fft.fft(F, axis=0) / n_samples       # C[m] ~ c_m s0^m
    lead = np.max(np.abs(C[k + 1]))
    alias = np.max(np.abs(C[n_samples // 2]))
    info = {"s0": s0, "alias": alias / lead if lead > 0 else 0.0}
    if lead > 0 and info["alias"] > 1e-10:
        raise IllConditioned("aliasing level %.1e; raise n_samples" % info["alias"])
    psi = C[k + 1] / s0 ** (k + 1)
    return (psi, info) if return_info else psi


def build_profiles(a, k, op, pair, k_max=K_MAX, n_samples=64):
    if k < 1:
        raise ValueError("k >= 1")
    if k > k_max:
        raise ValueError("k capped at %d" % k_max)
    e0 = pair.e0
    phis = [a * pair.Yplus]
    for j in range(1, k):
        psi = extract_next_source(ProfileSet(a, j, phis, e0, op), n_samples)
        phis.append(-resolvent_solve(op, (j + 1) * e0, psi, e0))
    return ProfileSet(a, k, phis, e0, op)


def assemble_Wka(ps, t):
    s = np.exp(-ps.e0 * t)
    return ps.op.W + profile_sum(ps.phis, s)


def time_of_amplitude(ps, ratio):
    """t at which max|v|/W (leading order) equals ``ratio``."""
    s = safe_radius(ps, ratio)
    return -np.log(s) / ps.e0


def residual_norms(ps, ts):
    g = ps.grid
    return np.array([np.sqrt(g.h1_norm_sq(eval_residual(ps, t))) for t in ts])


def loglinear_fit(t, y):
    """slope and R^2 of log y against t"""
    t, ly = np.asarray(t, float), np.log(np.asarray(y, float))
    A = np.vstack([t, np.ones_like(t)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = A @ coef
    ss_res = np.sum((ly - pred) ** 2)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    return coef[0], 1 - ss_res / ss_tot if ss_tot > 0 else 0.0


def residual_rate(ps, decades=3.0, n=25, start_ratio=0.05):
    """Fit the decay of ||eps_k(t)||: the window starts where the profile
    amplitude is start_ratio*W and spans ``decades`` decades of the
    predicted s^{k+1} decay."""
    t0 = time_of_amplitude(ps, start_ratio)
    t1 = t0 + decades * np.log(10) / ((ps.k + 1) * ps.e0)
    ts = np.linspace(t0, t1, n)
    eps = residual_norms(ps, ts)
    slope, r2 = loglinear_fit(ts, eps)
    return {"rate": -slope, "r2": r2, "target": (ps.k + 1) * ps.e0,
            "t": ts.tolist(), "eps": eps.tolist()}
