"""Radial flow i u_t + Lap u + |u|^{p-1} u = 0 by relaxation Crank-Nicolson.

The nonlinearity enters through an auxiliary potential phi living at half
steps,

    phi^{n+1/2} = 2 |u^n|^{p-1} - phi^{n-1/2},
    i (u^{n+1} - u^n)/dt + (Lap + q + phi^{n+1/2} + i gamma)(u^{n+1} + u^n)/2 = 0,

so each step is one tridiagonal solve.  q is the O(h^2) balancing potential
that makes W an exact discrete equilibrium (zero when ``balanced`` is off),
gamma >= 0 the optional sponge.

The recurrence for phi has a neutral mode that flips sign every step.  A
start with an O(h^2) error excites it and it never decays, which shows up as
a floor in quantities that should go to zero.  phi^{1/2} is therefore put on
the smooth branch, phi^{1/2} = f(u^0) + (f(u^1) - f(u^-1))/4 + O(h^3), with
u^{+-1} from a few substeps; it is rebuilt whenever dt changes.
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import SolverDiverged, TnlsError
from .ground_state import (balance_potential, energy, eval_W, ground_state,
                           p_crit, two_star)

SOLVE_TOL = 1e-8


@dataclass
class EvolutionConfig:
    dt: float = 1e-2
    t_end: float = 1.0
    scheme: str = "crank-nicolson-relaxation"
    sponge: tuple = None            # (start radius, strength)
    blowup_factor: float = 3.0
    dt_min: float = 1e-6
    observer_stride: int = 10
    relax_tol: float = 0.05
    balanced: bool = True
    nonlinear: bool = True
    keep_fields: bool = False
    scatter_stop: bool = False
    scatter_ratio: float = 0.1
    max_steps: int = None
    start_substeps: int = 4         # 0: plain half-step predictor

    def __post_init__(self):
        if self.scheme != "crank-nicolson-relaxation":
            raise ValueError("unknown scheme %r" % self.scheme)
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 < self.dt_min < self.dt:
            raise ValueError("need 0 < dt_min < dt")
        if not self.blowup_factor > 1:
            raise ValueError("blowup_factor must exceed 1")
        if int(self.observer_stride) < 1:
            raise ValueError("observer_stride >= 1")
        if self.sponge is not None:
            self.sponge = tuple(float(x) for x in self.sponge)


@dataclass
class TrajectoryRecord:
    times: list = field(default_factory=list)
    diag: dict = field(default_factory=dict)
    fields: list = field(default_factory=list)
    endpoint: str = "running"
    t_star: float = None
    error: str = None
    steps: int = 0
    halvings: int = 0
    energy_drift: float = 0.0

    def series(self, key):
        return np.asarray(self.diag[key])

    def final(self, key):
        return self.diag[key][-1]


class Flow:
    """Discrete operators for one grid and config."""

    def __init__(self, grid, cfg):
        self.grid, self.cfg = grid, cfg
        N = grid.dim
        self.p = p_crit(N)
        self.q = balance_potential(grid) if cfg.balanced else np.zeros(grid.M)
        self.gamma = np.zeros(grid.M)
        if cfg.sponge is not None:
            r0, strength = cfg.sponge
            x = np.clip((grid.r - r0) / (grid.r_max - r0), 0.0, None)
            self.gamma = strength * x ** 2
        W = eval_W(grid)
        self.KW = float(W @ grid.stiffness(W))
        self._lin = self.q + 1j * self.gamma

    def phi(self, u):
        if not self.cfg.nonlinear:
            return np.zeros(len(u))
        return np.abs(u) ** (self.p - 1)

    def solve(self, u, phi, dt):
        out = np.empty(len(u), dtype=complex)
        res = kernels.cn_step(u, phi + self._lin, self.grid.vol, self.grid.kdiag,
                              self.grid.koff, dt, out)
        if not res < SOLVE_TOL:
            raise SolverDiverged("linear solve residual %.2e" % res)
        return out

    def predictor(self, u, dt):
        uh = self.solve(u, self.phi(u), 0.5 * dt)
        return self.phi(0.5 * (u + uh))

    def _substep(self, u, h, m):
        ph = self.predictor(u, h / m)
        for _ in range(m):
            u, ph, _ = self.advance(u, ph, h / m)
        return u

    def start(self, u, dt):
        """phi^{1/2} on the smooth branch of the relaxation recurrence."""
        m = self.cfg.start_substeps
        if not m or not self.cfg.nonlinear:
            return self.predictor(u, dt)
        fp = self.phi(self._substep(u, dt, m))
        fm = self.phi(self._substep(u, -dt, m))
        return self.phi(u) + 0.25 * (fp - fm)

    def advance(self, u, phi_half, dt):
        """One step; returns (u^{n+1}, phi^{n+3/2}, relaxation mismatch)."""
        u1 = self.solve(u, phi_half, dt)
        mid = self.phi(0.5 * (u + u1))
        scale = np.max(mid)
        err = float(np.max(np.abs(mid - phi_half)) / scale) if scale > 0 else 0.0
        return u1, 2 * self.phi(u1) - phi_half, err

    def kinetic(self, u):
        return float(np.real(np.vdot(u, self.grid.stiffness(u))))

    def hamiltonian(self, u):
        """Discrete energy of the scheme's spatial semi-discretization."""
        g = self.grid
        a2 = np.abs(u) ** 2
        pot = 0.0
        if self.cfg.nonlinear:
            pot = np.sum(g.vol * a2 ** (two_star(g.dim) / 2)) / two_star(g.dim)
        return 0.5 * self.kinetic(u) - 0.5 * np.sum(g.vol * self.q * a2) - pot

    def mass(self, u):
        return float(np.sum(self.grid.vol * np.abs(u) ** 2))

    def absorbed(self, u0, u1, dt):
        """Mass removed by the sponge over one step (trapezoid)."""
        if self.cfg.sponge is None:
            return 0.0
        v = self.grid.vol * self.gamma
        return dt * float(np.sum(v * (np.abs(u0) ** 2 + np.abs(u1) ** 2)))


def step(grid, u, dt, cfg):
    """One relaxation step from scratch (phi^{1/2} by predictor)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    fl = Flow(grid, cfg)
    u = np.asarray(u, dtype=complex)
    grid.check(u)
    u1, _, _ = fl.advance(u, fl.start(u, dt), dt)
    return u1


def _observe(fl, rec, t, u, dt, absorbed):
    g = fl.grid
    h1 = g.h1_norm_sq(u)
    hW = ground_state(g).h1_W
    pot = g.lp_pow(u, two_star(g.dim))
    d = rec.diag
    rec.times.append(t)
    for key, val in (("E", energy(g, u)), ("E_h", fl.hamiltonian(u)),
                     ("mass", fl.mass(u)), ("absorbed", absorbed), ("h1", h1),
                     ("dee_signed", h1 - hW), ("potential_ratio", pot / h1 if h1 > 0 else 0.0),
                     ("dt", dt)):
        d.setdefault(key, []).append(float(val))
    if fl.cfg.keep_fields:
        rec.fields.append(u.copy())


def evolve(grid, u0, cfg, flow=None):
    """Run the flow with halving on relaxation stress; always returns the
    (possibly partial) record."""
    fl = flow or Flow(grid, cfg)
    rec = TrajectoryRecord()
    u = np.array(u0, dtype=complex)
    grid.check(u)
    t, dt = 0.0, cfg.dt
    absorbed = 0.0
    eps_t = 1e-12 * max(1.0, abs(cfg.t_end))
    _observe(fl, rec, t, u, dt, absorbed)
    E0 = rec.diag["E_h"][0]
    kin_cap = cfg.blowup_factor ** 2 * fl.KW
    n = 0
    try:
        phi, dt_used = None, None
        while t < cfg.t_end - eps_t:
            h = min(dt, cfg.t_end - t)
            if phi is None or h != dt_used:
                phi = fl.start(u, h)
                dt_used = h
            u1, phi1, err = fl.advance(u, phi, h)
            if err > cfg.relax_tol or not np.all(np.isfinite(u1)):
                dt *= 0.5
                rec.halvings += 1
                phi = None
                if dt < cfg.dt_min:
                    if fl.kinetic(u) > kin_cap:
                        rec.endpoint, rec.t_star = "blowup", t
                    else:
                        rec.endpoint = "failed"
                        rec.error = SolverDiverged.code
                    break
                continue
            absorbed += fl.absorbed(u, u1, h)
            u, phi = u1, phi1
            t += h
            n += 1
            if cfg.max_steps is not None and n >= cfg.max_steps:
                rec.endpoint = "step-limit"
                break
            if n % cfg.observer_stride == 0 or t >= cfg.t_end - eps_t:
                _observe(fl, rec, t, u, h, absorbed)
                if cfg.scatter_stop and _dispersing(rec, cfg):
                    rec.endpoint = "scatter-proxy"
                    break
        else:
            rec.endpoint = "completed"
    except TnlsError as exc:
        rec.endpoint, rec.error = "failed", exc.code
    rec.steps = n
    if rec.times[-1] != t:
        _observe(fl, rec, t, u, dt, absorbed)
    rec.final_field = u
    Eh = np.asarray(rec.diag["E_h"])
    rec.energy_drift = float(np.max(np.abs(Eh - E0)) / max(abs(E0), 1e-300))
    return rec


def _dispersing(rec, cfg):
    t = np.asarray(rec.times)
    if len(t) < 8 or t[-1] <= 0:
        return False
    tail = t >= 0.75 * t[-1]
    return bool(np.all(np.asarray(rec.diag["potential_ratio"])[tail] < cfg.scatter_ratio))


def scatter_proxy(rec):
    """Terminal ratio int |u|^{2*} / int |grad u|^2 (0 for u = 0)."""
    return float(rec.diag["potential_ratio"][-1])


def is_dispersing(rec, threshold=0.1):
    """Potential ratio below ``threshold`` over the last quarter of the run."""
    t = np.asarray(rec.times)
    ratio = np.asarray(rec.diag["potential_ratio"])
    tail = t >= 0.75 * t[-1]
    return bool(np.all(ratio[tail] < threshold))


def evolve_backward(grid, u0, cfg):
    """u(-t) via conjugate-then-forward; the record's fields are conjugated back."""
    rec = evolve(grid, np.conj(u0), cfg)
    rec.fields = [np.conj(f) for f in rec.fields]
    rec.final_field = np.conj(rec.final_field)
    return rec
