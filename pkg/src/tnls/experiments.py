"""Scenario runner: builds fields from the other modules, runs them, and
collects every measured value next to its tolerance.

A scenario never raises for a numerical failure; the failing stage is
recorded with its error code and the summary is marked failed.
"""
import csv
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import dynamics as dyn
from .errors import GridMismatch, TnlsError
from .grid import load_field, make_grid, save_field
from .ground_state import eval_W, ground_state, scaled_W
from .linearized import (LinearizedOperator, coercivity_probe, discrete_B,
                         eigenpair, gap_probe, quadratic_Q)
from .modulation import derivative_ratio, fit_rate, track, write_series
from .profiles import (assemble_Wka, build_profiles, residual_norms, residual_rate,
                       time_of_amplitude)

NAMES = ("ground", "spectrum", "profiles", "evolve", "classify-sub", "classify-crit",
         "classify-super", "special-minus", "special-plus", "rates")


@dataclass
class Scenario:
    name: str
    dim: int = 3
    grid: dict = field(default_factory=dict)
    evolution: dict = field(default_factory=dict)
    profiles: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    out: str = None
    seed: int = 0

    def __post_init__(self):
        if self.name not in NAMES:
            raise ValueError("unknown scenario %r" % self.name)
        if self.dim not in (3, 4, 5):
            raise ValueError("dim must be 3, 4 or 5")
        self.evo()      # unknown keys or bad values in [evolution] fail here

    def make_grid(self, **over):
        kw = dict(M=4000, r_max=100.0, stretch=8.0)
        kw.update(self.grid)
        kw.update(over)
        return make_grid(self.dim, kw.pop("r_max"), kw.pop("M"), kw.pop("stretch"), **kw)

    def evo(self, **defaults):
        kw = dict(defaults)
        kw.update(self.evolution)
        return dyn.EvolutionConfig(**kw)

    def get(self, key, default):
        return self.params.get(key, default)


class Report:
    """Stages of checks; each check holds value, tolerance and pass flag."""

    def __init__(self, scenario):
        self.scenario = scenario
        self.stages = []
        self.tables = {}
        self.fields = {}

    def stage(self, name):
        st = {"stage": name, "checks": [], "values": {}, "error": None}
        self.stages.append(st)
        return st

    @staticmethod
    def check(st, name, value, tol, ok, weight=True):
        st["checks"].append({"name": name, "value": _clean(value), "tolerance": tol,
                             "pass": bool(ok), "weight": bool(weight)})

    @property
    def passed(self):
        return all(st["error"] is None and all(c["pass"] for c in st["checks"] if c["weight"])
                   for st in self.stages)

    def summary(self):
        s = self.scenario
        return {"scenario": s.name, "dim": s.dim, "seed": s.seed,
                "grid": _clean(s.grid), "passed": self.passed, "stages": _clean(self.stages)}


def _clean(x):
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        return float(x) if np.isfinite(x) else repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


# --- shared pieces ------------------------------------------------------------
def spectral_data(grid):
    if "pair" not in grid.cache:
        op = LinearizedOperator(grid)
        grid.cache["pair"] = (op, eigenpair(op))
    return grid.cache["pair"]


def stable_correction(grid, op, pair, ps, t0, T, dt, stage_len=3.0, updates=2):
    """c such that W_k^a(t0) + c Y- stays on the discrete stable manifold up to T.

    The Y- coordinate of u(t) - W_k^a(t0 + t), measured with the discrete
    pairing, grows like e^{e0 t}; c is adjusted to cancel it at t = T.  T is
    reached in stages of stage_len/e0 so that every shot stays in the linear
    regime; each stage does a Newton step with the predicted growth and then
    secant steps."""
    e0 = pair.e0
    Ym = pair.Yminus
    den = discrete_B(op, Ym, pair.Yplus)
    cfg = dict(dt=dt, observer_stride=10 ** 9, dt_min=dt * 1e-3)
    u0 = assemble_Wka(ps, t0)

    def shoot(c, t_end):
        rec = dyn.evolve(grid, u0 + c * Ym, dyn.EvolutionConfig(t_end=t_end, **cfg))
        return discrete_B(op, rec.final_field - assemble_Wka(ps, t0 + t_end), pair.Yplus) / den

    c, hist = 0.0, []
    stops = list(np.arange(stage_len / e0, T, stage_len / e0)) + [T]
    for Ts in stops:
        Ts = max(dt, round(Ts / dt) * dt)
        gain = np.exp(e0 * Ts)
        f = shoot(c, Ts)
        for _ in range(updates):
            c2 = c - f / gain
            f2 = shoot(c2, Ts)
            if f2 != f and c2 != c:
                gain = (f2 - f) / (c2 - c)
            c, f = c2, f2
        hist.append((Ts, c, f))
    return c, hist


def _trajectory_csv(path, rec):
    keys = ["E", "mass", "h1", "dee_signed", "potential_ratio"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + keys)
        for i, t in enumerate(rec.times):
            w.writerow([repr(float(t))] + [repr(float(rec.diag[k][i])) for k in keys])


def _sign_persistent(dee, floor):
    """No sign change of dee while |dee| > 10 floor."""
    big = np.abs(dee) > 10 * floor
    s = np.sign(dee[big])
    return bool(len(s) == 0 or np.all(s == s[0]))


# --- scenarios ------------------------------------------------------------------
def _ground(s, rep):
    for N in s.get("dims", [s.dim]):
        st = rep.stage("ground-N%d" % N)
        t = time.perf_counter()
        g = make_grid(N, **{**dict(r_max=100.0, M=4000, stretch=8.0), **s.grid})
        gs = ground_state(g)
        el = time.perf_counter() - t
        st["values"].update(dim=N, h1_W=gs.h1_W, energy_W=gs.energy_W,
                            sobolev_CN=gs.sobolev_CN, checks=dict(gs.checks), elapsed_s=el)
        c = gs.checks
        rep.check(st, "energy_vs_h1_over_N", c["energy_vs_h1_over_N"], 1e-8, c["energy_vs_h1_over_N"] < 1e-8)
        rep.check(st, "potential_vs_h1", c["potential_vs_h1"], 1e-8, c["potential_vs_h1"] < 1e-8)
        rep.check(st, "laplacian_residual_interior", c["laplacian_residual_interior"], 1e-4,
                  c["laplacian_residual_interior"] < 1e-4)
        rep.check(st, "runtime", el, 1.0, el < 1.0, weight=False)


def spectrum_values(grid, seed=0, trials=200, drift_grid=None):
    """Everything the spectrum stage reports, as a dict."""
    N = grid.dim
    gs = ground_state(grid)
    op_u = LinearizedOperator(grid, balanced=False)
    op, pr = spectral_data(grid)
    nW = np.sqrt(gs.h1_W)
    W, W1 = gs.W, gs.W1
    out = {
        "L_iW": np.sqrt(grid.h1_norm_sq(op_u.apply(1j * W))) / nW,
        "L_W1": np.sqrt(grid.h1_norm_sq(op_u.apply(W1.astype(complex)))) / nW,
        "dim": N,
        "Q_W_ratio": quadratic_Q(op, W) / gs.h1_W,
        "Q_W_target": -2.0 / (N - 2),
        "Q_iW": abs(quadratic_Q(op, 1j * W)) / gs.h1_W,
        "Q_W1": abs(quadratic_Q(op, W1)) / gs.h1_W,
        "e0": pr.e0,
        "residual": pr.residual,
        "Q_Yplus": abs(quadratic_Q(op, pr.Yplus)),
        "B_pm": pr.B_pm,
        "coercivity_min": coercivity_probe(op, pr, trials=trials, seed=seed),
        "gap_probe": gap_probe(op, pr, 2.0, seed=seed),
    }
    out["QW_over_h1W"] = out["Q_W_ratio"]
    out["B_Yp_Ym"] = out["B_pm"]
    if drift_grid is not None:
        _, pr2 = spectral_data(drift_grid)
        out["e0_fine"] = pr2.e0
        out["drift"] = abs(pr2.e0 - pr.e0) / pr.e0
    return out


def _spectrum(s, rep):
    st = rep.stage("spectrum")
    t = time.perf_counter()
    g = s.make_grid()
    g2 = s.make_grid(M=2 * g.M)
    v = spectrum_values(g, s.seed, s.get("trials", 200), g2)
    v["elapsed_s"] = time.perf_counter() - t
    st["values"].update(v)
    rep.check(st, "L_iW", v["L_iW"], 1e-3, v["L_iW"] < 1e-3)
    rep.check(st, "L_W1", v["L_W1"], 1e-3, v["L_W1"] < 1e-3)
    d = abs(v["Q_W_ratio"] - v["Q_W_target"])
    rep.check(st, "Q_W_ratio", d, 1e-6, d < 1e-6)
    rep.check(st, "Q_iW", v["Q_iW"], 1e-6, v["Q_iW"] < 1e-6)
    rep.check(st, "Q_W1", v["Q_W1"], 1e-6, v["Q_W1"] < 1e-6)
    rep.check(st, "e0_positive", v["e0"], 0.0, v["e0"] > 0)
    rep.check(st, "residual", v["residual"], 1e-4, v["residual"] < 1e-4)
    rep.check(st, "drift", v["drift"], 1e-3, v["drift"] < 1e-3)
    rep.check(st, "Q_Yplus", v["Q_Yplus"], 1e-4, v["Q_Yplus"] < 1e-4)
    rep.check(st, "B_pm", abs(v["B_pm"]), 1e-3, abs(v["B_pm"]) > 1e-3)
    rep.check(st, "coercivity_min", v["coercivity_min"], 0.0, v["coercivity_min"] > 0)
    rep.tables["spectrum"] = [{k: v[k] for k in ("dim", "e0", "residual", "B_pm", "gap_probe")}]
    pr = spectral_data(g)[1]
    rep.fields["Y1"] = (g, pr.Y1)
    rep.fields["Y2"] = (g, pr.Y2)


def _profiles(s, rep):
    g = s.make_grid()
    op, pr = spectral_data(g)
    k_max = int(s.profiles.get("k_max", 3))
    pf_t = [float(t) for t in s.profiles.get("t_list", [])]
    rows = []
    for a in s.profiles.get("a_values", [-1.0, 1.0]):
        ps = build_profiles(float(a), k_max, op, pr)
        for j, ph in enumerate(ps.phis, start=1):
            rep.fields["Phi_a%+d_j%d" % (a, j)] = (g, ph)
        for k in range(1, k_max + 1):
            st = rep.stage("profiles-a%+d-k%d" % (a, k))
            sub = type(ps)(ps.a, k, ps.phis[:k], ps.e0, op)
            rr = residual_rate(sub)
            ratio = rr["rate"] / rr["target"]
            st["values"].update(rate=rr["rate"], target=rr["target"], r2=rr["r2"])
            rep.check(st, "rate_ratio", abs(ratio - 1), 0.1, abs(ratio - 1) < 0.1)
            rep.check(st, "r2", rr["r2"], 0.99, rr["r2"] > 0.99)
            rows += [{"a": a, "k": k, "t": t, "eps": e} for t, e in zip(rr["t"], rr["eps"])]
            if pf_t:
                st["values"]["eps_at"] = dict(zip(map(str, pf_t), residual_norms(sub, pf_t)))
    rep.tables["profiles"] = rows


def _classify_sub(s, rep):
    st = rep.stage("classify-sub")
    g = s.make_grid()
    W = eval_W(g)
    hW = ground_state(g).h1_W
    delta = s.get("delta", 0.05)
    cfg = s.evo(dt=0.01, t_end=30.0, observer_stride=20)
    rec = dyn.evolve(g, (1 - delta) * W, cfg)
    dee = rec.series("dee_signed")
    st["values"].update(endpoint=rec.endpoint, sup_h1_over_W=float(rec.series("h1").max() / hW),
                        energy_drift=rec.energy_drift, scatter_proxy=dyn.scatter_proxy(rec))
    rep.check(st, "completed", rec.endpoint, "completed", rec.endpoint == "completed")
    rep.check(st, "sup_h1_below_W", st["values"]["sup_h1_over_W"], 1.0,
              st["values"]["sup_h1_over_W"] < 1.0)
    rep.check(st, "no_sign_flip", bool(np.all(dee < 0)), True, np.all(dee < 0))
    _energy_check(rep, st, rec, cfg)
    rep.tables["classify-sub"] = rec


def _energy_check(rep, st, rec, cfg):
    if cfg.sponge is None and rec.endpoint == "completed":
        rep.check(st, "energy_drift", rec.energy_drift, 1e-6, rec.energy_drift < 1e-6)


def _classify_crit(s, rep):
    st = rep.stage("classify-crit")
    g = s.make_grid()
    hW = ground_state(g).h1_W
    th, mu = s.get("theta", 1.0), s.get("mu", 1.3)
    cfg = s.evo(dt=0.01, t_end=10.0, observer_stride=20)
    rec = dyn.evolve(g, scaled_W(g, th, mu), cfg)
    m = float(np.max(np.abs(rec.series("dee_signed"))) / hW)
    st["values"].update(endpoint=rec.endpoint, max_dee_over_W=m, energy_drift=rec.energy_drift)
    rep.check(st, "completed", rec.endpoint, "completed", rec.endpoint == "completed")
    rep.check(st, "max_dee", m, 1e-3, m < 1e-3)
    _energy_check(rep, st, rec, cfg)
    rep.tables["classify-crit"] = rec


def _classify_super(s, rep):
    st = rep.stage("classify-super")
    delta = s.get("delta", 0.05)
    Ms = s.get("resolutions", [4000, 6000])
    cfg = s.evo(dt=0.01, t_end=40.0, observer_stride=50)
    tstar = []
    for M in Ms:
        g = s.make_grid(M=M)
        rec = dyn.evolve(g, (1 + delta) * eval_W(g), cfg)
        st["values"]["endpoint_M%d" % M] = rec.endpoint
        st["values"]["t_star_M%d" % M] = rec.t_star
        rep.check(st, "blowup_M%d" % M, rec.endpoint, "blowup", rec.endpoint == "blowup")
        tstar.append(rec.t_star)
        rep.tables.setdefault("classify-super", rec)
    if all(t is not None for t in tstar):
        spread = (max(tstar) - min(tstar)) / max(tstar)
        st["values"]["t_star_spread"] = spread
        rep.check(st, "t_star_agree", spread, 0.05, spread < 0.05)


def special_forward(g, a, k=3, start_ratio=0.005, floor=1e-8, dt=0.005, extra=0.25):
    """Shoot W_k^a onto the stable manifold and run it; returns the pieces
    the special/rates scenarios report on."""
    op, pr = spectral_data(g)
    e0 = pr.e0
    hW = ground_state(g).h1_W
    ps = build_profiles(a, k, op, pr)
    t0 = time_of_amplitude(ps, start_ratio)
    u0 = assemble_Wka(ps, t0)
    d0 = abs(g.h1_norm_sq(u0) - hW) / hW
    T = round(np.log(d0 / floor) / e0 / dt) * dt
    c, hist = stable_correction(g, op, pr, ps, t0, T, dt)
    stride = max(1, int(round(0.25 / e0 / dt)))
    cfg = dyn.EvolutionConfig(dt=dt, t_end=T + extra / e0, observer_stride=stride,
                              keep_fields=True, dt_min=dt * 1e-3)
    u0 = u0 + c * pr.Yminus
    rec = dyn.evolve(g, u0, cfg)
    states = track(g, rec.times, rec.fields)
    return dict(u0=u0, rec=rec, states=states, e0=e0, t0=t0, c=c, hist=hist, hW=hW, ps=ps)


def _special(s, rep, a):
    name = "special-minus" if a < 0 else "special-plus"
    g = s.make_grid()
    N = g.dim
    pf = s.profiles
    st = rep.stage(name + "-forward")
    r = special_forward(g, a, int(pf.get("k", 3)), pf.get("start_ratio", 0.005),
                        pf.get("floor", 1e-8), s.evolution.get("dt", 0.005))
    rec, states, e0, hW = r["rec"], r["states"], r["e0"], r["hW"]
    dee = rec.series("dee_signed") / hW
    floor = pf.get("floor", 1e-8)
    above = dee[np.abs(dee) > 10 * floor]
    try:
        rate, r2 = fit_rate(rec.times, states, norm=hW)
    except TnlsError as exc:
        st["error"] = exc.code
        rate, r2 = np.nan, np.nan
    st["values"].update(e0=e0, rate=rate, r2=r2, t0=r["t0"], stable_c=r["c"],
                        energy_drift=rec.energy_drift, endpoint=rec.endpoint)
    rep.check(st, "rate_vs_e0", abs(rate / e0 - 1), 0.1, abs(rate / e0 - 1) < 0.1)
    rep.check(st, "r2", r2, 0.99, r2 > 0.99)
    # both sign checks only see samples above ten times the floor
    side = np.all(above < 0) if a < 0 else np.all(above > 0)
    rep.check(st, "gradient_below_W" if a < 0 else "gradient_above_W", bool(side), True, side)
    flips = not _sign_persistent(dee, floor)
    rep.check(st, "no_sign_flip", flips, False, not flips)
    _energy_check(rep, st, rec, dyn.EvolutionConfig(dt=1.0, dt_min=0.5))
    rep.tables[name] = rec
    rep.tables[name + "-modulation"] = (rec.times, states)

    if s.get("backward", True):
        bs = rep.stage(name + "-backward")
        t_back = s.get("t_back", 60.0)
        if a < 0:
            # no sponge here: for N = 3 it eats the slowly decaying W tail
            cfg = dyn.EvolutionConfig(dt=0.01, t_end=t_back, observer_stride=25)
            back = dyn.evolve_backward(g, r["u0"], cfg)
            disp = dyn.is_dispersing(back)
            bs["values"].update(endpoint=back.endpoint, scatter_proxy=dyn.scatter_proxy(back),
                                dispersing=disp)
            rep.check(bs, "dispersing", dyn.scatter_proxy(back), 0.1, disp)
        else:
            cfg = dyn.EvolutionConfig(dt=0.01, t_end=t_back, observer_stride=25)
            back = dyn.evolve_backward(g, r["u0"], cfg)
            blow = back.endpoint == "blowup"
            bs["values"].update(endpoint=back.endpoint, t_star=back.t_star)
            if N == 5:
                rep.check(bs, "blowup", back.endpoint, "blowup", blow)
            else:
                # a solver collapse below the gradient cap decides nothing
                bs["values"]["label"] = ("conjecture-consistent" if blow else
                                         "inconclusive" if back.endpoint == "failed"
                                         else "not-conjecture-consistent")
                rep.check(bs, "blowup", back.endpoint, "blowup", blow, weight=False)
        rep.tables[name + "-backward"] = back


def _rates(s, rep):
    g = s.make_grid()
    pf = s.profiles
    for a in pf.get("a_values", [-1.0, 1.0]):
        st = rep.stage("rates-a%+d" % a)
        r = special_forward(g, float(a), int(pf.get("k", 3)), pf.get("start_ratio", 0.005),
                            pf.get("floor", 1e-8), s.evolution.get("dt", 0.005))
        rec, states, e0, hW = r["rec"], r["states"], r["e0"], r["hW"]
        rate, r2 = fit_rate(rec.times, states, norm=hW)
        ok = [x for x in states if x.ok]
        t_ok = [t for t, x in zip(rec.times, states) if x.ok]
        mu_end = ok[-1].mu
        mid = ok[int(np.searchsorted(t_ok, 0.5 * t_ok[-1]))].mu
        st["values"].update(e0=e0, rate=rate, r2=r2, mu_end=mu_end, mu_half=mid,
                            derivative_ratio=derivative_ratio(rec.times, states),
                            max_ortho_residual=max(x.ortho_residual for x in ok))
        rep.check(st, "rate_vs_e0", abs(rate / e0 - 1), 0.1, abs(rate / e0 - 1) < 0.1)
        rep.check(st, "r2", r2, 0.99, r2 > 0.99)
        dmu = abs(mu_end - mid) / mu_end
        rep.check(st, "mu_converges", dmu, 1e-2, dmu < 1e-2)
        mo = st["values"]["max_ortho_residual"]
        rep.check(st, "ortho_residual", mo, 1e-8, mo < 1e-8)
        rep.tables["rates-a%+d-modulation" % a] = (rec.times, states)


def initial_field(g, init):
    """W | scaledW:c | profile:a,k,t0 | file:path"""
    kind, _, arg = init.partition(":")
    if kind == "W":
        return eval_W(g).astype(complex)
    if kind == "scaledW":
        return float(arg) * eval_W(g).astype(complex)
    if kind == "profile":
        a, k, t0 = arg.split(",")
        op, pr = spectral_data(g)
        return assemble_Wka(build_profiles(float(a), int(k), op, pr), float(t0))
    if kind == "file":
        g2, vals = load_field(arg)
        if g2.params() != g.params():
            raise GridMismatch("field file grid differs from the configured grid")
        return np.asarray(vals, dtype=complex)
    raise ValueError("unknown init %r" % init)


def _evolve(s, rep):
    st = rep.stage("evolve")
    g = s.make_grid()
    u0 = initial_field(g, s.get("init", "W"))
    cfg = s.evo(dt=0.01, t_end=1.0, observer_stride=10)
    rec = dyn.evolve(g, u0, cfg)
    st["values"].update(endpoint=rec.endpoint, t_star=rec.t_star, steps=rec.steps,
                        halvings=rec.halvings, energy_drift=rec.energy_drift,
                        scatter_proxy=dyn.scatter_proxy(rec), error=rec.error)
    rep.check(st, "no_solver_failure", rec.error, None, rec.error is None)
    _energy_check(rep, st, rec, cfg)
    rep.tables["evolve"] = rec


_RUNNERS = {
    "ground": _ground, "spectrum": _spectrum, "profiles": _profiles, "evolve": _evolve,
    "classify-sub": _classify_sub, "classify-crit": _classify_crit,
    "classify-super": _classify_super,
    "special-minus": lambda s, r: _special(s, r, -1.0),
    "special-plus": lambda s, r: _special(s, r, 1.0),
    "rates": _rates,
}


def run_scenario(s):
    rep = Report(s)
    t = time.perf_counter()
    try:
        _RUNNERS[s.name](s, rep)
    except TnlsError as exc:
        st = rep.stages[-1] if rep.stages and rep.stages[-1]["error"] is None else rep.stage(s.name)
        st["error"] = exc.code
        st["message"] = str(exc)
    rep.elapsed = time.perf_counter() - t
    return rep


def emit_report(rep, out):
    """summary.json, per-stage CSVs and plot_data.csv under ``out``."""
    os.makedirs(out, exist_ok=True)
    summ = rep.summary() if rep is not None else {"stages": [], "passed": True}
    summ["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    if rep is not None:
        summ["elapsed_s"] = getattr(rep, "elapsed", None)
    paths = [os.path.join(out, "summary.json")]
    with open(paths[0], "w") as fh:
        json.dump(summ, fh, indent=2, sort_keys=True)
    if rep is None:
        return paths
    for name, (g, f) in rep.fields.items():
        p = os.path.join(out, name + ".csv")
        save_field(p, g, f)
        paths.append(p)
    plot = []
    for name, tab in rep.tables.items():
        p = os.path.join(out, name + ".csv")
        if isinstance(tab, dyn.TrajectoryRecord):
            _trajectory_csv(p, tab)
            d = np.abs(tab.series("dee_signed"))
            plot += [(name, t, np.log10(x) if x > 0 else "") for t, x in zip(tab.times, d)]
        elif isinstance(tab, tuple):
            write_series(p, *tab)
        elif isinstance(tab, list) and tab:
            with open(p, "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=list(tab[0]))
                w.writeheader()
                for row in tab:
                    w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        else:
            continue
        paths.append(p)
    if plot:
        p = os.path.join(out, "plot_data.csv")
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["series", "t", "log10_dee"])
            w.writerows(plot)
        paths.append(p)
    return paths
