import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.optimize import brentq

from tnls.errors import NewtonStall, NotNearW, Unsolvable, WindowEmpty
from tnls.ground_state import dW_of, dee, eval_W, ground_state, threshold_scale
from tnls.grid import sphere_area
from tnls.linearized import project_Gperp, smooth_basis
from tnls.modulation import (ModulationState, concentration_scale, derivative_ratio,
                             fit_modulation, fit_rate, ortho_residual, track, write_series)
from tnls.profiles import assemble_Wka, build_profiles

from conftest import bump, ref, spec

# frozen from concentration_scale(W) on the reference grid, checked below
# against quad + brentq on the closed-form W
LAMBDA_W = {3: 0.27639673, 4: 0.27097074, 5: 0.24015232}


def lambda_W_oracle(N):
    dens = lambda r: sphere_area(N) * r ** (N - 1) * dW_of(r, N) ** 2
    EW = quad(dens, 0, np.inf, epsabs=0, epsrel=1e-13, limit=200)[0] / N
    F = lambda rho: quad(dens, 0, rho, epsabs=0, epsrel=1e-13, limit=200)[0] - EW
    return 1 / brentq(F, 0.1, 100.0, xtol=1e-14)


def test_W_is_fixed_point(N):
    g = ref(N)
    st_ = fit_modulation(g, eval_W(g))
    assert abs(st_.theta) < 1e-9 and abs(st_.mu - 1) < 1e-9 and abs(st_.alpha) < 1e-9
    assert np.abs(st_.utilde).max() < 1e-9


@pytest.mark.parametrize("theta,mu", [(0.3, 1.2), (-2.0, 0.8)])
def test_recovers_group_element(N, theta, mu):
    g = ref(N)
    st_ = fit_modulation(g, g.rescale_phase(eval_W(g), theta, mu))
    assert abs(st_.theta - theta) < 1e-6 and abs(st_.mu - mu) < 1e-6
    assert abs(st_.alpha) < 1e-6


def perturbed(g, seed=0, eps=0.01):
    op, pr = spec(g.dim)
    rng = np.random.default_rng(seed)
    B = smooth_basis(g)
    f = (rng.standard_normal(len(B)) + 1j * rng.standard_normal(len(B))) @ B
    f = project_Gperp(op, pr, f)
    f /= np.sqrt(g.h1_norm_sq(f))
    return eval_W(g) + eps * np.sqrt(ground_state(g).h1_W) * f


@settings(max_examples=12, deadline=None)
@given(theta0=st.floats(-3.0, 3.0), mu0=st.floats(0.7, 1.4), seed=st.integers(0, 5))
def test_equivariance(theta0, mu0, seed):
    g = ref(3)
    u = perturbed(g, seed)
    a = fit_modulation(g, u)
    b = fit_modulation(g, g.rescale_phase(u, theta0, mu0))
    dth = np.angle(np.exp(1j * (b.theta - a.theta - theta0)))
    assert abs(dth) < 1e-6
    assert abs(b.mu / (a.mu * mu0) - 1) < 1e-6
    assert abs(b.alpha - a.alpha) < 1e-6


@pytest.mark.parametrize("seed", range(4))
def test_orthogonality(N, seed):
    g = ref(N)
    st_ = fit_modulation(g, g.rescale_phase(perturbed(g, seed), 0.4, 1.1))
    assert st_.ortho_residual < 1e-8
    assert ortho_residual(g, st_.utilde) < 1e-8


@pytest.mark.parametrize("branch", ["lower", "upper"])
@pytest.mark.parametrize("seed", range(3))
def test_alpha_comparable_to_dee_at_threshold(N, branch, seed):
    g = ref(N)
    hW = ground_state(g).h1_W
    u = perturbed(g, seed)
    u = threshold_scale(g, u, branch) * u
    st_ = fit_modulation(g, u)
    ratio = abs(st_.alpha) / (st_.dee_mag / hW)
    assert 0.1 <= ratio <= 10
    assert np.sign(st_.alpha) == np.sign(st_.dee_signed) == (-1 if branch == "lower" else 1)


def test_lambda_W_oracle(N):
    assert abs(lambda_W_oracle(N) / LAMBDA_W[N] - 1) < 1e-6


def test_lambda_W_resolution(N):
    for M in (4000, 8000):
        g = ref(N, M)
        assert abs(concentration_scale(g, eval_W(g)) / LAMBDA_W[N] - 1) < 1e-4


@pytest.mark.parametrize("mu", [0.5, 0.8, 1.5])
def test_lambda_scaling(mu):
    g = ref(4)
    lam = concentration_scale(g, g.rescale_phase(eval_W(g), 0.0, mu))
    assert abs(lam * mu / LAMBDA_W[4] - 1) < 1e-4


def test_lambda_unsolvable():
    g = ref(3)
    # ||0.7 W||^2 = 0.49 ||W||^2 < 0.9 * 2 E(W) = 0.6 ||W||^2
    with pytest.raises(Unsolvable):
        concentration_scale(g, 0.7 * eval_W(g))
    with pytest.raises(Unsolvable):
        concentration_scale(g, np.zeros(g.M))


def test_not_near_W():
    g = ref(3)
    with pytest.raises(NotNearW):
        fit_modulation(g, 1.5 * eval_W(g))
    with pytest.raises(NotNearW):
        fit_modulation(g, bump(g))


def test_newton_stall():
    g = ref(3)
    with pytest.raises(NewtonStall):
        fit_modulation(g, g.rescale_phase(eval_W(g), 0.5, 1.3), seed=(0.0, 1.0), max_iter=1)


def test_window_empty_on_W():
    g = ref(3)
    W = eval_W(g)
    times = [0.0, 1.0, 2.0, 3.0]
    states = track(g, times, [W] * 4)
    with pytest.raises(WindowEmpty):
        fit_rate(times, states, norm=ground_state(g).h1_W)


def test_track_marks_far_fields():
    g = ref(3)
    states = track(g, [0.0, 1.0], [1.5 * eval_W(g), eval_W(g)])
    assert not states[0].ok and states[1].ok


@pytest.mark.parametrize("a", [-1.0, 1.0])
def test_rate_on_approximate_solution(N, a):
    """Along W_k^a(t) itself the distance to W decays like e^{-e0 t}."""
    g = ref(N)
    op, pr = spec(N)
    hW = ground_state(g).h1_W
    ps = build_profiles(a, 3, op, pr)
    s = np.geomspace(0.05, 1e-6, 30)
    times = -np.log(s) / pr.e0
    fields = [g.rescale_phase(assemble_Wka(ps, t), 0.2, 1.1) for t in times]
    states = track(g, times, fields)
    rate, r2 = fit_rate(times, states, norm=hW)
    assert abs(rate / pr.e0 - 1) < 0.1 and r2 > 0.99
    ok = [x for x in states if x.ok]
    assert all(np.sign(x.alpha) == np.sign(x.dee_signed) for x in ok)
    assert all(x.ortho_residual < 1e-8 for x in ok)
    mid = ok[len(ok) // 2]
    assert abs(ok[-1].mu - mid.mu) < 1e-2 * ok[-1].mu
    assert abs(ok[-1].mu - 1.1) < 1e-4
    assert np.isfinite(derivative_ratio(times, states))


def test_derivative_ratio_skips_bad_states():
    bad = ModulationState(np.nan, np.nan, np.nan, None, 1.0, False)
    assert derivative_ratio([0.0, 1.0], [bad, bad]) == 0.0


def test_write_series(tmp_path):
    g = ref(3)
    W = eval_W(g)
    states = track(g, [0.0, 1.0], [W, 0.99 * W])
    p = tmp_path / "m.csv"
    write_series(p, [0.0, 1.0], states)
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["t", "theta", "mu", "alpha", "dee_mag", "ortho_residual", "ok"]
    assert len(rows) == 3 and rows[2][-1] == "1"
    assert abs(float(rows[2][4]) - dee(g, 0.99 * W)[1]) < 1e-12
