import numpy as np
import pytest

from tnls import _kernels_py, kernels
from tnls.dynamics import (EvolutionConfig, Flow, evolve, evolve_backward, is_dispersing,
                           scatter_proxy, step)
from tnls.ground_state import eval_W, ground_state

from conftest import bump, ref, spec


def rel_h1(g, u, v):
    return np.sqrt(g.h1_norm_sq(u - v) / g.h1_norm_sq(v))


def run(g, u0, **kw):
    return evolve(g, u0, EvolutionConfig(**kw))


def even(g, amp=0.8, w=1.5, beta=0.2):
    """smooth radial data with a chirp; even in r, so smooth at the origin"""
    return amp * np.exp(-(g.r / w) ** 2) * np.exp(1j * beta * g.r ** 2)


@pytest.mark.parametrize("kw", [dict(dt=0.0), dict(dt=1e-3, dt_min=1e-2), dict(blowup_factor=1.0),
                                dict(observer_stride=0), dict(scheme="split-step")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        EvolutionConfig(**kw)


def test_step_rejects_nonpositive_dt():
    g = ref(3)
    with pytest.raises(ValueError):
        step(g, eval_W(g), 0.0, EvolutionConfig())


@pytest.mark.parametrize("theta", [0.0, 1.1])
def test_W_stationary(N, theta):
    g = ref(N)
    u0 = np.exp(1j * theta) * eval_W(g)
    rec = run(g, u0, dt=1e-3, t_end=0.1, keep_fields=True)
    assert rec.steps == 100 and rec.endpoint == "completed"
    assert rel_h1(g, rec.final_field, u0) < 1e-4


def test_W_long_run_and_dee():
    g = ref(3)
    gs = ground_state(g)
    rec = run(g, gs.W, dt=0.01, t_end=10.0, observer_stride=50)
    assert rec.endpoint == "completed"
    assert np.abs(rec.series("dee_signed")).max() < 1e-3 * gs.h1_W
    assert abs(scatter_proxy(rec) - 1) < 1e-6


def test_free_flow_gaussian():
    """i u_t + Lap u = 0 from exp(-r^2/a): u = (1+4it/a)^{-N/2} exp(-r^2/(a+4it))."""
    N, a = 3, 4.0
    g = ref(N)
    cfg = EvolutionConfig(dt=2e-3, t_end=1.0, nonlinear=False, balanced=False,
                          observer_stride=50, keep_fields=True)
    rec = evolve(g, np.exp(-g.r ** 2 / a), cfg)
    for t, u in zip(rec.times, rec.fields):
        exact = (1 + 4j * t / a) ** (-N / 2) * np.exp(-g.r ** 2 / (a + 4j * t))
        assert np.abs(u - exact).max() < 1e-3


def test_subcritical_run_N3():
    g = ref(3)
    gs = ground_state(g)
    op, pr = spec(3)
    cfg = EvolutionConfig(dt=0.01, t_end=20 / pr.e0, observer_stride=50)
    rec = evolve(g, 0.9 * gs.W, cfg)
    assert rec.endpoint == "completed"
    assert rec.series("h1").max() < gs.h1_W
    # the discrete energy the scheme conserves
    E = rec.series("E_h")
    assert np.abs(E - E[0]).max() <= 1e-6 * abs(E[0]) + 1e-10
    assert rec.energy_drift < 1e-6


def test_supercritical_blowup_N5():
    # oracle: the blow-up time agrees across two resolutions
    ts = []
    for M in (4000, 6000):
        g = ref(5, M)
        rec = run(g, 1.1 * eval_W(g), dt=0.01, t_end=20.0, observer_stride=50)
        assert rec.endpoint == "blowup"
        assert rec.series("h1")[-1] > ground_state(g).h1_W
        ts.append(rec.t_star)
    assert abs(ts[0] / ts[1] - 1) < 1e-3
    assert abs(ts[0] - 5.7989) < 5e-3


def test_small_data_disperses():
    g = ref(5)
    rec = run(g, 0.05 * eval_W(g), dt=0.05, t_end=40.0, observer_stride=10)
    assert scatter_proxy(rec) < 0.1
    assert is_dispersing(rec)


def test_zero_data_ratio():
    g = ref(3)
    rec = run(g, np.zeros(g.M), dt=0.01, t_end=0.05)
    assert scatter_proxy(rec) == 0.0


def test_conservation_smooth_data(N):
    g = ref(N)
    rec = run(g, even(g, 0.6, 2.0), dt=0.005, t_end=2.0)
    m = rec.series("mass")
    assert np.abs(m / m[0] - 1).max() < 1e-6
    E = rec.series("E_h")
    assert np.abs(E - E[0]).max() <= 1e-6 * abs(E[0]) + 1e-10
    # the continuum functional agrees up to its own quadrature error
    Ec = rec.series("E")
    assert np.abs(Ec - Ec[0]).max() < 1e-4 * abs(Ec[0])


def test_energy_drift_second_order():
    g = ref(3)
    d = [run(g, even(g), dt=dt, t_end=1.0).energy_drift for dt in (0.01, 0.005)]
    assert 3.5 < d[0] / d[1] < 4.5


def test_sponge_tally():
    g = ref(3)
    u0 = bump(g, 4.0, 1.0) * np.exp(2j * g.r)      # outgoing packet
    rec = run(g, u0, dt=0.02, t_end=60.0, sponge=(80.0, 1.0), observer_stride=25)
    m, a = rec.series("mass"), rec.series("absorbed")
    assert a[-1] > 0.1 * m[0]
    assert np.abs((m + a) / m[0] - 1).max() < 1e-3


def test_time_reversal():
    g = ref(3)
    u0 = even(g)
    cfg = EvolutionConfig(dt=0.005, t_end=1.0)
    u1 = evolve(g, u0, cfg).final_field
    back = evolve(g, np.conj(u1), cfg).final_field
    assert np.abs(np.conj(back) - u0).max() < 1e-3


def test_backward_is_conjugate_forward():
    g = ref(3)
    u0 = even(g, 0.5)
    cfg = EvolutionConfig(dt=0.01, t_end=0.2, keep_fields=True, observer_stride=5)
    b = evolve_backward(g, u0, cfg)
    f = evolve(g, np.conj(u0), cfg)
    assert np.array_equal(b.final_field, np.conj(f.final_field))
    assert np.array_equal(b.fields[-1], np.conj(f.fields[-1]))


def test_second_order_in_dt():
    g = ref(3)
    u0 = even(g)
    recs = {dt: run(g, u0, dt=dt, t_end=1.0) for dt in (0.02, 0.01, 0.0025)}
    assert not any(r.halvings for r in recs.values())
    sol = {dt: r.final_field for dt, r in recs.items()}
    e1 = np.abs(sol[0.02] - sol[0.0025]).max()
    e2 = np.abs(sol[0.01] - sol[0.0025]).max()
    assert e1 / e2 >= 3.5


def test_backends_agree():
    if kernels.BACKEND != "cython":
        pytest.skip("compiled kernels not built")
    from tnls import _kernels
    g = ref(4)
    u = bump(g) * (1 + 0.3j)
    pot = (np.abs(u) ** 2 + 0.01j * (g.r > 50)).astype(complex)
    a, b = np.empty(g.M, complex), np.empty(g.M, complex)
    ra = _kernels.cn_step(u, pot, g.vol, g.kdiag, g.koff, 0.01, a)
    rb = _kernels_py.cn_step(u, pot, g.vol, g.kdiag, g.koff, 0.01, b)
    assert np.abs(a - b).max() < 1e-12 * np.abs(a).max()
    assert ra < 1e-10 and rb < 1e-10


def test_flow_observables():
    g = ref(3)
    W = eval_W(g)
    fl = Flow(g, EvolutionConfig())
    assert abs(fl.kinetic(W) / fl.KW - 1) < 1e-14
    assert fl.absorbed(W, W, 0.1) == 0.0
    assert not np.any(fl.phi(np.zeros(g.M)))
