import numpy as np
import pytest
import scipy.linalg as sla

from tnls.errors import DegenerateProjection, SpectralCollision
from tnls.ground_state import energy, eval_W, eval_W1, ground_state
from tnls.linearized import (EigenPair, LinearizedOperator, apply_L, bilinear_B,
                             coercivity_probe, discrete_B, gap_probe,
                             project_Gperp, quadratic_Q, resolvent_solve)

from conftest import bump, ref, spec

# frozen from eigenpair() on the reference grid (M=4000, r_max=100, stretch=8);
# cross-checked below against a dense eigensolve of the first-order operator
E0 = {3: 0.7315078604, 4: 0.3277466076, 5: 0.2005620850}


def smooth_pair(g):
    f = bump(g, 2.0, 1.0) + 0.3j * bump(g, 3.0, 1.5)
    h = bump(g, 1.5, 0.8) * (0.5 - 1j) + 0.2 * bump(g, 4.0, 1.0)
    return f, h


def test_operators_symmetric(N):
    g = ref(N)
    op = LinearizedOperator(g)
    f, h = bump(g, 2.0, 1.0), bump(g, 3.0, 2.0)
    for A in (op.A_minus, op.A_plus):
        a, b = g.mass_dot(A @ f, h), g.mass_dot(f, A @ h)
        assert abs(a - b) < 1e-8 * abs(a)


@pytest.mark.parametrize("balanced", [False, True])
def test_kernel(N, balanced):
    g = ref(N)
    op = LinearizedOperator(g, balanced=balanced)
    nW = np.sqrt(ground_state(g).h1_W)
    for f in (1j * eval_W(g), eval_W1(g).astype(complex)):
        assert np.sqrt(g.h1_norm_sq(apply_L(op, f))) < 1e-3 * nW


def test_L_linear():
    g = ref(3)
    op = LinearizedOperator(g)
    f = smooth_pair(g)[0]
    # the laplacian entries are O(M^2), so rounding sits near 1e-12 relative
    assert np.abs(op.apply(2.5 * f) - 2.5 * op.apply(f)).max() < 1e-10 * np.abs(op.apply(f)).max()


def test_Q_values(N):
    g = ref(N)
    op = LinearizedOperator(g)
    gs = ground_state(g)
    assert abs(quadratic_Q(op, gs.W) / gs.h1_W + 2 / (N - 2)) < 1e-6
    assert abs(quadratic_Q(op, 1j * gs.W)) < 1e-6 * gs.h1_W
    assert abs(quadratic_Q(op, gs.W1)) < 1e-6 * gs.h1_W


def test_energy_expansion_cubic():
    g = ref(3)
    op = LinearizedOperator(g)
    W = eval_W(g)
    gdir = smooth_pair(g)[0]
    eps = np.array([1e-1, 3e-2, 1e-2, 3e-3, 1e-3])
    rem = [abs(energy(g, W + e * gdir) - energy(g, W) - quadratic_Q(op, e * gdir)) for e in eps]
    slope = np.polyfit(np.log(eps), np.log(rem), 1)[0]
    assert slope >= 2.9


def test_B_symmetric_and_kernel():
    g = ref(4)
    op = LinearizedOperator(g)
    f, h = smooth_pair(g)
    assert abs(bilinear_B(op, f, h) - bilinear_B(op, h, f)) < 1e-12 * abs(bilinear_B(op, f, h))
    nf = np.sqrt(g.h1_norm_sq(f))
    assert abs(bilinear_B(op, 1j * eval_W(g), f)) < 1e-6 * nf
    assert abs(bilinear_B(op, eval_W1(g), f)) < 1e-6 * nf


def test_B_antisymmetry():
    # B is the continuum integral, L the second-order discrete operator: the
    # defect is O(h^2) and the Richardson limit of M=4000/8000 removes it
    A, Bv, err = [], [], []
    for M in (4000, 8000):
        g = ref(3, M)
        op = LinearizedOperator(g)
        f, h = smooth_pair(g)
        A.append(bilinear_B(op, op.apply(f), h))
        Bv.append(-bilinear_B(op, f, op.apply(h)))
        err.append(abs(A[-1] - Bv[-1]))
    assert err[0] / err[1] > 3.5
    a, b = (4 * A[1] - A[0]) / 3, (4 * Bv[1] - Bv[0]) / 3
    assert abs(a - b) < 1e-6 * abs(a)


def test_discrete_B_antisymmetry():
    g = ref(3)
    op = LinearizedOperator(g)
    f, h = smooth_pair(g)
    a, b = discrete_B(op, op.apply(f), h), -discrete_B(op, f, op.apply(h))
    # exact up to rounding of two O(M^2) stencils
    assert abs(a - b) < 1e-10 * abs(a)


def test_B_matches_L_form():
    g = ref(3)
    op = LinearizedOperator(g)
    f, h = smooth_pair(g)
    direct = 2 * bilinear_B(op, f, h)
    viaL = float(np.imag(g.integrate(op.apply(f) * np.conj(h))))
    assert abs(direct - viaL) < 1e-5 * abs(direct)


def test_eigenpair(N):
    g = ref(N)
    op, pr = spec(N)
    assert pr.e0 > 0 and pr.residual < 1e-4
    assert abs(pr.e0 - E0[N]) < 1e-9
    assert abs(g.h1_norm_sq(pr.Yplus) - 1) < 1e-12
    assert g.h1_inner(eval_W(g), pr.Y1) > 0
    assert abs(quadratic_Q(op, pr.Yplus)) < 1e-4
    assert abs(pr.B_pm) > 1e-3
    assert np.array_equal(pr.Yminus, np.conj(pr.Yplus))


def test_eigen_scalar_equations(N):
    op, pr = spec(N)
    g = op.grid
    r1 = op.A_plus @ pr.Y1 + pr.e0 * pr.Y2
    r2 = op.A_minus @ pr.Y2 - pr.e0 * pr.Y1
    for r in (r1, r2):
        assert np.sqrt(g.h1_norm_sq(r)) < 1e-4


def test_eigen_two_resolution(N):
    e_fine = spec(N, 8000)[1].e0
    assert abs(e_fine - E0[N]) / E0[N] < 1e-3


@pytest.mark.parametrize("N", [3, 4, 5])
def test_e0_dense_oracle(N):
    """Largest real eigenvalue of the dense 2M x 2M first-order matrix on a
    coarse grid; a different algorithm and resolution from eigenpair()."""
    from tnls.grid import reference_grid
    g = reference_grid(N, M=700)
    op = LinearizedOperator(g)
    Am, Ap = op.A_minus.toarray(), op.A_plus.toarray()
    Z = np.zeros_like(Am)
    L = np.block([[Z, Am], [-Ap, Z]])
    ev = sla.eigvals(L)
    real = ev[np.abs(ev.imag) < 1e-8].real
    assert abs(real.max() / E0[N] - 1) < 1e-3


def test_spectral_gap(N):
    op, pr = spec(N)
    for factor in (1.5, 2.5):
        assert gap_probe(op, pr, factor) > -1e-6


def test_Yplus_decay(N):
    op, pr = spec(N)
    g = op.grid
    a = np.abs(pr.Yplus) * g.r ** 4
    near = a[(g.r > 5) & (g.r < 10)].max()
    assert a[g.r >= 10].max() <= near


def test_resolvent_roundtrip():
    op, pr = spec(3)
    g = op.grid
    c = 2 * pr.e0
    target = smooth_pair(g)[0]
    Psi = op.apply(target) - c * target
    back = resolvent_solve(op, c, Psi, pr.e0)
    assert np.abs(back - target).max() < 1e-7
    res = op.apply(back) - c * back - Psi
    assert np.linalg.norm(res) < 1e-8 * np.linalg.norm(Psi)
    assert not np.any(resolvent_solve(op, c, np.zeros(g.M), pr.e0))


@pytest.mark.parametrize("c", [-1.0, 0.0, 1.0])
def test_resolvent_collision(c):
    op, pr = spec(3)
    with pytest.raises(SpectralCollision):
        resolvent_solve(op, c * pr.e0, np.ones(op.grid.M), pr.e0)


def test_projection_idempotent(N):
    op, pr = spec(N)
    f = smooth_pair(op.grid)[0]
    p1 = project_Gperp(op, pr, f)
    p2 = project_Gperp(op, pr, p1)
    assert np.abs(p2 - p1).max() < 1e-8 * np.abs(p1).max()


def test_projection_degenerate():
    op, pr = spec(3)
    bad = EigenPair(pr.e0, pr.Yplus, pr.residual, B_pm=0.0)
    with pytest.raises(DegenerateProjection):
        project_Gperp(op, bad, np.ones(op.grid.M))


def test_coercivity(N):
    op, pr = spec(N)
    vals = [coercivity_probe(op, pr, trials=200, seed=s) for s in (0, 1, 2)]
    assert min(vals) > 0
    assert max(vals) / min(vals) < 2
