import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize

from fracfucik.fucik import check_curves, functional_I


def _rand_M(model, rng, start):
    c = np.zeros(model.lam.size)
    k = model.lam.size - start
    c[start:] = rng.standard_normal(k) / model.lam[start:]
    return model.to_nodal(c)


def _rand_N(model, rng, stop):
    c = np.zeros(model.lam.size)
    c[:stop] = rng.standard_normal(stop)
    return model.to_nodal(c)


def test_functional_I_examples(op_small, dec_small, rng):
    phi1 = dec_small.phi(1)
    lam1 = dec_small.lam(1)
    assert abs(functional_I(op_small, phi1, lam1, lam1)) <= 1e-10 * lam1
    u = rng.standard_normal(op_small.n_dof)
    assert functional_I(op_small, u, 0.0, 0.0) == pytest.approx(op_small.dnorm_sq(u), rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 16), a=st.floats(0.0, 50.0), b=st.floats(0.0, 50.0))
def test_functional_I_swap(op_small, seed, a, b):
    u = np.random.default_rng(seed).standard_normal(op_small.n_dof)
    lhs, rhs = functional_I(op_small, -u, a, b), functional_I(op_small, u, b, a)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_theta_tau_vanish_at_eigenvalue(model2, rng):
    lam = model2.lam_l
    for _ in range(5):
        w = _rand_M(model2, rng, model2.k0)
        v = _rand_N(model2, rng, model2.k1)
        th = model2.theta(w, lam, lam)
        ta = model2.tau(v, lam, lam)
        assert np.max(np.abs(th.output)) <= 1e-8 * np.max(np.abs(w))
        assert np.max(np.abs(ta.output)) <= 1e-8 * np.max(np.abs(v))


def _point(model, off):
    lo, hi = model.lam_lo, model.lam_hi
    return model.lam_l + off[0] * (hi - lo) / 4, model.lam_l + off[1] * (hi - lo) / 4


@pytest.mark.parametrize("off", [(0.3, -0.2), (-0.4, 0.5)])
def test_theta_positive_homogeneity(model3, rng, off):
    a, b = _point(model3, off)
    w = _rand_M(model3, rng, model3.k0)
    base = model3.theta(w, a, b).output
    for t in (0.0, 0.5, 2.0):
        out = model3.theta(t * w, a, b).output
        np.testing.assert_allclose(out, t * base, atol=1e-10 * np.max(np.abs(base)))


@pytest.mark.parametrize("off", [(0.3, -0.2), (-0.4, 0.5)])
def test_tau_positive_homogeneity_and_first_order(model3, rng, off):
    a, b = _point(model3, off)
    v = _rand_N(model3, rng, model3.k1)
    base = model3.tau(v, a, b).output
    for t in (0.0, 0.5, 2.0):
        out = model3.tau(t * v, a, b).output
        np.testing.assert_allclose(out, t * base, atol=1e-10 * np.max(np.abs(base)))
    u = v + base
    assert model3.gradient_projection_M(u, a, b) <= 1e-8


def test_theta_unique_multistart(model3, rng):
    """Independent BFGS maximisation from five random starts lands on theta."""
    a, b = _point(model3, (0.2, -0.3))
    w = _rand_M(model3, rng, model3.k0)
    cw = model3.to_coords(w)
    cw[:model3.k0] = 0.0
    ref = model3.theta(w, a, b).coords[:model3.k0]

    def neg(x):
        c = cw.copy()
        c[:model3.k0] = x
        return -model3.I_c(c, a, b), -model3.grad_c(c, a, b)[:model3.k0]

    for _ in range(5):
        x0 = rng.standard_normal(model3.k0) * np.abs(ref).max() * 3
        r = optimize.minimize(neg, x0, jac=True, method="BFGS", options={"gtol": 1e-13})
        assert np.max(np.abs(r.x - ref)) <= 1e-8 * max(1.0, np.abs(ref).max())


def test_envelope_inequalities(model3, rng):
    a, b = _point(model3, (0.3, 0.1))
    op = model3.op
    w = _rand_M(model3, rng, model3.k0)
    th = model3.theta(w, a, b)
    top = functional_I(op, th.output + th.input, a, b)
    v = _rand_N(model3, rng, model3.k1)
    ta = model3.tau(v, a, b)
    bottom = functional_I(op, ta.input + ta.output, a, b)
    for _ in range(10):
        vp = _rand_N(model3, rng, model3.k0) * rng.uniform(0.1, 3.0)
        assert functional_I(op, vp + th.input, a, b) <= top + 1e-10 * abs(top)
        wp = _rand_M(model3, rng, model3.k1) * rng.uniform(0.1, 3.0)
        assert functional_I(op, ta.input + wp, a, b) >= bottom - 1e-10 * abs(bottom)


def test_midpoint_concavity_convexity(model3, rng):
    a, b = _point(model3, (-0.2, 0.4))
    op = model3.op
    w = _rand_M(model3, rng, model3.k0)
    v = _rand_N(model3, rng, model3.k1)
    for _ in range(10):
        v1, v2 = _rand_N(model3, rng, model3.k0), _rand_N(model3, rng, model3.k0)
        f = lambda x: functional_I(op, x + w, a, b)
        gap = f(0.5 * (v1 + v2)) - 0.5 * (f(v1) + f(v2))
        assert gap > 0 and gap >= 1e-3 * op.l2_sq(v1 - v2)
        w1, w2 = _rand_M(model3, rng, model3.k1), _rand_M(model3, rng, model3.k1)
        g = lambda x: functional_I(op, v + x, a, b)
        gap = 0.5 * (g(w1) + g(w2)) - g(0.5 * (w1 + w2))
        assert gap > 0 and gap >= 1e-3 * op.l2_sq(w1 - w2)


def test_levels_vanish_at_eigenvalue(model2):
    lam = model2.lam_l
    assert abs(model2.n_level(lam, lam).value) <= 1e-10
    assert abs(model2.m_level(lam, lam).value) <= 1e-10


def test_n_level_monotone_in_b(model2):
    a = model2.lam_l
    lo, hi = model2.bracket()
    vals = [model2.n_level(a, b).value for b in np.linspace(lo, hi, 7)]
    assert np.all(np.diff(vals) <= 1e-12)


def test_levels_swap_symmetry(model2):
    a, b = _point(model2, (0.3, -0.5))
    assert model2.n_level(a, b).value == pytest.approx(model2.n_level(b, a).value, rel=1e-8, abs=1e-12)
    assert model2.m_level(a, b).value == pytest.approx(model2.m_level(b, a).value, rel=1e-8, abs=1e-12)


def test_m_level_dense_sphere_net(model2):
    """dim N_2 = 2: scan the unit D-circle densely, then polish the best angle."""
    a, b = _point(model2, (0.4, -0.3))
    m = model2

    def value(t):
        c = np.zeros(m.lam.size)
        c[0] = np.cos(t) / m.sqlam[0]
        c[1] = np.sin(t) / m.sqlam[1]
        c[m.k1:], _, _ = m.tau_c(c, a, b)
        return m.I_c(c, a, b)

    grid = np.linspace(0.0, 2 * np.pi, 4000, endpoint=False)
    vals = np.array([value(t) for t in grid])
    k = int(np.argmax(vals))
    d = grid[1] - grid[0]
    r = optimize.minimize_scalar(lambda t: -value(t), bounds=(grid[k] - d, grid[k] + d),
                                 method="bounded", options={"xatol": 1e-12})
    oracle = max(vals[k], -r.fun)
    assert abs(m.m_level(a, b).value - oracle) <= 1e-6 * max(1.0, abs(oracle))


def test_curves_pass_through_eigenvalue(model2):
    lam = model2.lam_l
    tol = model2.default_tol()
    nu, mu = model2.nu_curve(lam), model2.mu_curve(lam)
    assert nu.flag == "" and mu.flag == ""
    assert abs(nu.b - lam) <= tol and abs(mu.b - lam) <= tol


def test_regions_off_the_curves(model2):
    a = model2.lam_l - 0.2 * (model2.lam_l - model2.lam_lo)
    tol = model2.default_tol()
    nu, mu = model2.nu_curve(a), model2.mu_curve(a)
    assert model2.n_level(a, nu.b - 10 * tol).value > 0
    assert model2.m_level(a, mu.b + 10 * tol).value < 0


def test_trace_and_checks(model2):
    lo, hi = model2.lam_lo, model2.lam_hi
    grid = np.linspace(model2.lam_l - 0.3 * (model2.lam_l - lo), model2.lam_l + 0.3 * (hi - model2.lam_l), 5)
    sample = model2.trace(grid)
    checks = check_curves(sample)
    assert all(checks.values()), checks
    assert np.all((sample.nu > lo) & (sample.mu < hi))
    with pytest.raises(ValueError):
        model2.trace([lo])
