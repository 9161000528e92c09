import numpy as np
import pytest

from fracfucik.energy import dual_norm, gradient_E
from fracfucik.fucik import FucikModel
from fracfucik.solver import (LinkingError, build_problem, inf_A_lower, solve_linking,
                              verify_gradient_orthogonality)

EPS = 0.05


def _above(dec):
    return dec.lam(2) + 0.1 * (dec.lam(3) - dec.lam(2))


def _below(dec):
    return dec.lam(2) - 0.1 * (dec.lam(2) - dec.lam(1))


@pytest.fixture(scope="module")
def above(dec_crit, sob_crit):
    a = _above(dec_crit)
    pb = build_problem(dec_crit, a, a, 2, sob_crit.S_h, EPS)
    return pb, solve_linking(pb)


@pytest.fixture(scope="module")
def below(dec_crit, sob_crit):
    a = _below(dec_crit)
    pb = build_problem(dec_crit, a, a, 2, sob_crit.S_h, EPS)
    return pb, solve_linking(pb)


def test_above_mu_critical_point(above):
    pb, res = above
    assert pb.case == "above-mu"
    assert res.success and not res.flags
    assert res.residual < 1e-8 and res.dnorm > 1e-3
    assert 0 < res.level < pb.c_star
    assert res.bracket_ok and res.inf_A <= res.level <= res.sup_Q


def test_below_nu_critical_point(below):
    pb, res = below
    assert pb.case == "below-nu" and pb.delta > 0
    assert res.success and res.residual < 1e-8 and res.dnorm > 1e-3
    assert res.bracket_ok and 0 < res.inf_A <= res.level
    assert np.all(pb.base_T * pb.e[:, None] == 0.0)
    assert inf_A_lower(pb)["bound"] == pytest.approx(res.inf_A)


def test_residual_is_weak_form(above):
    pb, res = above
    r = gradient_E(pb.op, res.u, pb.a, pb.b)
    assert dual_norm(pb.op, r) == pytest.approx(res.residual, rel=1e-6, abs=1e-14)


def test_deterministic(dec_crit, sob_crit, above):
    _, res = above
    a = _above(dec_crit)
    again = solve_linking(build_problem(dec_crit, a, a, 2, sob_crit.S_h, EPS))
    assert again.u.tobytes() == res.u.tobytes()
    assert again.level == res.level


def test_negation_symmetry(above):
    pb, res = above
    r = dual_norm(pb.op, gradient_E(pb.op, -res.u, pb.b, pb.a))
    assert r == pytest.approx(res.residual, rel=1e-10, abs=1e-15)


def test_gradient_orthogonality_on_B(dec_crit, rng):
    model = FucikModel(dec_crit, 2)
    a, b = _above(dec_crit), _above(dec_crit) - 1.0
    for _ in range(3):
        c = np.zeros(model.lam.size)
        c[:model.k1] = rng.standard_normal(model.k1) / model.sqlam[:model.k1]
        c[model.k1:], _, _ = model.tau_c(c, a, b)
        u = model.to_nodal(c)
        rep = verify_gradient_orthogonality(model, u / model.op.dnorm(u), a, b)
        assert rep["passed"] and rep["projection_M_at_2u"] <= 1e-8
    u = rng.standard_normal(model.op.n_dof)
    assert verify_gradient_orthogonality(model, u, a, b)["projection_M"] > 1e-3


def test_case_classification(dec_crit, sob_crit):
    lo, hi = dec_crit.lam(1), dec_crit.lam(3)
    with pytest.raises(LinkingError):
        build_problem(dec_crit, hi + 1.0, hi + 1.0, 2, sob_crit.S_h, EPS)
    with pytest.raises(LinkingError):
        build_problem(dec_crit, _below(dec_crit), _below(dec_crit), 2, sob_crit.S_h, EPS, case="above-mu")
    a = _above(dec_crit)
    with pytest.raises(LinkingError):
        build_problem(dec_crit, a, a, 2, sob_crit.S_h, EPS, case="below-nu")
    assert lo < a < hi
