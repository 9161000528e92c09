import numpy as np
import pytest

from fracfucik.degiorgi import degiorgi_linfty, iteration_constants, solution_kappa
from fracfucik.energy import sobolev_constant_exact
from fracfucik.solver import build_problem, solve_linking


@pytest.fixture(scope="module")
def solution(dec_crit, sob_crit):
    a = dec_crit.lam(2) + 0.1 * (dec_crit.lam(3) - dec_crit.lam(2))
    pb = build_problem(dec_crit, a, a, 2, sob_crit.S_h, 0.05)
    return pb, solve_linking(pb)


def test_zero_function(op_crit):
    res = degiorgi_linfty(op_crit, np.zeros(op_crit.n_dof), kappa=10.0)
    assert res.certified and res.bound == 0.0
    assert all(st.U_k == 0.0 for sts in res.trace.values() for st in sts)


def test_certifies_solution(solution):
    pb, sol = solution
    op = pb.op
    kappa = solution_kappa(op, sol.u, pb.a, pb.b)
    res = degiorgi_linfty(op, sol.u, kappa, k_max=20)
    assert res.certified and res.bound >= res.nodal_max == pytest.approx(np.max(np.abs(sol.u)))
    assert res.to_dict()["all_assertions"]
    for states in res.trace.values():
        U = np.array([st.U_k for st in states])
        assert np.all(np.diff(U) <= 0)
        assert all(st.monotone and st.set_inclusion and st.measure_bound and st.pointwise_bound
                   and st.recursion and st.decay for st in states)
        assert all(U[k] <= res.delta * res.eta ** k * (1 + 1e-12) for k in range(U.size))
    assert 0 < res.eta < 1 and res.gamma == pytest.approx(1.4)


def test_inadmissible_delta_is_shrunk(solution):
    pb, sol = solution
    kappa = solution_kappa(pb.op, sol.u, pb.a, pb.b)
    res = degiorgi_linfty(pb.op, sol.u, kappa, delta=1.0)
    assert res.shrinks == 1 and res.notes
    assert res.certified


def test_iteration_constant():
    S = sobolev_constant_exact(1, 0.2)
    two = 2.0 ** (4 * 0.2 + 1)
    assert iteration_constants(1, 0.2, 3.0, 5.0) == pytest.approx((1 + two * 5.0 / S) * two)


def test_rows_layout(op_crit, dec_crit):
    res = degiorgi_linfty(op_crit, dec_crit.phi(1), kappa=dec_crit.lam(1), k_max=5)
    rows = list(res.rows())
    assert len(rows) == 2 * 6 and rows[0][0] == "plus" and len(rows[0]) == 12
