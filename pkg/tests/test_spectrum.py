import numpy as np
import pytest

from fracfucik.mesh import MeshConfig
from fracfucik.operator import assemble
from fracfucik.spectrum import check_sign_hypothesis, eigensolve, inverse_power_lambda1, split


def test_lambda1_positive_and_simple(dec_small):
    assert dec_small.lam(1) > 0
    assert dec_small.multiplicities[0] == 1


def test_lambda1_matches_inverse_power(op_small, dec_small):
    lam, _, _ = inverse_power_lambda1(op_small)
    assert abs(lam - dec_small.lam(1)) / lam < 1e-8


def test_residuals_and_m_orthonormality(op_small, dec_small):
    V = dec_small.vectors
    assert np.max(dec_small.residuals) <= 1e-10
    G = V.T @ op_small.M @ V
    assert np.max(np.abs(G - np.eye(G.shape[0]))) <= 1e-10
    R = op_small.K @ V - op_small.M @ V * dec_small.values
    assert np.max(np.linalg.norm(R, axis=0) / dec_small.values) <= 1e-10


def test_distinct_after_clustering(dec_small):
    lam = dec_small.lambdas
    assert np.all(np.diff(lam) > dec_small.cluster_tol * lam[:-1])


@pytest.mark.parametrize("l", [1, 2, 3])
def test_rayleigh_bounds(op_small, dec_small, rng, l):
    sp = split(dec_small, l)
    for _ in range(10):
        x = rng.standard_normal(op_small.n_dof)
        v, w = sp.project_N(x), sp.project_M(x)
        assert op_small.dnorm_sq(v) <= dec_small.lam(l) * op_small.l2_sq(v) * (1 + 1e-10)
        assert op_small.dnorm_sq(w) >= dec_small.lam(l + 1) * op_small.l2_sq(w) * (1 - 1e-10)


@pytest.mark.parametrize("l", [1, 2, 4])
def test_split_identities(op_small, dec_small, rng, l):
    sp = split(dec_small, l)
    assert sp.dim_N == sum(dec_small.multiplicities[:l])
    phi1 = dec_small.phi(1)
    np.testing.assert_allclose(sp.project_N(phi1), phi1, atol=1e-12)
    for _ in range(5):
        x = rng.standard_normal(op_small.n_dof)
        v, w = sp.project_N(x), sp.project_M(x)
        assert np.max(np.abs(v + w - x)) <= 1e-12 * np.max(np.abs(x))
        scale = np.sqrt(op_small.l2_sq(v) * op_small.l2_sq(w))
        assert abs(v @ op_small.M @ w) <= 1e-10 * scale
        scale_d = op_small.dnorm(v) * op_small.dnorm(w)
        assert abs(v @ op_small.K @ w) <= 1e-10 * scale_d


def test_split_out_of_range(dec_small):
    with pytest.raises(ValueError):
        split(dec_small, 0)
    with pytest.raises(ValueError):
        split(dec_small, dec_small.levels)


def test_sign_hypothesis(dec_small):
    phi2 = dec_small.phi(2)
    assert phi2.max() > 0 and phi2.min() < 0
    w = phi2 + 0.01 * dec_small.phi(3)
    assert w.max() > 0 and w.min() < 0
    r1 = check_sign_hypothesis(dec_small, seed=3)
    r2 = check_sign_hypothesis(dec_small, seed=3)
    assert r1.ok and r1.phi1_positive
    assert r1.to_dict() == r2.to_dict()


def test_lambda1_refinement_cauchy():
    lams = []
    for n in (16, 32, 64, 128):
        op = assemble(MeshConfig(dim=1, extent=((-1.0, 1.0),), n_cells=n, s=0.4))
        lams.append(eigensolve(op, count=1).lam(1))
    d = np.abs(np.diff(lams))
    assert np.all(np.diff(d) < 0)
    # conforming elements: eigenvalues decrease under nested refinement
    assert np.all(np.diff(lams) < 0)


def test_partial_decomposition(op_small, dec_small):
    part = eigensolve(op_small, count=3)
    assert part.levels == 3
    np.testing.assert_allclose(part.lambdas, dec_small.lambdas[:3], rtol=1e-12)
