"""Generalized eigendecomposition of (K, M) and the splitting N_l (+) M_l."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import eigsh

from .operator import DiscreteOperator

DENSE_LIMIT = 4000


class EigenSolverError(RuntimeError):
    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


@dataclass
class EigenDecomposition:
    """Distinct eigenvalues ``lambdas[l-1]`` with M-orthonormal blocks ``spaces[l-1]``.

    ``values``/``vectors`` hold every computed eigenpair in ascending order, so
    ``vectors[:, :dims[l-1]]`` spans N_l.
    """

    lambdas: np.ndarray
    spaces: list
    multiplicities: list
    cluster_tol: float
    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    op: DiscreteOperator = field(repr=False)
    complete: bool = False

    @property
    def levels(self) -> int:
        return len(self.lambdas)

    def lam(self, l: int) -> float:
        """lambda_l with 1-based index."""
        if not 1 <= l <= self.levels:
            raise IndexError(f"level {l} outside 1..{self.levels}")
        return float(self.lambdas[l - 1])

    def dim_N(self, l: int) -> int:
        return int(sum(self.multiplicities[:l]))

    def phi(self, l: int, k: int = 0) -> np.ndarray:
        return self.spaces[l - 1][:, k]

    def to_dict(self) -> dict:
        return {"lambdas": [float(x) for x in self.lambdas],
                "multiplicities": [int(m) for m in self.multiplicities],
                "residuals": [float(r) for r in self.residuals]}


@dataclass
class SubspaceSplit:
    """N_l = span of the first ``l`` eigenspaces and its complement M_l.

    Coordinates: ``u = Phi_N c + w`` with ``c = Phi_N^T M u``.  Complement
    vectors are handled through the projector, so M_l needs no explicit basis
    when the decomposition is partial.
    """

    l: int
    basis_N: np.ndarray
    dec: EigenDecomposition = field(repr=False)

    @property
    def dim_N(self) -> int:
        return self.basis_N.shape[1]

    def project_N(self, u) -> np.ndarray:
        M = self.dec.op.M
        return self.basis_N @ (self.basis_N.T @ (M @ u))

    def project_M(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return u - self.project_N(u)

    def projector_N(self) -> np.ndarray:
        return self.basis_N @ self.basis_N.T @ self.dec.op.M

    def projector_M(self) -> np.ndarray:
        return np.eye(self.dec.op.n_dof) - self.projector_N()

    def basis_M(self) -> np.ndarray:
        """M-orthonormal eigenbasis of M_l (requires a complete decomposition)."""
        if not self.dec.complete:
            raise ValueError("an explicit M_l basis needs the full decomposition")
        return self.dec.vectors[:, self.dim_N:]


def _cluster(values, rel_tol):
    groups = [[0]]
    for i in range(1, values.size):
        ref = values[groups[-1][0]]
        if abs(values[i] - ref) <= rel_tol * abs(ref):
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def eigensolve(op: DiscreteOperator, count: int | None = None, cluster_tol: float = 1e-8,
               dense_limit: int = DENSE_LIMIT) -> EigenDecomposition:
    """First ``count`` distinct eigenvalues of ``K phi = lambda M phi``.

    ``count=None`` returns every level.  Below ``dense_limit`` unknowns the
    full dense problem is solved; above it shift-invert Lanczos is used.
    """
    n = op.n_dof
    if count is not None and not 1 <= count <= n:
        raise ValueError(f"count must lie in 1..{n}, got {count}")
    if n <= dense_limit:
        vals, vecs = sla.eigh(op.K, op.M)
        complete = True
    else:
        k = min(n - 1, 2 * (count or 10) + 10)
        try:
            vals, vecs = eigsh(op.K, k=k, M=op.M, sigma=0.0, which="LM")
        except Exception as exc:  # ARPACK reports iteration data on the exception
            raise EigenSolverError(f"shift-invert Lanczos failed: {exc}",
                                   iterations=getattr(exc, "iterations", None)) from exc
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
        complete = False
    groups = _cluster(vals, cluster_tol)
    if not complete:
        groups = groups[:-1]  # the last cluster may be incomplete
    if count is not None:
        if len(groups) < count:
            raise EigenSolverError(f"only {len(groups)} distinct levels resolved, {count} requested")
        groups = groups[:count]
    used = groups[-1][-1] + 1
    vals, vecs = vals[:used], vecs[:, :used]
    # re-orthonormalise each cluster against M (eigh already does, eigsh may not)
    spaces, lambdas = [], []
    for g in groups:
        V = vecs[:, g]
        G = V.T @ op.M @ V
        L = np.linalg.cholesky(G)
        V = np.linalg.solve(L, V.T).T
        vecs[:, g] = V
        spaces.append(V)
        lambdas.append(float(np.mean(vals[g])))
    # fix sign so that each first basis vector has positive M-weighted mean
    ones = op.M @ np.ones(n)
    for V in spaces:
        for k in range(V.shape[1]):
            if V[:, k] @ ones < 0:
                V[:, k] *= -1
    vecs = np.hstack(spaces)
    resid = []
    for lam, V in zip(lambdas, spaces):
        R = op.K @ V - lam * (op.M @ V)
        resid.append(float(np.max(np.linalg.norm(R, axis=0) / np.linalg.norm(op.K @ V, axis=0))))
    return EigenDecomposition(lambdas=np.array(lambdas), spaces=spaces,
                              multiplicities=[V.shape[1] for V in spaces], cluster_tol=cluster_tol,
                              values=vals, vectors=vecs, residuals=np.array(resid), op=op,
                              complete=complete and count is None or
                              (complete and used == n))


def split(dec: EigenDecomposition, l: int) -> SubspaceSplit:
    if not 1 <= l or l + 1 > dec.levels:
        raise ValueError(f"level {l} needs 1 <= l and l + 1 <= {dec.levels}")
    return SubspaceSplit(l=l, basis_N=dec.vectors[:, :dec.dim_N(l)], dec=dec)


def inverse_power_lambda1(op: DiscreteOperator, tol: float = 1e-14, maxiter: int = 10000):
    """Smallest generalized eigenvalue by inverse power iteration on K^{-1} M."""
    lu = sla.cho_factor(op.K)
    u = np.ones(op.n_dof)
    lam = np.inf
    for it in range(maxiter):
        v = sla.cho_solve(lu, op.M @ u)
        v /= np.sqrt(v @ op.M @ v)
        new = float(v @ op.K @ v)
        if abs(new - lam) <= tol * new:
            return new, v, it + 1
        lam, u = new, v
    raise EigenSolverError("inverse power iteration did not converge", iterations=maxiter)


@dataclass
class SignReport:
    ok: bool
    samples: int
    violations: list
    min_positive_mass: float
    min_negative_mass: float
    phi1_positive: bool

    def to_dict(self) -> dict:
        return {"ok": self.ok, "samples": self.samples, "violations": self.violations,
                "min_positive_mass": self.min_positive_mass,
                "min_negative_mass": self.min_negative_mass, "phi1_positive": self.phi1_positive}


def check_sign_hypothesis(dec: EigenDecomposition, n_random: int = 256, seed: int = 0,
                          net_levels: int = 4) -> SignReport:
    """Sample the unit D-sphere of M_1 for vectors with ``w+ = 0`` or ``w- = 0``.

    The net combines pairs of low eigenfunctions above level 1 at a fixed set
    of angles; random draws use low-mode Gaussian coefficients.  Signs are
    read off the nodal coefficients.  ``phi1_positive`` records that the
    first eigenvector is strictly positive, which is the discrete reason
    every ``w`` in M_1 must change sign.
    """
    op = dec.op
    V = dec.vectors[:, dec.dim_N(1):]
    lams = dec.values[dec.dim_N(1):]
    k = min(V.shape[1], max(net_levels, 8))
    samples = []
    angles = np.linspace(0.0, np.pi, 8, endpoint=False)
    for i in range(min(net_levels, V.shape[1])):
        for j in range(i + 1, min(net_levels, V.shape[1])):
            for a in angles:
                samples.append(np.cos(a) * V[:, i] + np.sin(a) * V[:, j])
        samples.append(V[:, i])
    rng = np.random.default_rng(seed)
    for _ in range(n_random):
        c = rng.standard_normal(k) / np.sqrt(lams[:k])
        samples.append(V[:, :k] @ c)
    violations = []
    min_pos = min_neg = np.inf
    for idx, w in enumerate(samples):
        w = w / op.dnorm(w)
        scale = np.max(np.abs(w))
        pos = float(np.max(w)) / scale
        neg = float(-np.min(w)) / scale
        min_pos, min_neg = min(min_pos, pos), min(min_neg, neg)
        if pos <= 0.0 or neg <= 0.0:
            violations.append(idx)
    phi1 = dec.phi(1)
    phi1_positive = bool(np.all(op.M @ phi1 > 0) or np.all(op.M @ phi1 < 0))
    return SignReport(ok=not violations, samples=len(samples), violations=violations,
                      min_positive_mass=float(min_pos), min_negative_mass=float(min_neg),
                      phi1_positive=phi1_positive)
