"""Critical-growth energy, Sobolev constants, bubbles and cutoff functions.

    E(u) = I(u, a, b) / 2 - F(u),      F(u) = (1/p) int |u|^p,   p = 2N / (N - 2s).

Integrals run over the element quadrature points, the same rule used for
the jumping terms, so every functional here is a function of the nodal
coefficient vector only.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import gamma as Gamma, pi

import numpy as np
import scipy.linalg as sla
from scipy import optimize, sparse

from .fucik import functional_I, grad_I
from .operator import DiscreteOperator


def critical_exponent(N: int, s: float) -> float:
    return 2.0 * N / (N - 2.0 * s)


# ---------------------------------------------------------------------------
# functionals

def potential_F(op: DiscreteOperator, u) -> float:
    p = op.cfg.critical_exponent
    y = op.B @ np.asarray(u, dtype=float)
    return float(op.w @ np.abs(y) ** p) / p


def grad_F(op: DiscreteOperator, u) -> np.ndarray:
    p = op.cfg.critical_exponent
    y = op.B @ np.asarray(u, dtype=float)
    return op.B.T @ (op.w * np.abs(y) ** (p - 2.0) * y)


def energy_E(op: DiscreteOperator, u, a, b) -> float:
    return 0.5 * functional_I(op, u, a, b) - potential_F(op, u)


def energy_E_direct(op: DiscreteOperator, u, a, b) -> float:
    """Same value as :func:`energy_E` through a separate code path (nodal assembly)."""
    u = np.asarray(u, dtype=float)
    p = op.cfg.critical_exponent
    y = np.asarray(op.B @ u).ravel()
    density = 0.5 * (a * np.minimum(y, 0.0) ** 2 + b * np.maximum(y, 0.0) ** 2) + np.abs(y) ** p / p
    return 0.5 * float(u @ (op.K @ u)) - float(np.dot(op.w, density))


def gradient_E(op: DiscreteOperator, u, a, b) -> np.ndarray:
    """Residual representer: r . phi = <u, phi>_D - int (b u^+ - a u^- + |u|^{p-2} u) phi.

    With ``u^- = max(-u, 0)`` the jumping term ``b u^+ - a u^-`` equals
    ``b max(u,0) + a min(u,0)``.
    """
    u = np.asarray(u, dtype=float)
    return 0.5 * grad_I(op, u, a, b) - grad_F(op, u)


def hessian_E(op: DiscreteOperator, u, a, b) -> np.ndarray:
    """Generalised Hessian of E (exact off the kinks of u^+-)."""
    u = np.asarray(u, dtype=float)
    p = op.cfg.critical_exponent
    y = op.B @ u
    d = op.w * (np.where(y < 0.0, a, np.where(y > 0.0, b, 0.5 * (a + b)))
                + (p - 1.0) * np.abs(y) ** (p - 2.0))
    return op.K - (op.B.T @ sparse.diags(d) @ op.B).toarray()


def mass_factor(op: DiscreteOperator):
    fac = getattr(op, "_mass_cho", None)
    if fac is None:
        fac = sla.cho_factor(op.M)
        op._mass_cho = fac
    return fac


def dual_norm(op: DiscreteOperator, r) -> float:
    """M-dual norm sqrt(r^T M^{-1} r) of a residual vector."""
    r = np.asarray(r, dtype=float)
    return float(np.sqrt(max(r @ sla.cho_solve(mass_factor(op), r), 0.0)))


def lp_norm_p(op: DiscreteOperator, u, p: float) -> float:
    """int |u|^p over the domain."""
    y = op.B @ np.asarray(u, dtype=float)
    return float(op.w @ np.abs(y) ** p)


# ---------------------------------------------------------------------------
# constants

def fractional_laplacian_constant(N: int, s: float) -> float:
    """C_{N,s} with (-Delta)^s u = C_{N,s} p.v. int (u(x) - u(y)) |x - y|^{-N-2s} dy."""
    return s * 4.0 ** s * Gamma(N / 2 + s) / (pi ** (N / 2) * Gamma(1.0 - s))


def sobolev_constant_exact(N: int, s: float) -> float:
    """Best constant for the unnormalised Gagliardo seminorm over R^N."""
    std = (2.0 ** (2 * s) * pi ** s * Gamma((N + 2 * s) / 2) / Gamma((N - 2 * s) / 2)
           * (Gamma(N / 2) / Gamma(N)) ** (2 * s / N))
    return 2.0 / fractional_laplacian_constant(N, s) * std


def bubble_constant(N: int, s: float) -> float:
    """c_{N,s} making seminorm^2(u_eps) = int u_eps^p = S^{N/2s}."""
    p = critical_exponent(N, s)
    S = sobolev_constant_exact(N, s)
    I = pi ** (N / 2) * Gamma(N / 2) / Gamma(N)  # int (1 + |x|^2)^{-N}
    return (S * I ** (2.0 / p - 1.0)) ** (1.0 / (p - 2.0))


def critical_level(N: int, s: float, S: float) -> float:
    """c* = (s/N) S^{N/2s}."""
    return s / N * S ** (N / (2.0 * s))


# ---------------------------------------------------------------------------
# discrete Sobolev constant

@dataclass
class SobolevResult:
    S_h: float
    u: np.ndarray = field(repr=False)
    bubble_estimate: float = np.nan
    bubble_eps: float = np.nan
    converged: bool = True
    values: list = field(default_factory=list)

    def c_star(self, N: int, s: float) -> float:
        return critical_level(N, s, self.S_h)

    def to_dict(self) -> dict:
        return {"S_h": self.S_h, "bubble_estimate": self.bubble_estimate,
                "bubble_eps": self.bubble_eps, "converged": self.converged,
                "multistart_values": list(self.values)}


def sobolev_quotient(op: DiscreteOperator, u) -> float:
    p = op.cfg.critical_exponent
    den = lp_norm_p(op, u, p)
    if den == 0.0:
        raise ValueError("quotient undefined for u = 0")
    return op.dnorm_sq(u) / den ** (2.0 / p)


def sobolev_constant(op: DiscreteOperator, n_starts: int = 6, seed: int = 0,
                     x0=None) -> SobolevResult:
    """Minimise seminorm^2 / |u|_p^2 over discrete functions.

    Variables ``x = L^T u`` with ``K = L L^T`` turn the numerator into |x|^2;
    each start is minimised with L-BFGS on the scale-invariant quotient.
    Starts: centred bubbles at several widths, the first eigenvector and
    seeded random vectors.
    """
    p = op.cfg.critical_exponent
    L = np.linalg.cholesky(op.K)
    mesh = op.mesh
    x0 = _centre(mesh) if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))
    h = float(np.max(mesh.h))

    def to_u(x):
        return sla.solve_triangular(L, x, lower=True, trans="T")

    def fun(x):
        u = to_u(x)
        y = op.B @ u
        P = float(op.w @ np.abs(y) ** p)
        num = float(x @ x)
        q = num / P ** (2.0 / p)
        gu = op.B.T @ (op.w * np.abs(y) ** (p - 2.0) * y)   # = grad P / p
        gx_num = 2.0 * x
        gP_x = p * sla.solve_triangular(L, gu, lower=True)
        g = gx_num / P ** (2.0 / p) - num * (2.0 / p) * P ** (-2.0 / p - 1.0) * gP_x
        return q, g

    starts = []
    dist = mesh.distance_to_boundary(x0)
    for eps in np.geomspace(2.0 * h, dist / 4.0, max(n_starts - 3, 1)):
        starts.append(_raw_bubble(mesh, eps, x0))
    lam, vec = sla.eigh(op.K, op.M, subset_by_index=[0, 0])
    starts.append(vec[:, 0])
    rng = np.random.default_rng(seed)
    while len(starts) < n_starts:
        starts.append(np.abs(rng.standard_normal(op.n_dof)))
    best, values, ok = None, [], True
    for u0 in starts:
        x_start = L.T @ u0
        x_start /= np.linalg.norm(x_start)
        res = optimize.minimize(fun, x_start, jac=True, method="L-BFGS-B",
                                options={"maxiter": 5000, "ftol": 1e-15, "gtol": 1e-10})
        values.append(float(res.fun))
        ok &= bool(res.success)
        if best is None or res.fun < best.fun:
            best = res
    u = to_u(best.x)
    u /= op.dnorm(u)
    # bubble-evaluated estimate: best quotient over admissible widths
    eps_grid = np.geomspace(2.0 * h, dist / 4.0, 24)
    qs = [sobolev_quotient(op, _raw_bubble(mesh, e, x0)) for e in eps_grid]
    k = int(np.argmin(qs))
    return SobolevResult(S_h=float(best.fun), u=u, bubble_estimate=float(qs[k]),
                         bubble_eps=float(eps_grid[k]), converged=ok, values=values)


def _centre(mesh):
    return np.array([0.5 * (lo + hi) for lo, hi in mesh.cfg.extent])


def _raw_bubble(mesh, eps, x0):
    r2 = np.sum((mesh.interior_points - x0) ** 2, axis=1)
    N, s = mesh.cfg.N, mesh.cfg.s
    return (eps / (eps * eps + r2)) ** ((N - 2 * s) / 2)


# ---------------------------------------------------------------------------
# cutoffs

def xi(t):
    """1 on [0, 1/4], 0 on [1/2, inf), quintic smoothstep in between (C^2)."""
    t = np.asarray(t, dtype=float)
    r = np.clip((t - 0.25) / 0.25, 0.0, 1.0)
    return 1.0 - r ** 3 * (10.0 - 15.0 * r + 6.0 * r * r)


ETA_RAMP = 0.15


def _smooth_cubic(x):
    return x * x * (3.0 - 2.0 * x)


def _smooth_cubic_int(x):
    return x ** 3 - 0.5 * x ** 4


def eta_prime(t, alpha: float = ETA_RAMP):
    """Derivative of :func:`eta`: a C^1 plateau bump on [3/4, 1] with unit integral."""
    t = np.asarray(t, dtype=float)
    r = 4.0 * (t - 0.75)
    amp = 4.0 / (1.0 - alpha)
    psi = np.where(r < alpha, _smooth_cubic(np.clip(r / alpha, 0.0, 1.0)),
                   np.where(r > 1.0 - alpha, _smooth_cubic(np.clip((1.0 - r) / alpha, 0.0, 1.0)), 1.0))
    return np.where((r <= 0.0) | (r >= 1.0), 0.0, amp * psi)


def eta(t, alpha: float = ETA_RAMP):
    """0 on [0, 3/4], 1 on [1, inf), C^2, with max |eta'| = 4 / (1 - alpha) < 5."""
    t = np.asarray(t, dtype=float)
    r = np.clip(4.0 * (t - 0.75), 0.0, 1.0)
    lo = alpha * _smooth_cubic_int(np.clip(r / alpha, 0.0, 1.0))
    mid = 0.5 * alpha + (r - alpha)
    hi = (1.0 - alpha) - alpha * _smooth_cubic_int(np.clip((1.0 - r) / alpha, 0.0, 1.0))
    psi_int = np.where(r < alpha, lo, np.where(r > 1.0 - alpha, hi, mid))
    return psi_int / (1.0 - alpha)


# ---------------------------------------------------------------------------
# bubbles

@dataclass(frozen=True)
class BubbleParams:
    eps: float
    mu: float
    x0: tuple
    mu0: float
    c_Ns: float

    @classmethod
    def make(cls, mesh, eps, mu=None, x0=None, mu0=None, gamma_exp=None):
        """Fill defaults: x0 = domain centre, mu0 = 1.1 * 2 / dist(x0, boundary).

        With ``gamma_exp`` given, ``mu = eps^{-gamma}``.
        """
        x0 = _centre(mesh) if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))
        dist = mesh.distance_to_boundary(x0)
        if dist <= 0:
            raise ValueError(f"x0={x0.tolist()} is not inside the domain")
        mu0 = 2.2 / dist if mu0 is None else float(mu0)
        if gamma_exp is not None:
            mu = eps ** (-gamma_exp)
        mu = mu0 if mu is None else float(mu)
        p = cls(eps=float(eps), mu=mu, x0=tuple(float(v) for v in x0), mu0=mu0,
                c_Ns=bubble_constant(mesh.cfg.N, mesh.cfg.s))
        p.validate(mesh)
        return p

    def validate(self, mesh):
        dist = mesh.distance_to_boundary(self.x0)
        if not self.mu0 > 2.0 / dist:
            raise ValueError(f"mu0={self.mu0} must exceed 2/dist(x0, boundary)={2.0 / dist}")
        if self.mu < self.mu0 * (1 - 1e-12):
            raise ValueError(f"mu={self.mu} below mu0={self.mu0}")
        if 0.5 / self.mu >= dist:
            raise ValueError("bubble support leaves the domain")
        if self.eps < 2.0 * float(np.max(mesh.h)):
            raise ValueError(f"eps={self.eps} is below two mesh cells ({2.0 * float(np.max(mesh.h))})")


def bubble_function(params: BubbleParams, x, N: int, s: float):
    """Continuum u_{eps,mu}(x) for points ``x`` of shape (n, N)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r = np.sqrt(np.sum((x - np.asarray(params.x0)) ** 2, axis=1))
    e = params.eps
    return xi(params.mu * r) * params.c_Ns * (e / (e * e + r * r)) ** ((N - 2 * s) / 2)


def bubble(params: BubbleParams, mesh) -> np.ndarray:
    """Nodal interpolant of u_{eps,mu}."""
    params.validate(mesh)
    return bubble_function(params, mesh.interior_points, mesh.cfg.N, mesh.cfg.s)


def annulus_cutoff_v(mesh, v, mu: float, x0=None) -> np.ndarray:
    """v_mu = eta(mu |x - x0|) v at the nodes."""
    x0 = _centre(mesh) if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))
    r = np.sqrt(np.sum((mesh.interior_points - x0) ** 2, axis=1))
    return eta(mu * r) * np.asarray(v, dtype=float)
