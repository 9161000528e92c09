"""Critical points of E through the two linking geometries.

above-mu  (b >= mu_l(a)):     Q = {u + s e : u in B, s >= 0},  B = {v + tau(v) : v in N_l},
                              A = M_l cap S_rho.
below-nu  (b < nu_{l-1}(a)):  Q = {T v + s e : v in N_{l-1}, s >= 0},  T v = v_mu,
                              A = {theta(w, a', b') + w : w in M_{l-1} cap S_rho},  (a', b') = (a, b) / (1 - delta).

The min-max level is approximated by a local minimax descent: the base of
Q stays pinned, the free direction ``v`` (initially ``e``) is moved along
the negative gradient at the peak of E over the cone spanned by the base
and ``v``.  The peak point is then polished by semismooth Newton.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy import optimize

from .energy import (BubbleParams, annulus_cutoff_v, bubble, critical_level, dual_norm,
                     energy_E, gradient_E, hessian_E)
from .estimates import above_mu_sup, below_nu_sup, sample_K
from .fucik import FucikModel
from .spectrum import EigenDecomposition

CASES = ("above-mu", "below-nu")


class LinkingError(ValueError):
    pass


@dataclass
class LinkingProblem:
    a: float
    b: float
    l: int
    case: str
    e: np.ndarray = field(repr=False)
    bubble: BubbleParams
    model: FucikModel = field(repr=False)
    S_h: float
    delta: float | None = None
    base_T: np.ndarray | None = field(default=None, repr=False)
    curve_values: dict = field(default_factory=dict)
    x0_shifts: int = 0

    @property
    def op(self):
        return self.model.op

    @property
    def c_star(self) -> float:
        cfg = self.op.cfg
        return critical_level(cfg.N, cfg.s, self.S_h)

    def base_dim(self) -> int:
        return self.model.k1 if self.case == "above-mu" else self.model.k0

    def base_map(self, c) -> np.ndarray:
        """Positive homogeneous parametrisation of the pinned base (B or T(N_{l-1}))."""
        c = np.asarray(c, dtype=float)
        if self.case == "below-nu":
            return self.base_T @ c
        m = self.model
        full = np.zeros(m.lam.size)
        full[:m.k1] = c
        if np.any(c):
            full[m.k1:], _, _ = m.tau_c(full, self.a, self.b)
        return m.to_nodal(full)

    def base_linear(self) -> bool:
        return self.case == "below-nu" or self.a == self.b

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "l": self.l, "case": self.case, "delta": self.delta,
                "S_h": self.S_h, "c_star": self.c_star, "eps": self.bubble.eps, "mu": self.bubble.mu,
                "x0": list(self.bubble.x0), "x0_shifts": self.x0_shifts,
                "curve_values": self.curve_values}


def _distance_to_B(model: FucikModel, u, a, b) -> float:
    """Relative D-distance between u and the point of B sharing its N_l component."""
    c = model.to_coords(u)
    full = c.copy()
    full[model.k1:], _, _ = model.tau_c(c, a, b)
    d = c[model.k1:] - full[model.k1:]
    return float(np.sqrt(model.lam[model.k1:] @ (d * d)) / max(model._dnorm(c), 1e-300))


def build_problem(dec: EigenDecomposition, a, b, l: int, S_h: float, eps: float,
                  case: str = "auto", gamma_exp: float | None = None, mu: float | None = None,
                  x0=None, mu0=None, delta: float | None = None, curve_tol: float | None = None,
                  n_starts: int = 8, seed: int = 0, max_shifts: int = 5) -> LinkingProblem:
    """Classify (a, b) against nu_{l-1} and mu_l and set up e, Q and the base."""
    model = FucikModel(dec, l)
    lo, hi = model.lam_lo, model.lam_hi
    if not (lo < a < hi and lo < b < hi):
        raise LinkingError(f"(a, b) = ({a}, {b}) outside the square ({lo}, {hi})^2")
    curves = {}
    mu_l = model.mu_curve(a, tol=curve_tol, n_starts=n_starts, seed=seed)
    curves["mu_l"] = mu_l.b
    if l > 1 and (case == "below-nu" or (case == "auto" and b < mu_l.b)):
        curves["nu_lm1"] = model.nu_curve(a, tol=curve_tol, n_starts=n_starts, seed=seed).b
    if case == "auto":
        if b >= mu_l.b:
            case = "above-mu"
        elif l > 1 and b < curves["nu_lm1"]:
            case = "below-nu"
        else:
            raise LinkingError(f"b={b} lies between nu_{l-1}(a) and mu_{l}(a): no linking case applies")
    if case not in CASES:
        raise LinkingError(f"unknown case {case!r}")
    if case == "above-mu" and b < mu_l.b:
        raise LinkingError(f"above-mu case needs b >= mu_l(a) = {mu_l.b}")
    if case == "below-nu" and (l < 2 or b >= curves.get("nu_lm1", -np.inf)):
        raise LinkingError("below-nu case needs l >= 2 and b < nu_{l-1}(a)")
    mesh = model.op.mesh
    x0 = (np.array([0.5 * (lo_ + hi_) for lo_, hi_ in mesh.cfg.extent]) if x0 is None
          else np.atleast_1d(np.asarray(x0, dtype=float)))
    h = float(np.max(mesh.h))
    if case == "above-mu":
        for shift in range(max_shifts + 1):
            prm = BubbleParams.make(mesh, eps, x0=x0, mu0=mu0, gamma_exp=gamma_exp, mu=mu)
            e = bubble(prm, mesh)
            dist = min(_distance_to_B(model, e, a, b), _distance_to_B(model, -e, a, b))
            if dist > 1e-6:
                break
            x0 = x0 + h
        else:
            raise LinkingError("could not place x0 with +-e outside B")
        return LinkingProblem(a=a, b=b, l=l, case=case, e=e, bubble=prm, model=model, S_h=S_h,
                              curve_values=curves, x0_shifts=shift)
    prm = BubbleParams.make(mesh, eps, x0=x0, mu0=mu0, mu=mu, gamma_exp=gamma_exp)
    e = bubble(prm, mesh)
    V = dec.vectors[:, :model.k0]
    T = np.column_stack([annulus_cutoff_v(mesh, V[:, k], prm.mu, prm.x0) for k in range(model.k0)])
    if np.any(T * e[:, None] != 0.0):
        raise LinkingError("e and T(N_{l-1}) overlap")
    lam_next = dec.lam(l + 1)
    nu_model = FucikModel(dec, l)
    d = 0.5 * (1.0 - max(a, b) / lam_next) if delta is None else float(delta)
    for _ in range(12):
        if nu_model.n_level(a / (1 - d), b / (1 - d), n_starts=n_starts, seed=seed).value >= 0.0:
            break
        d *= 0.5
    else:
        raise LinkingError("no admissible delta found")
    return LinkingProblem(a=a, b=b, l=l, case=case, e=e, bubble=prm, model=model, S_h=S_h,
                          delta=d, base_T=T, curve_values=curves)


# ---------------------------------------------------------------------------
# lower bound over A

def inf_A_lower(problem: LinkingProblem, n_samples: int = 32, seed: int = 0) -> dict:
    """Lower bound for inf_A E with rho chosen to maximise it.

    Uses |w|_p^2 <= |w|_D^2 / S_h.  In the below-nu case |u|_D on A ranges
    over [rho, R rho] with R estimated from sampled ratios |theta(w)|/|w|.
    """
    op = problem.op
    p = op.cfg.critical_exponent
    S = problem.S_h
    m = problem.model
    a, b = problem.a, problem.b
    if problem.case == "above-mu":
        kappa = 1.0 - max(a, b) / m.lam_hi
        R = 1.0
    else:
        kappa = problem.delta
        ap, bp = a / (1 - problem.delta), b / (1 - problem.delta)
        rng = np.random.default_rng(seed)
        ratios = [0.0]
        for _ in range(n_samples):
            c = np.zeros(m.lam.size)
            k = min(m.lam.size - m.k0, 16)
            c[m.k0:m.k0 + k] = rng.standard_normal(k) / m.sqlam[m.k0:m.k0 + k]
            th, _, _ = m.theta_c(c, ap, bp)
            ratios.append(np.sqrt(m.lam[:m.k0] @ (th * th)) / m._dnorm(c))
        R = float(np.sqrt(1.0 + max(ratios) ** 2))

    def g(r):
        return 0.5 * kappa * r * r - r ** p / (p * S ** (p / 2))

    r_star = (kappa * S ** (p / 2)) ** (1.0 / (p - 2.0))
    rho = r_star / R
    bound = min(g(rho), g(R * rho))
    return {"rho": float(rho), "bound": float(bound), "kappa": float(kappa), "R": R}


# ---------------------------------------------------------------------------
# local minimax descent

@dataclass
class CriticalPointResult:
    u: np.ndarray = field(repr=False)
    level: float
    residual: float
    dnorm: float
    success: bool
    flags: list
    inf_A: float
    sup_Q: float
    c_star: float
    path: list = field(default_factory=list)
    newton_iterations: int = 0
    sign_changing: bool = False

    @property
    def bracket_ok(self) -> bool:
        return self.inf_A <= self.level <= self.sup_Q

    def to_dict(self) -> dict:
        return {"level": self.level, "residual": self.residual, "dnorm": self.dnorm,
                "success": self.success, "flags": list(self.flags), "inf_A": self.inf_A,
                "sup_Q": self.sup_Q, "c_star": self.c_star, "bracket_ok": self.bracket_ok,
                "newton_iterations": self.newton_iterations, "sign_changing": self.sign_changing,
                "u_max": float(np.max(self.u)), "u_min": float(np.min(self.u))}


class _Minimax:
    def __init__(self, problem: LinkingProblem):
        self.pb = problem
        self.op = problem.op
        self.k = problem.base_dim()
        self.L = np.linalg.cholesky(self.op.K)
        self.linear = problem.base_linear()
        if self.linear:
            self.Bmat = np.column_stack([problem.base_map(np.eye(self.k)[i]) for i in range(self.k)])

    def riesz(self, r):
        return sla.cho_solve((self.L, True), r)

    def point(self, x, v):
        base = self.Bmat @ x[:self.k] if self.linear else self.pb.base_map(x[:self.k])
        return base + x[self.k] * v

    def _neg(self, x, v):
        a, b = self.pb.a, self.pb.b
        u = self.point(x, v)
        val = energy_E(self.op, u, a, b)
        r = gradient_E(self.op, u, a, b)
        g = np.empty(self.k + 1)
        if self.linear:
            g[:self.k] = self.Bmat.T @ r
        else:
            hstep = 1e-6 * max(1.0, np.linalg.norm(x[:self.k]))
            for i in range(self.k):
                d = np.zeros(self.k)
                d[i] = hstep
                db = (self.pb.base_map(x[:self.k] + d) - self.pb.base_map(x[:self.k] - d)) / (2 * hstep)
                g[i] = db @ r
        g[self.k] = v @ r
        return -val, -g

    def peak(self, v, x_start):
        bounds = [(None, None)] * self.k + [(0.0, None)]
        res = optimize.minimize(self._neg, x_start, args=(v,), jac=True, method="L-BFGS-B",
                                bounds=bounds, options={"maxiter": 2000, "ftol": 1e-15, "gtol": 1e-12})
        return res.x, -float(res.fun)

    def descend(self, v0, x0, tol, maxiter, c_star):
        v = v0 / self.op.dnorm(v0)
        x, val = self.peak(v, x0)
        path = []
        step = 0.5
        flags = []
        for it in range(maxiter):
            u = self.point(x, v)
            r = gradient_E(self.op, u, self.pb.a, self.pb.b)
            g = self.riesz(r)
            gn = float(np.sqrt(max(g @ r, 0.0)))
            path.append({"iteration": it, "level": val, "grad_norm": gn, "step": step, "t": float(x[self.k])})
            if gn <= tol:
                break
            t = max(x[self.k], 1e-12)
            accepted = False
            for _ in range(40):
                vn = v - step * g
                vn /= self.op.dnorm(vn)
                xn, valn = self.peak(vn, x)
                if valn <= val - 1e-4 * step * t * gn * gn and xn[self.k] > 0:
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                flags.append("descent stagnated")
                break
            v, x, val = vn, xn, valn
            step = min(4.0 * step, 1.0)
        else:
            flags.append("descent iteration limit")
        if val >= c_star:
            flags.append("PS-type failure candidate")
        return self.point(x, v), val, path, flags, x


def newton_refine(op, u, a, b, tol: float = 1e-8, maxiter: int = 60):
    """Semismooth Newton on gradient_E with backtracking on the M-dual residual."""
    r = gradient_E(op, u, a, b)
    res = dual_norm(op, r)
    it = 0
    for it in range(1, maxiter + 1):
        if res <= tol * 1e-2:
            break
        H = hessian_E(op, u, a, b)
        try:
            d = sla.solve(H, -r, assume_a="sym")
        except sla.LinAlgError:
            d = -sla.cho_solve(sla.cho_factor(op.K), r)
        t = 1.0
        while t > 1e-8:
            un = u + t * d
            rn = gradient_E(op, un, a, b)
            resn = dual_norm(op, rn)
            if resn < (1 - 1e-4 * t) * res:
                break
            t *= 0.5
        else:
            break
        u, r, res = un, rn, resn
    return u, res, it


def solve_linking(problem: LinkingProblem, tol: float = 1e-8, descent_tol: float = 1e-5,
                  maxiter: int = 500, n_samples: int = 16, seed: int = 0,
                  sup_result=None) -> CriticalPointResult:
    """Nontrivial critical point with the bracket inf_A E <= c <= sup_Q E."""
    op = problem.op
    a, b = problem.a, problem.b
    c_star = problem.c_star
    if sup_result is None:
        sup_result = linking_sup(problem, n_samples=n_samples, seed=seed)
    if not sup_result.margin > 0:
        raise LinkingError(f"sup_Q E = {sup_result.value} is not below c* = {c_star}")
    mm = _Minimax(problem)
    base = sup_result.base
    e = problem.e
    # base coefficients of the grid argmax
    if mm.linear:
        c0 = np.linalg.lstsq(mm.Bmat, base, rcond=None)[0]
    else:
        c0 = problem.model.to_coords(base)[:mm.k]
    en = op.dnorm(e)
    x_start = np.concatenate([c0, [sup_result.sigma * en]])
    x_peak0, val0 = mm.peak(e / en, x_start)
    sup_Q = max(sup_result.value, val0)
    u, val, path, flags, _ = mm.descend(e, x_peak0, descent_tol, maxiter, c_star)
    u, res, nit = newton_refine(op, u, a, b, tol=tol)
    level = energy_E(op, u, a, b)
    dn = op.dnorm(u)
    lower = inf_A_lower(problem, seed=seed)
    if res > tol:
        flags.append("Newton did not reach tolerance")
    if dn < 1e-3:
        flags.append("trivial solution")
    if not 0.0 < level < c_star:
        flags.append("level outside (0, c*)")
    if not lower["bound"] <= level <= sup_Q:
        flags.append("bracket violated")
    success = res <= tol and dn >= 1e-3 and 0.0 < level < c_star and lower["bound"] <= level <= sup_Q
    sign_changing = bool(np.max(u) > 1e-8 * np.max(np.abs(u)) and np.min(u) < -1e-8 * np.max(np.abs(u)))
    return CriticalPointResult(u=u, level=float(level), residual=float(res), dnorm=float(dn),
                               success=bool(success), flags=flags, inf_A=lower["bound"],
                               sup_Q=float(sup_Q), c_star=float(c_star), path=path,
                               newton_iterations=nit, sign_changing=sign_changing)


def linking_sup(problem: LinkingProblem, n_samples: int = 16, seed: int = 0, n_grid: int = 64):
    """sup_Q E through the matching estimate (checked before any descent)."""
    op = problem.op
    prm = problem.bubble
    if problem.case == "above-mu":
        K = sample_K(problem.model, problem.a, problem.b, n_samples, seed)
        return _above_sup_fixed(op, K, problem, n_grid)
    return below_nu_sup(op, problem.base_T, prm.eps, prm.mu, problem.a, problem.b, problem.S_h,
                      x0=prm.x0, mu0=prm.mu0, n_samples=n_samples, seed=seed, n_grid=n_grid)


def _above_sup_fixed(op, K, problem, n_grid):
    prm = problem.bubble
    gamma = -np.log(prm.mu) / np.log(prm.eps)
    return above_mu_sup(op, K, prm.eps, gamma, problem.a, problem.b, problem.S_h, x0=prm.x0,
                      mu0=prm.mu0, n_grid=n_grid)


# ---------------------------------------------------------------------------

def verify_gradient_orthogonality(model: FucikModel, u, a, b, tol: float = 1e-8) -> dict:
    """I'(u) in N_l for u in B: M_l part of the I-gradient, also at 2u."""
    proj = model.gradient_projection_M(u, a, b)
    proj2 = model.gradient_projection_M(2.0 * np.asarray(u), a, b)
    c = model.to_coords(u)
    g = model.grad_c(c, a, b)
    z = g[:model.k1] / model.lam[:model.k1]   # D-Riesz representer coordinates of I'(u) in N_l
    return {"projection_M": float(proj), "projection_M_at_2u": float(proj2),
            "z_u_dnorm": float(np.sqrt(model.lam[:model.k1] @ (z * z))),
            "passed": bool(proj <= tol and proj2 <= tol)}
