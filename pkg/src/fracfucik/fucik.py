"""Variational construction of the minimal and maximal Fucik curves.

Everything runs in eigen-coordinates ``u = Phi c`` of the discrete operator,
where ``|u|_D^2 = sum(lambda c^2)``, ``N_l`` is a leading coordinate block and
``M_l`` the trailing one.  Positive and negative parts are taken at the
element quadrature points, so

    I(u, a, b) = |u|_D^2 - a int (u^-)^2 - b int (u^+)^2

is evaluated exactly for the piecewise-linear ``u^\\pm`` restricted to those
points.  Spheres are parametrised by ``z = sqrt(lambda) c``, which turns the
D-sphere into the Euclidean unit sphere and conditions the outer problems.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .spectrum import EigenDecomposition


class FucikConvergenceError(RuntimeError):
    pass


@dataclass
class PartialOptimum:
    input: np.ndarray
    output: np.ndarray
    coords: np.ndarray = field(repr=False)
    residual: float
    iterations: int


@dataclass
class LevelResult:
    value: float
    argopt: np.ndarray                    # nodal vector on the D-sphere
    z: np.ndarray = field(repr=False)     # sphere coordinates of the optimum
    converged: bool = True
    spread: float = 0.0
    values: list = field(default_factory=list)


@dataclass
class CurveValue:
    a: float
    b: float
    flag: str        # "" when bracketed, otherwise "at_lower"/"at_upper"/"unconverged"
    iterations: int


@dataclass
class CurveSample:
    l: int
    a: np.ndarray
    nu: np.ndarray
    mu: np.ndarray
    nu_flags: list
    mu_flags: list
    bisect_tol: float

    def rows(self):
        for k in range(self.a.size):
            yield self.a[k], self.nu[k], self.mu[k], self.nu_flags[k], self.mu_flags[k]


class FucikModel:
    """Fucik machinery at level ``l`` for a complete eigendecomposition."""

    def __init__(self, dec: EigenDecomposition, l: int, inner_tol: float = 1e-12,
                 max_newton: int = 200):
        if not dec.complete:
            raise ValueError("Fucik computations need the full eigendecomposition")
        if not 1 <= l < dec.levels:
            raise ValueError(f"level {l} needs 1 <= l < {dec.levels}")
        self.dec, self.op, self.l = dec, dec.op, l
        self.Phi = dec.vectors
        self.lam = dec.values
        self.sqlam = np.sqrt(self.lam)
        self.k0 = dec.dim_N(l - 1) if l > 1 else 0
        self.k1 = dec.dim_N(l)
        self.lam_lo = dec.lam(l - 1) if l > 1 else 0.0
        self.lam_l = dec.lam(l)
        self.lam_hi = dec.lam(l + 1)
        self.BP = np.asarray(self.op.B @ self.Phi)
        self.w = self.op.w
        self.MPhi = self.op.M @ self.Phi
        self.inner_tol = inner_tol
        self.max_newton = max_newton

    # coordinate maps -------------------------------------------------------
    def to_coords(self, u) -> np.ndarray:
        return self.MPhi.T @ np.asarray(u, dtype=float)

    def to_nodal(self, c) -> np.ndarray:
        return self.Phi @ c

    def bracket(self, eps_frac: float = 1e-4):
        eps = eps_frac * (self.lam_hi - self.lam_lo)
        return self.lam_lo + eps, self.lam_hi - eps

    # functional ------------------------------------------------------------
    def I_c(self, c, a, b) -> float:
        y = self.BP @ c
        neg = np.minimum(y, 0.0)
        pos = np.maximum(y, 0.0)
        return float(self.lam @ (c * c) - a * (self.w @ (neg * neg)) - b * (self.w @ (pos * pos)))

    def grad_c(self, c, a, b) -> np.ndarray:
        y = self.BP @ c
        r = self.w * (a * np.minimum(y, 0.0) + b * np.maximum(y, 0.0))
        return 2.0 * self.lam * c - 2.0 * (self.BP.T @ r)

    def hess_c(self, c, a, b, idx) -> np.ndarray:
        y = self.BP @ c
        d = self.w * np.where(y < 0.0, a, np.where(y > 0.0, b, 0.5 * (a + b)))
        P = self.BP[:, idx]
        return 2.0 * np.diag(self.lam[idx]) - 2.0 * (P.T * d) @ P

    def _dual(self, g, idx) -> float:
        return float(np.sqrt(np.sum(g * g / self.lam[idx])))

    def _dnorm(self, c) -> float:
        return float(np.sqrt(self.lam @ (c * c)))

    # theta / tau -----------------------------------------------------------
    def _line_search(self, c, idx, step, a, b, sign):
        """Exact minimiser of the convex piecewise quadratic t -> sign * I(c + t step).

        Its derivative is monotone and piecewise linear, so regula falsi with
        the Illinois modification terminates quickly.
        """
        def dphi(t):
            trial = c.copy()
            trial[idx] += t * step
            return float(sign * self.grad_c(trial, a, b)[idx] @ step)

        lo, flo = 0.0, dphi(0.0)
        hi, fhi = 1.0, dphi(1.0)
        while fhi < 0.0 and hi < 1e6:
            lo, flo = hi, fhi
            hi *= 2.0
            fhi = dphi(hi)
        if fhi <= 0.0:
            return hi
        side = 0
        for _ in range(100):
            t = (lo * fhi - hi * flo) / (fhi - flo)
            ft = dphi(t)
            if ft == 0.0 or hi - lo <= 1e-15 * hi:
                return t
            if ft < 0.0:
                lo, flo = t, ft
                if side == -1:
                    fhi *= 0.5
                side = -1
            else:
                hi, fhi = t, ft
                if side == 1:
                    flo *= 0.5
                side = 1
        return 0.5 * (lo + hi)

    def _newton(self, c_fixed, idx, a, b, sign):
        """Optimise ``sign * I`` over the coordinates ``idx`` (sign=+1 minimise).

        The restricted problem is strictly convex (after the sign flip) and
        piecewise quadratic: semismooth Newton directions with exact line search.
        """
        c = c_fixed.copy()
        scale = self._dnorm(c_fixed)
        if idx.size == 0 or scale == 0.0:
            return c, 0.0, 0
        best = (np.inf, c)
        for it in range(self.max_newton):
            g = sign * self.grad_c(c, a, b)[idx]
            res = self._dual(g, idx) / scale
            if res < best[0]:
                best = (res, c)
            if res <= self.inner_tol:
                return c, res, it
            H = sign * self.hess_c(c, a, b, idx)
            step = -np.linalg.solve(H, g)
            t = self._line_search(c, idx, step, a, b, sign)
            c = c.copy()
            c[idx] += t * step
        res, c = best
        if res > 1e3 * self.inner_tol:
            raise FucikConvergenceError(f"semismooth Newton stalled at residual {res:.3e}")
        return c, res, self.max_newton

    def theta_c(self, cw, a, b):
        idx = np.arange(self.k0)
        base = cw.copy()
        base[idx] = 0.0
        c, res, it = self._newton(base, idx, a, b, sign=-1.0)
        return c[:self.k0], res, it

    def tau_c(self, cv, a, b):
        idx = np.arange(self.k1, self.lam.size)
        base = cv.copy()
        base[idx] = 0.0
        c, res, it = self._newton(base, idx, a, b, sign=1.0)
        return c[self.k1:], res, it

    def theta(self, w, a, b) -> PartialOptimum:
        """Maximiser over N_{l-1} of ``v -> I(v + w)``; ``w`` is projected onto M_{l-1}."""
        cw = self.to_coords(w)
        cw[:self.k0] = 0.0
        v, res, it = self.theta_c(cw, a, b)
        full = np.zeros_like(cw)
        full[:self.k0] = v
        return PartialOptimum(input=self.to_nodal(cw), output=self.to_nodal(full),
                              coords=full, residual=res, iterations=it)

    def tau(self, v, a, b) -> PartialOptimum:
        """Minimiser over M_l of ``w -> I(v + w)``; ``v`` is projected onto N_l."""
        cv = self.to_coords(v)
        cv[self.k1:] = 0.0
        w, res, it = self.tau_c(cv, a, b)
        full = np.zeros_like(cv)
        full[self.k1:] = w
        return PartialOptimum(input=self.to_nodal(cv), output=self.to_nodal(full),
                              coords=full, residual=res, iterations=it)

    def gradient_projection_M(self, u, a, b) -> float:
        """D-dual norm of the M_l component of the I-gradient at ``u`` relative to |u|_D."""
        c = self.to_coords(u)
        g = self.grad_c(c, a, b)
        idx = np.arange(self.k1, self.lam.size)
        return self._dual(g[idx], idx) / max(self._dnorm(c), 1e-300)

    # sphere problems -------------------------------------------------------
    def _n_fun(self, z, a, b):
        c = np.zeros(self.lam.size)
        c[self.k0:] = z / self.sqlam[self.k0:]
        c[:self.k0], _, _ = self.theta_c(c, a, b)
        val = self.I_c(c, a, b)
        g = self.grad_c(c, a, b)[self.k0:] / self.sqlam[self.k0:]
        return val, g, c

    def _m_fun(self, z, a, b):
        c = np.zeros(self.lam.size)
        c[:self.k1] = z / self.sqlam[:self.k1]
        c[self.k1:], _, _ = self.tau_c(c, a, b)
        val = self.I_c(c, a, b)
        g = self.grad_c(c, a, b)[:self.k1] / self.sqlam[:self.k1]
        return -val, -g, c

    def _n_hess(self, c, a, b):
        """Sphere-coordinate Hessian of w -> I(theta(w) + w) on the current sign pattern."""
        H = self.hess_c(c, a, b, np.arange(self.lam.size))
        k = self.k0
        S = H[k:, k:]
        if k:
            S = S - H[k:, :k] @ np.linalg.solve(H[:k, :k], H[:k, k:])
        s = self.sqlam[k:]
        return S / np.outer(s, s)

    def _m_hess(self, c, a, b):
        H = self.hess_c(c, a, b, np.arange(self.lam.size))
        k = self.k1
        S = H[:k, :k] - H[:k, k:] @ np.linalg.solve(H[k:, k:], H[k:, :k])
        s = self.sqlam[:k]
        return -S / np.outer(s, s)

    @staticmethod
    def _sphere_descent(fun, z0, hess=None, tol=1e-7, maxiter=500, coarse=1e-5):
        """Minimise a 2-homogeneous piecewise quadratic ``fun`` on the unit sphere.

        Riemannian gradient steps (BB length, Armijo backtracking) bring the
        iterate near a minimiser; once the sphere gradient drops below
        ``coarse`` the quadratic piece is minimised exactly by an eigenvector
        step, repeated while the sign pattern keeps changing.
        """
        z = z0 / np.linalg.norm(z0)
        f, g, c = fun(z)
        rg = g - (g @ z) * z
        step = 0.25
        prev = None
        it = 0
        for it in range(maxiter):
            gn = float(np.linalg.norm(rg))
            if gn <= tol or (hess is not None and gn <= coarse):
                break
            if prev is not None:
                sz, sg = z - prev[0], rg - prev[1]
                denom = float(sz @ sg)
                if denom > 0:
                    step = min(max(float(sz @ sz) / denom, 1e-6), 10.0)
            t = step
            while True:
                zt = z - t * rg
                zt /= np.linalg.norm(zt)
                ft, gt, ct = fun(zt)
                if ft <= f - 1e-4 * t * gn * gn or t < 1e-14:
                    break
                t *= 0.5
            if t < 1e-14 or f - ft <= 1e-15 * max(1.0, abs(f)):
                if ft < f:
                    z, f, g, c = zt, ft, gt, ct
                    rg = g - (g @ z) * z
                break  # further decrease is below rounding
            prev = (z, rg)
            z, f, g, c = zt, ft, gt, ct
            rg = g - (g @ z) * z
        if hess is not None:
            for _ in range(50):
                H = hess(c)
                vals, vecs = np.linalg.eigh(0.5 * (H + H.T))
                cand = vecs[:, 0]
                if cand @ z < 0:
                    cand = -cand
                fc, gc, cc = fun(cand)
                if fc < f - 1e-15 * max(1.0, abs(f)):
                    z, f, g, c = cand, fc, gc, cc
                    rg = g - (g @ z) * z
                else:
                    break
        gn = float(np.linalg.norm(rg))
        if gn > tol and hess is not None:
            z2, f2, c2, ok2, it2 = FucikModel._sphere_descent(fun, z, None, tol, maxiter)
            if f2 <= f:
                return z2, f2, c2, ok2, it + it2
        return z, f, c, gn <= tol, it

    def _starts(self, dim, n_starts, seed, warm):
        starts = [np.asarray(s, dtype=float) for s in (warm or [])]
        rng = np.random.default_rng(seed)
        for k in range(min(dim, max(n_starts // 2, 1))):
            # eigenvectors are critical points of every sphere problem; nudge off them
            e = 0.05 * rng.standard_normal(dim) / (1.0 + np.arange(dim))
            e[k] += 1.0
            starts.append(e)
        while len(starts) < n_starts + len(warm or []):
            # bias random starts toward low modes
            starts.append(rng.standard_normal(dim) / (1.0 + np.arange(dim)))
        return starts

    def _level(self, fun, hess, dim, n_starts, seed, warm, sign):
        if dim == 0:
            raise ValueError("empty sphere")
        best, vals, ok_all = None, [], True
        for z0 in self._starts(dim, n_starts, seed, warm):
            z, f, c, ok, _ = self._sphere_descent(fun, z0, hess)
            vals.append(sign * f)
            ok_all &= ok
            if best is None or f < best[1]:
                best = (z, f, c)
        z, f, c = best
        u = self.to_nodal(c)
        u /= self.op.dnorm(u) if self.op.dnorm(u) > 0 else 1.0
        return LevelResult(value=sign * f, argopt=u, z=z, converged=ok_all,
                           spread=float(max(vals) - min(vals)), values=vals)

    def n_level(self, a, b, n_starts: int = 8, seed: int = 0, warm=None) -> LevelResult:
        """inf over M_{l-1} cap S of I(theta(w) + w)."""
        return self._level(lambda z: self._n_fun(z, a, b), lambda c: self._n_hess(c, a, b),
                           self.lam.size - self.k0,
                           n_starts, seed, warm, sign=1.0)

    def m_level(self, a, b, n_starts: int = 8, seed: int = 0, warm=None) -> LevelResult:
        """sup over N_l cap S of I(v + tau(v))."""
        return self._level(lambda z: self._m_fun(z, a, b), lambda c: self._m_hess(c, a, b),
                           self.k1, n_starts, seed, warm,
                           sign=-1.0)

    # curves ----------------------------------------------------------------
    def _bisect(self, a, level_fn, upper_curve, tol, n_starts, seed):
        lo, hi = self.bracket()
        warm = []

        def sign_at(b, first):
            res = level_fn(a, b, n_starts=n_starts if first else max(2, n_starts // 4),
                           seed=seed, warm=warm)
            warm[:] = [res.z]
            return res

        r_lo = sign_at(lo, True)
        r_hi = sign_at(hi, False)
        ok = r_lo.converged and r_hi.converged
        if not upper_curve:
            # nu = sup{b : n(a, b) >= 0}, n nonincreasing in b
            if r_lo.value < 0:
                return CurveValue(a, lo, "at_lower", 0)
            if r_hi.value >= 0:
                return CurveValue(a, hi, "at_upper", 0)
        else:
            # mu = inf{b : m(a, b) <= 0}
            if r_lo.value <= 0:
                return CurveValue(a, lo, "at_lower", 0)
            if r_hi.value > 0:
                return CurveValue(a, hi, "at_upper", 0)
        it = 0
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            r = sign_at(mid, False)
            ok &= r.converged
            inside = r.value >= 0 if not upper_curve else r.value > 0
            if inside:
                lo = mid
            else:
                hi = mid
            it += 1
        return CurveValue(a, 0.5 * (lo + hi), "" if ok else "unconverged", it)

    def default_tol(self) -> float:
        return 1e-6 * self.lam_l

    def nu_curve(self, a, tol=None, n_starts=8, seed=0) -> CurveValue:
        return self._bisect(a, self.n_level, False, tol or self.default_tol(), n_starts, seed)

    def mu_curve(self, a, tol=None, n_starts=8, seed=0) -> CurveValue:
        return self._bisect(a, self.m_level, True, tol or self.default_tol(), n_starts, seed)

    def trace(self, a_grid, tol=None, n_starts=8, seed=0, threads=1) -> CurveSample:
        a_grid = np.asarray(a_grid, dtype=float)
        tol = tol or self.default_tol()
        lo, hi = self.lam_lo, self.lam_hi
        if np.any(a_grid <= lo) or np.any(a_grid >= hi):
            raise ValueError(f"a-grid must lie inside ({lo}, {hi})")

        def work(a):
            return (self.nu_curve(a, tol, n_starts, seed), self.mu_curve(a, tol, n_starts, seed))

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                out = list(ex.map(work, a_grid))
        else:
            out = [work(a) for a in a_grid]
        return CurveSample(l=self.l, a=a_grid, nu=np.array([o[0].b for o in out]),
                           mu=np.array([o[1].b for o in out]),
                           nu_flags=[o[0].flag for o in out], mu_flags=[o[1].flag for o in out],
                           bisect_tol=tol)


def functional_I(op, u, a, b) -> float:
    """I(u, a, b) with u^+- taken at the element quadrature points."""
    u = np.asarray(u, dtype=float)
    y = op.B @ u
    neg = np.minimum(y, 0.0)
    pos = np.maximum(y, 0.0)
    return float(u @ op.K @ u - a * (op.w @ (neg * neg)) - b * (op.w @ (pos * pos)))


def grad_I(op, u, a, b) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    y = op.B @ u
    r = op.w * (a * np.minimum(y, 0.0) + b * np.maximum(y, 0.0))
    return 2.0 * (op.K @ u) - 2.0 * (op.B.T @ r)


def check_curves(sample: CurveSample, slack: float | None = None) -> dict:
    """Monotonicity and ordering checks on a traced sample."""
    tol = sample.bisect_tol if slack is None else slack
    dnu = np.diff(sample.nu)
    dmu = np.diff(sample.mu)
    flagged = any(sample.nu_flags) or any(sample.mu_flags)
    return {
        "nu_strictly_decreasing": bool(np.all(dnu < -tol)),
        "mu_strictly_decreasing": bool(np.all(dmu < -tol)),
        "nu_le_mu": bool(np.all(sample.nu <= sample.mu + tol)),
        "all_bracketed": not flagged,
    }
