"""Command pipelines: build the objects a config describes, run checks, write outputs.

Each ``run_*`` function returns ``(passed, report, files)``; writing the
manifest and mapping ``passed`` to an exit code is left to the CLI.
"""
from __future__ import annotations

import os
import time

import numpy as np

from .config import RunConfig
from .degiorgi import TRACE_COLUMNS, degiorgi_linfty, solution_kappa
from .energy import BubbleParams, dual_norm, gradient_E, sobolev_constant, sobolev_constant_exact
from .estimates import (bubble_expansion_surface, above_mu_sup, cutoff_defect_report, below_nu_sup, sample_K,
                        verify_bubble_estimates)
from .fucik import FucikModel, check_curves
from .operator import assemble, dump_operator
from .report import CSV_SCHEMAS, write_csv, write_json
from .solver import build_problem, solve_linking, verify_gradient_orthogonality
from .spectrum import check_sign_hypothesis, eigensolve, inverse_power_lambda1


class Timer:
    def __init__(self):
        self.stages = {}

    def __call__(self, name):
        timer = self

        class _Stage:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                timer.stages[name] = timer.stages.get(name, 0.0) + time.perf_counter() - self.t
                return False

        return _Stage()


def _ops(cfg: RunConfig, timer: Timer, count=None, need_dec=True):
    with timer("assemble"):
        op = assemble(cfg.mesh, quad_tol=cfg.quad_tol)
    dec = None
    if need_dec:
        with timer("eigensolve"):
            dec = eigensolve(op, count=count, cluster_tol=cfg.spectrum["cluster_tol"])
    return op, dec


def central_a_grid(dec, l: int, n_points: int = 17, spread: float = 0.35):
    """Grid around lambda_l: half the points below (down to lambda_l - spread * gap) and half above."""
    lam_l = dec.lam(l)
    lam_lo = dec.lam(l - 1) if l > 1 else 0.0
    lam_hi = dec.lam(l + 1)
    n_lo = n_points // 2 + 1
    lo = np.linspace(lam_l - spread * (lam_l - lam_lo), lam_l, n_lo)
    hi = np.linspace(lam_l, lam_l + spread * (lam_hi - lam_l), n_points - n_lo + 1)[1:]
    return np.concatenate([lo, hi])


def default_point(dec, l: int, offset: float):
    """a = b = lambda_l + offset (lambda_{l+1} - lambda_l)."""
    lam = dec.lam(l) + offset * (dec.lam(l + 1) - dec.lam(l))
    return lam, lam


def gamma_midpoint(N: int, s: float) -> float:
    return 0.5 * (s * s / N + 1.0 - 2.0 * s / (N - 2.0 * s))


# ---------------------------------------------------------------------------

def run_eigs(cfg: RunConfig, out, seed: int, timer: Timer, dump: bool = False):
    op, dec = _ops(cfg, timer, count=cfg.spectrum["count"])
    with timer("checks"):
        sign = check_sign_hypothesis(dec, n_random=cfg.spectrum["sign_samples"], seed=seed)
        lam1, _, its = inverse_power_lambda1(op)
    rel = abs(lam1 - dec.lam(1)) / dec.lam(1)
    passed = bool(sign.ok and dec.multiplicities[0] == 1 and rel < 1e-10
                  and np.all(dec.residuals < 1e-8))
    files = [os.path.join(out, "eigs.csv"), os.path.join(out, "eigs.json")]
    write_csv(files[0], ["level", "lambda", "multiplicity", "residual"],
              [[i + 1, lam, m, r] for i, (lam, m, r) in
               enumerate(zip(dec.lambdas, dec.multiplicities, dec.residuals))])
    report = {"config": cfg.to_dict(), "lambdas": dec.lambdas, "multiplicities": dec.multiplicities,
              "residuals": dec.residuals, "sign_hypothesis": sign.to_dict(),
              "lambda1_oracle": {"value": lam1, "iterations": its, "rel_diff": rel},
              "quadrature": op.quadrature_report, "passed": passed}
    write_json(files[1], report)
    if dump:
        dump_operator(op, out)
        files += [os.path.join(out, f) for f in ("stiffness.triplets", "mass.triplets", "operator.json")]
    return passed, report, files


def fucik_crossing_checks(model: FucikModel, tol, n_starts, seed, n_samples: int = 8) -> dict:
    """theta, tau vanish at (lambda_l, lambda_l) and both curves pass through it."""
    lam = model.lam_l
    rng = np.random.default_rng(seed)
    n = model.lam.size
    theta_max = tau_max = 0.0
    for _ in range(n_samples):
        c = rng.standard_normal(n) / model.sqlam
        w = c.copy()
        w[:model.k0] = 0.0
        v = c.copy()
        v[model.k1:] = 0.0
        if model.k0:
            th, _, _ = model.theta_c(w, lam, lam)
            theta_max = max(theta_max, np.sqrt(model.lam[:model.k0] @ (th * th)) / model._dnorm(w))
        ta, _, _ = model.tau_c(v, lam, lam)
        tau_max = max(tau_max, np.sqrt(model.lam[model.k1:] @ (ta * ta)) / model._dnorm(v))
    out = {"theta_max": float(theta_max), "tau_max": float(tau_max), "lambda_l": lam, "tol": tol}
    mu = model.mu_curve(lam, tol=tol, n_starts=n_starts, seed=seed)
    out["mu_at_lambda_l"] = mu.b
    out["mu_error"] = abs(mu.b - lam)
    ok = theta_max <= 1e-8 and tau_max <= 1e-8 and out["mu_error"] <= tol and not mu.flag
    if model.l > 1:
        nu = model.nu_curve(lam, tol=tol, n_starts=n_starts, seed=seed)
        out["nu_at_lambda_l"] = nu.b
        out["nu_error"] = abs(nu.b - lam)
        ok = ok and out["nu_error"] <= tol and not nu.flag
    out["passed"] = bool(ok)
    return out


def fucik_symmetry(model: FucikModel, n_points: int = 5, n_starts: int = 8, seed: int = 0,
                   tol: float = 1e-6):
    """(a, b) <-> (b, a) with u <-> -u: levels and theta/tau maps agree."""
    rng = np.random.default_rng(seed)
    lo, hi = model.lam_lo, model.lam_hi
    span = hi - lo
    rows, worst = [], 0.0
    n = model.lam.size
    for _ in range(n_points):
        a, b = lo + span * (0.15 + 0.7 * rng.random(2))
        n_ab = model.n_level(a, b, n_starts=n_starts, seed=seed).value if model.k0 else 0.0
        n_ba = model.n_level(b, a, n_starts=n_starts, seed=seed).value if model.k0 else 0.0
        m_ab = model.m_level(a, b, n_starts=n_starts, seed=seed).value
        m_ba = model.m_level(b, a, n_starts=n_starts, seed=seed).value
        c = rng.standard_normal(n) / model.sqlam
        w = c.copy()
        w[:model.k0] = 0.0
        v = c.copy()
        v[model.k1:] = 0.0
        th_diff = 0.0
        if model.k0:
            t1, _, _ = model.theta_c(w, a, b)
            t2, _, _ = model.theta_c(-w, b, a)
            th_diff = np.sqrt(model.lam[:model.k0] @ ((t1 + t2) ** 2)) / model._dnorm(w)
        s1, _, _ = model.tau_c(v, a, b)
        s2, _, _ = model.tau_c(-v, b, a)
        ta_diff = np.sqrt(model.lam[model.k1:] @ ((s1 + s2) ** 2)) / model._dnorm(v)
        scale = max(1.0, abs(n_ab), abs(m_ab))
        worst = max(worst, abs(n_ab - n_ba) / scale, abs(m_ab - m_ba) / scale, th_diff, ta_diff)
        rows.append([a, b, n_ab, n_ba, m_ab, m_ba, th_diff, ta_diff])
    return {"max_deviation": float(worst), "tol": tol, "passed": bool(worst <= tol)}, rows


def run_fucik(cfg: RunConfig, out, seed: int, timer: Timer, threads: int = 1):
    op, dec = _ops(cfg, timer, count=None)
    f = cfg.fucik
    l = f["level"]
    model = FucikModel(dec, l)
    tol = f["bisect_tol"] or model.default_tol()
    grid = f["a_grid"]
    if isinstance(grid, tuple) and grid and grid[0] == "auto":
        grid = central_a_grid(dec, l, grid[1])
    grid = np.asarray(grid, dtype=float)
    with timer("curves"):
        sample = model.trace(grid, tol=tol, n_starts=f["n_starts"], seed=seed, threads=threads)
    checks = check_curves(sample)
    with timer("crossing"):
        cross = fucik_crossing_checks(model, tol, f["n_starts"], seed)
    with timer("symmetry"):
        sym, sym_rows = fucik_symmetry(model, f["symmetry_points"], f["n_starts"], seed)
    passed = bool(all(checks.values()) and cross["passed"] and sym["passed"])
    files = [os.path.join(out, n) for n in ("fucik.csv", "fucik_symmetry.csv", "fucik.json")]
    write_csv(files[0], ["a", "nu", "mu", "n_residual_flag", "m_residual_flag"], sample.rows())
    write_csv(files[1], ["a", "b", "n_ab", "n_ba", "m_ab", "m_ba", "theta_diff", "tau_diff"], sym_rows)
    report = {"config": cfg.to_dict(), "level": l, "lambdas": dec.lambdas[:l + 2], "bisect_tol": tol,
              "checks": checks, "crossing": cross, "symmetry": sym, "passed": passed}
    write_json(files[2], report)
    return passed, report, files


def run_bubble(cfg: RunConfig, out, seed: int, timer: Timer):
    op, _ = _ops(cfg, timer, need_dec=False)
    e = cfg.energy
    N, s = cfg.mesh.N, cfg.mesh.s
    x0 = e["x0"]
    with timer("estimates"):
        rep = verify_bubble_estimates(op, e["eps_grid"], mu=e["mu"], x0=x0, mu0=e["mu0"], tol=e["fit_tol"])
    with timer("sobolev"):
        sob = sobolev_constant(op, seed=seed)
    files = [os.path.join(out, n) for n in ("bubble.csv", "bubble_data.csv", "bubble.json")]
    write_csv(files[0], ["record", "expected_exponent", "fitted_exponent", "loglog_slope",
                         "correction_exponent", "passed"],
              [[r.name, r.expected_exponent, r.fitted_exponent, r.loglog_slope,
                r.correction_exponent, r.passed] for r in rep.records])
    cols = {r.name: r.lhs for r in rep.records}
    write_csv(files[1], ["eps", "seminorm_dev", "critical_dev", "l1", "p_minus_1", "l2"],
              [[eps] + [cols[k][i] for k in ("seminorm", "critical", "l1", "p_minus_1", "l2")]
               for i, eps in enumerate(rep.params["eps_grid"])])
    required = ("seminorm", "l1", "p_minus_1")
    passed = bool(all(rep.get(k).passed for k in required))
    sob_d = sob.to_dict() | {"S_exact": sobolev_constant_exact(N, s), "c_star": sob.c_star(N, s)}
    report = {"config": cfg.to_dict(), "sobolev": sob_d, "estimates": rep.to_dict(),
              "required_records": list(required), "passed": passed}
    write_json(files[2], report)
    return passed, report, files


def run_linking(cfg: RunConfig, out, seed: int, timer: Timer):
    op, dec = _ops(cfg, timer)
    e, sv = cfg.energy, cfg.solver
    N, s = cfg.mesh.N, cfg.mesh.s
    l = e["level"]
    with timer("sobolev"):
        sob = sobolev_constant(op, seed=seed)
    a, b = default_point(dec, l, sv["offset"])
    a = sv["a"] if sv["a"] is not None else a
    b = sv["b"] if sv["b"] is not None else b
    gamma = e["gamma"] if e["gamma"] is not None else gamma_midpoint(N, s)
    model = FucikModel(dec, l)
    with timer("above_sup"):
        K = sample_K(model, a, b, e["n_samples"], seed)
        sup_a = above_mu_sup(op, K, e["eps"], gamma, a, b, sob.S_h, x0=e["x0"], mu0=e["mu0"])
    h2 = 2.0 * float(np.max(op.mesh.h))
    grid = [x for x in e["eps_grid"] if x >= h2]
    report = {"config": cfg.to_dict(), "a": a, "b": b, "gamma": gamma, "S_h": sob.S_h,
              "above_sup": sup_a.to_dict()}
    with timer("expansion"):
        report["expansion"] = bubble_expansion_surface(op, K[0], grid, a, b, x0=e["x0"], mu0=e["mu0"],
                                          beta=e["beta"]).to_dict() if len(grid) >= 3 else None
    cut_rows = []
    if l > 1:
        V = dec.vectors[:, :dec.dim_N(l - 1)]
        mu0 = e["mu0"] or BubbleParams.make(op.mesh, e["eps"], x0=e["x0"]).mu0
        with timer("cutoff"):
            cut = cutoff_defect_report(op, V, a, b, mu0, x0=e["x0"], seed=seed)
        report["cutoff"] = cut.to_dict()
        recs = {r.name: r.lhs for r in cut.records}
        cut_rows = [[mu] + [recs[k][i] for k in CSV_SCHEMAS["cutoff"][1:]]
                 for i, mu in enumerate(cut.params["mu"])]
        a_below, b_below = default_point(dec, l, -sv["offset"])
        with timer("below_sup"):
            sup_b = below_nu_sup(op, V, e["eps"], e["mu"] or mu0, a_below, b_below, sob.S_h, x0=e["x0"],
                            mu0=mu0, n_samples=e["n_samples"], seed=seed)
        report["below_sup"] = sup_b.to_dict() | {"a": a_below, "b": b_below}
    passed = bool(sup_a.margin > 0 and (l == 1 or report["below_sup"]["passed"]))
    report["passed"] = passed
    files = [os.path.join(out, n) for n in ("linking.csv", "linking.json")]
    write_csv(files[0], ["sample", "sup", "sigma", "tau", "interior", "I"],
              [[p["sample"], p["sup"], p["sigma"], p["tau"], p["interior"], p["I"]] for p in sup_a.per_sample])
    write_json(files[1], report)
    if cut_rows:
        files.append(os.path.join(out, "cutoff.csv"))
        write_csv(files[-1], CSV_SCHEMAS["cutoff"], cut_rows)
    return passed, report, files


def solve_from_config(cfg: RunConfig, seed: int, timer: Timer):
    op, dec = _ops(cfg, timer)
    sv, e = cfg.solver, cfg.energy
    N, s = cfg.mesh.N, cfg.mesh.s
    l = sv["level"]
    with timer("sobolev"):
        sob = sobolev_constant(op, seed=seed)
    a, b = default_point(dec, l, sv["offset"])
    a = sv["a"] if sv["a"] is not None else a
    b = sv["b"] if sv["b"] is not None else b
    with timer("setup"):
        gamma = e["gamma"]
        if gamma is None and e["mu"] is None:
            gamma = gamma_midpoint(N, s)
        pb = build_problem(dec, a, b, l, sob.S_h, e["eps"], case=sv["case"], gamma_exp=gamma,
                           mu=e["mu"], x0=e["x0"], mu0=e["mu0"], seed=seed)
    with timer("solve"):
        res = solve_linking(pb, tol=sv["tol"], n_samples=e["n_samples"], seed=seed)
    return op, dec, pb, res


def run_solve(cfg: RunConfig, out, seed: int, timer: Timer):
    op, dec, pb, res = solve_from_config(cfg, seed, timer)
    a, b = pb.a, pb.b
    with timer("checks"):
        K = sample_K(pb.model, a, b, 4, seed)
        cross = verify_gradient_orthogonality(pb.model, K[0], a, b)
        sym_res = dual_norm(op, gradient_E(op, -res.u, b, a))
    passed = bool(res.success and cross["passed"] and abs(sym_res - res.residual) <= 1e-12 + 1e-6 * res.residual)
    files = [os.path.join(out, n) for n in ("solve_trace.csv", "solution.csv", "solve.json")]
    write_csv(files[0], ["iteration", "level", "grad_norm", "step", "t"],
              [[p["iteration"], p["level"], p["grad_norm"], p["step"], p["t"]] for p in res.path])
    pts = op.mesh.interior_points
    cols = ["x", "y"][:pts.shape[1]] + ["u"]
    write_csv(files[1], cols, [list(x) + [v] for x, v in zip(pts, res.u)])
    report = {"config": cfg.to_dict(), "problem": pb.to_dict(), "result": res.to_dict(),
              "gradient_orthogonality": cross, "symmetry_residual": sym_res, "passed": passed}
    write_json(files[2], report)
    return passed, report, files, res


def run_degiorgi(cfg: RunConfig, out, seed: int, timer: Timer, solution=None):
    sv = cfg.solver
    if solution is None:
        op, dec, pb, res = solve_from_config(cfg, seed, timer)
        u, a, b = res.u, pb.a, pb.b
        source = {"solved": True, "residual": res.residual, "level": res.level}
    else:
        with timer("assemble"):
            op = assemble(cfg.mesh, quad_tol=cfg.quad_tol)
        u, a, b = solution
        source = {"solved": False}
    kappa = solution_kappa(op, u, a, b)
    with timer("degiorgi"):
        dg = degiorgi_linfty(op, u, kappa, 0.0, k_max=sv["k_max"])
    passed = bool(dg.certified and dg.to_dict()["all_assertions"])
    files = [os.path.join(out, n) for n in ("degiorgi.csv", "degiorgi.json")]
    write_csv(files[0], TRACE_COLUMNS, list(dg.rows()))
    report = {"config": cfg.to_dict(), "a": a, "b": b, "source": source, "result": dg.to_dict(),
              "passed": passed}
    write_json(files[1], report)
    return passed, report, files


def load_solution(path, op_dim: int):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, op_dim]
