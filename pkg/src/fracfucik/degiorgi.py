"""De Giorgi truncation iteration certifying a sup bound from the L^2 norm.

The solution is rescaled to |u|_2 = sqrt(delta); levels C_k = 1 - 2^-k,
truncations w_k = (u - C_k)^+ and energies U_k = |w_k|_2^2 are tracked and
the per-step assertions of the iteration are checked nodally.  Integrals use
lumped (nodal cell) measures so that set measures and L^2 norms share one rule.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .energy import sobolev_constant_exact
from .operator import DiscreteOperator


@dataclass
class DeGiorgiState:
    k: int
    C_k: float
    A_k: float
    U_k: float
    support: float
    monotone: bool          # w_{k+1} <= w_k
    set_inclusion: bool     # {w_{k+1} > 0} in {w_k > 2^-(k+1)}
    measure_bound: bool     # |{w_{k+1} > 0}| <= 2^{2(k+1)} U_k
    pointwise_bound: bool   # |u| < A_k w_k on {w_{k+1} > 0}
    recursion: bool         # U_{k+1} <= C^k U_k^gamma
    decay: bool             # U_k <= delta eta^k

    def row(self) -> list:
        return [self.k, self.C_k, self.A_k, self.U_k, self.support, int(self.monotone),
                int(self.set_inclusion), int(self.measure_bound), int(self.pointwise_bound),
                int(self.recursion), int(self.decay)]


TRACE_COLUMNS = ["side", "k", "C_k", "A_k", "U_k", "support_measure", "monotone", "set_inclusion",
                 "measure_bound", "pointwise_bound", "recursion", "decay"]


@dataclass
class DeGiorgiResult:
    certified: bool
    bound: float
    nodal_max: float
    delta: float
    eta: float
    C: float
    gamma: float
    kappa: float
    g_inf: float
    shrinks: int
    trace: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def rows(self):
        for side, states in self.trace.items():
            for st in states:
                yield [side] + st.row()

    def to_dict(self) -> dict:
        return {"certified": self.certified, "bound": self.bound, "nodal_max": self.nodal_max,
                "delta": self.delta, "eta": self.eta, "C": self.C, "gamma": self.gamma,
                "kappa": self.kappa, "g_inf": self.g_inf, "shrinks": self.shrinks,
                "all_assertions": all(all(st.row()[5:]) for sts in self.trace.values() for st in sts),
                "notes": list(self.notes)}


def solution_kappa(op: DiscreteOperator, u, a, b) -> float:
    """Linear growth constant of b t^+ - a t^- + |t|^{p-2} t on the range of u."""
    p = op.cfg.critical_exponent
    return float(max(abs(a), abs(b)) + (p - 1.0) * np.max(np.abs(u)) ** (p - 2.0))


def iteration_constants(N: int, s: float, kappa: float, g_inf: float, S=None):
    """C = (1 + c) 2^{4s/N + 1} with c = (1/S) 2^{4s/N + 1} max(kappa, g_inf)."""
    S = sobolev_constant_exact(N, s) if S is None else S
    two = 2.0 ** (4.0 * s / N + 1.0)
    c = two * max(kappa, g_inf) / S
    return (1.0 + c) * two


def _run_side(u, m, delta, eta, C, gamma, k_max, tol):
    states = []
    for k in range(k_max + 1):
        Ck = 1.0 - 2.0 ** (-k)
        wk = np.maximum(u - Ck, 0.0)
        Uk = float(m @ (wk * wk))
        wn = np.maximum(u - (1.0 - 2.0 ** (-(k + 1))), 0.0)
        Un = float(m @ (wn * wn))
        on = wn > 0
        Ak = 2.0 ** (k + 1) - 1.0
        sup_n = float(m[on].sum())
        st = DeGiorgiState(
            k=k, C_k=Ck, A_k=Ak, U_k=Uk, support=float(m[wk > 0].sum()),
            monotone=bool(np.all(wn <= wk)),
            set_inclusion=bool(np.all(wk[on] > 2.0 ** (-(k + 1)))),
            measure_bound=bool(sup_n <= 2.0 ** (2 * (k + 1)) * Uk * (1 + tol) + tol),
            pointwise_bound=bool(np.all(np.abs(u[on]) < Ak * wk[on])),
            recursion=bool(Un <= C ** k * Uk ** gamma * (1 + tol)),
            decay=bool(Uk <= delta * eta ** k * (1 + tol)))
        states.append(st)
    return states


def degiorgi_linfty(op: DiscreteOperator, u, kappa: float, g_inf: float = 0.0, k_max: int = 20,
                    delta: float | None = None, S=None, tol: float = 1e-12) -> DeGiorgiResult:
    """Certified bound sup|u| <= |u|_2 / sqrt(delta) when U_k <= delta eta^k holds through k_max.

    Both u and -u are iterated.  If the supplied delta violates the
    admissibility condition it is shrunk once to the default choice.
    """
    mesh = op.mesh
    N, s = mesh.cfg.N, mesh.cfg.s
    u = np.asarray(u, dtype=float)
    m = np.full(u.size, mesh.cell_measure)
    nodal_max = float(np.max(np.abs(u))) if u.size else 0.0
    C = iteration_constants(N, s, kappa, g_inf, S)
    gamma = 1.0 + 2.0 * s / N
    upper = C ** (-1.0 / (gamma - 1.0))           # admissibility: delta^{gamma-1} < upper
    default = (0.5 * upper) ** (1.0 / (gamma - 1.0))
    notes, shrinks = [], 0
    if delta is None:
        delta = default
    elif not delta ** (gamma - 1.0) < upper:
        notes.append(f"delta={delta:.6g} not admissible; shrunk to {default:.6g}")
        delta, shrinks = default, 1
    eta = np.sqrt(delta ** (gamma - 1.0) * upper)
    l2 = float(np.sqrt(m @ (u * u)))
    if l2 == 0.0:
        zero = {side: _run_side(np.zeros_like(u), m, delta, eta, C, gamma, k_max, tol)
                for side in ("plus", "minus")}
        return DeGiorgiResult(True, 0.0, 0.0, delta, eta, C, gamma, kappa, g_inf, shrinks, zero, notes)
    scale = np.sqrt(delta) / l2
    trace = {"plus": _run_side(scale * u, m, delta, eta, C, gamma, k_max, tol),
             "minus": _run_side(-scale * u, m, delta, eta, C, gamma, k_max, tol)}
    ok = all(all(st.row()[5:]) for sts in trace.values() for st in sts)
    if not ok and shrinks == 0 and delta != default:
        # a second attempt at the default admissible delta
        return _retry(op, u, kappa, g_inf, k_max, default, S, tol, notes)
    bound = l2 / np.sqrt(delta)
    return DeGiorgiResult(certified=bool(ok and bound >= nodal_max), bound=float(bound),
                          nodal_max=nodal_max, delta=float(delta), eta=float(eta), C=float(C),
                          gamma=gamma, kappa=float(kappa), g_inf=float(g_inf), shrinks=shrinks,
                          trace=trace, notes=notes)


def _retry(op, u, kappa, g_inf, k_max, delta, S, tol, notes):
    res = degiorgi_linfty(op, u, kappa, g_inf, k_max, delta, S, tol)
    res.shrinks = 1
    res.notes = notes + ["assertions failed; retried with the default delta"] + res.notes
    return res
