"""Certificates for Lindahl equilibria, Pareto optimality and the core.

Everything here is a check of given numbers against the definitions; nothing
depends on how the allocation or the prices were computed.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError, InstanceError
from .lp import lp_solve
from .model import Instance, as_prices, feasibility_report

CORE_RTOL = 1e-7


# -- demand -----------------------------------------------------------------------------


def demand_max_utility(inst: Instance, i: int, p_i) -> tuple[float, np.ndarray]:
    """Best utility agent ``i`` can afford at prices ``p_i`` within the caps.

    Fractional knapsack: valued projects with price 0 are filled to their cap
    (an unbounded one makes the utility infinite), the rest in decreasing
    bang-per-buck order until the budget runs out.
    """
    p_i = np.asarray(p_i, dtype=float).reshape(-1)
    if p_i.shape != (inst.m,):
        raise InstanceError("price vector has the wrong length")
    if np.any(p_i < 0):
        raise InstanceError("prices must be non-negative")
    lo, hi = inst.indptr[i], inst.indptr[i + 1]
    liked, vals = inst.indices[lo:hi], inst.data[lo:hi]
    y = np.zeros(inst.m)
    utility = 0.0
    free = p_i[liked] == 0
    for j, v in zip(liked[free], vals[free]):
        y[j] = inst.caps[j]
        utility += v * inst.caps[j]
    if math.isinf(utility):
        return math.inf, y
    paid, pv = liked[~free], vals[~free]
    order = np.lexsort((paid, -pv / p_i[paid]))
    left = float(inst.budgets[i])
    for k in order:
        if left <= 0:
            break
        j = paid[k]
        amount = min(inst.caps[j], left / p_i[j])
        y[j] = amount
        utility += pv[k] * amount
        left -= amount * p_i[j]
    return float(utility), y


# -- Lindahl certificate ----------------------------------------------------------------


@dataclass
class EquilibriumCertificate:
    """Per-condition residuals and verdicts for a candidate ``(x, p)``."""

    tol: float
    feasible: bool
    affordability: np.ndarray
    utility_max: np.ndarray
    profit_slack: np.ndarray
    profit_equality: np.ndarray
    zero_respecting_violations: list
    verdicts: dict
    multipliers: dict = field(default_factory=dict)

    @property
    def lindahl(self) -> bool:
        v = self.verdicts
        return v["feasible"] and v["affordability"] and v["utility_max"] and v["profit_max"]

    @property
    def passed(self) -> bool:
        """Lindahl equilibrium and zero-respecting."""
        return self.lindahl and self.verdicts["zero_respecting"]

    def to_dict(self) -> dict:
        def arr(a):
            return [float(v) for v in np.asarray(a, dtype=float)]

        return {
            "tol": self.tol,
            "verdicts": dict(self.verdicts, lindahl=self.lindahl, passed=self.passed),
            "affordability_slack": arr(self.affordability),
            "utility_gap": arr(self.utility_max),
            "profit_slack": arr(self.profit_slack),
            "profit_equality_residual": arr(self.profit_equality),
            "zero_respecting_violations": [list(map(int, v)) for v in self.zero_respecting_violations],
            "multipliers": {k: arr(v) if isinstance(v, np.ndarray) else v
                            for k, v in self.multipliers.items()},
        }


def verify_lindahl(inst: Instance, x, p, tol: float = 1e-6) -> EquilibriumCertificate:
    """Check the Lindahl conditions and zero-respecting for allocation ``x`` and prices ``p``.

    Money residuals are compared against ``tol * B``, price residuals against
    ``tol``, and the utility gap against ``tol * u_i(x) + tol``.
    """
    x = np.asarray(x, dtype=float)
    P = as_prices(p)
    if x.shape != (inst.m,) or P.shape != (inst.n, inst.m):
        raise InstanceError("allocation or prices do not match the instance dimensions")
    money_tol = tol * inst.total_budget
    feasible = feasibility_report(inst, x, money_tol).feasible
    afford = inst.budgets - P @ x
    u = inst.utilities(x)
    # negative prices already fail their own verdict; demand is evaluated on the clipped prices
    Pd = np.maximum(P, 0.0)
    gap = np.array([demand_max_utility(inst, i, Pd[i])[0] for i in range(inst.n)]) - u
    cols = P.sum(axis=0)
    slack = 1 - cols
    funded = x > money_tol
    equality = np.where(funded, np.abs(cols - 1), 0.0)
    V = inst.dense_valuations()
    zr = np.argwhere((V == 0) & funded[None, :] & (P > tol))
    verdicts = {
        "feasible": bool(feasible),
        "affordability": bool(np.all(afford >= -money_tol)),
        "utility_max": bool(np.all(gap <= tol * u + tol)),
        "profit_max": bool(np.all(slack >= -tol) and np.all(equality <= tol)),
        "nonnegative_prices": bool(np.all(P >= 0)),
        "zero_respecting": len(zr) == 0,
    }
    verdicts["profit_max"] = verdicts["profit_max"] and verdicts["nonnegative_prices"]
    return EquilibriumCertificate(tol, feasible, afford, gap, slack, equality,
                                  [tuple(v) for v in zr], verdicts)


# -- utility models for the LP audits ---------------------------------------------------


class LinearUtilities:
    """Linear utilities ``<v_i, z>``, normalised per agent by ``max_j v_ij``.

    Normalisation makes a utility gain of ``tol`` comparable to ``tol`` money.
    """

    def __init__(self, inst: Instance):
        self.inst = inst
        V = inst.dense_valuations()
        top = V.max(axis=1)
        self.V = V / np.where(top > 0, top, 1.0)[:, None]
        self.n, self.m = inst.n, inst.m
        self.budgets = inst.budgets
        self.total_budget = inst.total_budget
        self.upper = inst.caps

    def utilities(self, x) -> np.ndarray:
        return self.V @ np.asarray(x, dtype=float)

    def solo_max(self, S, budget):
        """Best utility each member of ``S`` could get if ``budget`` were spent for them alone."""
        V = self.V[S]
        order = np.argsort(-V, axis=1)
        vals = np.take_along_axis(V, order, axis=1)
        caps = self.upper[order]
        before = np.zeros_like(caps)
        before[:, 1:] = np.cumsum(caps[:, :-1], axis=1)
        fill = np.minimum(caps, np.maximum(budget - before, 0.0))
        return (vals * np.where(vals > 0, fill, 0.0)).sum(axis=1)

    def coalition(self, S):
        """Variables ``z`` on projects some member likes; returns (G, extra rows, bounds, z index)."""
        proj = np.flatnonzero(self.V[S].sum(axis=0) > 0)
        G = self.V[np.ix_(S, proj)]
        bounds = [(0.0, None if math.isinf(self.upper[j]) else self.upper[j]) for j in proj]
        return G, None, bounds, np.arange(len(proj)), proj


class SplcUtilities:
    """Separable piecewise-linear concave utilities through epigraph variables.

    For each member ``i`` and liked project ``j`` an auxiliary ``w_ij`` is
    bounded by every affine piece of ``f_ij``, so the utility is ``sum_j w_ij``.
    """

    def __init__(self, splc):
        self.splc = splc
        self.n, self.m = splc.n, splc.m
        self.budgets = splc.budgets
        self.total_budget = splc.total_budget
        self.upper = np.full(self.m, splc.total_budget)
        top = np.zeros(self.n)
        for (i, j), f in splc.functions.items():
            top[i] = max(top[i], f.max_slope)
        self.scale = np.where(top > 0, top, 1.0)

    def utilities(self, x) -> np.ndarray:
        return self.splc.utilities(x) / self.scale

    def coalition(self, S):
        pairs = [(k, j, f) for k, i in enumerate(S) for (ii, j), f in self.splc.functions.items()
                 if ii == i and f.max_slope > 0]
        proj = sorted({j for _, j, _ in pairs})
        zpos = {j: q for q, j in enumerate(proj)}
        nz, nw = len(proj), len(pairs)
        G = np.zeros((len(S), nz + nw))
        rows, rhs = [], []
        for w, (k, j, f) in enumerate(pairs):
            G[k, nz + w] = 1.0
            s = self.scale[S[k]]
            for slope, intercept in f.affine_pieces():
                row = np.zeros(nz + nw)
                row[nz + w] = 1.0
                row[zpos[j]] = -slope / s
                rows.append(row)
                rhs.append(intercept / s)
        bounds = [(0.0, self.total_budget)] * nz + [(None, None)] * nw
        extra = (np.array(rows).reshape(-1, nz + nw), np.array(rhs)) if rows else None
        return G, extra, bounds, np.arange(nz), np.array(proj, dtype=int)


def _model(target):
    return target if isinstance(target, (LinearUtilities, SplcUtilities)) else (
        LinearUtilities(target) if isinstance(target, Instance) else SplcUtilities(target))


def _improvement_lp(model, S, base, budget, kind, pivot=None, method="auto"):
    """LP over objections of coalition ``S`` (budget ``budget``) against utilities ``base``.

    ``kind`` is ``"min"`` (max common gain t), ``"sum"`` (max total gain, gains
    >= 0) or ``"pivot"`` (max gain of member ``pivot``, others >= 0).
    Returns (optimal value, z over all projects).
    """
    G, extra, bounds, zcols, proj = model.coalition(S)
    k, nv = G.shape
    if kind == "min":
        ns = 1
        c = np.zeros(nv + 1)
        c[-1] = 1.0
        util_rows = np.hstack([G, -np.ones((k, 1))])
        sbounds = [(None, None)]
    else:
        ns = k
        c = np.zeros(nv + k)
        if kind == "sum":
            c[nv:] = 1.0
        else:
            c[nv + pivot] = 1.0
        util_rows = np.hstack([G, -np.eye(k)])
        sbounds = [(0.0, None)] * k
    A = [util_rows]
    senses = [">="] * k
    rhs = [np.asarray(base, dtype=float)]
    budget_row = np.zeros(nv + ns)
    budget_row[zcols] = 1.0
    A.append(budget_row[None, :])
    senses.append("<=")
    rhs.append([budget])
    if extra is not None:
        A.append(np.hstack([extra[0], np.zeros((len(extra[1]), ns))]))
        senses += ["<="] * len(extra[1])
        rhs.append(extra[1])
    try:
        res = lp_solve(c, np.vstack(A), senses, np.concatenate(rhs), bounds + sbounds,
                       maximize=True, method=method)
    except InfeasibleError:
        # the coalition cannot even restore its current utilities
        return -math.inf, None
    z = np.zeros(model.m)
    z[proj] = res.x[zcols]
    return res.objective, z


# -- Pareto -----------------------------------------------------------------------------


@dataclass
class ParetoReport:
    optimal: bool
    weak: bool
    gain: float
    dominating: np.ndarray | None

    def to_dict(self):
        return {"pareto_optimal": self.optimal, "weak": self.weak, "gain": self.gain,
                "dominating": None if self.dominating is None else [float(v) for v in self.dominating]}


def check_pareto(inst: Instance, x, weak: bool = False, tol: float | None = None,
                 method: str = "auto") -> ParetoReport:
    """Search for an allocation that Pareto-dominates ``x``.

    Strong form maximises the total gain with gains ``>= 0``; the weak form
    maximises the smallest gain.  ``x`` is optimal iff the optimum is at most
    ``tol`` (default ``1e-7 * B`` in normalised utility units).
    """
    model = _model(inst)
    if tol is None:
        tol = CORE_RTOL * model.total_budget
    base = model.utilities(x)
    S = np.arange(model.n)
    val, z = _improvement_lp(model, S, base, model.total_budget, "min" if weak else "sum",
                             method=method)
    dominated = val > tol
    return ParetoReport(not dominated, weak, float(val), z if dominated else None)


# -- core -------------------------------------------------------------------------------


@dataclass
class BlockingCoalition:
    coalition: tuple
    objection: np.ndarray
    gains: np.ndarray

    def to_dict(self):
        return {"coalition": [int(i) for i in self.coalition],
                "objection": [float(v) for v in self.objection],
                "gains": [float(v) for v in self.gains]}


@dataclass
class CoreAuditReport:
    mode: str
    max_size: int
    coalitions_checked: int
    sampled: bool
    found_blocking: BlockingCoalition | None = None
    tol: float = 0.0

    @property
    def blocked(self) -> bool:
        return self.found_blocking is not None

    @property
    def verdict(self) -> str:
        if self.blocked:
            return "blocked"
        return "no-blocking-found" if self.sampled else "core"

    def to_dict(self):
        return {
            "mode": self.mode,
            "max_size": self.max_size,
            "coalitions_checked": self.coalitions_checked,
            "sampled": self.sampled,
            "verdict": self.verdict,
            "tol": self.tol,
            "found_blocking": None if self.found_blocking is None else self.found_blocking.to_dict(),
        }


def find_objection(model, S, base, mode="strong", tol=1e-7, method="auto", screen=True):
    """Blocking objection for coalition ``S`` or ``None``.

    Strong mode first maximises the total gain: if that is at most ``tol`` no
    member can gain more than ``tol``, which is exactly the per-pivot test;
    otherwise the pivot LPs decide.  With ``screen`` a coalition is dismissed
    without LPs when some member cannot reach its current utility even with
    the whole coalition budget spent for it alone.
    """
    S = np.asarray(S)
    budget = float(model.budgets[S].sum())
    if screen and hasattr(model, "solo_max") and np.any(model.solo_max(S, budget) < base[S] - tol):
        # some member cannot get back to its current utility: the LPs are infeasible
        return None
    if mode == "weak":
        val, z = _improvement_lp(model, S, base[S], budget, "min", method=method)
        return z if val > tol else None
    val, z = _improvement_lp(model, S, base[S], budget, "sum", method=method)
    if val <= tol:
        return None
    for k in range(len(S)):
        val, z = _improvement_lp(model, S, base[S], budget, "pivot", pivot=k, method=method)
        if val > tol:
            return z
    return None


def audit_core(target, x, max_size: int | None = None, mode: str = "strong",
               tol: float | None = None, samples: int | None = None, seed: int = 0,
               method: str = "auto", screen: bool = True) -> CoreAuditReport:
    """Look for a coalition that can block allocation ``x``.

    ``target`` is an :class:`Instance` (linear utilities) or an SPLC instance.
    Coalitions are scanned by increasing size and lexicographically within a
    size; the first blocking one is reported.  With ``samples`` set, that many
    random coalitions (each agent included with probability 1/2, seeded) are
    checked instead and a clean result is only "no-blocking-found".
    """
    if mode not in ("weak", "strong"):
        raise ValueError("mode must be 'weak' or 'strong'")
    model = _model(target)
    n = model.n
    max_size = n if max_size is None else min(int(max_size), n)
    if tol is None:
        tol = CORE_RTOL * model.total_budget
    base = model.utilities(x)

    def found(S, z):
        gains = model.utilities(z)[list(S)] - base[list(S)]
        return BlockingCoalition(tuple(int(i) for i in S), z, gains)

    checked = 0
    if samples:
        rng = np.random.default_rng(seed)
        for _ in range(samples):
            S = np.flatnonzero(rng.random(n) < 0.5)
            if len(S) == 0 or len(S) > max_size:
                continue
            checked += 1
            z = find_objection(model, S, base, mode, tol, method, screen)
            if z is not None:
                return CoreAuditReport(mode, max_size, checked, True, found(S, z), tol)
        return CoreAuditReport(mode, max_size, checked, True, None, tol)
    for size in range(1, max_size + 1):
        for S in itertools.combinations(range(n), size):
            checked += 1
            z = find_objection(model, np.array(S), base, mode, tol, method, screen)
            if z is not None:
                return CoreAuditReport(mode, max_size, checked, False, found(S, z), tol)
    return CoreAuditReport(mode, max_size, checked, False, None, tol)
