"""Solver for the capped contribution program and equilibrium price recovery.

The program is

    max_b  sum_ij b_ij (log v_ij - log(b_ij / x_j(b)))
    s.t.   sum_j b_ij <= B_i,   x_j(b) <= cap_j,   b >= 0,

with every positive valuation above 1.  Its KKT conditions read
``b_ij / x_j = v_ij exp(-lambda_i - mu_j)`` on funded projects and
``sum_i v_ij exp(-lambda_i) <= 1`` on unfunded ones, which is exactly what a
zero-respecting Lindahl price system needs.

The native method runs entropic mirror descent (closed-form step followed by
the KL projection of :mod:`lindahl.projection`) and periodically tries to
finish with Newton's method on the KKT system restricted to a guessed active
set.  A polished point is accepted only if every KKT sign condition holds, so
the output is always a verified optimum or explicitly flagged.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InstanceError
from .model import ContributionMatrix, Instance, PriceSystem, is_rescaled
from .projection import dykstra_scalings

log = logging.getLogger(__name__)

DEFAULT_MAX_ITERS = 20_000
INTERIOR_RTOL = 1e-7
STATIONARITY_TOL = 1e-6
SLACKNESS_RTOL = 1e-6
LAMBDA_AGREE_TOL = 1e-6
LAMBDA_FLAG_TOL = 1e-4
_SET_TOL = 1e-9


@dataclass
class CappedSolution:
    """Optimum of the capped program with its KKT multipliers.

    ``w`` is support-aligned and holds ``log p_ij`` for unfunded projects
    (``nan`` where the project is funded).  ``residuals`` is the report of
    :func:`kkt_residuals`; ``status`` is ``"optimal"`` when every residual is
    within tolerance and ``"flagged"`` otherwise.
    """

    inst: Instance
    b: ContributionMatrix
    x: np.ndarray
    lambdas: np.ndarray
    mus: np.ndarray
    w: np.ndarray
    objective: float
    status: str
    residuals: dict = field(default_factory=dict)
    iterations: int = 0
    polished: bool = False
    notes: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def capped_objective(inst: Instance, b) -> float:
    """``sum b_ij (log v_ij - log(b_ij / x_j))`` with ``0 log 0 = 0`` (maximisation form)."""
    b = np.asarray(b, dtype=float)
    x = inst.column_sums(b)
    pos = b > 0
    ent = np.sum(b[pos] * np.log(b[pos] / x[inst.cols[pos]]))
    return float(b @ inst.log_values - ent)


# -- mirror descent phase -----------------------------------------------------------


class _MirrorDescent:
    """Projected entropic mirror descent in money units normalised to ``B = 1``."""

    def __init__(self, inst: Instance, budgets, caps):
        self.inst = inst
        self.B = budgets
        self.cap = caps
        counts = np.diff(inst.indptr).astype(float)
        per_agent = np.divide(budgets, counts, out=np.zeros(inst.n), where=counts > 0)
        per_project = caps / np.maximum(inst.supporter_counts, 1)
        y = np.minimum(per_agent[inst.rows], per_project[inst.cols])
        proj = dykstra_scalings(inst, y, budgets, caps)
        self.b, self.a, self.c = proj.b, proj.row_scale, proj.col_scale
        self.x = inst.column_sums(self.b)
        self.value = capped_objective(inst, self.b)
        self.eta = 1.0
        self.t = 0

    def step(self):
        inst = self.inst
        while True:
            with np.errstate(divide="ignore"):
                logy = inst.log_values + np.log(self.x[inst.cols])
                if self.eta < 1:
                    logy = self.eta * logy + (1 - self.eta) * np.log(self.b)
            y = np.exp(logy)
            proj = dykstra_scalings(inst, y, self.B, self.cap,
                                    row_scale=self.a, col_scale=self.c)
            value = capped_objective(inst, proj.b)
            if value >= self.value:
                break
            if self.eta < 1e-8:
                # no ascent at projection precision: stay put
                self.t += 1
                return 0.0
            self.eta /= 2
        change = float(np.max(np.abs(inst.column_sums(proj.b) - self.x)))
        self.b, self.a, self.c = proj.b, proj.row_scale, proj.col_scale
        self.x = inst.column_sums(self.b)
        self.value = value
        self.t += 1
        return change


# -- active-set Newton polish ---------------------------------------------------------

_Z, _I, _C = 0, 1, 2


class _Polisher:
    """Newton's method on the KKT system for a fixed guess of the active sets.

    Agents are split into full spenders ``A`` (unknown ``lambda_i``) and
    underspenders (``lambda_i = 0``); projects into unfunded ``Z``, interior
    ``I`` (unknown ``x_j``, equation ``sum_i v_ij e^{-lambda_i} = 1``) and
    at-cap ``C``.  Full spenders satisfy ``sum_j p_ij x_j = B_i`` with
    ``p_ij = v_ij e^{-lambda_i} / S_j`` and ``S_j = sum_k v_kj e^{-lambda_k}``.
    """

    def __init__(self, inst: Instance, budgets, caps):
        self.inst = inst
        self.B = budgets
        self.cap = caps
        self.rows, self.cols, self.v = inst.rows, inst.cols, inst.data

    def _evaluate(self, A, state, lamA, xI):
        inst = self.inst
        beta = np.ones(inst.n)
        with np.errstate(all="ignore"):
            beta[A] = np.exp(-lamA)
            return self._evaluate_at(A, state, beta, xI)

    def _evaluate_at(self, A, state, beta, xI):
        inst = self.inst
        vb = self.v * beta[self.rows]
        S = np.bincount(self.cols, weights=vb, minlength=inst.m)
        x = np.zeros(inst.m)
        C, I = state == _C, state == _I
        x[C] = self.cap[C]
        x[I] = xI
        funded_e = (state > _Z)[self.cols]
        p = np.zeros(inst.nnz)
        p[funded_e] = vb[funded_e] / S[self.cols[funded_e]]
        spend = np.bincount(self.rows, weights=p * x[self.cols], minlength=inst.n)
        r = np.concatenate([spend[A] / self.B[A] - 1, np.log(S[I])])
        return r, beta, S, x, p, spend

    def _jacobian(self, A, state, p, x, spend):
        inst = self.inst
        a_idx = np.flatnonzero(A)
        f_idx = np.flatnonzero(state > _Z)
        i_idx = np.flatnonzero(state == _I)
        a_pos = np.full(inst.n, -1)
        a_pos[a_idx] = np.arange(len(a_idx))
        f_pos = np.full(inst.m, -1)
        f_pos[f_idx] = np.arange(len(f_idx))
        e = (a_pos[self.rows] >= 0) & (f_pos[self.cols] >= 0)
        P = np.zeros((len(a_idx), len(f_idx)))
        P[a_pos[self.rows[e]], f_pos[self.cols[e]]] = p[e]
        BA = self.B[a_idx][:, None]
        xF = x[f_idx]
        J_aa = ((P * xF) @ P.T - np.diag(spend[a_idx])) / BA
        P_ai = P[:, f_pos[i_idx]]
        top = np.hstack([J_aa, P_ai / BA])
        bottom = np.hstack([-P_ai.T, np.zeros((len(i_idx), len(i_idx)))])
        return np.vstack([top, bottom])

    def newton(self, A, state, lamA, xI, max_iter=50, tol=1e-13):
        nA = int(A.sum())
        theta = np.concatenate([lamA, xI])
        r, *rest = self._evaluate(A, state, theta[:nA], theta[nA:])
        if not np.all(np.isfinite(r)):
            return False, theta, rest
        norm = float(np.linalg.norm(r))
        slow = 0
        for _ in range(max_iter):
            if np.max(np.abs(r), initial=0.0) <= tol:
                break
            beta, S, x, p, spend = rest
            J = self._jacobian(A, state, p, x, spend)
            try:
                d = np.linalg.solve(J, -r)
                if not np.all(np.isfinite(d)):
                    raise np.linalg.LinAlgError
            except np.linalg.LinAlgError:
                d = np.linalg.lstsq(J, -r, rcond=None)[0]
            step = 1.0
            for _ls in range(30):
                cand = theta + step * d
                r2, *rest2 = self._evaluate(A, state, cand[:nA], cand[nA:])
                n2 = float(np.linalg.norm(r2)) if np.all(np.isfinite(r2)) else np.inf
                if n2 <= (1 - 1e-4 * step) * norm:
                    break
                step /= 2
            else:
                break
            # a wrong active set shows up as stagnation well above the tolerance
            slow = slow + 1 if n2 > 0.5 * norm else 0
            theta, r, rest, norm = cand, r2, rest2, n2
            if slow >= 6:
                break
        return np.max(np.abs(r), initial=0.0) <= 1e-11, theta, rest

    def solve(self, A, state, lam, x, max_rounds=60):
        """Iterate Newton and set corrections; returns a KKT point or ``None``."""
        inst = self.inst
        A, state, lam, x = A.copy(), state.copy(), lam.copy(), x.copy()
        supported = inst.supported
        state[~supported] = _Z
        seen = set()
        for _ in range(max_rounds):
            self._normalise(A, state)
            key = (A.tobytes(), state.tobytes())
            if key in seen:
                return None
            seen.add(key)
            ok, theta, (beta, S, xx, p, spend) = self.newton(A, state, lam[A], x[state == _I])
            lam = np.zeros(inst.n)
            lam[A] = theta[:int(A.sum())]
            if not ok:
                # inconsistent interior equations: the least attractive project drops out
                interior = np.flatnonzero(state == _I)
                if len(interior) == 0 or not np.all(np.isfinite(S[interior])):
                    return None
                state[interior[np.argmin(S[interior])]] = _Z
                x = xx
                continue
            x = xx
            changed = False
            tol = _SET_TOL
            # multiplier and bound sign conditions
            drop = A & (lam < -tol)
            add = ~A & (spend > self.B * (1 + tol))
            if drop.any() or add.any():
                A = (A & ~drop) | add
                changed = True
            I, C = state == _I, state == _C
            neg = I & (x < -tol * self.cap.clip(max=1))
            over = I & (x > self.cap * (1 + tol))
            free = C & (S < 1 - tol)
            wake = (state == _Z) & supported & (S > 1 + tol)
            if neg.any() or over.any() or free.any() or wake.any():
                state[neg] = _Z
                state[over] = _C
                state[free] = _I
                state[wake] = _I
                x[wake] = 1e-3 * np.minimum(1.0, self.cap[wake])
                changed = True
            if not changed:
                lam = np.maximum(lam, 0.0)
                x = np.where(state == _I, np.clip(x, 0.0, self.cap), x)
                return A, state, lam, x, S, p
            lam = np.maximum(lam, 0.0)
        return None

    def _normalise(self, A, state):
        inst = self.inst
        funded = state > _Z
        # underspenders cannot support a project whose supporter sum must be <= 1
        loose = np.zeros(inst.n, dtype=bool)
        loose[self.rows[(state[self.cols] != _C)]] = True
        A |= loose
        has_funded = np.zeros(inst.n, dtype=bool)
        has_funded[self.rows[funded[self.cols]]] = True
        A &= has_funded


def _guess_active_sets(inst, md: _MirrorDescent):
    B, cap, x, a, c = md.B, md.cap, md.x, md.a, md.c
    S = np.bincount(inst.cols, weights=inst.data * a[inst.rows], minlength=inst.m)
    growth = c * S
    state = np.full(inst.m, _I, dtype=np.int8)
    state[(x < 1e-9) | ((growth < 1 - 1e-4) & (x < 1e-3))] = _Z
    at_cap = np.isfinite(cap) & ((c < 1 - 1e-9) | (x >= cap * (1 - 1e-6)))
    state[(state == _I) & at_cap] = _C
    spend = inst.row_sums(md.b)
    A = (a < 1 - 1e-12) | (spend >= B * (1 - 1e-6))
    lam = -np.log(a)
    return A, state, lam, x.copy()


# -- multipliers ------------------------------------------------------------------------


def estimate_lambda(inst: Instance, sol, report=None) -> np.ndarray:
    """Recover budget multipliers from contributions alone.

    Full spenders with an interior funded project get the mean of
    ``log(v_ij x_j / b_ij)`` over those projects; full spenders whose funded
    projects are all at cap get the maximum of the same quantity; underspenders
    get 0.  ``report`` (a dict) receives per-agent spreads and flagged agents.
    """
    b = np.asarray(sol.b.values if hasattr(sol, "b") else sol, dtype=float)
    x = inst.column_sums(b)
    thr = INTERIOR_RTOL * inst.total_budget
    spend = inst.row_sums(b)
    full = spend >= inst.budgets - thr
    cols = inst.cols
    ok = (b > 0) & (x[cols] > 0)
    est = np.full(inst.nnz, np.nan)
    est[ok] = np.log(inst.data[ok] * x[cols[ok]] / b[ok])
    interior = (x > thr) & (x < inst.caps - thr)
    at_cap = x >= inst.caps - thr
    lam = np.zeros(inst.n)
    spread = np.zeros(inst.n)
    flagged = []
    for i in np.flatnonzero(full):
        lo, hi = inst.indptr[i], inst.indptr[i + 1]
        e = np.arange(lo, hi)[ok[lo:hi]]
        vals = est[e[interior[cols[e]]]]
        if len(vals):
            lam[i] = vals.mean()
            spread[i] = vals.max() - vals.min()
            if spread[i] > LAMBDA_FLAG_TOL:
                flagged.append(int(i))
            continue
        vals = est[e[at_cap[cols[e]]]]
        if len(vals):
            lam[i] = vals.max()
        elif len(e):
            lam[i] = est[e].mean()
        else:
            flagged.append(int(i))
    if report is not None:
        report["lambda_spread"] = spread
        report["lambda_flagged"] = flagged
        report["lambda_spread_max"] = float(spread.max(initial=0.0))
    return np.maximum(lam, 0.0)


def estimate_mu(inst: Instance, b, lambdas, report=None) -> np.ndarray:
    """Cap multipliers: mean of ``log(v_ij x_j / b_ij) - lambda_i`` over supporters of at-cap projects."""
    b = np.asarray(b, dtype=float)
    x = inst.column_sums(b)
    thr = INTERIOR_RTOL * inst.total_budget
    cols = inst.cols
    at_cap = x >= inst.caps - thr
    e = (b > 0) & at_cap[cols]
    vals = np.log(inst.data[e] * x[cols[e]] / b[e]) - lambdas[inst.rows[e]]
    counts = np.bincount(cols[e], minlength=inst.m)
    total = np.bincount(cols[e], weights=vals, minlength=inst.m)
    mu = np.divide(total, counts, out=np.zeros(inst.m), where=counts > 0)
    if report is not None:
        hi = np.full(inst.m, -np.inf)
        lo = np.full(inst.m, np.inf)
        np.maximum.at(hi, cols[e], vals)
        np.minimum.at(lo, cols[e], vals)
        spread = np.where(counts > 0, hi - lo, 0.0)
        report["mu_spread_max"] = float(spread.max(initial=0.0))
    return np.maximum(mu, 0.0)


def kkt_residuals(inst: Instance, b, lambdas, mus) -> dict:
    """Feasibility, complementary slackness and stationarity residuals of a capped solution."""
    b = np.asarray(b, dtype=float)
    x = inst.column_sums(b)
    spend = inst.row_sums(b)
    rows, cols = inst.rows, inst.cols
    finite = np.isfinite(inst.caps)
    funded_e = x[cols] > 0
    with np.errstate(divide="ignore"):
        g = -inst.log_values + np.log(b / np.where(funded_e, x[cols], 1.0))
    stat = np.abs(g + lambdas[rows] + mus[cols])[funded_e]
    unfunded = np.bincount(cols, weights=inst.data * np.exp(-lambdas[rows] - mus[cols]),
                           minlength=inst.m)
    unfunded = np.where((x <= 0) & inst.supported, unfunded - 1, 0.0)
    cap_gap = np.where(finite, x - np.where(finite, inst.caps, 0.0), 0.0)
    return {
        "budget_violation": float(np.max(spend - inst.budgets, initial=0.0)),
        "cap_violation": float(np.max(cap_gap, initial=0.0)),
        "negativity": float(np.max(-b, initial=0.0)),
        "budget_slackness": float(np.max(np.abs(lambdas * (spend - inst.budgets)), initial=0.0)),
        "cap_slackness": float(np.max(np.abs(np.where(finite, mus * cap_gap, mus)), initial=0.0)),
        "stationarity": float(np.max(stat, initial=0.0)),
        "unfunded": float(np.max(unfunded, initial=0.0)),
        "min_multiplier": float(min(lambdas.min(initial=0.0), mus.min(initial=0.0))),
    }


def _kkt_ok(res: dict, total_budget: float) -> bool:
    money = 1e-9 * total_budget
    return (res["budget_violation"] <= money and res["cap_violation"] <= money
            and res["negativity"] <= 0
            and res["budget_slackness"] <= SLACKNESS_RTOL * total_budget
            and res["cap_slackness"] <= SLACKNESS_RTOL * total_budget
            and res["stationarity"] <= STATIONARITY_TOL
            and res["unfunded"] <= STATIONARITY_TOL
            and res["min_multiplier"] >= 0)


# -- driver ------------------------------------------------------------------------------


def solve_capped_native(inst: Instance, max_iters: int = DEFAULT_MAX_ITERS,
                        polish: bool = True, first_polish: int = 16) -> CappedSolution:
    """Solve the capped program on a rescaled instance.

    Mirror descent runs until an active-set Newton polish (attempted after
    ``first_polish`` steps and then at doubling intervals) yields a point that
    satisfies every KKT condition, or until ``max_iters`` steps.  Without a
    successful polish, multipliers are estimated from the last iterate and the
    result is flagged unless its KKT residuals happen to pass.
    """
    if not is_rescaled(inst):
        raise InstanceError("every positive valuation must exceed 1; rescale the instance first")
    scale = inst.total_budget
    budgets, caps = inst.budgets / scale, inst.caps / scale
    md = _MirrorDescent(inst, budgets, caps)
    polisher = _Polisher(inst, budgets, caps) if polish else None
    next_try = first_polish
    found = None
    while md.t < max_iters:
        change = md.step()
        if polisher is not None and (md.t >= next_try or change <= 1e-13):
            found = polisher.solve(*_guess_active_sets(inst, md))
            if found is not None:
                break
            next_try = 2 * md.t
        elif polisher is None and change <= 1e-13:
            break
    notes = []
    if found is not None:
        A, state, lam, x, S, p = found
        b = p * x[inst.cols]
        mu = np.where(state == _C, np.log(np.maximum(S, 1.0)), 0.0)
        b, x = b * scale, x * scale
        w = np.full(inst.nnz, np.nan)
        z = (state == _Z)[inst.cols]
        w[z] = inst.log_values[z] - lam[inst.rows[z]]
    else:
        notes.append("active-set polish did not succeed; multipliers estimated from iterate")
        b = md.b * scale
        x = inst.column_sums(b)
        report = {}
        lam = estimate_lambda(inst, b, report)
        mu = estimate_mu(inst, b, lam, report)
        if report["lambda_flagged"]:
            notes.append(f"lambda estimates disagree for agents {report['lambda_flagged'][:10]}")
        w = np.where(x[inst.cols] > 0, np.nan, inst.log_values - lam[inst.rows])
    res = kkt_residuals(inst, b, lam, mu)
    status = "optimal" if _kkt_ok(res, inst.total_budget) else "flagged"
    if status != "optimal":
        log.warning("capped solver result flagged: %s", res)
    return CappedSolution(
        inst=inst, b=ContributionMatrix(inst, b), x=inst.column_sums(b), lambdas=lam,
        mus=mu, w=w, objective=capped_objective(inst, b), status=status, residuals=res,
        iterations=md.t, polished=found is not None, notes=notes,
    )


def recover_prices_capped(inst: Instance, sol: CappedSolution) -> PriceSystem:
    """Zero-respecting prices from a capped solution.

    Funded projects get ``p_ij = b_ij / x_j``.  Unfunded projects get
    ``p_ij = v_ij exp(-lambda_i)``, scaled down uniformly if the column would
    exceed 1.
    """
    b = sol.b.values
    x = inst.column_sums(b)
    rows, cols = inst.rows, inst.cols
    funded_e = x[cols] > 0
    p = np.zeros(inst.nnz)
    p[funded_e] = b[funded_e] / x[cols[funded_e]]
    un = ~funded_e
    p[un] = inst.data[un] * np.exp(-sol.lambdas[rows[un]])
    col = np.bincount(cols[un], weights=p[un], minlength=inst.m)
    shrink = np.where(col > 1, 1 / np.where(col > 1, col, 1.0), 1.0)
    p[un] *= shrink[cols[un]]
    return PriceSystem.from_support(inst, p)
