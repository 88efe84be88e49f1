"""Small linear programs for the Pareto and core audits.

``lp_solve`` accepts rows with senses ``"<="``, ``">="`` or ``"="`` and per
variable bounds.  The default backend is a dense two-phase tableau simplex with
Bland's rule, which is exact enough and fast for the tiny coalition LPs.  Large
LPs (sampled audits on real ballots) go to HiGHS through SciPy when
``method="auto"``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError, LindahlError, UnboundedError

FEAS_TOL = 1e-9
_PIVOT_TOL = 1e-11
_AUTO_DENSE_LIMIT = 4_000  # rows * columns above which "auto" uses HiGHS


class LPError(LindahlError):
    """The LP backend failed for a reason other than infeasibility or unboundedness."""

    def __init__(self, message, basis=None):
        self.basis = basis
        super().__init__(message if basis is None else f"{message} (basis {list(basis)})")


@dataclass
class LPResult:
    x: np.ndarray
    objective: float
    method: str
    basis: tuple = ()
    iterations: int = 0


def _as_rows(A, senses, rhs, nvar):
    A = np.zeros((0, nvar)) if A is None else np.atleast_2d(np.asarray(A, dtype=float))
    rhs = np.zeros(0) if rhs is None else np.asarray(rhs, dtype=float).reshape(-1)
    if isinstance(senses, str):
        senses = [senses] * len(rhs)
    senses = list(senses or [])
    if A.shape != (len(rhs), nvar) or len(senses) != len(rhs):
        raise ValueError("constraint matrix, senses and right-hand side do not match")
    for s in senses:
        if s not in ("<=", ">=", "="):
            raise ValueError(f"unknown constraint sense {s!r}")
    return A, senses, rhs


def _as_bounds(bounds, nvar):
    if bounds is None:
        return np.zeros(nvar), np.full(nvar, np.inf)
    if isinstance(bounds, tuple) and len(bounds) == 2 and np.isscalar(bounds[0] if bounds[0] is not None else 0.0):
        bounds = [bounds] * nvar
    lo = np.array([-np.inf if b[0] is None else b[0] for b in bounds], dtype=float)
    hi = np.array([np.inf if b[1] is None else b[1] for b in bounds], dtype=float)
    if len(lo) != nvar:
        raise ValueError("one (lower, upper) bound pair per variable required")
    if np.any(lo > hi):
        raise InfeasibleError("a variable has lower bound above its upper bound")
    return lo, hi


def lp_solve(c, A=None, senses=None, rhs=None, bounds=None, maximize=False,
             method="simplex") -> LPResult:
    """Optimise ``c @ x`` subject to ``A x (senses) rhs`` and ``lo <= x <= hi``.

    ``bounds`` is a list of ``(lo, hi)`` pairs (``None`` for infinite) or a
    single pair applied to every variable; default ``x >= 0``.  ``method`` is
    ``"simplex"`` (built-in), ``"highs"`` or ``"auto"``.  Raises
    :class:`InfeasibleError` / :class:`UnboundedError`.
    """
    c = np.asarray(c, dtype=float).reshape(-1)
    nvar = len(c)
    A, senses, rhs = _as_rows(A, senses, rhs, nvar)
    lo, hi = _as_bounds(bounds, nvar)
    if method == "auto":
        method = "simplex" if A.size <= _AUTO_DENSE_LIMIT else "highs"
    sign = -1.0 if maximize else 1.0
    if method == "highs":
        x, it = _solve_highs(sign * c, A, senses, rhs, lo, hi)
        basis = ()
    elif method == "simplex":
        x, basis, it = _solve_simplex(sign * c, A, senses, rhs, lo, hi)
    else:
        raise ValueError(f"unknown LP method {method!r}")
    return LPResult(x, float(c @ x), method, tuple(basis), it)


# -- HiGHS -----------------------------------------------------------------------------


def _solve_highs(c, A, senses, rhs, lo, hi):
    from scipy.optimize import linprog

    senses = np.array(senses)
    ub = senses != "="
    flip = np.where(senses == ">=", -1.0, 1.0)
    A_ub = (A * flip[:, None])[ub]
    b_ub = (rhs * flip)[ub]
    eq = ~ub
    res = linprog(
        c,
        A_ub=A_ub if A_ub.size else None, b_ub=b_ub if A_ub.size else None,
        A_eq=A[eq] if eq.any() else None, b_eq=rhs[eq] if eq.any() else None,
        bounds=list(zip(np.where(np.isfinite(lo), lo, None), np.where(np.isfinite(hi), hi, None))),
        method="highs",
    )
    if res.status == 2:
        raise InfeasibleError("LP is infeasible")
    if res.status == 3:
        raise UnboundedError("LP is unbounded")
    if res.status != 0:
        raise LPError(f"HiGHS failed: {res.message}")
    return np.asarray(res.x, dtype=float), int(getattr(res, "nit", 0))


# -- dense simplex ---------------------------------------------------------------------


def _standard_form(c, A, senses, rhs, lo, hi):
    """Rewrite over ``y >= 0`` with equality rows; returns the data and a map back to x."""
    cols = []      # per original variable: list of (column, sign)
    offset = np.zeros(len(c))
    mats, cs = [], []
    extra_rows = []
    k = 0
    for j in range(len(c)):
        if np.isfinite(lo[j]):
            offset[j] = lo[j]
            cols.append([(k, 1.0)])
            mats.append(A[:, j])
            cs.append(c[j])
            if np.isfinite(hi[j]):
                extra_rows.append((k, hi[j] - lo[j]))
            k += 1
        elif np.isfinite(hi[j]):
            offset[j] = hi[j]
            cols.append([(k, -1.0)])
            mats.append(-A[:, j])
            cs.append(-c[j])
            k += 1
        else:
            cols.append([(k, 1.0), (k + 1, -1.0)])
            mats += [A[:, j], -A[:, j]]
            cs += [c[j], -c[j]]
            k += 2
    M = np.column_stack(mats) if mats else np.zeros((A.shape[0], 0))
    b = rhs - A @ offset
    senses = list(senses)
    if extra_rows:
        E = np.zeros((len(extra_rows), k))
        for r, (col, width) in enumerate(extra_rows):
            E[r, col] = 1.0
        M = np.vstack([M, E])
        b = np.concatenate([b, [w for _, w in extra_rows]])
        senses += ["<="] * len(extra_rows)
    return np.array(cs), M, senses, b, cols, offset


def _pivot(T, r, q):
    T[r] /= T[r, q]
    col = T[:, q].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])


def _run(T, basis, allowed, max_iter):
    """Minimise the objective in the last row of tableau ``T`` with Bland's rule."""
    m = T.shape[0] - 1
    for it in range(max_iter):
        red = T[-1, :-1]
        cand = np.flatnonzero((red < -_PIVOT_TOL) & allowed)
        if len(cand) == 0:
            return it
        q = cand[0]
        col = T[:m, q]
        pos = np.flatnonzero(col > _PIVOT_TOL)
        if len(pos) == 0:
            raise UnboundedError("LP is unbounded")
        ratios = T[pos, -1] / col[pos]
        best = ratios.min()
        ties = pos[ratios <= best + 1e-12 * max(1.0, abs(best))]
        r = ties[np.argmin(np.asarray(basis)[ties])]
        _pivot(T, r, q)
        basis[r] = q
    raise LPError("simplex iteration limit reached", basis)


def _solve_simplex(c, A, senses, rhs, lo, hi, max_iter=50_000):
    cs, M, senses, b, cols, offset = _standard_form(c, A, senses, rhs, lo, hi)
    m, k = M.shape
    flip = b < 0
    M[flip] *= -1
    b = np.abs(b)
    senses = [{"<=": ">=", ">=": "<=", "=": "="}[s] if f else s for s, f in zip(senses, flip)]
    slack_cols, art_rows = [], []
    for r, s in enumerate(senses):
        if s != "=":
            slack_cols.append((r, 1.0 if s == "<=" else -1.0))
        if s != "<=":
            art_rows.append(r)
    ns, na = len(slack_cols), len(art_rows)
    T = np.zeros((m + 1, k + ns + na + 1))
    T[:m, :k] = M
    basis = [-1] * m
    for idx, (r, sgn) in enumerate(slack_cols):
        T[r, k + idx] = sgn
        if sgn > 0:
            basis[r] = k + idx
    for idx, r in enumerate(art_rows):
        T[r, k + ns + idx] = 1.0
        basis[r] = k + ns + idx
    T[:m, -1] = b
    total = k + ns + na
    iters = 0
    if na:
        # phase one: minimise the sum of artificials
        T[-1, :] = 0.0
        T[-1, k + ns:total] = 1.0
        for r in art_rows:
            T[-1] -= T[r]
        iters += _run(T, basis, np.ones(total, dtype=bool), max_iter)
        if -T[-1, -1] > FEAS_TOL * max(1.0, np.abs(b).max(initial=0.0)):
            raise InfeasibleError("LP is infeasible")
        keep = np.ones(m, dtype=bool)
        for r in range(m):
            if basis[r] >= k + ns:
                row = T[r, :k + ns]
                nz = np.flatnonzero(np.abs(row) > 1e-9)
                if len(nz):
                    _pivot(T, r, nz[0])
                    basis[r] = nz[0]
                else:
                    keep[r] = False  # redundant equality
        T = np.vstack([T[:m][keep], T[-1:]])
        basis = [bv for bv, kp in zip(basis, keep) if kp]
        m = T.shape[0] - 1
    allowed = np.zeros(total, dtype=bool)
    allowed[:k + ns] = True
    T[-1, :] = 0.0
    T[-1, :k] = cs
    for r, bv in enumerate(basis):
        if T[-1, bv] != 0:
            T[-1] -= T[-1, bv] * T[r]
    iters += _run(T, basis, allowed, max_iter)
    y = np.zeros(total)
    y[basis] = T[:m, -1]
    x = offset.copy()
    for j, parts in enumerate(cols):
        for col, sgn in parts:
            x[j] += sgn * y[col]
    return x, basis, iters


def vertex_enumeration(c, A_ub, b_ub, maximize=True):
    """Brute-force optimum of ``c @ x`` over ``{A_ub x <= b_ub}`` by trying every vertex.

    Only for tiny bounded problems (used as an independent check).
    """
    from itertools import combinations

    A_ub = np.asarray(A_ub, dtype=float)
    b_ub = np.asarray(b_ub, dtype=float)
    n = A_ub.shape[1]
    best, arg = None, None
    for rows in combinations(range(A_ub.shape[0]), n):
        sub = A_ub[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        x = np.linalg.solve(sub, b_ub[list(rows)])
        if np.all(A_ub @ x <= b_ub + 1e-9):
            val = float(np.asarray(c) @ x)
            if best is None or (val > best if maximize else val < best):
                best, arg = val, x
    if best is None:
        raise InfeasibleError("no vertex found")
    return best, arg
