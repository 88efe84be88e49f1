"""Exponential-cone form of the capped program, for external conic solvers.

Variables are ``b_ij`` (one per liked pair), ``x_j`` and ``t_ij``.  The program is

    max  sum_ij log(v_ij) b_ij - t_ij
    s.t. x_j - sum_i b_ij = 0,   sum_j b_ij <= B_i,   x_j <= cap_j (finite caps),
         (x_j, b_ij, -t_ij) in K_exp,

where ``K_exp = closure{(a1, a2, a3) : a1 >= a2 exp(a3 / a2), a2 > 0}``, so the
cone constraint says ``t_ij >= b_ij log(b_ij / x_j)``.

Text format (one record per line, ``#`` starts a comment, floats in shortest
round-trip form)::

    CONIC 1
    SENSE max
    VARS <count>
    <name> <lower> <upper>              (inf / -inf allowed)
    OBJ <count>
    <name> <coefficient>
    ROWS <count>
    <row name> <= | = | >= <rhs> <k> <var1> <coef1> ... <vark> <coefk>
    CONES <count>
    EXP <c1> <var1> <c2> <var2> <c3> <var3>   (component q is c_q * var_q)
    END

Variable names are ``b[i,j]``, ``x[j]`` and ``t[i,j]`` with 0-based indices.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .capped import (CappedSolution, capped_objective, estimate_lambda, estimate_mu,
                     kkt_residuals, _kkt_ok)
from .errors import ConvergenceError, LindahlError, ParseError
from .model import ContributionMatrix, Instance

FORMAT_VERSION = 1


@dataclass
class ConicProgram:
    """Structured exponential-cone program (maximisation)."""

    variables: list                      # names
    lower: list
    upper: list
    objective: dict                      # name -> coefficient
    rows: list                           # (name, sense, rhs, {var: coef})
    cones: list                          # ((c1, v1), (c2, v2), (c3, v3))
    meta: dict = field(default_factory=dict)

    def index(self) -> dict:
        return {v: k for k, v in enumerate(self.variables)}

    # -- text ---------------------------------------------------------------------------

    def to_text(self) -> str:
        out = [f"CONIC {FORMAT_VERSION}", "SENSE max", f"VARS {len(self.variables)}"]
        out += [f"{v} {_num(lo)} {_num(hi)}" for v, lo, hi in zip(self.variables, self.lower, self.upper)]
        out.append(f"OBJ {len(self.objective)}")
        out += [f"{v} {_num(c)}" for v, c in self.objective.items()]
        out.append(f"ROWS {len(self.rows)}")
        for name, sense, rhs, coefs in self.rows:
            terms = " ".join(f"{v} {_num(c)}" for v, c in coefs.items())
            out.append(f"{name} {sense} {_num(rhs)} {len(coefs)} {terms}")
        out.append(f"CONES {len(self.cones)}")
        for cone in self.cones:
            out.append("EXP " + " ".join(f"{_num(c)} {v}" for c, v in cone))
        out.append("END")
        return "\n".join(out) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ConicProgram":
        lines = [(k + 1, ln.split("#", 1)[0].split()) for k, ln in enumerate(text.splitlines())]
        lines = [(k, toks) for k, toks in lines if toks]
        pos = 0

        def take(expect=None):
            nonlocal pos
            if pos >= len(lines):
                raise ParseError("unexpected end of conic file")
            k, toks = lines[pos]
            pos += 1
            if expect and toks[0] != expect:
                raise ParseError(f"expected {expect}, found {toks[0]!r}", k)
            return k, toks

        def count(k, toks):
            try:
                return int(toks[1])
            except (IndexError, ValueError):
                raise ParseError("missing count", k) from None

        try:
            k, toks = take("CONIC")
            if toks[1:] != [str(FORMAT_VERSION)]:
                raise ParseError("unsupported conic format version", k)
            k, toks = take("SENSE")
            if toks[1:] != ["max"]:
                raise ParseError("only SENSE max is supported", k)
            variables, lower, upper = [], [], []
            k, toks = take("VARS")
            for _ in range(count(k, toks)):
                k, (name, lo, hi) = take()
                variables.append(name)
                lower.append(float(lo))
                upper.append(float(hi))
            k, toks = take("OBJ")
            objective = {}
            for _ in range(count(k, toks)):
                k, (name, c) = take()
                objective[name] = float(c)
            k, toks = take("ROWS")
            rows = []
            for _ in range(count(k, toks)):
                k, t = take()
                nterm = int(t[3])
                if len(t) != 4 + 2 * nterm:
                    raise ParseError("row term count does not match", k)
                coefs = {t[4 + 2 * q]: float(t[5 + 2 * q]) for q in range(nterm)}
                if t[1] not in ("<=", "=", ">="):
                    raise ParseError(f"bad row sense {t[1]!r}", k)
                rows.append((t[0], t[1], float(t[2]), coefs))
            k, toks = take("CONES")
            cones = []
            for _ in range(count(k, toks)):
                k, t = take("EXP")
                if len(t) != 7:
                    raise ParseError("EXP needs three (coefficient, variable) pairs", k)
                cones.append(tuple((float(t[1 + 2 * q]), t[2 + 2 * q]) for q in range(3)))
            take("END")
        except ValueError as exc:
            raise ParseError(f"malformed conic file: {exc}", lines[pos - 1][0]) from None
        prog = cls(variables, lower, upper, objective, rows, cones)
        prog.check()
        return prog

    # -- json ---------------------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": "conic", "version": FORMAT_VERSION, "sense": "max",
            "variables": [{"name": v, "lower": _jnum(lo), "upper": _jnum(hi)}
                          for v, lo, hi in zip(self.variables, self.lower, self.upper)],
            "objective": self.objective,
            "rows": [{"name": n, "sense": s, "rhs": r, "coefficients": c} for n, s, r, c in self.rows],
            "cones": [{"type": "exp", "components": [[c, v] for c, v in cone]} for cone in self.cones],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConicProgram":
        try:
            prog = cls(
                [v["name"] for v in d["variables"]],
                [_unjnum(v["lower"], -math.inf) for v in d["variables"]],
                [_unjnum(v["upper"]) for v in d["variables"]],
                {k: float(c) for k, c in d["objective"].items()},
                [(r["name"], r["sense"], float(r["rhs"]), {k: float(c) for k, c in r["coefficients"].items()})
                 for r in d["rows"]],
                [tuple((float(c), v) for c, v in cone["components"]) for cone in d["cones"]],
                d.get("meta", {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed conic JSON: {exc}") from None
        prog.check()
        return prog

    def check(self):
        names = self.index()
        if len(names) != len(self.variables):
            raise ParseError("duplicate variable names")
        refs = list(self.objective)
        refs += [v for *_, coefs in self.rows for v in coefs]
        refs += [v for cone in self.cones for _, v in cone]
        for v in refs:
            if v not in names:
                raise ParseError(f"unknown variable {v!r}")


def _num(v: float) -> str:
    return repr(float(v))


def _jnum(v: float):
    return None if math.isinf(v) else float(v)


def _unjnum(v, missing=math.inf):
    return missing if v is None else float(v)


def emit_conic(inst: Instance) -> ConicProgram:
    """Encode the capped program of a rescaled instance as an exponential-cone program."""
    bname = [f"b[{i},{j}]" for i, j in zip(inst.rows, inst.cols)]
    tname = [f"t[{i},{j}]" for i, j in zip(inst.rows, inst.cols)]
    xname = [f"x[{j}]" for j in range(inst.m)]
    variables = bname + xname + tname
    lower = [0.0] * (inst.nnz + inst.m) + [-math.inf] * inst.nnz
    upper = [math.inf] * len(variables)
    objective = {}
    for e in range(inst.nnz):
        objective[bname[e]] = float(inst.log_values[e])
        objective[tname[e]] = -1.0
    rows = []
    for j in range(inst.m):
        coefs = {xname[j]: 1.0}
        for e in np.flatnonzero(inst.cols == j):
            coefs[bname[e]] = -1.0
        rows.append((f"total[{j}]", "=", 0.0, coefs))
    for i in range(inst.n):
        lo, hi = inst.indptr[i], inst.indptr[i + 1]
        if hi > lo:
            rows.append((f"budget[{i}]", "<=", float(inst.budgets[i]),
                         {bname[e]: 1.0 for e in range(lo, hi)}))
    for j in np.flatnonzero(np.isfinite(inst.caps)):
        rows.append((f"cap[{j}]", "<=", float(inst.caps[j]), {xname[j]: 1.0}))
    cones = [((1.0, xname[j]), (1.0, bname[e]), (-1.0, tname[e]))
             for e, j in enumerate(inst.cols)]
    meta = {"agents": inst.n, "projects": inst.m, "total_budget": inst.total_budget}
    return ConicProgram(variables, lower, upper, objective, rows, cones, meta)


def solve_conic(prog: ConicProgram, solver: str | None = None) -> dict:
    """Solve a :class:`ConicProgram` with CVXPY; returns a flat ``{variable: value}`` map.

    Needs the optional ``cvxpy`` dependency.
    """
    try:
        import cvxpy as cp
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise LindahlError("solving conic programs needs the optional 'cvxpy' package") from exc
    idx = prog.index()
    z = cp.Variable(len(prog.variables))
    lo, hi = np.array(prog.lower), np.array(prog.upper)
    cons = []
    if np.isfinite(lo).any():
        k = np.flatnonzero(np.isfinite(lo))
        cons.append(z[k] >= lo[k])
    if np.isfinite(hi).any():
        k = np.flatnonzero(np.isfinite(hi))
        cons.append(z[k] <= hi[k])
    groups = {"<=": [], "=": [], ">=": []}
    for _, sense, rhs, coefs in prog.rows:
        groups[sense].append((rhs, coefs))
    for sense, items in groups.items():
        if not items:
            continue
        A = np.zeros((len(items), len(prog.variables)))
        b = np.zeros(len(items))
        for r, (rhs, coefs) in enumerate(items):
            b[r] = rhs
            for v, c in coefs.items():
                A[r, idx[v]] = c
        expr = A @ z
        cons.append(expr <= b if sense == "<=" else expr == b if sense == "=" else expr >= b)
    if prog.cones:
        parts = []
        for q in range(3):
            coef = np.array([cone[q][0] for cone in prog.cones])
            ref = np.array([idx[cone[q][1]] for cone in prog.cones])
            parts.append(cp.multiply(coef, z[ref]))
        # cvxpy's ExpCone(a, b, c) means b * exp(a / b) <= c
        cons.append(cp.ExpCone(parts[2], parts[1], parts[0]))
    c = np.zeros(len(prog.variables))
    for v, coef in prog.objective.items():
        c[idx[v]] = coef
    problem = cp.Problem(cp.Maximize(c @ z), cons)
    if solver is None:
        solver = "CLARABEL" if "CLARABEL" in cp.installed_solvers() else None
    problem.solve(solver=solver)
    if problem.status not in ("optimal", "optimal_inaccurate"):
        raise ConvergenceError(f"conic solver finished with status {problem.status!r}")
    return {v: float(z.value[k]) for v, k in idx.items()}


def solution_from_values(inst: Instance, values: dict, zero_tol: float | None = None) -> CappedSolution:
    """Turn a flat variable map from a conic solver into a :class:`CappedSolution`.

    Solver noise is cleaned: negative ``b`` are clipped and projects whose total
    is at most ``zero_tol`` (default ``1e-9 * B``) are treated as unfunded.
    Multipliers are estimated from ``b``.
    """
    if zero_tol is None:
        zero_tol = 1e-9 * inst.total_budget
    try:
        b = np.array([values[f"b[{i},{j}]"] for i, j in zip(inst.rows, inst.cols)], dtype=float)
    except KeyError as exc:
        raise ParseError(f"solution is missing variable {exc}") from None
    b = np.maximum(b, 0.0)
    x = inst.column_sums(b)
    b[(x <= zero_tol)[inst.cols]] = 0.0
    lam = estimate_lambda(inst, b)
    mu = estimate_mu(inst, b, lam)
    x = inst.column_sums(b)
    res = kkt_residuals(inst, b, lam, mu)
    w = np.where(x[inst.cols] > 0, np.nan, inst.log_values - lam[inst.rows])
    return CappedSolution(inst=inst, b=ContributionMatrix(inst, b), x=x, lambdas=lam, mus=mu, w=w,
                          objective=capped_objective(inst, b),
                          status="optimal" if _kkt_ok(res, inst.total_budget) else "flagged",
                          residuals=res, notes=["imported from conic solver"])


def dumps_solution(values: dict) -> str:
    return json.dumps({k: float(v) for k, v in values.items()}, indent=1)
