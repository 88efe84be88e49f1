"""Proportional response dynamics for uncapped public goods.

Each agent splits its budget across projects in proportion to the utility the
project currently yields it.  The same update is entropic mirror descent with
unit step on the contribution program

    min_b  f(b) = -sum_ij b_ij (log v_ij - log(b_ij / x_j(b)))
    s.t.   sum_j b_ij = B_i,

which is what :func:`md_step` computes (through the gradient rather than the
closed form), so the two routes can be checked against each other.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InstanceError, ZeroUtilityError
from .model import ContributionMatrix, Instance, PriceSystem

DEFAULT_MAX_ITERS = 100_000
DEFAULT_X_CHANGE_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class DynamicsState:
    """Iterate of the dynamics: contributions ``b`` (support-aligned) and ``x = x(b)``."""

    inst: Instance
    b: np.ndarray
    x: np.ndarray
    t: int = 0

    @property
    def utilities(self) -> np.ndarray:
        return self.inst.utilities(self.x)


def initial_state(inst: Instance, b=None) -> DynamicsState:
    """Uniform start ``b_ij = B_i / |M_i|``, or a validated warm start."""
    if b is None:
        counts = np.diff(inst.indptr)
        if np.any(counts == 0):
            raise ZeroUtilityError(int(np.flatnonzero(counts == 0)[0]))
        b = (inst.budgets / counts)[inst.rows]
    else:
        b = np.asarray(b, dtype=float)
        if b.shape != (inst.nnz,) or np.any(b < 0):
            raise InstanceError("warm start must be a non-negative support-aligned vector")
        spend = inst.row_sums(b)
        if np.max(np.abs(spend - inst.budgets)) > 1e-9 * inst.total_budget:
            raise InstanceError("warm start must spend every agent's budget exactly")
    x = inst.column_sums(b)
    if np.any(x[inst.supported] <= 0):
        raise InstanceError("every supported project needs positive initial spending")
    return DynamicsState(inst, b, x, 0)


def _require_positive_utilities(u):
    bad = np.flatnonzero(~(u > 0))
    if len(bad):
        raise ZeroUtilityError(int(bad[0]))


def pr_step(state: DynamicsState) -> DynamicsState:
    """One proportional-response update ``b_ij <- B_i v_ij x_j / u_i``."""
    inst = state.inst
    u = inst.utilities(state.x)
    _require_positive_utilities(u)
    b = (inst.budgets / u)[inst.rows] * inst.data * state.x[inst.cols]
    return DynamicsState(inst, b, inst.column_sums(b), state.t + 1)


def md_step(state: DynamicsState, stepsize: float = 1.0) -> DynamicsState:
    """One entropic mirror-descent step on the contribution program.

    Uses the gradient ``-log v_ij + log(b_ij / x_j)`` and the softmax solution of
    the KL-proximal problem over each agent's scaled simplex.
    """
    inst = state.inst
    u = inst.utilities(state.x)
    _require_positive_utilities(u)
    if np.any(state.b <= 0):
        raise InstanceError("mirror descent needs strictly positive contributions")
    z = np.log(state.b) - stepsize * shmyrev_gradient(inst, state.b)
    zmax = np.full(inst.n, -np.inf)
    np.maximum.at(zmax, inst.rows, z)
    w = np.exp(z - zmax[inst.rows])
    b = inst.budgets[inst.rows] * w / inst.row_sums(w)[inst.rows]
    return DynamicsState(inst, b, inst.column_sums(b), state.t + 1)


def _plogp_ratio(b, x_of_entry):
    """``b * log(b / x)`` with ``0 log 0 = 0``; the log is only taken where b > 0."""
    out = np.zeros_like(b)
    pos = b > 0
    out[pos] = b[pos] * np.log(b[pos] / x_of_entry[pos])
    return out


def shmyrev_objective(inst: Instance, b) -> float:
    """``f(b) = -sum b_ij (log v_ij - log(b_ij / x_j(b)))`` (minimisation form)."""
    b = np.asarray(b, dtype=float)
    x = inst.column_sums(b)
    return float(-(b @ inst.log_values) + _plogp_ratio(b, x[inst.cols]).sum())


def shmyrev_gradient(inst: Instance, b) -> np.ndarray:
    """Gradient of :func:`shmyrev_objective`; needs ``b > 0`` on the support."""
    b = np.asarray(b, dtype=float)
    x = inst.column_sums(b)
    return -inst.log_values + np.log(b / x[inst.cols])


def eg_objective(inst: Instance, x) -> float:
    """Budget-weighted log Nash welfare ``sum_i B_i log u_i(x)``; ``-inf`` if some u_i = 0."""
    u = inst.utilities(x)
    if np.any(u <= 0):
        return -math.inf
    return float(inst.budgets @ np.log(u))


def convergence_bound(inst: Instance, t: int) -> float:
    """Gap bound ``sum_i B_i log(m / B_i) / t`` for the uniform start.

    Derived from ``-h(b^0)`` with ``h`` the negative entropy, so it presumes
    ``h(b*) <= 0`` (e.g. a total budget of at most 1).
    """
    if t < 1:
        raise ValueError("t must be at least 1")
    B = inst.budgets
    return float(np.sum(B * np.log(inst.m / B)) / t)


def recover_prices_uncapped(inst: Instance, x) -> PriceSystem:
    """Equilibrium prices ``p_ij = B_i v_ij / u_i(x)``; zero where ``v_ij = 0``."""
    u = inst.utilities(x)
    _require_positive_utilities(u)
    return PriceSystem.from_support(inst, inst.budgets[inst.rows] * inst.data / u[inst.rows])


@dataclass
class ConvergenceTrace:
    t: list = field(default_factory=list)
    f: list = field(default_factory=list)
    eg: list = field(default_factory=list)
    x_change: list = field(default_factory=list)
    bound: list = field(default_factory=list)

    def record(self, inst, state, x_change):
        self.t.append(state.t)
        self.f.append(shmyrev_objective(inst, state.b))
        self.eg.append(eg_objective(inst, state.x))
        self.x_change.append(x_change)
        self.bound.append(convergence_bound(inst, state.t) if state.t else math.inf)

    def __len__(self):
        return len(self.t)

    def to_csv(self, fh=None) -> str | None:
        """Write columns ``t,f,eg_objective,x_change,bound``; returns text if no file given."""
        own = fh is None
        if own:
            fh = io.StringIO()
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "f", "eg_objective", "x_change", "bound"])
        for row in zip(self.t, self.f, self.eg, self.x_change, self.bound):
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return fh.getvalue() if own else None


@dataclass
class PRResult:
    x: np.ndarray
    b: ContributionMatrix
    trace: ConvergenceTrace | None
    iterations: int
    converged: bool
    gap_bound: float | None = None

    @property
    def status(self) -> str:
        return "converged" if self.converged else "bound-only"


def run_pr(inst: Instance, init=None, max_iters: int = DEFAULT_MAX_ITERS,
           x_change_tol: float | None = None, record_trace: bool = True) -> PRResult:
    """Run the proportional response dynamics to a fixed point.

    Caps are ignored.  Projects nobody values get ``x_j = 0``.  Stops when the
    largest change of ``x`` drops to ``x_change_tol`` (default ``1e-10 * B``) or
    after ``max_iters`` steps, in which case the result is flagged
    ``bound-only`` and carries the theoretical objective gap bound.
    """
    work = inst if inst.uncapped else inst.uncapped_copy()
    work, kept = work.drop_unsupported() if not work.supported.all() else (work, None)
    if x_change_tol is None:
        x_change_tol = DEFAULT_X_CHANGE_RTOL * inst.total_budget
    # dropping unsupported projects leaves the support (and its order) unchanged
    state = initial_state(work, init)
    trace = ConvergenceTrace() if record_trace else None
    if trace is not None:
        trace.record(work, state, math.nan)
    converged = False
    while state.t < max_iters:
        new = pr_step(state)
        change = float(np.max(np.abs(new.x - state.x)))
        state = new
        if trace is not None:
            trace.record(work, state, change)
        if change <= x_change_tol:
            converged = True
            break
    x = state.x
    if kept is not None:
        x = np.zeros(inst.m)
        x[kept] = state.x
    gap = None if converged else convergence_bound(work, max(state.t, 1))
    return PRResult(x, ContributionMatrix(inst, state.b), trace, state.t, converged, gap)

