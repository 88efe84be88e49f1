"""Instances, allocations, contributions and prices for divisible public goods.

Valuations are stored in compressed sparse row form keyed by agent: for agent
``i`` the liked projects are ``indices[indptr[i]:indptr[i+1]]`` (sorted) with
positive values ``data[indptr[i]:indptr[i+1]]``.  Contribution matrices are
vectors aligned with that support, so every per-pair quantity in the solvers is
a flat array of length ``nnz``.

Unbounded caps are ``math.inf``; finite caps are never replaced by a large
sentinel.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import InfeasibleError, InstanceError

log = logging.getLogger(__name__)

UNBOUNDED = math.inf
DEFAULT_RESCALE_TARGET = math.e
BUDGET_RTOL = 1e-12
FEAS_RTOL = 1e-9  # money tolerance, relative to the total budget
PRICE_TOL = 1e-9


def _readonly(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Instance:
    """A public-goods instance with separable linear utilities.

    Use :meth:`from_dense` or :meth:`from_rows` rather than the raw constructor.
    ``valuation_scale[i]`` is the factor by which agent ``i``'s row was
    multiplied relative to the raw input (see :func:`rescale_valuations`).
    """

    budgets: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    caps: np.ndarray
    total_budget: float
    agent_ids: tuple = ()
    project_ids: tuple = ()
    valuation_scale: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "budgets", _readonly(self.budgets))
        set_(self, "indptr", _readonly(self.indptr, np.int64))
        set_(self, "indices", _readonly(self.indices, np.int64))
        set_(self, "data", _readonly(self.data))
        set_(self, "caps", _readonly(self.caps))
        set_(self, "total_budget", float(self.total_budget))
        n, m = len(self.budgets), len(self.caps)
        if not self.agent_ids:
            set_(self, "agent_ids", tuple(str(i + 1) for i in range(n)))
        if not self.project_ids:
            set_(self, "project_ids", tuple(str(j + 1) for j in range(m)))
        scale = np.ones(n) if self.valuation_scale is None else self.valuation_scale
        set_(self, "valuation_scale", _readonly(scale))
        self._validate()

    def _validate(self):
        n, m = self.n, self.m
        if n == 0 or m == 0:
            raise InstanceError("an instance needs at least one agent and one project")
        if len(self.agent_ids) != n or len(self.project_ids) != m:
            raise InstanceError("id lists do not match the number of agents/projects")
        if len(self.indptr) != n + 1 or self.indptr[0] != 0 or self.indptr[-1] != len(self.data):
            raise InstanceError("malformed sparse structure")
        if len(self.indices) != len(self.data) or len(self.valuation_scale) != n:
            raise InstanceError("malformed sparse structure")
        if np.any(np.diff(self.indptr) < 0):
            raise InstanceError("malformed sparse structure")
        if self.nnz and (self.indices.min() < 0 or self.indices.max() >= m):
            raise InstanceError("project index out of range")
        for i in range(n):
            row = self.indices[self.indptr[i]:self.indptr[i + 1]]
            if np.any(np.diff(row) <= 0):
                raise InstanceError(f"agent {i}: project indices must be sorted and unique")
        if not np.all(np.isfinite(self.data)) or np.any(self.data <= 0):
            raise InstanceError("stored valuations must be finite and positive")
        if not np.all(self.budgets > 0) or not np.all(np.isfinite(self.budgets)):
            raise InstanceError("agent budgets must be positive and finite")
        if not self.total_budget > 0:
            raise InstanceError("total budget must be positive")
        if abs(self.budgets.sum() - self.total_budget) > BUDGET_RTOL * self.total_budget:
            raise InstanceError(
                f"agent budgets sum to {float(self.budgets.sum())!r}, expected {float(self.total_budget)!r}"
            )
        if np.any(np.isnan(self.caps)) or np.any(self.caps <= 0):
            raise InstanceError("caps must be positive (use inf for unbounded)")
        if self.caps.sum() < self.total_budget * (1 - BUDGET_RTOL):
            raise InfeasibleError(
                f"caps sum to {float(self.caps.sum())!r} < budget {float(self.total_budget)!r}; "
                "every project can simply be fully funded"
            )

    # -- construction ---------------------------------------------------------

    @classmethod
    def from_dense(cls, valuations, budgets, caps=None, total_budget=None, **kw):
        """Build an instance from a dense ``n x m`` valuation matrix.

        ``caps`` may contain ``None`` or ``inf`` for unbounded projects; when
        omitted all projects are unbounded.  ``total_budget`` defaults to the
        sum of ``budgets``.
        """
        V = np.asarray(valuations, dtype=float)
        if V.ndim != 2:
            raise InstanceError("valuations must be a 2-d array")
        if np.any(V < 0) or not np.all(np.isfinite(V)):
            raise InstanceError("valuations must be finite and non-negative")
        n, m = V.shape
        budgets = np.asarray(budgets, dtype=float).reshape(-1)
        if len(budgets) != n:
            raise InstanceError("one budget per agent required")
        caps = _caps_array(caps, m)
        mask = V > 0
        indptr = np.concatenate([[0], np.cumsum(mask.sum(axis=1))])
        rows, cols = np.nonzero(mask)
        if total_budget is None:
            total_budget = float(budgets.sum())
        return cls(budgets, indptr, cols, V[rows, cols], caps, total_budget, **kw)

    @classmethod
    def from_rows(cls, rows: Sequence[dict], budgets, caps, total_budget=None, **kw):
        """Build an instance from one ``{project_index: value}`` dict per agent."""
        m = len(caps)
        V = np.zeros((len(rows), m))
        for i, row in enumerate(rows):
            for j, v in row.items():
                V[i, j] = v
        return cls.from_dense(V, budgets, caps, total_budget, **kw)

    # -- shape and support ----------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.budgets)

    @property
    def m(self) -> int:
        return len(self.caps)

    @property
    def nnz(self) -> int:
        return len(self.data)

    @cached_property
    def rows(self) -> np.ndarray:
        """Agent index of every stored valuation (aligned with ``indices``)."""
        r = np.repeat(np.arange(self.n), np.diff(self.indptr))
        r.setflags(write=False)
        return r

    @property
    def cols(self) -> np.ndarray:
        return self.indices

    @property
    def log_values(self) -> np.ndarray:
        return np.log(self.data)

    @cached_property
    def capped(self) -> np.ndarray:
        """Boolean mask of projects with a finite cap."""
        return np.isfinite(self.caps)

    @property
    def uncapped(self) -> bool:
        return not self.capped.any()

    @cached_property
    def supporter_counts(self) -> np.ndarray:
        return np.bincount(self.cols, minlength=self.m)

    @property
    def supported(self) -> np.ndarray:
        """Projects valued by at least one agent."""
        return self.supporter_counts > 0

    @property
    def zero_agents(self) -> np.ndarray:
        """Agents who value no project at all."""
        return np.flatnonzero(np.diff(self.indptr) == 0)

    def liked(self, i: int) -> np.ndarray:
        """Projects agent ``i`` values positively (the set M_i)."""
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def supporters(self, j: int) -> np.ndarray:
        """Agents who value project ``j`` positively (the set N_j)."""
        return self.rows[self.cols == j]

    def friends(self, i: int) -> np.ndarray:
        """Agents sharing at least one liked project with ``i`` (includes ``i``)."""
        liked = np.zeros(self.m, dtype=bool)
        liked[self.liked(i)] = True
        hit = np.zeros(self.n, dtype=bool)
        hit[self.rows[liked[self.cols]]] = True
        return np.flatnonzero(hit)

    def dense_valuations(self) -> np.ndarray:
        V = np.zeros((self.n, self.m))
        V[self.rows, self.cols] = self.data
        return V

    def raw_valuations(self) -> np.ndarray:
        """Dense valuations with any rescaling undone."""
        return self.dense_valuations() / self.valuation_scale[:, None]

    # -- evaluation -----------------------------------------------------------

    def utilities(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.bincount(self.rows, weights=self.data * x[self.cols], minlength=self.n)

    def column_sums(self, values) -> np.ndarray:
        """Sum a support-aligned vector over agents, per project."""
        return np.bincount(self.cols, weights=values, minlength=self.m)

    def row_sums(self, values) -> np.ndarray:
        """Sum a support-aligned vector over projects, per agent."""
        return np.bincount(self.rows, weights=values, minlength=self.n)

    # -- derived instances ----------------------------------------------------

    def with_caps(self, caps) -> "Instance":
        return replace(self, caps=_caps_array(caps, self.m))

    def uncapped_copy(self) -> "Instance":
        return self.with_caps(None)

    def restrict_projects(self, keep) -> tuple["Instance", np.ndarray]:
        """Keep only the projects in boolean mask ``keep``.

        Returns the new instance and the original index of every kept project.
        """
        keep = np.asarray(keep, dtype=bool)
        kept = np.flatnonzero(keep)
        new_index = np.full(self.m, -1)
        new_index[kept] = np.arange(len(kept))
        entry = keep[self.cols]
        counts = np.bincount(self.rows[entry], minlength=self.n)
        inst = replace(
            self,
            indptr=np.concatenate([[0], np.cumsum(counts)]),
            indices=new_index[self.cols[entry]],
            data=self.data[entry],
            caps=self.caps[kept],
            project_ids=tuple(self.project_ids[j] for j in kept),
        )
        return inst, kept

    def drop_unsupported(self) -> tuple["Instance", np.ndarray]:
        """Remove projects nobody values; see :meth:`restrict_projects`."""
        return self.restrict_projects(self.supported)

    def summary(self) -> dict:
        return {
            "agents": self.n,
            "projects": self.m,
            "nonzeros": self.nnz,
            "total_budget": self.total_budget,
            "capped_projects": int(self.capped.sum()),
        }


def _caps_array(caps, m):
    if caps is None:
        return np.full(m, UNBOUNDED)
    out = np.array([UNBOUNDED if c is None else float(c) for c in caps], dtype=float)
    if len(out) != m:
        raise InstanceError("one cap per project required")
    return out


# -- contributions and prices ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class ContributionMatrix:
    """Per-pair spending ``b_ij`` on the support of ``inst``."""

    inst: Instance
    values: np.ndarray

    def __post_init__(self):
        v = _readonly(self.values)
        if v.shape != (self.inst.nnz,):
            raise InstanceError("contribution vector does not match the instance support")
        object.__setattr__(self, "values", v)

    @property
    def totals(self) -> np.ndarray:
        """Implied allocation ``x_j = sum_i b_ij``."""
        return self.inst.column_sums(self.values)

    @property
    def spend(self) -> np.ndarray:
        return self.inst.row_sums(self.values)

    def dense(self) -> np.ndarray:
        out = np.zeros((self.inst.n, self.inst.m))
        out[self.inst.rows, self.inst.cols] = self.values
        return out


@dataclass(frozen=True, eq=False)
class PriceSystem:
    """Personalized prices ``p_ij`` as a dense ``n x m`` array.

    Dense because Lindahl prices may be positive on pairs the agent does not
    value (such equilibria are simply not zero-respecting).
    """

    p: np.ndarray

    def __post_init__(self):
        p = _readonly(self.p)
        if p.ndim != 2:
            raise InstanceError("prices must be an n x m array")
        object.__setattr__(self, "p", p)

    @classmethod
    def from_support(cls, inst: Instance, values) -> "PriceSystem":
        p = np.zeros((inst.n, inst.m))
        p[inst.rows, inst.cols] = values
        return cls(p)

    @property
    def column_sums(self) -> np.ndarray:
        return self.p.sum(axis=0)

    def __array__(self, dtype=None, copy=None):
        return self.p if dtype is None else self.p.astype(dtype)


def as_prices(p) -> np.ndarray:
    return p.p if isinstance(p, PriceSystem) else np.asarray(p, dtype=float)


# -- predicates -------------------------------------------------------------------


@dataclass(frozen=True)
class CapSufficiency:
    ok: bool
    agent: int | None = None
    cap_sum: float | None = None
    friends_budget: float | None = None

    def __bool__(self):
        return self.ok


def check_cap_sufficient(inst: Instance) -> CapSufficiency:
    """Check that every agent's liked caps cover the pooled budget of its friends.

    On failure the first violating agent is reported with both sums.  An agent
    with no liked project fails (its budget can never be spent).
    """
    cap_sum = np.bincount(inst.rows, weights=inst.caps[inst.cols], minlength=inst.n)
    # an agent who likes nothing counts as its own friend, so it can never be covered
    lonely = np.flatnonzero(np.diff(inst.indptr) == 0)
    if len(lonely):
        i = int(lonely[0])
        return CapSufficiency(False, i, 0.0, float(inst.budgets[i]))
    pending = np.flatnonzero(~(cap_sum >= inst.total_budget))
    if len(pending) == 0:
        return CapSufficiency(True)
    like = np.zeros((inst.n, inst.m), dtype=np.float32)
    like[inst.rows, inst.cols] = 1.0
    for start in range(0, len(pending), 256):
        chunk = pending[start:start + 256]
        share = (like[chunk] @ like.T) > 0
        friends_budget = share.astype(float) @ inst.budgets
        bad = np.flatnonzero(cap_sum[chunk] < friends_budget)
        if len(bad):
            k = bad[0]
            return CapSufficiency(False, int(chunk[k]), float(cap_sum[chunk[k]]),
                                  float(friends_budget[k]))
    return CapSufficiency(True)


def rescale_valuations(inst: Instance, target: float = DEFAULT_RESCALE_TARGET) -> Instance:
    """Scale each agent's row so that its smallest positive valuation equals ``target``.

    Lindahl equilibria are invariant to per-agent scaling; the capped program
    needs every positive valuation to exceed 1.  Agents without any positive
    valuation are left untouched and logged.  The cumulative per-agent factor
    is kept in ``valuation_scale``.
    """
    if not target > 1:
        raise InstanceError("rescale target must exceed 1")
    data = np.array(inst.data)
    factor = np.ones(inst.n)
    for i in range(inst.n):
        lo, hi = inst.indptr[i], inst.indptr[i + 1]
        if lo == hi:
            log.warning("agent %s values no project; row left unscaled", inst.agent_ids[i])
            continue
        row = data[lo:hi]
        k = int(np.argmin(row))
        factor[i] = target / row[k]
        row *= factor[i]
        row[k] = target
    return replace(inst, data=data, valuation_scale=inst.valuation_scale * factor)


def is_rescaled(inst: Instance) -> bool:
    return inst.nnz > 0 and bool(inst.data.min() > 1)


# -- feasibility --------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str  # "negative", "cap", "budget"
    index: int | None
    magnitude: float


@dataclass(frozen=True)
class FeasibilityReport:
    violations: tuple = ()
    tol: float = 0.0

    @property
    def feasible(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.feasible

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "tol": self.tol,
            "violations": [vars(v) for v in self.violations],
        }


def feasibility_report(inst: Instance, x, tol: float | None = None) -> FeasibilityReport:
    """List every violated bound of allocation ``x`` (negativity, cap, total budget)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (inst.m,):
        raise InstanceError(f"allocation has shape {x.shape}, expected ({inst.m},)")
    if tol is None:
        tol = FEAS_RTOL * inst.total_budget
    out = []
    for j in np.flatnonzero(x < -tol):
        out.append(Violation("negative", int(j), float(-x[j])))
    over = x - inst.caps
    for j in np.flatnonzero(over > tol):
        out.append(Violation("cap", int(j), float(over[j])))
    excess = x.sum() - inst.total_budget
    if excess > tol:
        out.append(Violation("budget", None, float(excess)))
    return FeasibilityReport(tuple(out), tol)
