"""Separable piecewise-linear concave (SPLC) utilities and their linear reduction.

An SPLC instance becomes a capped linear one by splitting every project into
one sub-project per segment: sub-project ``j^t`` has cap equal to the segment
length and agent ``i`` values it at its slope on that segment.  Allocations of
the derived instance are lifted back by summing over segments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InstanceError
from .model import (BUDGET_RTOL, DEFAULT_RESCALE_TARGET, CapSufficiency, Instance,
                    check_cap_sufficient, rescale_valuations)

BREAK_RTOL = 1e-12
FILL_RTOL = 1e-6


@dataclass(frozen=True)
class PlcFunction:
    """Concave piecewise-linear ``f`` with ``f(0) = 0`` given as ``(length, slope)`` segments."""

    segments: tuple

    def __post_init__(self):
        segs = tuple((float(l), float(s)) for l, s in self.segments)
        for l, s in segs:
            if not (l > 0 and math.isfinite(l)):
                raise InstanceError(f"segment length must be positive and finite, got {l!r}")
            if not (s >= 0 and math.isfinite(s)):
                raise InstanceError(f"segment slope must be non-negative and finite, got {s!r}")
        for (_, s0), (_, s1) in zip(segs, segs[1:]):
            if s1 > s0 * (1 + 1e-12):
                raise InstanceError("segment slopes must be non-increasing")
        object.__setattr__(self, "segments", segs)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([l for l, _ in self.segments])

    @property
    def slopes(self) -> np.ndarray:
        return np.array([s for _, s in self.segments])

    @property
    def breakpoints(self) -> np.ndarray:
        """Start of every segment (``a^1 = 0``) followed by the domain end."""
        return np.concatenate([[0.0], np.cumsum(self.lengths)])

    @property
    def domain_end(self) -> float:
        return float(self.lengths.sum()) if self.segments else 0.0

    @property
    def max_slope(self) -> float:
        return float(self.slopes.max(initial=0.0))

    def __call__(self, t):
        """Evaluate at ``t`` (clipped to the domain)."""
        if not self.segments:
            return np.zeros_like(np.asarray(t, dtype=float)) if np.ndim(t) else 0.0
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.domain_end)
        starts = self.breakpoints[:-1]
        inside = np.clip(t[..., None] - starts, 0.0, self.lengths)
        out = inside @ self.slopes
        return float(out) if np.ndim(out) == 0 else out

    def affine_pieces(self) -> list:
        """``(slope, intercept)`` of each segment's line; ``f`` is their minimum on the domain."""
        starts = self.breakpoints[:-1]
        values = np.concatenate([[0.0], np.cumsum(self.lengths * self.slopes)])[:-1]
        return [(float(s), float(v - s * a)) for s, v, a in zip(self.slopes, values, starts)]

    def on_domain(self, end: float) -> "PlcFunction":
        """Truncate or extend (with slope 0) to the domain ``[0, end]``."""
        segs, left = [], end
        for l, s in self.segments:
            if left <= end * BREAK_RTOL:
                break
            segs.append((min(l, left), s))
            left -= min(l, left)
        if left > end * BREAK_RTOL:
            segs.append((left, 0.0))
        return PlcFunction(tuple(segs))


@dataclass(frozen=True, eq=False)
class SplcInstance:
    """SPLC instance after harmonisation.

    For project ``j`` all agents share segment lengths ``lengths[j]``;
    ``slopes[j]`` is the ``n x k_j`` matrix of agent slopes on them.
    ``functions`` keeps each agent's function on ``[0, B]`` for evaluation.
    """

    budgets: np.ndarray
    total_budget: float
    lengths: tuple
    slopes: tuple
    functions: dict
    agent_ids: tuple = ()
    project_ids: tuple = ()
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.budgets)

    @property
    def m(self) -> int:
        return len(self.lengths)

    def function(self, i, j) -> PlcFunction:
        return self.functions.get((i, j), PlcFunction(((self.total_budget, 0.0),)))

    def harmonized_function(self, i, j) -> PlcFunction:
        return PlcFunction(tuple(zip(self.lengths[j], self.slopes[j][i])))

    def utilities(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = np.zeros(self.n)
        for (i, j), f in self.functions.items():
            u[i] += f(x[j])
        return u


def _merge_close(points, scale):
    out = []
    for p in np.sort(points):
        if not out or p - out[-1] > BREAK_RTOL * scale:
            out.append(float(p))
    return np.array(out)


def harmonize_segments(raw: dict, budgets, total_budget=None, agent_ids=(), project_ids=(),
                       m=None) -> SplcInstance:
    """Bring every project onto one minimal common subdivision of ``[0, B]``.

    ``raw`` maps ``(agent, project)`` to a :class:`PlcFunction` or a list of
    ``(length, slope)`` pairs; missing pairs mean zero utility.  Functions are
    first put on the domain ``[0, B]`` (see :meth:`PlcFunction.on_domain`).
    The breakpoint union is taken per project and adjacent pieces on which no
    agent's slope strictly decreases are merged.
    """
    budgets = np.asarray(budgets, dtype=float)
    n = len(budgets)
    B = float(budgets.sum() if total_budget is None else total_budget)
    if abs(budgets.sum() - B) > BUDGET_RTOL * B:
        raise InstanceError("agent budgets do not sum to the total budget")
    funcs = {}
    for (i, j), f in raw.items():
        if not 0 <= i < n:
            raise InstanceError(f"agent index {i} out of range")
        try:
            f = f if isinstance(f, PlcFunction) else PlcFunction(tuple(map(tuple, f)))
        except InstanceError as exc:
            raise InstanceError(f"agent {i}, project {j}: {exc}") from None
        funcs[(int(i), int(j))] = f.on_domain(B)
    if m is None:
        m = max((j for _, j in funcs), default=-1) + 1
    if m == 0:
        raise InstanceError("an SPLC instance needs at least one project")
    by_project = [[] for _ in range(m)]
    for (i, j), f in funcs.items():
        if not 0 <= j < m:
            raise InstanceError(f"project index {j} out of range")
        by_project[j].append((i, f))
    lengths, slopes = [], []
    for j in range(m):
        pts = [np.array([0.0, B])] + [f.breakpoints for _, f in by_project[j]]
        cuts = _merge_close(np.concatenate(pts), B)
        cuts[-1] = B
        mids = (cuts[:-1] + cuts[1:]) / 2
        S = np.zeros((n, len(mids)))
        for i, f in by_project[j]:
            idx = np.searchsorted(f.breakpoints, mids, side="right") - 1
            S[i] = f.slopes[np.clip(idx, 0, len(f.segments) - 1)]
        # merge boundaries where no agent's slope strictly drops
        keep = [0]
        for t in range(1, len(mids)):
            prev, cur = S[:, keep[-1]], S[:, t]
            if np.any(prev - cur > 1e-12 * np.maximum(1.0, prev)):
                keep.append(t)
        bounds = np.append(cuts[keep], B)
        lengths.append(np.diff(bounds))
        slopes.append(S[:, keep])
    return SplcInstance(budgets, B, tuple(lengths), tuple(slopes), funcs,
                        tuple(agent_ids) or tuple(str(i + 1) for i in range(n)),
                        tuple(project_ids) or tuple(str(j + 1) for j in range(m)))


@dataclass(frozen=True, eq=False)
class ReducedInstance:
    """Derived capped linear instance and the column map ``column -> (project, segment)``."""

    instance: Instance
    column_map: tuple
    splc: SplcInstance

    def columns_of(self, j) -> list:
        return [c for c, (jj, _) in enumerate(self.column_map) if jj == j]


def reduce_splc(splc: SplcInstance, rescale_target: float | None = DEFAULT_RESCALE_TARGET) -> ReducedInstance:
    """One sub-project per (project, segment) with cap = length and value = slope.

    Sub-projects with zero slope for everybody are kept (nobody funds them).
    Valuations are rescaled to ``rescale_target`` unless it is ``None``.
    """
    cols, caps, blocks = [], [], []
    for j in range(splc.m):
        for t, length in enumerate(splc.lengths[j]):
            cols.append((j, t))
            caps.append(float(length))
        blocks.append(splc.slopes[j])
    V = np.hstack(blocks)
    ids = tuple(f"{splc.project_ids[j]}#{t + 1}" for j, t in cols)
    inst = Instance.from_dense(V, splc.budgets, caps, splc.total_budget,
                               agent_ids=splc.agent_ids, project_ids=ids)
    if rescale_target is not None:
        inst = rescale_valuations(inst, rescale_target)
    return ReducedInstance(inst, tuple(cols), splc)


def lift_allocation(reduced: ReducedInstance, x_prime, tol: float | None = None,
                    return_repaired: bool = False):
    """Sum derived spending per original project.

    Checks that every project's segments are filled in order: a positive
    segment needs all earlier ones at cap.  Shortfalls up to ``tol`` (default
    ``1e-6 * B``) are repaired by moving mass forward; larger ones raise.
    """
    x_prime = np.asarray(x_prime, dtype=float)
    inst, splc = reduced.instance, reduced.splc
    if x_prime.shape != (inst.m,):
        raise InstanceError("derived allocation has the wrong length")
    if tol is None:
        tol = FILL_RTOL * splc.total_budget
    x = np.zeros(splc.m)
    repaired = x_prime.copy()
    for j in range(splc.m):
        cols = reduced.columns_of(j)
        seg = x_prime[cols]
        caps = inst.caps[cols]
        for t in range(1, len(cols)):
            if seg[t] > tol:
                short = caps[:t] - seg[:t]
                if np.any(short > tol):
                    raise InstanceError(
                        f"project {splc.project_ids[j]}: segment {t + 1} is funded while an "
                        f"earlier one is {short.max():.3g} below its cap")
        total = float(seg.sum())
        x[j] = total
        fill = np.minimum(caps, np.maximum(total - np.concatenate([[0.0], np.cumsum(caps)[:-1]]), 0.0))
        repaired[cols] = fill
    return (x, repaired) if return_repaired else x


@dataclass(frozen=True)
class WellBehaved:
    ok: bool
    cap_sufficiency: CapSufficiency
    positive_length_ok: np.ndarray

    def __bool__(self):
        return self.ok


def check_well_behaved(splc: SplcInstance) -> WellBehaved:
    """Cap-sufficiency of the derived instance, plus the per-agent sufficient condition.

    The sufficient condition is that the agent's positive-slope segments have
    total length at least ``B``.
    """
    reduced = reduce_splc(splc, rescale_target=None)
    cs = check_cap_sufficient(reduced.instance)
    pos_len = np.zeros(splc.n)
    for j in range(splc.m):
        pos_len += (splc.slopes[j] > 0) @ splc.lengths[j]
    return WellBehaved(cs.ok, cs, pos_len >= splc.total_budget * (1 - BUDGET_RTOL))
