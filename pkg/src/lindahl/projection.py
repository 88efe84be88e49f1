"""KL (Bregman) projection onto the capped contribution polytope.

The polytope is ``{b >= 0 : sum_j b_ij <= B_i, sum_i b_ij <= cap_j}``.  The
projection of ``y`` has the form ``b_ij = y_ij a_i c_j`` with scalings in
``(0, 1]``; alternating exact maximisation of the dual over the row and column
blocks is Dykstra's algorithm for this pair of constraint families.  A row or
column is only scaled down when it is violated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, InstanceError
from .model import ContributionMatrix, Instance

DEFAULT_RTOL = 1e-10
DEFAULT_MAX_SWEEPS = 10_000


@dataclass
class Projection:
    b: np.ndarray
    row_scale: np.ndarray
    col_scale: np.ndarray
    sweeps: int
    residual: float


def _ratio_clip(limit, total):
    out = np.ones_like(total)
    over = total > limit
    out[over] = limit[over] / total[over]
    return out


def dykstra_scalings(inst: Instance, y, budgets=None, caps=None, tol=None,
                     max_sweeps=DEFAULT_MAX_SWEEPS, row_scale=None, col_scale=None) -> Projection:
    """Compute the KL projection of support-aligned ``y`` and its dual scalings.

    ``budgets``/``caps`` override the instance's (the capped solver works in
    normalised money units).  ``row_scale``/``col_scale`` warm-start the dual;
    any values in ``(0, 1]`` are valid.  The residual combines constraint
    violation with the complementarity gap of the row multipliers.
    """
    y = np.asarray(y, dtype=float)
    B = inst.budgets if budgets is None else np.asarray(budgets, dtype=float)
    cap = inst.caps if caps is None else np.asarray(caps, dtype=float)
    if tol is None:
        tol = DEFAULT_RTOL * B.sum()
    rows, cols = inst.rows, inst.cols
    a = np.ones(inst.n) if row_scale is None else np.array(row_scale, dtype=float)
    c = np.ones(inst.m) if col_scale is None else np.array(col_scale, dtype=float)
    base = inst.row_sums(y * c[cols])
    residual = np.inf
    for sweep in range(1, max_sweeps + 1):
        a = _ratio_clip(B, base)
        c = _ratio_clip(cap, inst.column_sums(y * a[rows]))
        base = inst.row_sums(y * c[cols])
        spend = a * base
        over = np.max(spend - B, initial=0.0)
        # rows still scaled down must stay tight
        scaled = a < 1
        slack = np.minimum(B[scaled] - spend[scaled], -np.log(a[scaled]) * B.sum())
        residual = max(over, np.max(slack, initial=0.0))
        if residual <= tol:
            return Projection(y * a[rows] * c[cols], a, c, sweep, float(residual))
    raise ConvergenceError(
        f"KL projection did not converge in {max_sweeps} sweeps (residual {residual:.3g})",
        residual=float(residual),
    )


def kl_dykstra_project(b_raw, inst: Instance, tol=None,
                       max_sweeps=DEFAULT_MAX_SWEEPS) -> ContributionMatrix:
    """Project ``b_raw`` onto the feasible contributions of ``inst`` in KL divergence.

    Iterates until the largest constraint violation is at most ``tol``
    (default ``1e-10 * B``).
    """
    b_raw = np.asarray(b_raw, dtype=float)
    if b_raw.shape != (inst.nnz,):
        raise InstanceError("b_raw must be aligned with the instance support")
    if np.any(b_raw <= 0):
        raise InstanceError("b_raw must be strictly positive on the support")
    return ContributionMatrix(inst, dykstra_scalings(inst, b_raw, tol=tol,
                                                     max_sweeps=max_sweeps).b)


def kl_divergence(b, y) -> float:
    """Generalised KL ``sum b log(b/y) - b + y`` with ``0 log 0 = 0``."""
    b = np.asarray(b, dtype=float)
    y = np.asarray(y, dtype=float)
    pos = b > 0
    return float(np.sum(b[pos] * np.log(b[pos] / y[pos])) - b.sum() + y.sum())
