import math

import numpy as np
import pytest

from lindahl import (Instance, ZeroUtilityError, convergence_bound, eg_objective, fixtures,
                     md_step, pr_step, recover_prices_uncapped, run_pr, shmyrev_gradient,
                     shmyrev_objective, verify_lindahl)
from lindahl.dynamics import DynamicsState, initial_state
from lindahl.fixtures import IRRATIONAL_X2

from _gen import random_uncapped


def state_from_x(inst, x):
    """PR state whose implied allocation is ``x`` (agents spend proportionally to x on liked projects)."""
    x = np.asarray(x, dtype=float)
    w = x[inst.cols]
    b = inst.budgets[inst.rows] * w / inst.row_sums(w)[inst.rows]
    return DynamicsState(inst, b, np.asarray(x, dtype=float), 0)


def test_pr_step_personal_projects():
    inst = fixtures.personal_projects()
    nxt = pr_step(state_from_x(inst, [0.9, 0.1]))
    assert np.allclose(nxt.x, [0.5, 0.5], atol=1e-15)
    again = pr_step(nxt)
    assert np.allclose(again.x, [0.5, 0.5], atol=1e-15)


def test_pr_step_single_agent_arithmetic():
    inst = Instance.from_dense([[2, 1]], [1.0])
    st = DynamicsState(inst, np.array([0.5, 0.5]), np.array([0.5, 0.5]), 0)
    nxt = pr_step(st)
    assert np.allclose(nxt.x, [2 / 3, 1 / 3], atol=1e-15)
    assert np.allclose(md_step(st).x, [2 / 3, 1 / 3], atol=1e-15)


def test_md_step_personal_projects():
    inst = fixtures.personal_projects()
    assert np.allclose(md_step(state_from_x(inst, [0.9, 0.1])).x, [0.5, 0.5], atol=1e-15)


def test_pr_step_zero_utility_names_agent():
    inst = Instance.from_dense([[1, 0], [0, 1]], [0.5, 0.5])
    st = DynamicsState(inst, np.array([0.5, 0.5]), np.array([1.0, 0.0]), 0)
    with pytest.raises(ZeroUtilityError) as err:
        pr_step(st)
    assert err.value.agent == 1


def test_pr_and_md_agree_on_random_states():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(50):
        inst = random_uncapped(rng)
        b = rng.random(inst.nnz) + 1e-3
        b *= (inst.budgets / inst.row_sums(b))[inst.rows]
        st = DynamicsState(inst, b, inst.column_sums(b), 0)
        worst = max(worst, np.max(np.abs(pr_step(st).b - md_step(st).b)))
    assert worst <= 1e-12


def test_budget_conservation_and_positive_x():
    rng = np.random.default_rng(12)
    inst = random_uncapped(rng, 6, 7)
    st = initial_state(inst)
    for _ in range(200):
        st = pr_step(st)
        assert abs(st.x.sum() - inst.total_budget) <= 1e-12 * inst.total_budget
        assert np.all(st.x[inst.supported] > 0)
        assert np.allclose(inst.row_sums(st.b), inst.budgets, rtol=1e-12)


# -- run_pr ---------------------------------------------------------------------------


def test_run_pr_irrational():
    res = run_pr(fixtures.irrational())
    assert res.converged
    assert abs(res.x[1] - IRRATIONAL_X2) <= 1e-6 and abs(res.x[2] - IRRATIONAL_X2) <= 1e-6


def test_run_pr_personal_projects():
    res = run_pr(fixtures.personal_projects((0.3, 0.7)))
    assert np.allclose(res.x, [0.3, 0.7], atol=1e-12)


def test_run_pr_flags_bound_only_and_attaches_bound():
    res = run_pr(fixtures.irrational(), max_iters=3)
    assert res.status == "bound-only"
    assert res.gap_bound == pytest.approx(convergence_bound(fixtures.irrational(), 3))


def test_run_pr_warm_start_validation():
    inst = fixtures.irrational()
    with pytest.raises(Exception):
        run_pr(inst, init=np.ones(inst.nnz))


def test_run_pr_trace_is_monotone_and_exports_csv():
    res = run_pr(fixtures.irrational(), max_iters=50)
    f = np.array(res.trace.f)
    assert np.all(np.diff(f) <= 1e-10)
    text = res.trace.to_csv()
    assert text.splitlines()[0] == "t,f,eg_objective,x_change,bound"
    assert len(text.splitlines()) == len(res.trace) + 1


def nash_grid_max(inst, step=1e-3):
    """Brute-force maximiser of the EG objective over the simplex {x >= 0, sum x = B}."""
    m, B = inst.m, inst.total_budget
    k = int(round(1 / step))
    V = inst.dense_valuations()
    if m == 2:
        a = np.arange(k + 1) / k * B
        X = np.stack([a, B - a], axis=1)
    elif m == 3:
        i, j = np.meshgrid(np.arange(k + 1), np.arange(k + 1), indexing="ij")
        keep = i + j <= k
        X = np.stack([i[keep], j[keep], k - i[keep] - j[keep]], axis=1) / k * B
    elif m == 4:
        i, j, l = np.meshgrid(*(np.arange(k + 1),) * 3, indexing="ij")
        keep = i + j + l <= k
        X = np.stack([i[keep], j[keep], l[keep], k - i[keep] - j[keep] - l[keep]], axis=1) / k * B
    else:
        raise ValueError
    U = X @ V.T
    with np.errstate(divide="ignore"):
        vals = np.log(U) @ inst.budgets
    best = int(np.argmax(vals))
    return X[best], float(vals[best])


def window_grid_max(inst, center, step=1e-3, radius=20):
    """Best EG value on the step-``step`` simplex grid within ``radius`` steps of ``center``."""
    B = inst.total_budget
    k = int(round(1 / step))
    c = np.round(np.asarray(center) / B * k).astype(int)
    offs = np.arange(-radius, radius + 1)
    grids = np.meshgrid(*(offs,) * (inst.m - 1), indexing="ij")
    head = np.stack([g.ravel() for g in grids], axis=1) + c[:-1]
    last = k - head.sum(axis=1)
    pts = np.column_stack([head, last])
    pts = pts[(pts >= 0).all(axis=1)]
    X = pts / k * B
    with np.errstate(divide="ignore"):
        vals = np.log(X @ inst.dense_valuations().T) @ inst.budgets
    best = int(np.argmax(vals))
    return X[best], float(vals[best])


def refine(inst, x, step):
    """Coordinate-pair local search around a grid point with shrinking steps."""
    best = eg_objective(inst, x)
    while step > 1e-9:
        improved = False
        for a in range(inst.m):
            for c in range(inst.m):
                if a == c:
                    continue
                y = x.copy()
                d = min(step, y[c])
                y[a] += d
                y[c] -= d
                val = eg_objective(inst, y)
                if val > best:
                    x, best, improved = y, val, True
        if not improved:
            step /= 2
    return x, best


def test_run_pr_matches_nash_grid_on_random_3x4():
    rng = np.random.default_rng(5)
    for _ in range(3):
        inst = Instance.from_dense(rng.uniform(0.1, 3, (3, 4)), [1 / 3] * 3)
        res = run_pr(inst)
        xg, _ = nash_grid_max(inst, step=2e-2)
        xf, vf = window_grid_max(inst, xg, step=1e-3)
        xr, vr = refine(inst, xf, 1e-3)
        assert vr >= vf
        assert eg_objective(inst, res.x) >= vr - 1e-9
        assert np.max(np.abs(res.x - xr)) <= 1e-3


def test_shmyrev_optimality_against_perturbations():
    inst = fixtures.irrational()
    res = run_pr(inst)
    f_star = shmyrev_objective(inst, res.b.values)
    rng = np.random.default_rng(3)
    for _ in range(1000):
        b = res.b.values * np.exp(rng.normal(0, 0.05, inst.nnz))
        b *= (inst.budgets / inst.row_sums(b))[inst.rows]
        assert f_star <= shmyrev_objective(inst, b) + 1e-12


def test_eg_limit_beats_random_feasible_points():
    inst = fixtures.irrational()
    x = run_pr(inst).x
    best = eg_objective(inst, x)
    rng = np.random.default_rng(4)
    X = rng.dirichlet(np.ones(inst.m), 10_000) * inst.total_budget
    with np.errstate(divide="ignore"):
        vals = np.log(X @ inst.dense_valuations().T) @ inst.budgets
    assert best >= vals.max()


# -- objective, bound, prices ---------------------------------------------------------


def test_shmyrev_objective_examples():
    inst = fixtures.personal_projects()
    assert shmyrev_objective(inst, [0.5, 0.5]) == 0.0
    one = Instance.from_dense([[math.e, math.e]], [1.0])
    assert shmyrev_objective(one, [0.5, 0.5]) == pytest.approx(-1.0, abs=1e-15)


def test_shmyrev_objective_zero_entries():
    inst = fixtures.irrational()
    b = np.zeros(inst.nnz)
    b[inst.indptr[:-1]] = inst.budgets
    assert math.isfinite(shmyrev_objective(inst, b))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    inst = random_uncapped(rng, 4, 5)
    b = rng.uniform(0.05, 0.3, inst.nnz)
    g = shmyrev_gradient(inst, b)
    h = 1e-6
    fd = np.array([(shmyrev_objective(inst, b + h * e) - shmyrev_objective(inst, b - h * e)) / (2 * h)
                   for e in np.eye(inst.nnz)])
    assert np.max(np.abs(fd - g)) <= 1e-6 * max(1.0, np.max(np.abs(g)))


def test_convergence_bound_examples():
    n, m = 4, 3
    inst = Instance.from_dense(np.ones((n, m)), [1 / n] * n)
    assert convergence_bound(inst, 7) == pytest.approx(math.log(n * m) / 7)
    assert convergence_bound(Instance.from_dense([[1.0]], [1.0]), 5) == 0.0
    two = Instance.from_dense(np.ones((2, 4)), [0.5, 0.5])
    assert convergence_bound(two, 10) == pytest.approx(math.log(8) / 10)
    with pytest.raises(ValueError):
        convergence_bound(two, 0)


def test_eg_objective_examples():
    inst = fixtures.personal_projects()
    assert eg_objective(inst, [0.5, 0.5]) == pytest.approx(math.log(0.5))
    assert eg_objective(inst, [1.0, 0.0]) == -math.inf


def test_recover_prices_uncapped_examples():
    p = recover_prices_uncapped(fixtures.personal_projects(), [0.5, 0.5]).p
    assert np.allclose(p, np.eye(2))
    one = Instance.from_dense([[2, 1]], [1.0])
    p = recover_prices_uncapped(one, [1.0, 0.0]).p
    assert np.allclose(p, [[1.0, 0.5]])
    with pytest.raises(ZeroUtilityError):
        recover_prices_uncapped(fixtures.personal_projects(), [1.0, 0.0])


def test_irrational_limit_is_certified():
    inst = fixtures.irrational()
    x = run_pr(inst).x
    cert = verify_lindahl(inst, x, recover_prices_uncapped(inst, x), tol=1e-6)
    assert cert.passed
