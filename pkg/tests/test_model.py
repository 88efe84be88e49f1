import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lindahl import (InfeasibleError, Instance, InstanceError, check_cap_sufficient,
                     feasibility_report, fixtures, rescale_valuations, solve_capped_native)
from lindahl.model import as_prices

from _gen import random_capped

E = math.e


def test_from_dense_builds_sorted_sparse_rows():
    inst = Instance.from_dense([[0, 2, 1], [3, 0, 0]], [0.5, 0.5], [1, None, math.inf])
    assert inst.n == 2 and inst.m == 3 and inst.nnz == 3
    assert list(inst.indices) == [1, 2, 0]
    assert list(inst.rows) == [0, 0, 1]
    assert np.isinf(inst.caps[1]) and np.isinf(inst.caps[2])
    assert inst.dense_valuations().tolist() == [[0, 2, 1], [3, 0, 0]]


def test_instance_is_immutable():
    inst = fixtures.irrational()
    with pytest.raises(ValueError):
        inst.budgets[0] = 3.0


@pytest.mark.parametrize("kwargs", [
    dict(valuations=[[1, -1]], budgets=[1]),
    dict(valuations=[[1, 1]], budgets=[0]),
    dict(valuations=[[1, 1]], budgets=[1], caps=[1, 0]),
    dict(valuations=[[1, 1]], budgets=[1, 1]),
    dict(valuations=[[1, 1]], budgets=[1], total_budget=2),
])
def test_invalid_instances_are_rejected(kwargs):
    with pytest.raises(InstanceError):
        Instance.from_dense(**kwargs)


def test_caps_below_budget_are_infeasible():
    with pytest.raises(InfeasibleError):
        Instance.from_dense([[1, 1]], [1.0], [0.3, 0.3])


def test_budgets_sum_to_total():
    rng = np.random.default_rng(0)
    for _ in range(20):
        inst = random_capped(rng, 5, 4, total=3.7)
        assert abs(inst.budgets.sum() - inst.total_budget) <= 1e-12 * inst.total_budget


# -- cap sufficiency ------------------------------------------------------------------


def test_underspend_is_not_cap_sufficient():
    cs = check_cap_sufficient(fixtures.underspend())
    assert not cs.ok
    assert cs.agent == 0 and cs.cap_sum == 0.25 and cs.friends_budget == 0.5


def test_uncapped_instances_are_cap_sufficient():
    assert check_cap_sufficient(fixtures.irrational()).ok
    assert check_cap_sufficient(fixtures.personal_projects()).ok


def test_non_unique_is_cap_sufficient():
    assert check_cap_sufficient(fixtures.non_unique()).ok


def test_agent_without_liked_projects_fails_cap_sufficiency():
    inst = Instance.from_dense([[1, 1], [0, 0]], [0.5, 0.5])
    cs = check_cap_sufficient(inst)
    assert not cs.ok and cs.agent == 1


def test_caps_covering_budget_for_everyone_suffice():
    rng = np.random.default_rng(1)
    for _ in range(30):
        inst = random_capped(rng, 4, 4)
        liked_caps = np.bincount(inst.rows, weights=inst.caps[inst.cols], minlength=inst.n)
        if np.all(liked_caps >= inst.total_budget):
            assert check_cap_sufficient(inst).ok


# -- rescaling ------------------------------------------------------------------------


def test_rescale_examples():
    inst = Instance.from_dense([[1, 0, 4], [2, 2, 0]], [0.5, 0.5])
    r = rescale_valuations(inst, E)
    V = r.dense_valuations()
    assert np.allclose(V[0], [E, 0, 4 * E], rtol=1e-15)
    assert np.allclose(V[1], [E, E, 0], rtol=1e-15)
    assert np.allclose(r.valuation_scale, [E, E / 2])
    assert np.allclose(r.raw_valuations(), inst.dense_valuations())


def test_rescale_rejects_small_target():
    with pytest.raises(InstanceError):
        rescale_valuations(fixtures.irrational(), 1.0)


def test_rescale_leaves_zero_agents_untouched():
    inst = Instance.from_dense([[1, 2], [0, 0]], [0.5, 0.5])
    r = rescale_valuations(inst)
    assert r.valuation_scale[1] == 1.0
    assert r.dense_valuations()[1].tolist() == [0, 0]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 100), min_size=1, max_size=6), st.floats(1.01, 50))
def test_rescale_is_idempotent(row, target):
    inst = Instance.from_dense([row], [1.0])
    once = rescale_valuations(inst, target)
    twice = rescale_valuations(once, target)
    assert np.max(np.abs(once.data - twice.data) / once.data) <= 1e-15
    assert once.data.min() == target


def test_approval_row_rescaled_and_scale_invariant_solution():
    inst = Instance.from_dense([[1, 0, 1], [0, 1, 1]], [0.5, 0.5], [0.3, math.inf, 0.6])
    r = rescale_valuations(inst, E)
    assert np.allclose(r.dense_valuations()[0], [E, 0, E])
    scaled = Instance.from_dense(10 * inst.dense_valuations(), inst.budgets, inst.caps)
    # already above 1 after scaling by 10, so it can be solved without rescaling
    x1 = solve_capped_native(r).x
    x2 = solve_capped_native(scaled).x
    assert np.max(np.abs(x1 - x2)) <= 1e-6


# -- feasibility ----------------------------------------------------------------------


def test_feasibility_examples():
    inst = fixtures.underspend()
    assert feasibility_report(inst, [0.25, 0.5]).feasible
    rep = feasibility_report(inst, [1.25, 0.0])
    kinds = {v.kind: v.magnitude for v in rep.violations}
    assert kinds["cap"] == pytest.approx(1.0)
    assert kinds["budget"] == pytest.approx(0.25)
    assert feasibility_report(inst, [0.25, 0.75]).feasible
    neg = feasibility_report(inst, [-0.1, 0.5])
    assert [v.kind for v in neg.violations] == ["negative"]


def test_feasibility_dimension_mismatch():
    with pytest.raises(InstanceError):
        feasibility_report(fixtures.underspend(), [0.1, 0.2, 0.3])


def test_restrict_projects_keeps_mapping():
    inst = Instance.from_dense([[1, 0, 2], [0, 0, 3]], [0.5, 0.5])
    sub, keep = inst.drop_unsupported()
    assert list(keep) == [0, 2]
    assert sub.m == 2 and sub.project_ids == ("1", "3")


def test_as_prices_accepts_dense_and_price_system():
    from lindahl import PriceSystem

    inst = fixtures.non_unique()
    ps = PriceSystem.from_support(inst, [0.5, 1.0, 0.5, 1.0])
    assert as_prices(ps).tolist() == [[0.5, 1.0, 0.0], [0.5, 0.0, 1.0]]
    assert np.allclose(ps.column_sums, [1, 1, 1])
