import itertools
import json
import math

import numpy as np
import pytest

from lindahl import (Instance, audit_core, check_cap_sufficient, check_pareto, fixtures, recover_prices_capped,
                     rescale_valuations, solve_capped_native, verify_lindahl)
from lindahl.fixtures import CAPPED_NASH_X
from lindahl.jsonio import dumps
from lindahl.verify import LinearUtilities, _improvement_lp, demand_max_utility, find_objection

from _gen import random_cap_sufficient, random_capped

E = math.e


def solved(inst):
    r = rescale_valuations(inst)
    sol = solve_capped_native(r)
    return r, sol, recover_prices_capped(r, sol)


# -- demand -----------------------------------------------------------------------------


def test_demand_personal_projects():
    inst = fixtures.personal_projects()
    u, y = demand_max_utility(inst, 0, [1.0, 0.0])
    assert u == pytest.approx(0.5) and y.tolist() == [0.5, 0.0]


def test_demand_unbounded_when_free_and_uncapped():
    inst = Instance.from_dense([[1, 1]], [1.0])
    u, _ = demand_max_utility(inst, 0, [0.0, 1.0])
    assert u == math.inf


def test_demand_knapsack_trace_non_unique():
    inst = rescale_valuations(fixtures.non_unique())
    u, y = demand_max_utility(inst, 0, [0.5, 1.0, 0.0])
    assert y.tolist() == [1.0, 0.5, 0.0]
    assert u == pytest.approx(1.5 * E)


def grid_demand(inst, i, p, step=1e-2):
    V = inst.dense_valuations()[i]
    tops = [min(inst.caps[j], inst.budgets[i] / p[j] if p[j] > 0 else inst.caps[j])
            for j in range(inst.m)]
    axes = [np.append(np.arange(0, t, step), t) for t in tops]
    G = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    ok = G @ p <= inst.budgets[i] + 1e-12
    return float((G[ok] @ V).max())


def test_demand_matches_grid_search():
    rng = np.random.default_rng(41)
    for _ in range(20):
        m = int(rng.integers(2, 4))
        caps = rng.uniform(0.3, 1.5, m)
        caps[0] += 1.0
        inst = Instance.from_dense(rng.uniform(0.1, 3, (1, m)), [1.0], caps)
        p = rng.uniform(0.2, 2.0, m)
        u, y = demand_max_utility(inst, 0, p)
        g = grid_demand(inst, 0, p)
        assert u >= g - 1e-12
        assert u - g <= 0.05  # grid resolution
        assert y @ p <= 1.0 + 1e-12 and np.all(y <= inst.caps + 1e-12)


# -- Lindahl certificate ---------------------------------------------------------------


def test_underspend_equilibria():
    inst = fixtures.underspend()
    cert = verify_lindahl(inst, [0.25, 0.5], [[1, 0], [0, 1]])
    assert cert.passed
    other = verify_lindahl(inst, [0.25, 0.75], [[1, 1 / 3], [0, 2 / 3]])
    assert other.lindahl and not other.passed
    assert other.zero_respecting_violations == [(0, 1)]


@pytest.mark.parametrize("g", [0.0, 0.25, 0.5, 1.0])
def test_non_unique_family(g):
    cert = verify_lindahl(fixtures.non_unique(), [1, 1 - g, g], [[g, 1, 0], [1 - g, 0, 1]])
    assert cert.lindahl


def test_certificate_detects_each_failure():
    inst = fixtures.personal_projects()
    good = verify_lindahl(inst, [0.5, 0.5], np.eye(2))
    assert good.passed
    assert not verify_lindahl(inst, [0.5, 0.5], 2 * np.eye(2)).verdicts["affordability"]
    assert not verify_lindahl(inst, [0.25, 0.25], np.eye(2)).verdicts["utility_max"]
    assert not verify_lindahl(inst, [0.5, 0.5], 0.5 * np.eye(2)).verdicts["profit_max"]
    assert not verify_lindahl(inst, [0.7, 0.5], np.eye(2)).verdicts["feasible"]
    neg = verify_lindahl(inst, [0.5, 0.5], [[1, -0.1], [0, 1.1]])
    assert not neg.verdicts["nonnegative_prices"] and not neg.lindahl


def test_certificate_serialises_every_residual():
    inst, sol, p = solved(fixtures.capped_nash())
    cert = verify_lindahl(inst, sol.x, p)
    d = json.loads(dumps(cert.to_dict()))
    assert set(d) >= {"verdicts", "affordability_slack", "utility_gap", "profit_slack",
                      "profit_equality_residual", "zero_respecting_violations"}
    assert len(d["utility_gap"]) == inst.n


# -- Pareto -----------------------------------------------------------------------------


def test_underspend_pareto():
    inst = fixtures.underspend()
    rep = check_pareto(inst, [0.25, 0.5])
    assert not rep.optimal
    assert rep.dominating[0] == pytest.approx(0.25) and rep.dominating[1] == pytest.approx(0.75)
    assert check_pareto(inst, [0.25, 0.75]).optimal


def test_capped_solver_output_is_pareto_optimal():
    inst, sol, _ = solved(fixtures.capped_nash())
    assert check_pareto(inst, sol.x).optimal
    assert check_pareto(inst, sol.x, weak=True).optimal


def test_weak_pareto_allows_single_agent_gain():
    # moving spend to project 1 helps agent 1 and leaves agent 2 indifferent
    inst = Instance.from_dense([[1, 0], [1, 1]], [0.5, 0.5])
    x = [0.5, 0.5]
    assert not check_pareto(inst, x).optimal
    assert check_pareto(inst, x, weak=True).optimal


# -- core -------------------------------------------------------------------------------


def test_capped_nash_allocation_is_blocked():
    inst = fixtures.capped_nash()
    rep = audit_core(inst, CAPPED_NASH_X, max_size=3, mode="weak")
    assert rep.blocked and rep.found_blocking.coalition == (0, 1)
    z = rep.found_blocking.objection
    assert z.sum() <= 4 + 1e-9 and np.all(z <= inst.caps + 1e-9) and np.all(z >= -1e-9)
    u = inst.utilities(z)
    assert u[0] >= 3.5 - 1e-9 and u[1] >= 3.5 - 1e-9
    assert rep.verdict == "blocked"


def test_capped_solver_output_is_in_core():
    inst, sol, _ = solved(fixtures.capped_nash())
    for mode in ("weak", "strong"):
        rep = audit_core(inst, sol.x, max_size=3, mode=mode)
        assert not rep.blocked and rep.verdict == "core"
        assert rep.coalitions_checked == 7


def test_personal_projects_in_core_at_every_size():
    inst = fixtures.personal_projects((0.2, 0.3, 0.5))
    rep = audit_core(inst, [0.2, 0.3, 0.5], mode="strong")
    assert not rep.blocked and rep.coalitions_checked == 7


def test_singletons_are_fair_share_checks():
    inst = Instance.from_dense([[3, 1], [1, 3]], [0.5, 0.5])
    # agent 1 alone could buy 0.5 of project 1 for utility 1.5; x gives only 1.0
    x = [0.0, 1.0]
    rep = audit_core(inst, x, max_size=1, mode="strong")
    assert rep.blocked and rep.found_blocking.coalition == (0,)
    assert rep.found_blocking.gains[0] == pytest.approx(0.5 / 3, abs=1e-9)  # normalised by max v


def test_sampling_mode_is_labelled():
    inst, sol, _ = solved(random_cap_sufficient(np.random.default_rng(42), 6, 4))
    rep = audit_core(inst, sol.x, samples=40, seed=3)
    assert rep.sampled and rep.verdict == "no-blocking-found"
    assert rep.coalitions_checked <= 40


def test_audit_mode_validation():
    with pytest.raises(ValueError):
        audit_core(fixtures.personal_projects(), [0.5, 0.5], mode="strict")


def test_screen_never_hides_an_objection():
    rng = np.random.default_rng(43)
    for _ in range(25):
        inst = random_capped(rng, 4, 4)
        model = LinearUtilities(inst)
        # arbitrary feasible allocations, many of them blockable
        x = rng.dirichlet(np.ones(inst.m)) * inst.total_budget
        x = np.minimum(x, inst.caps)
        base = model.utilities(x)
        for size in range(1, inst.n + 1):
            for S in itertools.combinations(range(inst.n), size):
                for mode in ("weak", "strong"):
                    a = find_objection(model, np.array(S), base, mode, 1e-7, "simplex", True)
                    b = find_objection(model, np.array(S), base, mode, 1e-7, "simplex", False)
                    assert (a is None) == (b is None)


def test_sum_screen_matches_pivot_lps():
    rng = np.random.default_rng(44)
    for _ in range(25):
        inst = random_capped(rng, 4, 3)
        model = LinearUtilities(inst)
        x = np.minimum(rng.dirichlet(np.ones(inst.m)) * inst.total_budget, inst.caps)
        base = model.utilities(x)
        S = np.arange(inst.n)
        budget = inst.total_budget
        pivots = max(_improvement_lp(model, S, base, budget, "pivot", k)[0] for k in range(inst.n))
        total = _improvement_lp(model, S, base, budget, "sum")[0]
        # the best single gain is at most the best total gain and at least its 1/|S| share
        assert pivots <= total + 1e-9
        assert pivots >= total / inst.n - 1e-9


def test_certified_equilibria_are_pareto_and_in_core():
    rng = np.random.default_rng(45)
    for _ in range(15):
        inst, sol, p = solved(random_cap_sufficient(rng, 4, 4))
        assert verify_lindahl(inst, sol.x, p).passed
        assert check_pareto(inst, sol.x).optimal
        assert not audit_core(inst, sol.x, mode="strong").blocked


def test_non_cap_sufficient_equilibria_in_weak_core():
    rng = np.random.default_rng(46)
    seen = 0
    while seen < 10:
        inst = random_capped(rng, 4, 4)
        if check_cap_sufficient(inst).ok:
            continue
        seen += 1
        r, sol, p = solved(inst)
        assert verify_lindahl(r, sol.x, p).lindahl
        assert not audit_core(r, sol.x, mode="weak").blocked
        assert check_pareto(r, sol.x, weak=True).optimal
