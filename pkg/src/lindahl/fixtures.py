"""Small hand-checkable instances used throughout the tests and the CLI docs."""

import math

from .model import Instance

INF = math.inf


def personal_projects(budgets=(0.5, 0.5)) -> Instance:
    """Each agent likes exactly one project nobody else likes (uncapped)."""
    n = len(budgets)
    V = [[1.0 if i == j else 0.0 for j in range(n)] for i in range(n)]
    return Instance.from_dense(V, budgets)


def irrational() -> Instance:
    """Uncapped 4x3 instance whose equilibrium has x_2 = x_3 = (7 - sqrt 17) / 16."""
    V = [[1, 0, 0],
         [1, 0, 1],
         [1, 1, 0],
         [0, 1, 1]]
    return Instance.from_dense(V, [0.25] * 4)


IRRATIONAL_X2 = (7 - math.sqrt(17)) / 16


def underspend() -> Instance:
    """Two agents with personal projects; project 1 capped at 0.25.

    The unique zero-respecting equilibrium spends only 0.75 of the budget.
    """
    return Instance.from_dense([[1, 0], [0, 1]], [0.5, 0.5], caps=[0.25, INF])


def capped_nash() -> Instance:
    """Instance where the cap-constrained Nash optimum (3, 0, 0, 3) is not in the core."""
    V = [[1, 1, 0, 0],
         [1, 0, 1, 0],
         [0, 0, 0, 1]]
    return Instance.from_dense(V, [2, 2, 2], caps=[3, INF, INF, INF])


CAPPED_NASH_X = (3.0, 0.0, 0.0, 3.0)


def non_unique() -> Instance:
    """Cap-sufficient instance with a continuum of equilibria (1, 1 - g, g)."""
    V = [[1, 1, 0],
         [1, 0, 1]]
    return Instance.from_dense(V, [1, 1], caps=[1, INF, INF])


ALL = {
    "personal_projects": personal_projects,
    "irrational": irrational,
    "underspend": underspend,
    "capped_nash": capped_nash,
    "non_unique": non_unique,
}
