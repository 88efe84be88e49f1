"""Generate the bundled synthetic Pabulib file ``src/lindahl/data/synthetic_city.pb``.

The file imitates a district-level approval election: 50 projects with
log-normal costs, 1000 distinct ballots drawn from a skewed popularity
profile, plus 300 voters who repeat one of those ballots.  Deterministic for
a fixed seed.

    python3 scripts/make_synthetic_pabulib.py [--seed 7] [--out PATH]
"""

import argparse
from collections import OrderedDict
from pathlib import Path

import numpy as np

from lindahl.pabulib import PabulibFile, parse_pabulib, serialize_pabulib

OUT = Path(__file__).resolve().parents[1] / "src" / "lindahl" / "data" / "synthetic_city.pb"


def generate(seed=7, m=50, distinct=1000, repeats=300, budget=2_500_000):
    rng = np.random.default_rng(seed)
    costs = np.clip(np.round(rng.lognormal(np.log(120_000), 0.8, m), -3), 5_000, 1_500_000)
    popularity = rng.dirichlet(np.full(m, 0.6))
    seen, ballots = set(), []
    while len(ballots) < distinct:
        k = int(rng.integers(1, 11))
        ballot = tuple(sorted(rng.choice(m, size=k, replace=False, p=popularity)))
        if ballot not in seen:
            seen.add(ballot)
            ballots.append(ballot)
    ballots += [ballots[int(rng.integers(distinct))] for _ in range(repeats)]
    order = rng.permutation(len(ballots))
    pids = [str(100 + j) for j in range(m)]
    meta = OrderedDict([
        ("description", "Synthetic approval election for tests and benchmarks"),
        ("country", "Nowhere"), ("unit", "Synthetic City"), ("instance", "2026"),
        ("num_projects", str(m)), ("num_votes", str(len(ballots))),
        ("budget", str(budget)), ("vote_type", "approval"), ("rule", "greedy"),
        ("min_length", "1"), ("max_length", "10"),
    ])
    projects = [{"project_id": pid, "cost": str(int(c)), "votes": "0", "name": f"Project {pid}"}
                for pid, c in zip(pids, costs)]
    votes = []
    for n, k in enumerate(order):
        for j in ballots[k]:
            projects[j]["votes"] = str(int(projects[j]["votes"]) + 1)
        votes.append({"voter_id": str(n + 1), "vote": ",".join(pids[j] for j in ballots[k])})
    pb = PabulibFile(meta, ["project_id", "cost", "votes", "name"], projects,
                     ["voter_id", "vote"], votes)
    return serialize_pabulib(pb)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", type=Path, default=OUT)
    args = ap.parse_args()
    text = generate(args.seed)
    parse_pabulib(text)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(text, encoding="utf-8")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
