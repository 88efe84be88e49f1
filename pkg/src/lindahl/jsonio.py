"""JSON formats for instances, SPLC instances and results.

Native instance::

    {"budget": B,
     "agents": [{"id": "a", "budget": B_a, "valuations": {"p1": 2.0, ...}}, ...],
     "projects": [{"id": "p1", "cap": 3.0}, {"id": "p2", "cap": null}, ...]}

``cap: null`` (or a missing cap) means unbounded.  An SPLC instance replaces
``valuations`` by ``utilities``, mapping a project id to a list of
``[length, slope]`` segments.  Agent budgets may be omitted, giving equal
shares of ``budget``.

Floats are written in shortest round-trip form, so reloading is exact.
Infinite values are written as ``null`` for caps and as the string ``"inf"``
elsewhere.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .errors import ParseError
from .model import Instance
from .splc import SplcInstance, harmonize_segments


def to_jsonable(obj):
    """Recursively convert numpy values and non-finite floats for ``json.dumps``."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def dumps(obj) -> str:
    return json.dumps(to_jsonable(obj), indent=1, allow_nan=False)


def _load(source):
    if isinstance(source, (dict, list)):
        return source
    try:
        if isinstance(source, str) and source.lstrip().startswith("{"):
            return json.loads(source)
        with open(source, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno) from None


def _agents_and_budgets(d):
    try:
        B = float(d["budget"])
        agents = d["agents"]
    except (KeyError, TypeError, ValueError):
        raise ParseError("instance JSON needs 'budget' and 'agents'") from None
    if not agents:
        raise ParseError("instance has no agents")
    ids = [str(a.get("id", k + 1)) for k, a in enumerate(agents)]
    if len(set(ids)) != len(ids):
        raise ParseError("duplicate agent ids")
    if all("budget" in a for a in agents):
        budgets = np.array([float(a["budget"]) for a in agents])
    elif not any("budget" in a for a in agents):
        budgets = np.full(len(agents), B / len(agents))
    else:
        raise ParseError("either every agent or no agent must have a budget")
    return B, agents, ids, budgets


def _project_index(d, agents, key):
    if "projects" in d:
        projects = d["projects"]
        pids = [str(p["id"]) if isinstance(p, dict) else str(p) for p in projects]
    else:
        pids = sorted({str(p) for a in agents for p in a.get(key, {})})
        projects = pids
    if len(set(pids)) != len(pids):
        raise ParseError("duplicate project ids")
    return projects, pids, {p: k for k, p in enumerate(pids)}


def instance_from_json(source) -> Instance:
    """Load a native instance from a path, a JSON string or an already decoded dict."""
    d = _load(source)
    B, agents, ids, budgets = _agents_and_budgets(d)
    projects, pids, index = _project_index(d, agents, "valuations")
    caps = []
    for p in projects:
        cap = p.get("cap") if isinstance(p, dict) else None
        caps.append(math.inf if cap is None else float(cap))
    V = np.zeros((len(agents), len(pids)))
    for i, a in enumerate(agents):
        for p, v in a.get("valuations", {}).items():
            if str(p) not in index:
                raise ParseError(f"agent {ids[i]!r} values unknown project {p!r}")
            V[i, index[str(p)]] = float(v)
    return Instance.from_dense(V, budgets, caps, B, agent_ids=tuple(ids), project_ids=tuple(pids))


def instance_to_json(inst: Instance) -> dict:
    agents = []
    for i in range(inst.n):
        lo, hi = inst.indptr[i], inst.indptr[i + 1]
        agents.append({
            "id": inst.agent_ids[i],
            "budget": float(inst.budgets[i]),
            "valuations": {inst.project_ids[j]: float(v)
                           for j, v in zip(inst.indices[lo:hi], inst.data[lo:hi])},
        })
    projects = [{"id": pid, "cap": None if math.isinf(c) else float(c)}
                for pid, c in zip(inst.project_ids, inst.caps)]
    return {"budget": inst.total_budget, "agents": agents, "projects": projects}


def splc_from_json(source) -> SplcInstance:
    """Load an SPLC instance (see module docstring) and harmonise it."""
    d = _load(source)
    B, agents, ids, budgets = _agents_and_budgets(d)
    _, pids, index = _project_index(d, agents, "utilities")
    raw = {}
    for i, a in enumerate(agents):
        for p, segs in a.get("utilities", {}).items():
            if str(p) not in index:
                raise ParseError(f"agent {ids[i]!r} has a utility for unknown project {p!r}")
            try:
                raw[(i, index[str(p)])] = [(float(l), float(s)) for l, s in segs]
            except (TypeError, ValueError):
                raise ParseError(f"agent {ids[i]!r}, project {p!r}: segments must be [length, slope] pairs") from None
    return harmonize_segments(raw, budgets, B, agent_ids=ids, project_ids=pids, m=len(pids))


def splc_to_json(splc: SplcInstance) -> dict:
    agents = []
    for i in range(splc.n):
        utilities = {splc.project_ids[j]: [list(seg) for seg in f.segments]
                     for (ii, j), f in sorted(splc.functions.items()) if ii == i}
        agents.append({"id": splc.agent_ids[i], "budget": float(splc.budgets[i]),
                       "utilities": utilities})
    return {"budget": splc.total_budget, "agents": agents,
            "projects": [{"id": p} for p in splc.project_ids]}


def load_candidate(source, inst: Instance):
    """Read ``{"x": [...], "prices": [[...]]}`` (prices optional); also accepts solve output."""
    d = _load(source)
    try:
        x = np.array([float(v) for v in d["x"]])
    except (KeyError, TypeError, ValueError):
        raise ParseError("candidate needs an 'x' list of numbers") from None
    if x.shape != (inst.m,):
        raise ParseError(f"candidate x has {len(x)} entries, instance has {inst.m} projects")
    p = d.get("prices")
    if p is not None:
        try:
            p = np.array(p, dtype=float)
        except (TypeError, ValueError):
            raise ParseError("prices must be a list of numeric rows") from None
        if p.shape != (inst.n, inst.m):
            raise ParseError(f"prices must be {inst.n} x {inst.m}")
    return x, p
