"""Reader and writer for Pabulib participatory-budgeting files.

A file has three sections headed by the lines ``META``, ``PROJECTS`` and
``VOTES``.  The first row after each header names the columns; fields are
separated by semicolons.  META rows are ``key;value`` pairs and must include
``budget``.  PROJECTS needs ``project_id`` and ``cost``; VOTES needs
``voter_id`` and ``vote`` (comma-separated project ids), optionally ``points``
aligned with ``vote``.
"""

from __future__ import annotations

import csv
import io
import logging
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError, ParseError
from .model import DEFAULT_RESCALE_TARGET, Instance, rescale_valuations

log = logging.getLogger(__name__)

SECTIONS = ("META", "PROJECTS", "VOTES")
SUPPORTED_VOTE_TYPES = ("approval", "cumulative")


@dataclass
class PabulibFile:
    meta: "OrderedDict[str, str]"
    project_columns: list
    projects: list                    # dicts keyed by column name
    vote_columns: list
    votes: list
    lines: dict = field(default_factory=dict, repr=False)   # (section, row index) -> line

    @property
    def budget(self) -> float:
        return float(self.meta["budget"])

    @property
    def vote_type(self) -> str:
        return self.meta.get("vote_type", "approval").strip().lower()

    @property
    def project_ids(self) -> list:
        return [p["project_id"] for p in self.projects]

    def ballot(self, k) -> list:
        v = self.votes[k]["vote"].strip()
        return [s.strip() for s in v.split(",")] if v else []

    def points(self, k) -> list | None:
        raw = self.votes[k].get("points")
        if raw is None:
            return None
        raw = raw.strip()
        return [float(s) for s in raw.split(",")] if raw else []


def _split(line: str, lineno: int) -> list:
    try:
        return next(csv.reader([line], delimiter=";"))
    except (csv.Error, StopIteration) as exc:
        raise ParseError(f"malformed row: {exc}", lineno) from None


def parse_pabulib(text: str) -> PabulibFile:
    """Parse Pabulib text; errors carry the offending line number."""
    if text.startswith("﻿"):
        text = text[1:]
    sections: dict = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        head = raw.strip()
        if head in SECTIONS:
            if head in sections:
                raise ParseError(f"duplicate section {head}", lineno)
            current = head
            sections[head] = {"header": None, "rows": [], "line": lineno}
            continue
        if current is None:
            raise ParseError("content before the META section", lineno)
        fields = [f.strip() for f in _split(raw, lineno)]
        sec = sections[current]
        if sec["header"] is None:
            sec["header"] = fields
            sec["header_line"] = lineno
            continue
        if len(fields) != len(sec["header"]):
            raise ParseError(
                f"{current} row has {len(fields)} fields, header has {len(sec['header'])}", lineno)
        sec["rows"].append((lineno, dict(zip(sec["header"], fields))))
    for name in SECTIONS:
        if name not in sections:
            raise ParseError(f"missing section {name}")
        if sections[name]["header"] is None:
            raise ParseError(f"section {name} has no column header", sections[name]["line"])

    meta = OrderedDict()
    mh = sections["META"]["header"]
    if len(mh) != 2:
        raise ParseError("META header must have two columns", sections["META"]["header_line"])
    for lineno, row in sections["META"]["rows"]:
        key, value = row[mh[0]], row[mh[1]]
        if key in meta:
            raise ParseError(f"duplicate META key {key!r}", lineno)
        meta[key] = value
    if "budget" not in meta:
        raise ParseError("META has no budget")
    try:
        budget = float(meta["budget"])
    except ValueError:
        raise ParseError(f"budget is not a number: {meta['budget']!r}") from None
    if not budget > 0:
        raise ParseError("budget must be positive")

    lines = {}
    ph = sections["PROJECTS"]["header"]
    for col in ("project_id", "cost"):
        if col not in ph:
            raise ParseError(f"PROJECTS lacks a {col} column", sections["PROJECTS"]["header_line"])
    projects, seen = [], set()
    for k, (lineno, row) in enumerate(sections["PROJECTS"]["rows"]):
        pid = row["project_id"]
        if pid in seen:
            raise ParseError(f"duplicate project id {pid!r}", lineno)
        seen.add(pid)
        try:
            cost = float(row["cost"])
        except ValueError:
            raise ParseError(f"cost is not a number: {row['cost']!r}", lineno) from None
        if not cost > 0:
            raise ParseError(f"project {pid!r} has non-positive cost", lineno)
        projects.append(row)
        lines[("PROJECTS", k)] = lineno

    vh = sections["VOTES"]["header"]
    for col in ("voter_id", "vote"):
        if col not in vh:
            raise ParseError(f"VOTES lacks a {col} column", sections["VOTES"]["header_line"])
    votes, voters = [], set()
    for k, (lineno, row) in enumerate(sections["VOTES"]["rows"]):
        vid = row["voter_id"]
        if vid in voters:
            raise ParseError(f"duplicate voter id {vid!r}", lineno)
        voters.add(vid)
        ballot = [s.strip() for s in row["vote"].split(",")] if row["vote"].strip() else []
        for pid in ballot:
            if pid not in seen:
                raise ParseError(f"vote references unknown project {pid!r}", lineno)
        if len(set(ballot)) != len(ballot):
            raise ParseError("a project appears twice in one vote", lineno)
        if "points" in row:
            pts = row["points"].strip()
            pts = pts.split(",") if pts else []
            if len(pts) != len(ballot):
                raise ParseError("points do not align with vote", lineno)
            for p in pts:
                try:
                    if float(p) < 0:
                        raise ValueError
                except ValueError:
                    raise ParseError(f"bad points entry {p!r}", lineno) from None
        votes.append(row)
        lines[("VOTES", k)] = lineno
    return PabulibFile(meta, ph, projects, vh, votes, lines)


def serialize_pabulib(pb: PabulibFile) -> str:
    """Canonical text: sections in order, ``\\n`` line ends, minimal quoting."""
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=";", lineterminator="\n")
    buf.write("META\n")
    w.writerow(["key", "value"])
    for k, v in pb.meta.items():
        w.writerow([k, v])
    buf.write("PROJECTS\n")
    w.writerow(pb.project_columns)
    for row in pb.projects:
        w.writerow([row.get(c, "") for c in pb.project_columns])
    buf.write("VOTES\n")
    w.writerow(pb.vote_columns)
    for row in pb.votes:
        w.writerow([row.get(c, "") for c in pb.vote_columns])
    return buf.getvalue()


def read_pabulib(path) -> PabulibFile:
    with open(path, encoding="utf-8") as fh:
        return parse_pabulib(fh.read())


def to_instance(pb: PabulibFile, rescale_target: float | None = DEFAULT_RESCALE_TARGET,
                dedup: bool = False) -> Instance:
    """Build a capped instance: voters are agents with ``B_i = B / n``, caps are costs.

    Approval ballots value every approved project at the rescale target.
    Cumulative ballots are normalised to sum 1 per voter and then rescaled.
    Voters without approvals are dropped with a warning; projects nobody
    approves are dropped.  ``dedup`` merges identical ballots into one agent
    with the pooled budget.
    """
    vtype = pb.vote_type
    if vtype not in SUPPORTED_VOTE_TYPES:
        raise ParseError(f"vote_type {vtype!r} is not supported (only approval and cumulative)")
    pid = {p: k for k, p in enumerate(pb.project_ids)}
    ballots, voter_ids = [], []
    for k, row in enumerate(pb.votes):
        ballot = pb.ballot(k)
        if vtype == "cumulative":
            pts = pb.points(k)
            if pts is None:
                raise ParseError("cumulative ballots need a points column", pb.lines.get(("VOTES", k)))
            weights = dict(zip(ballot, pts))
            weights = {p: w for p, w in weights.items() if w > 0}
            total = sum(weights.values())
            weights = {p: w / total for p, w in weights.items()}
        else:
            weights = {p: 1.0 for p in ballot}
        if not weights:
            log.warning("voter %s approves nothing and is dropped", row["voter_id"])
            continue
        ballots.append(tuple(sorted((pid[p], w) for p, w in weights.items())))
        voter_ids.append(row["voter_id"])
    if not ballots:
        raise ParseError("no voter approves any project")
    n = len(ballots)
    B = pb.budget
    if dedup:
        groups: "OrderedDict[tuple, list]" = OrderedDict()
        for ballot, vid in zip(ballots, voter_ids):
            groups.setdefault(ballot, []).append(vid)
        ballots = list(groups)
        counts = np.array([len(v) for v in groups.values()], dtype=float)
        agent_ids = tuple(v[0] if len(v) == 1 else f"{v[0]}+{len(v) - 1}" for v in groups.values())
    else:
        counts = np.ones(n)
        agent_ids = tuple(voter_ids)
    budgets = counts * (B / n)
    m_all = len(pb.projects)
    V = np.zeros((len(ballots), m_all))
    for i, ballot in enumerate(ballots):
        for j, w in ballot:
            V[i, j] = w
    keep = V.max(axis=0) > 0
    dropped = [pb.project_ids[j] for j in np.flatnonzero(~keep)]
    if dropped:
        log.info("dropping %d projects nobody supports", len(dropped))
    costs = np.array([float(pb.projects[j]["cost"]) for j in range(m_all)])[keep]
    if costs.sum() < B:
        raise InfeasibleError(
            f"supported projects cost {float(costs.sum())!r} in total, less than the budget {B!r}; "
            "fund them all")
    meta = {
        "source": "pabulib",
        "vote_type": vtype,
        "budget_str": pb.meta["budget"],
        "cost_str": {pb.project_ids[j]: pb.projects[j]["cost"] for j in np.flatnonzero(keep)},
        "voters": n,
        "dropped_projects": dropped,
        "ballot_weights": counts.astype(int).tolist() if dedup else None,
    }
    inst = Instance.from_dense(V[:, keep], budgets, costs, B, agent_ids=agent_ids,
                               project_ids=tuple(pb.project_ids[j] for j in np.flatnonzero(keep)),
                               meta=meta)
    if rescale_target is not None:
        inst = rescale_valuations(inst, rescale_target)
    return inst
