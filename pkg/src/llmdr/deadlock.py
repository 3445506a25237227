"""Deadlock analysis: detection windows, the rule-based analyst and its report types."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Protocol, Sequence

from .grid_map import Cell, chebyshev, manhattan
from .pathfind import DistanceField

INSPECTION_RADIUS = 4  # 9x9 square around each stuck agent
GROUP_DISTANCE = 2
FAR_GOAL_DISTANCE = 8


class Status(enum.Enum):
    NO_MOVEMENT = "no_movement"
    WANDERING = "wandering"
    NORMAL = "normal"
    ARRIVED = "arrived"

    @property
    def deadlocked(self) -> bool:
        return self in (Status.NO_MOVEMENT, Status.WANDERING)


class Solution(enum.Enum):
    LEADER = "leader"
    RADIATION = "radiation"


class Source(enum.Enum):
    RULE = "rule"
    LLM = "llm"


@dataclass(frozen=True)
class AgentLog:
    """One agent's row of a detection window."""

    agent_id: int
    goal: Cell
    positions: tuple[Cell, ...]

    @property
    def arrived(self) -> tuple[bool, ...]:
        return tuple(p == self.goal for p in self.positions)


@dataclass(frozen=True)
class DetectionWindow:
    length: int
    agents: tuple[AgentLog, ...]

    def __post_init__(self) -> None:
        if self.length < 2:
            raise ValueError("detection window needs at least 2 steps")
        for row in self.agents:
            if len(row.positions) != self.length:
                raise ValueError(f"agent {row.agent_id} has {len(row.positions)} positions, expected {self.length}")

    @classmethod
    def from_history(
        cls, history: Sequence[Sequence[Cell]], goals: Sequence[Cell], agents: Iterable[int]
    ) -> "DetectionWindow":
        """Window over ``history`` (one configuration per step) for the given agent ids."""
        rows = tuple(
            AgentLog(i, goals[i], tuple(cfg[i] for cfg in history)) for i in sorted(agents)
        )
        return cls(len(history), rows)

    def row(self, agent_id: int) -> AgentLog:
        for r in self.agents:
            if r.agent_id == agent_id:
                return r
        raise KeyError(agent_id)


@dataclass(frozen=True)
class DeadlockGroup:
    agent_ids: frozenset[int]
    solution: Solution

    def to_json(self) -> dict:
        return {"agent_id": sorted(self.agent_ids), "solution": self.solution.value}


@dataclass(frozen=True)
class AnalysisReport:
    groups: tuple[DeadlockGroup, ...]
    inspected_agents: frozenset[int]
    source: Source = Source.RULE
    provenance: str = ""

    def __post_init__(self) -> None:
        seen: set[int] = set()
        for g in self.groups:
            if not g.agent_ids:
                raise ValueError("empty deadlock group")
            if seen & g.agent_ids:
                raise ValueError(f"agents {sorted(seen & g.agent_ids)} appear in two groups")
            seen |= g.agent_ids

    @property
    def deadlocked(self) -> bool:
        return bool(self.groups)

    def to_json(self) -> list[dict]:
        return [g.to_json() for g in self.groups]

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    def same_verdict(self, other: "AnalysisReport") -> bool:
        return set(self.groups) == set(other.groups)


def select_inspection_set(
    history: Sequence[Sequence[Cell]], goals: Sequence[Cell], current: Sequence[Cell]
) -> frozenset[int]:
    """Agents never on their goal anywhere in ``history``, plus everyone within a 9x9 box of one.

    ``history`` is the execution plan including its starting configuration.
    """
    if not history:
        raise ValueError("empty execution plan")
    n = len(goals)
    stuck = [i for i in range(n) if all(cfg[i] != goals[i] for cfg in history)]
    if not stuck:
        return frozenset()
    found = set(stuck)
    for j in range(n):
        if j in found:
            continue
        if any(chebyshev(current[j], current[i]) <= INSPECTION_RADIUS for i in stuck):
            found.add(j)
    return frozenset(found)


def classify_agent(row: AgentLog, field: DistanceField) -> Status:
    positions = row.positions
    if len(positions) < 2:
        raise ValueError("window must span at least 2 steps")
    if positions[-1] == row.goal:
        return Status.ARRIVED
    if all(p == positions[0] for p in positions):
        return Status.NO_MOVEMENT
    first, last = field.dist(positions[0]), field.dist(positions[-1])
    if first is None or last is None or last >= first:
        return Status.WANDERING
    return Status.NORMAL


def group_deadlocked(
    statuses: Mapping[int, Status], positions: Mapping[int, Cell]
) -> list[frozenset[int]]:
    """Connected components of deadlocked agents within Manhattan 2, with nearby arrived agents attached."""
    stuck = sorted(i for i, s in statuses.items() if s.deadlocked)
    arrived = sorted(i for i, s in statuses.items() if s is Status.ARRIVED)
    parent = {i: i for i in stuck + arrived}

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(a: int, b: int) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    for x, a in enumerate(stuck):
        for b in stuck[x + 1:]:
            if manhattan(positions[a], positions[b]) <= GROUP_DISTANCE:
                union(a, b)
        for b in arrived:
            if manhattan(positions[a], positions[b]) <= GROUP_DISTANCE:
                union(a, b)

    comps: dict[int, set[int]] = {}
    for i in stuck:
        comps.setdefault(find(i), set()).add(i)
    for i in arrived:
        r = find(i)
        if r in comps:
            comps[r].add(i)
    return sorted((frozenset(c) for c in comps.values()), key=min)


def assign_solution(
    group: Iterable[int],
    positions: Mapping[int, Cell],
    goals: Mapping[int, Cell],
    deadlocked: Optional[Iterable[int]] = None,
) -> Solution:
    """Leader for an independently deadlocked agent or any far goal, else radiation.

    When ``deadlocked`` is given, a group counts as independent if exactly one
    of its members is deadlocked (the rest being attached arrived agents);
    otherwise the group must be a singleton.
    """
    members = list(group)
    if not members:
        raise ValueError("empty group")
    if deadlocked is None:
        stuck = members
    else:
        marked = set(deadlocked)
        stuck = [i for i in members if i in marked]
    if len(stuck) == 1 or len(members) == 1:
        return Solution.LEADER
    # a goal distance of exactly 8 is treated as far
    if any(manhattan(positions[i], goals[i]) >= FAR_GOAL_DISTANCE for i in members):
        return Solution.LEADER
    return Solution.RADIATION


def analyze_rule_based(
    window: DetectionWindow,
    fields: Sequence[DistanceField],
    inspected: Optional[Iterable[int]] = None,
) -> AnalysisReport:
    """Classify, group and assign a solution for every inspected agent in ``window``."""
    rows = {r.agent_id: r for r in window.agents}
    ids = frozenset(rows) if inspected is None else frozenset(inspected) & frozenset(rows)
    statuses = {i: classify_agent(rows[i], fields[i]) for i in ids}
    final = {i: rows[i].positions[-1] for i in ids}
    goals = {i: rows[i].goal for i in ids}
    stuck = {i for i, s in statuses.items() if s.deadlocked}
    groups = tuple(
        DeadlockGroup(g, assign_solution(g, final, goals, stuck))
        for g in group_deadlocked(statuses, final)
    )
    return AnalysisReport(groups, ids, Source.RULE, "rule")


class Analyst(Protocol):
    def analyze(self, window: DetectionWindow, fields: Sequence[DistanceField],
                inspected: frozenset[int]) -> AnalysisReport: ...


class RuleAnalyst:
    name = "rule"

    def analyze(self, window, fields, inspected):
        return analyze_rule_based(window, fields, inspected)
