"""Strategized PIBT: turn an analysis report into agent roles, priorities and action rankings."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

from .base_policy import ActionRanking, JointState, Policy
from .deadlock import AnalysisReport, Solution
from .grid_map import ACTIONS, Action, Cell, GridMap
from .pathfind import DistanceField, rank_actions_toward
from .pibt import JointMove, pibt_step, verify_joint_move


class Role(enum.IntEnum):
    # value doubles as the priority tier, lowest first
    LEAD = 0
    RADIATE = 1
    NON_DEADLOCK = 2
    YIELD = 3


@dataclass(frozen=True)
class RoleAssignment:
    roles: tuple[Role, ...]
    group_of: dict[int, int] = field(default_factory=dict)
    # deadlock center per Radiation group index
    centers: dict[int, tuple[float, float]] = field(default_factory=dict)

    def center_of(self, agent: int) -> Optional[tuple[float, float]]:
        g = self.group_of.get(agent)
        return None if g is None else self.centers.get(g)


@dataclass(frozen=True)
class StrategyAssignment:
    priorities: tuple[int, ...]
    rankings: tuple[ActionRanking, ...]


class EngineAnomaly(RuntimeError):
    """A strategized step produced an invalid joint move."""


def assign_roles(
    report: AnalysisReport, state: JointState, fields: Sequence[DistanceField]
) -> RoleAssignment:
    n = state.n_agents
    roles = [Role.NON_DEADLOCK] * n
    group_of: dict[int, int] = {}
    centers: dict[int, tuple[float, float]] = {}
    for gi, group in enumerate(report.groups):
        members = sorted(group.agent_ids)
        for i in members:
            if not 0 <= i < n:
                raise ValueError(f"group references unknown agent {i}")
            group_of[i] = gi
        if group.solution is Solution.LEADER:
            # farthest from goal leads; min() keeps the lowest id on ties
            lead = min(members, key=lambda i: (-fields[i].raw(state.positions[i]), i))
            for i in members:
                roles[i] = Role.LEAD if i == lead else Role.YIELD
        else:
            xs = [state.positions[i].x for i in members]
            ys = [state.positions[i].y for i in members]
            centers[gi] = (sum(xs) / len(members), sum(ys) / len(members))
            for i in members:
                roles[i] = Role.RADIATE
    return RoleAssignment(tuple(roles), group_of, centers)


def rank_actions_away(grid: GridMap, c: Cell, center: tuple[float, float]) -> ActionRanking:
    """Actions sorted by Euclidean distance of the resulting cell from ``center``, farthest first."""
    keys = []
    for a in ACTIONS:
        t = grid.successor(c, a)
        keys.append(math.inf if t is None else -math.hypot(t.x - center[0], t.y - center[1]))
    return tuple(sorted(ACTIONS, key=lambda a: keys[a]))


def yield_ranking(base: ActionRanking) -> ActionRanking:
    return (Action.STAY, *(a for a in base if a is not Action.STAY))


def build_rankings(
    roles: RoleAssignment,
    state: JointState,
    fields: Sequence[DistanceField],
    base: Sequence[ActionRanking],
    grid: Optional[GridMap] = None,
) -> list[ActionRanking]:
    if grid is None and fields:
        grid = fields[0].grid
    out = []
    for i, role in enumerate(roles.roles):
        if role is Role.LEAD:
            out.append(rank_actions_toward(fields[i], state.positions[i]))
        elif role is Role.RADIATE:
            out.append(rank_actions_away(grid, state.positions[i], roles.center_of(i)))
        elif role is Role.YIELD:
            out.append(yield_ranking(base[i]))
        else:
            out.append(tuple(base[i]))
    return out


def build_priorities(
    roles: RoleAssignment, state: JointState, fields: Sequence[DistanceField]
) -> tuple[int, ...]:
    """Agent ids from highest to lowest priority."""

    def key(i: int):
        role = roles.roles[i]
        if role is Role.LEAD:
            return (role, -fields[i].raw(state.positions[i]), i)
        if role is Role.RADIATE:
            cx, cy = roles.center_of(i)
            p = state.positions[i]
            return (role, -math.hypot(p.x - cx, p.y - cy), i)
        return (role, 0, i)

    return tuple(sorted(range(state.n_agents), key=key))


def strategize(
    report: AnalysisReport,
    state: JointState,
    fields: Sequence[DistanceField],
    base: Sequence[ActionRanking],
) -> StrategyAssignment:
    roles = assign_roles(report, state, fields)
    return StrategyAssignment(
        build_priorities(roles, state, fields),
        tuple(build_rankings(roles, state, fields, base)),
    )


@dataclass
class ResolutionStep:
    state: JointState  # configuration after the step
    move: JointMove
    priorities: tuple[int, ...]
    rankings: tuple[ActionRanking, ...]


def iter_resolution(
    report: AnalysisReport,
    state: JointState,
    fields: Sequence[DistanceField],
    policy: Policy,
    grid: GridMap,
) -> Iterator[ResolutionStep]:
    """Endless strategized PIBT steps; groups stay fixed, roles and centers follow live positions."""
    if not report.groups:
        raise ValueError("resolution needs a report with at least one deadlock group")
    while True:
        base = policy.preferences(state, grid, fields)
        strategy = strategize(report, state, fields, base)
        move = pibt_step(state, strategy.rankings, strategy.priorities, grid)
        conflicts = verify_joint_move(state, move, grid)
        if conflicts:
            raise EngineAnomaly(f"step {state.step}: {conflicts}")
        state = JointState(move.apply(state.positions), state.goals, state.step + 1)
        yield ResolutionStep(state, move, strategy.priorities, strategy.rankings)


def resolve_deadlock(
    report: AnalysisReport,
    state: JointState,
    fields: Sequence[DistanceField],
    policy: Policy,
    epl: int,
    grid: GridMap,
) -> list[JointState]:
    """Run ``epl`` strategized steps and return the visited states (excluding ``state``)."""
    if epl < 1:
        raise ValueError("epl must be at least 1")
    out = []
    for step in iter_resolution(report, state, fields, policy, grid):
        out.append(step.state)
        if len(out) == epl:
            break
    return out
