"""One-step PIBT (priority inheritance with backtracking) and a joint-move checker."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .base_policy import ActionRanking, JointState
from .grid_map import Action, Cell, GridMap, apply_action, manhattan

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class JointMove:
    actions: tuple[Action, ...]
    # agents whose top-level search failed and were parked without reservation
    anomalies: tuple[int, ...] = ()

    def apply(self, positions: Sequence[Cell]) -> tuple[Cell, ...]:
        return tuple(apply_action(c, a) for c, a in zip(positions, self.actions))


@dataclass(frozen=True)
class Conflict:
    kind: str  # "vertex" | "edge" | "obstacle" | "unreachable"
    agents: tuple[int, ...]
    where: tuple = field(default=())

    def __str__(self) -> str:
        return f"{self.kind} conflict agents={list(self.agents)} at {self.where}"


def check_priorities(priorities: Sequence[int], n: int) -> None:
    if sorted(priorities) != list(range(n)):
        raise ValueError("priorities must be a permutation of agent ids")


class _Reservation:
    """Vertex and edge reservations for one PIBT step.

    Vertices are reference-counted: an agent's own cell and another agent's
    target can coincide while inheritance is in progress, and rolling one of
    them back must not drop the other.
    """

    __slots__ = ("vertices", "edges")

    def __init__(self) -> None:
        self.vertices: dict[Cell, int] = {}
        self.edges: set[tuple[Cell, Cell]] = set()

    def add(self, s: Cell, t: Cell) -> None:
        v = self.vertices
        v[s] = v.get(s, 0) + 1
        v[t] = v.get(t, 0) + 1
        self.edges.add((s, t))

    def remove(self, s: Cell, t: Cell) -> None:
        v = self.vertices
        for c in (s, t):
            if v[c] == 1:
                del v[c]
            else:
                v[c] -= 1
        self.edges.discard((s, t))


def pibt_step(
    state: JointState,
    rankings: Sequence[ActionRanking],
    priorities: Sequence[int],
    grid: GridMap,
) -> JointMove:
    """Choose collision-free actions for all agents for one timestep.

    ``priorities`` lists agent ids from highest to lowest priority.
    """
    positions = state.positions
    n = len(positions)
    if len(rankings) != n or len(priorities) != n:
        raise ValueError("rankings and priorities must cover every agent")

    occupant = {c: i for i, c in enumerate(positions)}
    res = _Reservation()
    moves: dict[int, Action] = {}
    targets: dict[int, Cell] = {}
    cursor = [0] * n
    anomalies = []

    def release(k: int) -> None:
        res.remove(positions[k], targets.pop(k))
        del moves[k]

    for root in priorities:
        if root in moves:
            continue
        # explicit-stack PIBT-H; every agent on the stack holds a tentative move
        stack = [root]
        cursor[root] = 0
        result: Optional[bool] = None
        failed = -1
        while stack:
            k = stack[-1]
            if result is True:
                stack.pop()
                continue
            if result is False:
                release(k)
                # a child with no feasible action stays put for the rest of the step
                f = positions[failed]
                moves[failed] = Action.STAY
                targets[failed] = f
                res.add(f, f)
            result = None
            s = positions[k]
            ranking = rankings[k]
            i = cursor[k]
            while i < 5:
                a = ranking[i]
                i += 1
                t = grid.successor(s, a)
                if t is None or t in res.vertices or (t, s) in res.edges:
                    continue
                moves[k] = a
                targets[k] = t
                res.add(s, t)
                j = occupant.get(t)
                cursor[k] = i
                if j is not None and j != k and j not in moves:
                    cursor[j] = 0
                    stack.append(j)
                else:
                    stack.pop()
                    result = True
                break
            else:
                cursor[k] = i
                stack.pop()
                result = False
                failed = k
        if result is False:
            moves[root] = Action.STAY
            anomalies.append(root)
            log.warning("PIBT top-level failure for agent %d at step %d", root, state.step)

    return JointMove(tuple(moves[i] for i in range(n)), tuple(anomalies))


def verify_transition(
    before: Sequence[Cell], after: Sequence[Cell], grid: GridMap
) -> list[Conflict]:
    """All vertex, swap, obstacle and non-adjacent-move violations between two configurations."""
    conflicts: list[Conflict] = []
    if len(before) != len(after):
        return [Conflict("unreachable", (), ("agent count changed",))]
    for i, (b, a) in enumerate(zip(before, after)):
        if not grid.is_passable(a):
            conflicts.append(Conflict("obstacle", (i,), tuple(a)))
        if manhattan(a, b) > 1:
            conflicts.append(Conflict("unreachable", (i,), (tuple(b), tuple(a))))
    seen: dict[Cell, int] = {}
    for i, a in enumerate(after):
        if a in seen:
            conflicts.append(Conflict("vertex", (seen[a], i), tuple(a)))
        else:
            seen[a] = i
    start_at = {c: i for i, c in enumerate(before)}
    for i, (b, a) in enumerate(zip(before, after)):
        if a == b:
            continue
        j = start_at.get(a)
        if j is not None and j > i and after[j] == b:
            conflicts.append(Conflict("edge", (i, j), (tuple(b), tuple(a))))
    return conflicts


def verify_joint_move(state: JointState, move: JointMove, grid: GridMap) -> list[Conflict]:
    """Independent check of a joint move; an empty list means the move is valid."""
    return verify_transition(state.positions, move.apply(state.positions), grid)
