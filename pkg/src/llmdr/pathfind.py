"""Breadth-first true-distance fields and goal-directed action ranking."""
from __future__ import annotations

from collections import deque
from typing import Optional

from .grid_map import ACTIONS, Action, Cell, GridMap

UNREACHABLE = -1


class DistanceField:
    """Shortest 4-connected path length from every cell to ``goal``."""

    __slots__ = ("grid", "goal", "_dist")

    def __init__(self, grid: GridMap, goal: Cell, dist: list[int]) -> None:
        self.grid = grid
        self.goal = goal
        self._dist = dist

    def dist(self, c: Cell) -> Optional[int]:
        """Distance from ``c`` to the goal; None if unreachable, blocked or out of bounds."""
        if not self.grid.in_bounds(c):
            return None
        d = self._dist[c.y * self.grid.width + c.x]
        return None if d == UNREACHABLE else d

    def raw(self, c: Cell) -> int:
        return self._dist[c.y * self.grid.width + c.x]

    def __repr__(self) -> str:
        return f"DistanceField(goal={tuple(self.goal)})"


def build_distance_field(grid: GridMap, goal: Cell) -> DistanceField:
    if not grid.is_passable(goal):
        raise ValueError(f"goal {tuple(goal)} is blocked or out of bounds")
    w = grid.width
    dist = [UNREACHABLE] * (w * grid.height)
    dist[goal.y * w + goal.x] = 0
    queue = deque([goal])
    while queue:
        c = queue.popleft()
        d = dist[c.y * w + c.x] + 1
        for a in ACTIONS[:4]:
            n = grid.successor(c, a)
            if n is not None and dist[n.y * w + n.x] == UNREACHABLE:
                dist[n.y * w + n.x] = d
                queue.append(n)
    return DistanceField(grid, goal, dist)


def rank_actions_toward(field: DistanceField, c: Cell) -> tuple[Action, ...]:
    """All five actions, nearest resulting cell first.

    Blocked and out-of-bounds results go last; ties keep the
    Up, Down, Left, Right, Stay order (``sorted`` is stable).
    """
    here = field.dist(c)
    if here is None:
        raise ValueError(f"cell {tuple(c)} cannot reach goal {tuple(field.goal)}")
    grid = field.grid
    big = len(field._dist) + 1
    keys = []
    for a in ACTIONS:
        t = grid.successor(c, a)
        keys.append(big if t is None else field.raw(t))
    return tuple(sorted(ACTIONS, key=lambda a: keys[a]))
