"""Grid maps, scenario tasks and MovingAI ``.map`` / ``.scen`` parsing.

Coordinates follow the ``.scen`` convention: ``x`` is the column, ``y`` the
row, origin at the top-left corner.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Union

PASSABLE_TERRAIN = frozenset(".GS")
BLOCKED_TERRAIN = frozenset("@OTW")

TextInput = Union[str, bytes]


class MapFormatError(ValueError):
    """Raised for malformed ``.map`` or ``.scen`` input."""

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class Cell(NamedTuple):
    x: int
    y: int


class Action(enum.IntEnum):
    """The five one-step actions, in the global tie-breaking order."""

    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    STAY = 4

    @property
    def delta(self) -> tuple[int, int]:
        return _DELTAS[self]


_DELTAS = {
    Action.UP: (0, -1),
    Action.DOWN: (0, 1),
    Action.LEFT: (-1, 0),
    Action.RIGHT: (1, 0),
    Action.STAY: (0, 0),
}

ACTIONS: tuple[Action, ...] = tuple(Action)
MOVES: tuple[Action, ...] = ACTIONS[:4]


def apply_action(c: Cell, a: Action) -> Cell:
    dx, dy = _DELTAS[a]
    return Cell(c.x + dx, c.y + dy)


def action_between(a: Cell, b: Cell) -> Optional[Action]:
    """Action moving ``a`` to ``b`` in one step, or None if not adjacent."""
    d = (b.x - a.x, b.y - a.y)
    for act, delta in _DELTAS.items():
        if delta == d:
            return act
    return None


@dataclass(frozen=True)
class GridMap:
    width: int
    height: int
    blocked: tuple[bool, ...]
    name: str = "map"
    # successor table: index -> per-action target cell (None when not traversable)
    _succ: tuple[tuple[Optional[Cell], ...], ...] = field(
        init=False, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("map dimensions must be positive")
        if len(self.blocked) != self.width * self.height:
            raise ValueError(
                f"blocked has {len(self.blocked)} entries, expected {self.width * self.height}"
            )
        if all(self.blocked):
            raise ValueError("map has no passable cell")
        succ = []
        for i in range(self.width * self.height):
            c = Cell(i % self.width, i // self.width)
            if self.blocked[i]:
                succ.append((None,) * 5)
                continue
            row = []
            for a in ACTIONS:
                t = apply_action(c, a)
                row.append(t if self.is_passable(t) else None)
            succ.append(tuple(row))
        object.__setattr__(self, "_succ", tuple(succ))

    @classmethod
    def from_rows(cls, rows: Sequence[str], name: str = "map") -> "GridMap":
        """Build a map from terrain rows, e.g. ``["..@", "..."]``."""
        height = len(rows)
        width = len(rows[0]) if rows else 0
        blocked = []
        for y, row in enumerate(rows):
            if len(row) != width:
                raise MapFormatError(f"row {y} has width {len(row)}, expected {width}")
            for ch in row:
                blocked.append(_terrain_blocked(ch, None))
        return cls(width, height, tuple(blocked), name)

    def index(self, c: Cell) -> int:
        return c.y * self.width + c.x

    def cell(self, index: int) -> Cell:
        return Cell(index % self.width, index // self.width)

    def in_bounds(self, c: Cell) -> bool:
        return 0 <= c.x < self.width and 0 <= c.y < self.height

    def is_passable(self, c: Cell) -> bool:
        return self.in_bounds(c) and not self.blocked[c.y * self.width + c.x]

    def passable_cells(self) -> list[Cell]:
        return [self.cell(i) for i, b in enumerate(self.blocked) if not b]

    def successor(self, c: Cell, a: Action) -> Optional[Cell]:
        """Cell reached by ``a`` from passable ``c``, or None if blocked/out of bounds."""
        return self._succ[c.y * self.width + c.x][a]

    def rows(self) -> list[str]:
        return [
            "".join("@" if self.blocked[y * self.width + x] else "." for x in range(self.width))
            for y in range(self.height)
        ]


@dataclass(frozen=True)
class ScenarioTask:
    agent_id: int
    start: Cell
    goal: Cell
    declared_optimal: Optional[float] = None


def manhattan(a: Cell, b: Cell) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def chebyshev(a: Cell, b: Cell) -> int:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


def neighbors(grid: GridMap, c: Cell) -> list[Cell]:
    """Passable 4-neighbours of ``c`` in Up, Down, Left, Right order."""
    if not grid.is_passable(c):
        raise ValueError(f"cell {tuple(c)} is blocked or out of bounds")
    out = []
    for a in MOVES:
        t = grid.successor(c, a)
        if t is not None:
            out.append(t)
    return out


def _decode(text: TextInput) -> str:
    if isinstance(text, bytes):
        return text.decode("utf-8")
    return text


def _terrain_blocked(ch: str, line: Optional[int]) -> bool:
    if ch in PASSABLE_TERRAIN:
        return False
    if ch in BLOCKED_TERRAIN:
        return True
    raise MapFormatError(f"unknown terrain character {ch!r}", line)


def _header_value(line: str, key: str, lineno: int) -> int:
    parts = line.split()
    if len(parts) != 2 or parts[0] != key:
        raise MapFormatError(f"malformed header, expected '{key} <int>'", lineno)
    try:
        value = int(parts[1])
    except ValueError:
        raise MapFormatError(f"malformed header, {key} is not an integer", lineno) from None
    if value < 1:
        raise MapFormatError(f"malformed header, {key} must be positive", lineno)
    return value


def parse_map(text: TextInput, name: str = "map") -> GridMap:
    """Parse a MovingAI ``.map`` file body."""
    lines = _decode(text).splitlines()
    if len(lines) < 4:
        raise MapFormatError("malformed header, file too short", len(lines) + 1)
    if lines[0].split() != ["type", "octile"]:
        raise MapFormatError("malformed header, expected 'type octile'", 1)
    height = _header_value(lines[1], "height", 2)
    width = _header_value(lines[2], "width", 3)
    if lines[3].strip() != "map":
        raise MapFormatError("malformed header, expected 'map'", 4)

    body = [ln.rstrip() for ln in lines[4:]]
    while body and body[-1] == "":
        body.pop()
    if len(body) != height:
        raise MapFormatError(f"row count mismatch: header says {height}, found {len(body)}", 5 + len(body))

    blocked = []
    for y, row in enumerate(body):
        lineno = 5 + y
        if len(row) != width:
            raise MapFormatError(f"row width mismatch: expected {width}, found {len(row)}", lineno)
        blocked.extend(_terrain_blocked(ch, lineno) for ch in row)
    try:
        return GridMap(width, height, tuple(blocked), name)
    except ValueError as exc:
        raise MapFormatError(str(exc)) from None


def serialize_map(grid: GridMap) -> str:
    """Render ``grid`` in MovingAI format using '.' and '@'."""
    head = f"type octile\nheight {grid.height}\nwidth {grid.width}\nmap\n"
    return head + "\n".join(grid.rows()) + "\n"


def parse_scenario(text: TextInput, grid: GridMap, n_agents: Optional[int] = None) -> list[ScenarioTask]:
    """Parse a MovingAI ``.scen`` file and return the first ``n_agents`` tasks.

    ``n_agents=None`` returns every task in the file.
    """
    lines = _decode(text).splitlines()
    if not lines or not lines[0].startswith("version"):
        raise MapFormatError("scenario must begin with a 'version' line", 1)

    tasks: list[ScenarioTask] = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        if n_agents is not None and len(tasks) == n_agents:
            break
        fields = raw.rstrip("\r\n").split("\t")
        if len(fields) != 9:
            raise MapFormatError(f"expected 9 tab-separated fields, found {len(fields)}", lineno)
        try:
            w, h = int(fields[2]), int(fields[3])
            sx, sy, gx, gy = (int(v) for v in fields[4:8])
            optimal = float(fields[8])
        except ValueError:
            raise MapFormatError("non-numeric scenario field", lineno) from None
        if (w, h) != (grid.width, grid.height):
            raise MapFormatError(
                f"scenario map size {w}x{h} disagrees with map {grid.width}x{grid.height}", lineno
            )
        agent = len(tasks)
        start, goal = Cell(sx, sy), Cell(gx, gy)
        for label, c in (("start", start), ("goal", goal)):
            if not grid.in_bounds(c):
                raise MapFormatError(f"agent {agent}: {label} {tuple(c)} out of bounds", lineno)
            if not grid.is_passable(c):
                raise MapFormatError(f"agent {agent}: {label} {tuple(c)} is blocked", lineno)
        tasks.append(ScenarioTask(agent, start, goal, optimal))

    if n_agents is not None and len(tasks) < n_agents:
        raise MapFormatError(f"insufficient tasks: requested {n_agents}, file has {len(tasks)}")
    _check_distinct(tasks)
    return tasks


def _check_distinct(tasks: Sequence[ScenarioTask]) -> None:
    for attr in ("start", "goal"):
        seen: dict[Cell, int] = {}
        for t in tasks:
            c = getattr(t, attr)
            if c in seen:
                raise MapFormatError(f"agents {seen[c]} and {t.agent_id} share {attr} {tuple(c)}")
            seen[c] = t.agent_id


def serialize_scenario(tasks: Sequence[ScenarioTask], grid: GridMap, map_file: str = "map.map") -> str:
    lines = ["version 1"]
    for t in tasks:
        opt = t.declared_optimal if t.declared_optimal is not None else 0.0
        lines.append(
            "\t".join(
                str(v)
                for v in (0, map_file, grid.width, grid.height, t.start.x, t.start.y, t.goal.x, t.goal.y, opt)
            )
        )
    return "\n".join(lines) + "\n"
