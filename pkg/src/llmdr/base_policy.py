"""Base-model policies: per-agent preference rankings over the five actions.

The built-in policies stand in for learned MAPF models. Anything with a
``preferences(state, grid, fields)`` method returning one 5-action ranking
per agent can be plugged into the orchestrator.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .grid_map import ACTIONS, Action, Cell, GridMap
from .pathfind import DistanceField, rank_actions_toward

ActionRanking = tuple[Action, ...]


@dataclass(frozen=True)
class JointState:
    positions: tuple[Cell, ...]
    goals: tuple[Cell, ...]
    step: int = 0

    @property
    def n_agents(self) -> int:
        return len(self.positions)

    def all_arrived(self) -> bool:
        return self.positions == self.goals

    def validate(self, grid: GridMap) -> None:
        if len(self.positions) != len(self.goals):
            raise ValueError("positions and goals differ in length")
        if len(set(self.positions)) != len(self.positions):
            raise ValueError("two agents share a cell")
        for c in (*self.positions, *self.goals):
            if not grid.is_passable(c):
                raise ValueError(f"cell {tuple(c)} is not passable")


def validate_ranking(ranking: Sequence[Action]) -> None:
    if len(ranking) != 5 or set(ranking) != set(ACTIONS):
        raise ValueError(f"ranking must hold each of the 5 actions once, got {ranking!r}")


class Policy(Protocol):
    name: str

    def preferences(
        self, state: JointState, grid: GridMap, fields: Sequence[DistanceField]
    ) -> list[ActionRanking]: ...


class GreedyPolicy:
    """Shortest-path greedy: each agent ranks actions by true distance to its goal."""

    name = "greedy"

    def preferences(self, state, grid, fields):
        return [rank_actions_toward(f, c) for f, c in zip(fields, state.positions)]


class NoisyGreedyPolicy(GreedyPolicy):
    """Greedy policy that swaps the top two actions with probability ``p``.

    The coin flips depend only on ``(seed, state.step)``, so replaying a
    state reproduces the same rankings.
    """

    def __init__(self, p: float, seed: int = 0) -> None:
        if not 0.0 <= p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        self.p = p
        self.seed = seed
        self.name = f"greedy-noisy({p},{seed})"

    def preferences(self, state, grid, fields):
        ranks = super().preferences(state, grid, fields)
        if self.p == 0.0:
            return ranks
        flips = np.random.default_rng([self.seed, state.step]).random(len(ranks)) < self.p
        out = []
        for r, flip in zip(ranks, flips):
            out.append((r[1], r[0], *r[2:]) if flip else r)
        return out


def make_policy(spec: str, seed: int = 0) -> Policy:
    """Build a policy from a config string: ``greedy`` or ``greedy-noisy:P``."""
    name, _, arg = spec.partition(":")
    if name == "greedy" and not arg:
        return GreedyPolicy()
    if name == "greedy-noisy":
        return NoisyGreedyPolicy(float(arg or 0.1), seed)
    raise ValueError(f"unknown base policy {spec!r}")


def base_preferences(
    state: JointState, grid: GridMap, fields: Sequence[DistanceField], policy: Policy | None = None
) -> list[ActionRanking]:
    policy = policy or GreedyPolicy()
    return policy.preferences(state, grid, fields)
