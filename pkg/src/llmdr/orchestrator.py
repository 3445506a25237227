"""The detect-and-resolve episode loop around a base policy."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import IO, Optional, Sequence, Union

from .base_policy import GreedyPolicy, JointState, Policy, make_policy
from .deadlock import Analyst, DetectionWindow, RuleAnalyst, select_inspection_set
from .grid_map import Cell, GridMap, ScenarioTask
from .pathfind import DistanceField, build_distance_field
from .pibt import pibt_step, verify_transition
from .resolution import iter_resolution

log = logging.getLogger(__name__)

DEFAULT_DWL = 4
DEFAULT_EPL = 16
DEFAULT_MAX_STEPS = 256

PHASE_COMMIT = "plan-commit"
PHASE_RESOLUTION = "resolution"


@dataclass
class ExecutionPlan:
    """Lookahead of ``horizon`` base-policy steps from ``start``."""

    start: JointState
    states: list[JointState]
    anomalies: int = 0

    @property
    def horizon(self) -> int:
        return len(self.states)

    def history(self) -> list[tuple[Cell, ...]]:
        """Configurations at steps 0..horizon."""
        return [self.start.positions] + [s.positions for s in self.states]

    def window(self, dwl: int) -> list[tuple[Cell, ...]]:
        return self.history()[:dwl]


@dataclass
class EpisodeConfig:
    grid: GridMap
    tasks: Sequence[ScenarioTask]
    max_steps: int = DEFAULT_MAX_STEPS
    dwl: int = DEFAULT_DWL
    epl: int = DEFAULT_EPL
    analyst: str = "rule"  # "off" | "rule" | "llm"
    policy: str = "greedy"
    seed: int = 0
    llm: Optional[object] = None  # LlmConfig when analyst == "llm"
    transcripts: Optional[str] = None

    def validate(self) -> None:
        if not 2 <= self.dwl <= self.epl:
            raise ValueError(f"need 2 <= dwl <= epl, got dwl={self.dwl} epl={self.epl}")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.analyst not in ("off", "rule", "llm"):
            raise ValueError(f"unknown analyst mode {self.analyst!r}")
        if not self.tasks:
            raise ValueError("episode needs at least one task")


@dataclass
class EpisodeMetrics:
    success: bool = False
    episode_length: int = 0
    analyst_calls: int = 0
    deadlock_reports: int = 0
    resolution_steps: int = 0
    fallbacks: int = 0
    anomalies: int = 0
    detections: int = 0

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class TrajectoryStep:
    step: int
    positions: tuple[Cell, ...]
    phase: str

    def to_json(self) -> dict:
        return {"step": self.step, "positions": [[c.x, c.y] for c in self.positions], "phase": self.phase}


@dataclass
class EpisodeResult:
    metrics: EpisodeMetrics
    starts: tuple[Cell, ...]
    goals: tuple[Cell, ...]
    trajectory: list[TrajectoryStep] = field(default_factory=list)
    reports: list = field(default_factory=list)

    def write_replay(self, fh: IO[str], map_name: str = "", max_steps: Optional[int] = None) -> None:
        header = {
            "type": "header",
            "map": map_name,
            "starts": [[c.x, c.y] for c in self.starts],
            "goals": [[c.x, c.y] for c in self.goals],
            "max_steps": max_steps,
        }
        fh.write(json.dumps(header) + "\n")
        for rec in self.trajectory:
            fh.write(json.dumps(rec.to_json()) + "\n")
        m = self.metrics
        fh.write(json.dumps({"type": "result", "success": m.success, "episode_length": m.episode_length}) + "\n")


def build_fields(grid: GridMap, goals: Sequence[Cell]) -> list[DistanceField]:
    cache: dict[Cell, DistanceField] = {}
    out = []
    for g in goals:
        if g not in cache:
            cache[g] = build_distance_field(grid, g)
        out.append(cache[g])
    return out


def plain_priorities(n: int) -> tuple[int, ...]:
    return tuple(range(n))


def base_step(state: JointState, policy: Policy, fields: Sequence[DistanceField], grid: GridMap):
    """One base-policy step through PIBT with ascending-id priorities."""
    ranks = policy.preferences(state, grid, fields)
    move = pibt_step(state, ranks, plain_priorities(state.n_agents), grid)
    return JointState(move.apply(state.positions), state.goals, state.step + 1), move


def simulate_plan(
    state: JointState, policy: Policy, fields: Sequence[DistanceField], epl: int, grid: GridMap
) -> ExecutionPlan:
    """Simulate ``epl`` base-policy steps on a copy of the live state."""
    states = []
    anomalies = 0
    cur = state
    for _ in range(epl):
        cur, move = base_step(cur, policy, fields, grid)
        anomalies += len(move.anomalies)
        states.append(cur)
    return ExecutionPlan(state, states, anomalies)


def _make_analyst(config: EpisodeConfig) -> Optional[Analyst]:
    if config.analyst == "off":
        return None
    if config.analyst == "rule":
        return RuleAnalyst()
    from .llm_analyst import LlmAnalyst, LlmConfig

    llm = config.llm if config.llm is not None else LlmConfig()
    return LlmAnalyst(llm, config.transcripts)


def run_episode(
    config: EpisodeConfig,
    analyst: Union[Analyst, None, str] = "auto",
    policy: Optional[Policy] = None,
) -> EpisodeResult:
    """Run one episode; ``analyst="auto"`` builds the analyst named by ``config.analyst``."""
    config.validate()
    grid = config.grid
    if analyst == "auto":
        analyst = _make_analyst(config)
    if policy is None:
        policy = make_policy(config.policy, config.seed)

    starts = tuple(t.start for t in config.tasks)
    goals = tuple(t.goal for t in config.tasks)
    state = JointState(starts, goals, 0)
    state.validate(grid)
    fields = build_fields(grid, goals)

    metrics = EpisodeMetrics()
    result = EpisodeResult(metrics, starts, goals)
    trajectory = result.trajectory

    def record(new_state: JointState, phase: str) -> bool:
        """Append a live step; True once the episode is over."""
        trajectory.append(TrajectoryStep(new_state.step, new_state.positions, phase))
        return new_state.all_arrived() or new_state.step >= config.max_steps

    done = state.all_arrived()
    while not done:
        plan = simulate_plan(state, policy, fields, config.epl, grid)
        metrics.anomalies += plan.anomalies
        report = None
        if analyst is not None:
            metrics.detections += 1
            history = plan.history()
            inspected = select_inspection_set(history, goals, state.positions)
            if inspected:
                window = DetectionWindow.from_history(plan.window(config.dwl), goals, inspected)
                report = analyst.analyze(window, fields, inspected)
                metrics.analyst_calls += 1
                if report.provenance.startswith("fallback"):
                    metrics.fallbacks += 1
                if report.groups:
                    metrics.deadlock_reports += 1
                    result.reports.append((state.step, report))
                else:
                    report = None

        if report is None:
            for nxt in plan.states:
                state = nxt
                if record(state, PHASE_COMMIT):
                    done = True
                    break
            continue

        steps = iter_resolution(report, state, fields, policy, grid)
        for _ in range(config.epl):
            rs = next(steps)
            metrics.anomalies += len(rs.move.anomalies)
            metrics.resolution_steps += 1
            state = rs.state
            if record(state, PHASE_RESOLUTION):
                done = True
                break

    metrics.success = state.all_arrived()
    metrics.episode_length = state.step if metrics.success else config.max_steps
    return result


def check_trajectory(result: EpisodeResult, grid: GridMap) -> list[str]:
    """Re-verify every recorded transition; returns human-readable violations."""
    problems = []
    prev = result.starts
    for rec in result.trajectory:
        problems.extend(f"step {rec.step}: {c}" for c in verify_transition(prev, rec.positions, grid))
        prev = rec.positions
    return problems
