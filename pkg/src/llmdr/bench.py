"""Batch runner: seeded episodes over agent counts, SR/EL aggregation, sweeps and replay checks."""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .grid_map import Cell, GridMap, ScenarioTask, parse_map, parse_scenario
from .orchestrator import DEFAULT_DWL, DEFAULT_EPL, DEFAULT_MAX_STEPS, EpisodeConfig, run_episode
from .pathfind import build_distance_field
from .pibt import verify_transition

log = logging.getLogger(__name__)


# -- instance generation ----------------------------------------------------


def generate_random_map(width: int, height: int, density: float, seed: int, name: Optional[str] = None) -> GridMap:
    """Uniform random obstacles, each cell blocked with probability ``density``."""
    rng = np.random.default_rng(seed)
    blocked = tuple(bool(b) for b in (rng.random(width * height) < density))
    if all(blocked):
        blocked = (False,) + blocked[1:]
    return GridMap(width, height, blocked, name or f"random-{width}-{height}-{round(density * 100)}-s{seed}")


def largest_component(grid: GridMap) -> list[Cell]:
    """Passable cells of the largest 4-connected component, in row-major order."""
    seen: set[Cell] = set()
    best: list[Cell] = []
    for c in grid.passable_cells():
        if c in seen:
            continue
        f = build_distance_field(grid, c)
        comp = [d for d in grid.passable_cells() if f.dist(d) is not None]
        seen.update(comp)
        if len(comp) > len(best):
            best = comp
    return sorted(best, key=grid.index)


def random_tasks(grid: GridMap, n_agents: int, seed, cells: Optional[Sequence[Cell]] = None) -> list[ScenarioTask]:
    """Distinct starts and distinct goals drawn from one connected component."""
    cells = list(cells) if cells is not None else largest_component(grid)
    if n_agents > len(cells):
        raise ValueError(f"cannot place {n_agents} agents on {len(cells)} cells")
    rng = np.random.default_rng(seed)
    starts = rng.choice(len(cells), n_agents, replace=False)
    goals = rng.choice(len(cells), n_agents, replace=False)
    return [ScenarioTask(i, cells[s], cells[g]) for i, (s, g) in enumerate(zip(starts, goals))]


def episode_seed(base: int, agents: int, episode: int) -> list[int]:
    # independent of analyst/dwl/epl so every arm sees the same instances
    return [base, agents, episode]


# -- batch spec and results -------------------------------------------------------


@dataclass
class BatchSpec:
    map_path: Optional[str] = None
    scen_path: Optional[str] = None
    random_tasks_seed: Optional[int] = None
    agent_counts: Sequence[int] = (4, 8, 16, 32, 64)
    episodes: int = 1
    analyst: str = "rule"
    dwl: int = DEFAULT_DWL
    epl: int = DEFAULT_EPL
    max_steps: int = DEFAULT_MAX_STEPS
    out_dir: Optional[str] = None
    seed: int = 0
    policy: str = "greedy"
    workers: int = 1
    scen_sample: bool = False
    timing: bool = False
    write_replays: bool = True
    llm: Optional[object] = None
    transcripts: Optional[str] = None
    grid: Optional[GridMap] = None  # preloaded map, overrides map_path

    def validate(self) -> None:
        if self.episodes < 1:
            raise ValueError("episodes must be at least 1")
        if not self.agent_counts or any(n < 1 for n in self.agent_counts):
            raise ValueError("agent counts must be positive")
        if not 2 <= self.dwl <= self.epl:
            raise ValueError(f"need 2 <= dwl <= epl, got dwl={self.dwl} epl={self.epl}")
        if self.grid is None and not self.map_path:
            raise ValueError("a map is required")
        if self.analyst not in ("off", "rule", "llm"):
            raise ValueError(f"unknown analyst {self.analyst!r}")

    def load_grid(self) -> GridMap:
        if self.grid is not None:
            return self.grid
        path = Path(self.map_path)
        return parse_map(path.read_bytes(), name=path.stem)


@dataclass(frozen=True)
class EpisodeRecord:
    map: str
    agents: int
    analyst: str
    dwl: int
    epl: int
    episode: int
    success: bool
    episode_length: int
    analyst_calls: int
    deadlock_reports: int
    resolution_steps: int
    fallbacks: int
    anomalies: int


RESULT_COLUMNS = (
    "map", "panel", "agents", "analyst", "dwl", "epl", "max_steps",
    "episodes", "success_rate", "avg_episode_length",
)


@dataclass
class ResultRow:
    map: str
    agents: int
    analyst: str
    dwl: int
    epl: int
    max_steps: int
    episodes: int
    success_rate: float
    avg_episode_length: float
    wall_time: float = 0.0
    panel: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.success_rate <= 1.0:
            raise ValueError("success rate out of range")
        if self.avg_episode_length > self.max_steps:
            raise ValueError("average episode length exceeds the step budget")

    def as_dict(self, timing: bool = False) -> dict:
        d = {k: getattr(self, k) for k in RESULT_COLUMNS}
        if timing:
            d["wall_time"] = round(self.wall_time, 3)
        return d

    def sort_key(self):
        return (self.map, self.panel, self.analyst, self.dwl, self.epl, self.agents)


def aggregate(records: Sequence[EpisodeRecord], max_steps: int, wall_time: float = 0.0, panel: str = "") -> ResultRow:
    """SR and EL over one cell; failed episodes count as ``max_steps``."""
    if not records:
        raise ValueError("no episodes to aggregate")
    first = records[0]
    lengths = [r.episode_length if r.success else max_steps for r in records]
    return ResultRow(
        map=first.map,
        agents=first.agents,
        analyst=first.analyst,
        dwl=first.dwl,
        epl=first.epl,
        max_steps=max_steps,
        episodes=len(records),
        success_rate=sum(r.success for r in records) / len(records),
        avg_episode_length=sum(lengths) / len(lengths),
        wall_time=wall_time,
        panel=panel,
    )


# -- episode execution ---------------------------------------------------------------


@dataclass(frozen=True)
class _Job:
    agents: int
    episode: int
    tasks: tuple
    dwl: int
    epl: int
    replay_path: Optional[str]


def _run_job(grid: GridMap, spec: BatchSpec, job: _Job) -> EpisodeRecord:
    config = EpisodeConfig(
        grid=grid,
        tasks=job.tasks,
        max_steps=spec.max_steps,
        dwl=job.dwl,
        epl=job.epl,
        analyst=spec.analyst,
        policy=spec.policy,
        seed=spec.seed,
        llm=spec.llm,
        transcripts=spec.transcripts,
    )
    result = run_episode(config)
    if job.replay_path:
        with open(job.replay_path, "w", encoding="utf-8") as fh:
            result.write_replay(fh, grid.name, spec.max_steps)
    m = result.metrics
    return EpisodeRecord(
        grid.name, job.agents, spec.analyst, job.dwl, job.epl, job.episode,
        m.success, m.episode_length, m.analyst_calls, m.deadlock_reports,
        m.resolution_steps, m.fallbacks, m.anomalies,
    )


def _run_job_star(args) -> EpisodeRecord:
    return _run_job(*args)


def _tasks_for(spec: BatchSpec, grid: GridMap, agents: int, episode: int,
               scen_tasks: Optional[list[ScenarioTask]], cells: Optional[list[Cell]]) -> tuple:
    if scen_tasks is not None:
        if agents > len(scen_tasks):
            raise ValueError(f"insufficient tasks: requested {agents}, scenario has {len(scen_tasks)}")
        if not spec.scen_sample:
            return tuple(scen_tasks[:agents])
        rng = np.random.default_rng(episode_seed(spec.seed, agents, episode))
        pick = sorted(rng.choice(len(scen_tasks), agents, replace=False))
        return tuple(
            ScenarioTask(i, scen_tasks[k].start, scen_tasks[k].goal, scen_tasks[k].declared_optimal)
            for i, k in enumerate(pick)
        )
    base = spec.random_tasks_seed if spec.random_tasks_seed is not None else spec.seed
    return tuple(random_tasks(grid, agents, episode_seed(base, agents, episode), cells))


def run_cells(spec: BatchSpec, settings: Sequence[tuple[int, int]], grid: Optional[GridMap] = None,
              panels: Optional[Sequence[str]] = None) -> list[ResultRow]:
    """Run every (dwl, epl) setting over every agent count; one row per cell."""
    if grid is not None and spec.grid is None:
        spec = replace(spec, grid=grid)
    spec.validate()
    grid = grid or spec.load_grid()
    scen_tasks = None
    cells = None
    if spec.scen_path:
        scen_tasks = parse_scenario(Path(spec.scen_path).read_bytes(), grid)
    else:
        cells = largest_component(grid)

    replay_dir = None
    if spec.out_dir and spec.write_replays:
        replay_dir = Path(spec.out_dir) / "replays"
        replay_dir.mkdir(parents=True, exist_ok=True)

    jobs: list[_Job] = []
    for dwl, epl in settings:
        for agents in spec.agent_counts:
            for ep in range(spec.episodes):
                tasks = _tasks_for(spec, grid, agents, ep, scen_tasks, cells)
                path = None
                if replay_dir is not None:
                    path = str(replay_dir / f"{grid.name}_{spec.analyst}_n{agents}_dwl{dwl}_epl{epl}_ep{ep}.jsonl")
                jobs.append(_Job(agents, ep, tasks, dwl, epl, path))

    started = time.perf_counter()
    if spec.workers > 1:
        pool_cls = ThreadPoolExecutor if spec.analyst == "llm" else ProcessPoolExecutor
        worker_spec = replace(spec, grid=None) if pool_cls is ProcessPoolExecutor else spec
        with pool_cls(max_workers=spec.workers) as pool:
            records = list(pool.map(_run_job_star, [(grid, worker_spec, j) for j in jobs]))
    else:
        records = [_run_job(grid, spec, j) for j in jobs]
    elapsed = time.perf_counter() - started

    rows = []
    for si, (dwl, epl) in enumerate(settings):
        for agents in spec.agent_counts:
            cell = [r for r in records if r.dwl == dwl and r.epl == epl and r.agents == agents]
            share = elapsed * len(cell) / max(len(records), 1)
            rows.append(aggregate(cell, spec.max_steps, share, panels[si] if panels else ""))
    rows.sort(key=ResultRow.sort_key)
    if spec.out_dir:
        write_results(rows, spec.out_dir, spec.timing)
        write_episodes(records, spec.out_dir)
    return rows


def run_batch(spec: BatchSpec, grid: Optional[GridMap] = None) -> list[ResultRow]:
    return run_cells(spec, [(spec.dwl, spec.epl)], grid)


def sweep_settings(
    dwl_values: Iterable[int],
    epl_values: Iterable[int],
    mode: str = "cartesian",
    base_dwl: int = DEFAULT_DWL,
    base_epl: int = DEFAULT_EPL,
) -> list[tuple[str, int, int]]:
    """(panel, dwl, epl) triples for a sweep.

    ``cartesian`` crosses every value; ``panels`` varies one parameter at a
    time around the defaults, giving one panel per parameter.
    """
    dwl_values, epl_values = list(dwl_values), list(epl_values)
    if mode == "cartesian":
        out = [("", d, e) for d in dwl_values for e in epl_values]
    elif mode == "panels":
        out = [("dwl", d, base_epl) for d in dwl_values] + [("epl", base_dwl, e) for e in epl_values]
    else:
        raise ValueError(f"unknown sweep mode {mode!r}")
    for _, d, e in out:
        if not 2 <= d <= e:
            raise ValueError(f"invalid pair dwl={d} epl={e}: need 2 <= dwl <= epl")
    return out


def sweep_hyperparams(
    spec: BatchSpec,
    dwl_values: Iterable[int],
    epl_values: Iterable[int],
    mode: str = "cartesian",
    grid: Optional[GridMap] = None,
) -> list[ResultRow]:
    """One row per (setting, agent count); every setting reuses the same episode seeds."""
    settings = sweep_settings(dwl_values, epl_values, mode, spec.dwl, spec.epl)
    unique = sorted({(d, e) for _, d, e in settings})
    out_dir = spec.out_dir
    base = run_cells(replace(spec, out_dir=None), unique, grid)
    by_setting = {}
    for r in base:
        by_setting.setdefault((r.dwl, r.epl), []).append(r)
    rows = []
    for panel, d, e in settings:
        rows.extend(replace(r, panel=panel) for r in by_setting[(d, e)])
    if out_dir:
        write_results(rows, out_dir, spec.timing)
    return rows


# -- output -------------------------------------------------------------------------


def results_csv(rows: Sequence[ResultRow], timing: bool = False) -> str:
    buf = io.StringIO()
    cols = list(RESULT_COLUMNS) + (["wall_time"] if timing else [])
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        d = r.as_dict(timing)
        d["success_rate"] = f"{r.success_rate:.4f}"
        d["avg_episode_length"] = f"{r.avg_episode_length:.2f}"
        w.writerow(d)
    return buf.getvalue()


def write_results(rows: Sequence[ResultRow], out_dir: str, timing: bool = False) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(results_csv(rows, timing), encoding="utf-8")
    (out / "results.json").write_text(
        json.dumps([r.as_dict(timing) for r in rows], indent=2) + "\n", encoding="utf-8"
    )


def write_episodes(records: Sequence[EpisodeRecord], out_dir: str) -> None:
    path = Path(out_dir) / "episodes.jsonl"
    ordered = sorted(records, key=lambda r: (r.dwl, r.epl, r.agents, r.episode))
    with open(path, "w", encoding="utf-8") as fh:
        for r in ordered:
            fh.write(json.dumps(asdict(r)) + "\n")


# -- replay validation --------------------------------------------------------------------


@dataclass(frozen=True)
class ReplayViolation:
    step: Optional[int]
    message: str

    def __str__(self) -> str:
        where = "file" if self.step is None else f"step {self.step}"
        return f"{where}: {self.message}"


class ReplayFormatError(ValueError):
    pass


def _cells(raw) -> tuple[Cell, ...]:
    return tuple(Cell(int(x), int(y)) for x, y in raw)


def load_replay(text: str) -> tuple[dict, list[dict], Optional[dict]]:
    header, steps, result = None, [], None
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ReplayFormatError(f"line {n}: {exc}") from None
        kind = rec.get("type")
        if kind == "header":
            header = rec
        elif kind == "result":
            result = rec
        elif {"step", "positions", "phase"} <= rec.keys():
            steps.append(rec)
        else:
            raise ReplayFormatError(f"line {n}: unrecognised record")
    if header is None:
        raise ReplayFormatError("missing header record")
    return header, steps, result


def validate_replay(text: str, grid: GridMap, tasks: Optional[Sequence[ScenarioTask]] = None) -> list[ReplayViolation]:
    """Re-check a replay file step by step; an empty list means it is valid."""
    header, steps, result = load_replay(text)
    starts = _cells(header["starts"])
    goals = _cells(header["goals"])
    out: list[ReplayViolation] = []
    if tasks is not None:
        if tuple(t.start for t in tasks) != starts:
            out.append(ReplayViolation(0, "starts differ from the scenario"))
        if tuple(t.goal for t in tasks) != goals:
            out.append(ReplayViolation(0, "goals differ from the scenario"))
    for i, c in enumerate(starts):
        if not grid.is_passable(c):
            out.append(ReplayViolation(0, f"agent {i} starts on a blocked cell {tuple(c)}"))

    prev, prev_step = starts, 0
    for rec in steps:
        step = rec["step"]
        cur = _cells(rec["positions"])
        if step != prev_step + 1:
            out.append(ReplayViolation(step, f"step index jumps from {prev_step}"))
        for c in verify_transition(prev, cur, grid):
            label = "unreachable step" if c.kind == "unreachable" else f"{c.kind} conflict"
            out.append(ReplayViolation(step, f"{label}: agents {list(c.agents)} {c.where}"))
        prev, prev_step = cur, step

    if result is None:
        out.append(ReplayViolation(None, "missing result record"))
        return out
    at_goal = prev == goals
    if bool(result["success"]) != at_goal:
        out.append(ReplayViolation(prev_step, f"success flag {result['success']} contradicts final positions"))
    if result["success"] and result.get("episode_length") != prev_step:
        out.append(ReplayViolation(prev_step, f"episode_length {result.get('episode_length')} != final step"))
    max_steps = header.get("max_steps")
    if not result["success"] and max_steps is not None and result.get("episode_length") != max_steps:
        out.append(ReplayViolation(prev_step, "failed episode must report max_steps as its length"))
    return out
