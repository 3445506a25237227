"""Command-line entry point: ``llmdr run | sweep | validate``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .bench import BatchSpec, ReplayFormatError, results_csv, run_batch, sweep_hyperparams, validate_replay
from .grid_map import MapFormatError, parse_map, parse_scenario


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_batch_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--map", required=True, help="MovingAI .map file")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scen", help="MovingAI .scen file (tasks taken as a prefix)")
    src.add_argument("--random-tasks", type=int, metavar="SEED", help="seeded random starts/goals")
    p.add_argument("--scen-sample", action="store_true", help="sample scenario tasks per episode instead of a prefix")
    p.add_argument("--agents", type=_int_list, default=[4, 8, 16, 32, 64])
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--analyst", choices=("off", "rule", "llm"), default="rule")
    p.add_argument("--dwl", type=int, default=4, help="detection window length")
    p.add_argument("--epl", type=int, default=16, help="execution plan length")
    p.add_argument("--max-steps", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policy", default="greedy", help="greedy | greedy-noisy:P")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--timing", action="store_true", help="add a wall_time column (breaks byte-identical output)")
    p.add_argument("--no-replays", action="store_true")
    p.add_argument("--llm-endpoint", default="http://localhost:8000")
    p.add_argument("--llm-model", default="gpt-4o")
    p.add_argument("--llm-timeout", type=float, default=60.0)
    p.add_argument("--llm-retries", type=int, default=3)
    p.add_argument("--llm-rps", type=float, default=None, help="global request rate limit")
    p.add_argument("--transcripts", metavar="PATH", help="append LLM transcripts as JSON lines")


def _spec(args: argparse.Namespace) -> BatchSpec:
    llm = None
    if args.analyst == "llm":
        from .llm_analyst import LlmConfig

        llm = LlmConfig(
            endpoint=args.llm_endpoint,
            model=args.llm_model,
            timeout=args.llm_timeout,
            max_retries=args.llm_retries,
            requests_per_second=args.llm_rps,
        )
    return BatchSpec(
        map_path=args.map,
        scen_path=args.scen,
        random_tasks_seed=args.random_tasks,
        agent_counts=args.agents,
        episodes=args.episodes,
        analyst=args.analyst,
        dwl=args.dwl,
        epl=args.epl,
        max_steps=args.max_steps,
        out_dir=args.out,
        seed=args.seed,
        policy=args.policy,
        workers=args.workers,
        scen_sample=args.scen_sample,
        timing=args.timing,
        write_replays=not args.no_replays,
        llm=llm,
        transcripts=args.transcripts,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="llmdr", description="MAPF deadlock detection and resolution benchmarks")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an episode batch")
    _add_batch_args(run)

    sweep = sub.add_parser("sweep", help="sweep detection window / execution plan lengths")
    _add_batch_args(sweep)
    sweep.add_argument("--dwl-values", type=_int_list, default=[2, 4, 8])
    sweep.add_argument("--epl-values", type=_int_list, default=[8, 16, 32])
    sweep.add_argument("--grid", choices=("panels", "cartesian"), default="panels",
                       help="panels: vary one parameter at a time around --dwl/--epl")

    val = sub.add_parser("validate", help="check a replay file")
    val.add_argument("--replay", required=True, nargs="+")
    val.add_argument("--map", required=True)
    val.add_argument("--scen", help="optional scenario to compare starts/goals against")
    val.add_argument("--agents", type=int, help="number of scenario tasks in the replay")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            rows = run_batch(_spec(args))
            sys.stdout.write(results_csv(rows))
        elif args.command == "sweep":
            rows = sweep_hyperparams(_spec(args), args.dwl_values, args.epl_values, args.grid)
            sys.stdout.write(results_csv(rows))
        else:
            return _validate(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def _validate(args: argparse.Namespace) -> int:
    path = Path(args.map)
    grid = parse_map(path.read_bytes(), name=path.stem)
    tasks = parse_scenario(Path(args.scen).read_bytes(), grid, args.agents) if args.scen else None
    bad = 0
    for replay in args.replay:
        try:
            violations = validate_replay(Path(replay).read_text(encoding="utf-8"), grid, tasks)
        except (ReplayFormatError, MapFormatError, KeyError) as exc:
            print(f"{replay}: parse error: {exc}")
            bad += 1
            continue
        if violations:
            bad += 1
            for v in violations:
                print(f"{replay}: {v}")
        else:
            print(f"{replay}: ok")
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
