"""Deadlock detection and resolution for learned-policy multi-agent pathfinding."""

from .base_policy import GreedyPolicy, JointState, NoisyGreedyPolicy, make_policy
from .deadlock import AnalysisReport, DeadlockGroup, DetectionWindow, Solution, analyze_rule_based
from .grid_map import Action, Cell, GridMap, ScenarioTask, parse_map, parse_scenario
from .orchestrator import EpisodeConfig, EpisodeMetrics, run_episode, simulate_plan
from .pathfind import build_distance_field, rank_actions_toward
from .pibt import pibt_step, verify_joint_move

__version__ = "0.1.0"
