import json

import pytest
from hypothesis import given, settings, strategies as st

from llmdr.deadlock import (
    AgentLog,
    AnalysisReport,
    DeadlockGroup,
    DetectionWindow,
    RuleAnalyst,
    Solution,
    Source,
    Status,
    analyze_rule_based,
    assign_solution,
    classify_agent,
    group_deadlocked,
    select_inspection_set,
)
from llmdr.grid_map import Cell, GridMap
from llmdr.orchestrator import build_fields
from llmdr.pathfind import build_distance_field

from conftest import open_map
from oracles import floyd_warshall
from windows import oracle_report, random_window

C = Cell
NM, WA, NO, AR = Status.NO_MOVEMENT, Status.WANDERING, Status.NORMAL, Status.ARRIVED


def cfg(*pts):
    return tuple(C(*p) for p in pts)


# ---- inspection set -------------------------------------------------------

def test_inspection_empty_when_everyone_arrives():
    goals = cfg((1, 1), (5, 5))
    history = [cfg((0, 1), (5, 4)), cfg((1, 1), (5, 5)), cfg((1, 1), (5, 5))]
    assert select_inspection_set(history, goals, history[0]) == frozenset()


def test_inspection_radius_boundary():
    goals = cfg((0, 0), (14, 10), (15, 10))
    here = cfg((10, 10), (14, 10), (15, 10))
    history = [here] * 4
    # agent 0 never reaches its goal; agent 1 is Chebyshev 4 away, agent 2 is 5
    assert select_inspection_set(history, goals, here) == {0, 1}


def test_inspection_counts_start_configuration():
    goals = cfg((0, 0),)
    history = [cfg((0, 0)), cfg((0, 1)), cfg((0, 2))]
    assert select_inspection_set(history, goals, history[0]) == frozenset()


# ---- classification ---------------------------------------------------------

def log(pts, goal):
    return AgentLog(0, C(*goal), cfg(*pts))


def test_no_movement():
    f = build_distance_field(open_map(12, 12), C(9, 9))
    assert classify_agent(log([(5, 5)] * 4, (9, 9)), f) is NM


def test_arrived_and_stationary():
    f = build_distance_field(open_map(12, 12), C(9, 9))
    assert classify_agent(log([(9, 9)] * 4, (9, 9)), f) is AR


def test_normal_progress():
    f = build_distance_field(open_map(12, 12), C(9, 9))
    assert classify_agent(log([(5, 5), (5, 6), (5, 7), (6, 7)], (9, 9)), f) is NO


def test_oscillation_on_open_grid_is_normal():
    # Manhattan and true distance agree here: 8 -> 7
    f = build_distance_field(open_map(12, 12), C(9, 9))
    assert classify_agent(log([(5, 5), (5, 6), (5, 5), (5, 6)], (9, 9)), f) is NO


# (5,6) is a dead-end pocket, so stepping into it moves away from (9,9)
POCKET_MAP = [
    "..........",
    "..........",
    "..........",
    "..........",
    "..........",
    "..........",
    "....@.@...",
    ".....@....",
    "..........",
    "..........",
]


def test_oscillation_into_pocket_is_wandering():
    d = floyd_warshall(POCKET_MAP)
    start, end = d[((5, 5), (9, 9))], d[((5, 6), (9, 9))]
    assert (start, end) == (8, 9)
    f = build_distance_field(GridMap.from_rows(POCKET_MAP), C(9, 9))
    assert classify_agent(log([(5, 5), (5, 6), (5, 5), (5, 6)], (9, 9)), f) is WA


# ---- grouping ---------------------------------------------------------------

def test_group_diagonal_pair():
    assert group_deadlocked({0: NM, 1: NM}, {0: C(3, 3), 1: C(4, 4)}) == [{0, 1}]


def test_group_distance_three_splits():
    assert group_deadlocked({0: NM, 1: WA}, {0: C(3, 3), 1: C(6, 3)}) == [{0}, {1}]


def test_arrived_agent_bridges():
    st_ = {0: NM, 1: AR, 2: NM}
    pos = {0: C(3, 3), 1: C(4, 3), 2: C(5, 3)}
    assert group_deadlocked(st_, pos) == [{0, 1, 2}]
    # A and C are 2 apart anyway; move C to 3 away from A and 2 from B
    pos = {0: C(3, 3), 1: C(5, 3), 2: C(7, 3)}
    assert group_deadlocked(st_, pos) == [{0, 1, 2}]


def test_arrived_agents_do_not_group_alone():
    assert group_deadlocked({0: AR, 1: AR, 2: NO}, {0: C(0, 0), 1: C(0, 1), 2: C(1, 1)}) == []


# ---- solution ---------------------------------------------------------------

def test_far_goal_means_leader():
    pos, goals = {0: C(0, 0), 1: C(10, 0)}, {0: C(9, 0), 1: C(13, 0)}
    assert assign_solution({0, 1}, pos, goals) is Solution.LEADER


def test_near_goals_mean_radiation():
    pos, goals = {0: C(0, 0), 1: C(10, 0)}, {0: C(3, 0), 1: C(15, 0)}
    assert assign_solution({0, 1}, pos, goals) is Solution.RADIATION


def test_singleton_is_leader():
    assert assign_solution({4}, {4: C(0, 0)}, {4: C(2, 0)}) is Solution.LEADER


@pytest.mark.parametrize("d,expected", [(8, Solution.LEADER), (7, Solution.RADIATION)])
def test_goal_distance_boundary(d, expected):
    pos, goals = {0: C(0, 0), 1: C(1, 0)}, {0: C(d, 0), 1: C(1, 3)}
    assert assign_solution({0, 1}, pos, goals) is expected


def test_single_deadlocked_member_with_arrived_neighbours_is_leader():
    pos, goals = {0: C(0, 0), 1: C(1, 0), 2: C(0, 1)}, {0: C(3, 0), 1: C(1, 0), 2: C(0, 1)}
    assert assign_solution({0, 1, 2}, pos, goals, deadlocked={0}) is Solution.LEADER
    assert assign_solution({0, 1, 2}, pos, goals) is Solution.RADIATION


# ---- full analysis ----------------------------------------------------------

def window_of(history, goals, agents=None):
    return DetectionWindow.from_history(history, goals, range(len(goals)) if agents is None else agents)


def test_all_normal_gives_empty_report():
    g = open_map(8, 8)
    goals = cfg((7, 0), (0, 7))
    history = [cfg((0, 0), (7, 7)), cfg((1, 0), (6, 7)), cfg((2, 0), (5, 7))]
    rep = analyze_rule_based(window_of(history, goals), build_fields(g, goals))
    assert not rep.deadlocked and rep.groups == ()


def test_isolated_stuck_agent():
    g = open_map(12, 12)
    goals = cfg((0, 0), (11, 11))
    history = [cfg((5, 5), (11, 0)), cfg((5, 5), (11, 1)), cfg((5, 5), (11, 2))]
    rep = analyze_rule_based(window_of(history, goals), build_fields(g, goals))
    assert rep.groups == (DeadlockGroup(frozenset({0}), Solution.LEADER),)
    assert rep.source is Source.RULE


CLOG = [
    "@@@@@@@@@@",
    "..........",
    "@@@@@@@@@@",
]


def test_corridor_clog_is_one_radiation_group():
    g = GridMap.from_rows(CLOG)
    # two pairs jammed head-on in the middle of a corridor, all goals 2..6 away
    here = cfg((3, 1), (4, 1), (5, 1), (6, 1))
    goals = cfg((7, 1), (9, 1), (1, 1), (0, 1))
    rep = analyze_rule_based(window_of([here] * 4, goals), build_fields(g, goals))
    assert rep.groups == (DeadlockGroup(frozenset({0, 1, 2, 3}), Solution.RADIATION),)


def test_only_inspected_agents_considered():
    g = open_map(12, 12)
    goals = cfg((0, 0), (11, 11))
    history = [cfg((5, 5), (6, 5))] * 3
    rep = analyze_rule_based(window_of(history, goals), build_fields(g, goals), inspected={1})
    assert rep.groups == (DeadlockGroup(frozenset({1}), Solution.LEADER),)
    assert rep.inspected_agents == {1}


def test_report_rejects_overlap():
    a = DeadlockGroup(frozenset({1, 2}), Solution.LEADER)
    b = DeadlockGroup(frozenset({2, 5}), Solution.RADIATION)
    with pytest.raises(ValueError):
        AnalysisReport((a, b), frozenset({1, 2, 5}))


def test_report_json():
    rep = AnalysisReport((DeadlockGroup(frozenset({7, 3}), Solution.RADIATION),), frozenset({3, 7}))
    assert json.loads(rep.dumps()) == [{"agent_id": [3, 7], "solution": "radiation"}]


def test_window_invariants():
    with pytest.raises(ValueError):
        DetectionWindow(1, ())
    with pytest.raises(ValueError):
        DetectionWindow(3, (AgentLog(0, C(0, 0), cfg((0, 0))),))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matches_oracle(seed):
    grid, window, fields = random_window(seed)
    status, expected = oracle_report(grid.rows(), window, [r.goal for r in window.agents])
    rep = analyze_rule_based(window, fields)
    for row in window.agents:
        assert classify_agent(row, fields[row.agent_id]).value == status[row.agent_id]
    assert {(g.agent_ids, g.solution.value) for g in rep.groups} == expected
    # purity
    assert RuleAnalyst().analyze(window, fields, frozenset(range(len(fields)))) == rep
