import pytest
from hypothesis import given, settings, strategies as st

from llmdr.base_policy import GreedyPolicy, JointState
from llmdr.deadlock import AnalysisReport, DeadlockGroup, Solution
from llmdr.grid_map import ACTIONS, Action, Cell, GridMap, apply_action
from llmdr.orchestrator import base_step, build_fields, plain_priorities
from llmdr.pathfind import rank_actions_toward
from llmdr.pibt import verify_joint_move
from llmdr.resolution import (
    Role,
    RoleAssignment,
    assign_roles,
    build_priorities,
    build_rankings,
    iter_resolution,
    rank_actions_away,
    resolve_deadlock,
    yield_ranking,
)

from conftest import open_map
from oracles import euclid

A = Action
C = Cell
L, R = Solution.LEADER, Solution.RADIATION


def report(*groups):
    gs = tuple(DeadlockGroup(frozenset(ids), sol) for ids, sol in groups)
    return AnalysisReport(gs, frozenset().union(*(g.agent_ids for g in gs)))


def js(pos, goals):
    return JointState(tuple(C(*p) for p in pos), tuple(C(*g) for g in goals))


def test_lead_is_farthest_from_goal():
    g = open_map(12, 12)
    s = js([(0, 0), (5, 5)], [(9, 0), (5, 8)])
    roles = assign_roles(report(({0, 1}, L)), s, build_fields(g, s.goals))
    assert roles.roles == (Role.LEAD, Role.YIELD)


def test_lead_tie_goes_to_lower_id():
    g = open_map(12, 12)
    s = js([(0, 0), (0, 1), (5, 5)], [(5, 0), (5, 1), (5, 5)])
    roles = assign_roles(report(({1, 0}, L)), s, build_fields(g, s.goals))
    assert roles.roles == (Role.LEAD, Role.YIELD, Role.NON_DEADLOCK)


def test_radiation_center_is_mean():
    g = open_map(10, 10)
    s = js([(4, 4), (4, 5), (5, 4)], [(0, 0), (9, 9), (0, 9)])
    roles = assign_roles(report(({0, 1, 2}, R)), s, build_fields(g, s.goals))
    cx, cy = roles.center_of(2)
    assert cx == pytest.approx(13 / 3) and cy == pytest.approx(13 / 3)
    assert roles.roles == (Role.RADIATE,) * 3


def test_radiate_ranking_from_euclidean_distances():
    g = open_map(10, 10)
    center = (13 / 3, 13 / 3)
    here = C(5, 4)
    dist = {a: euclid(apply_action(here, a), center) for a in ACTIONS}
    assert dist[A.RIGHT] == pytest.approx(1.6997, abs=1e-4)
    assert dist[A.STAY] == pytest.approx(0.7454, abs=1e-4)
    expected = tuple(sorted(ACTIONS, key=lambda a: -dist[a]))
    ranking = rank_actions_away(g, here, center)
    assert ranking == expected == (A.RIGHT, A.UP, A.DOWN, A.STAY, A.LEFT)


def test_radiate_blocked_moves_last():
    g = GridMap.from_rows(["...", "..@", "..."])
    assert rank_actions_away(g, C(1, 1), (0.0, 1.0))[-1] == A.RIGHT


def test_yield_promotes_stay():
    base = (A.UP, A.LEFT, A.STAY, A.DOWN, A.RIGHT)
    assert yield_ranking(base) == (A.STAY, A.UP, A.LEFT, A.DOWN, A.RIGHT)


def test_lead_ranking_delegates_to_pathfind():
    g = open_map(8, 8)
    s = js([(2, 2), (3, 2)], [(7, 7), (0, 0)])
    fields = build_fields(g, s.goals)
    roles = assign_roles(report(({0, 1}, L)), s, fields)
    lead = roles.roles.index(Role.LEAD)
    base = [tuple(ACTIONS)] * 2
    ranks = build_rankings(roles, s, fields, base)
    assert ranks[lead] == rank_actions_toward(fields[lead], s.positions[lead])


def test_priority_tiers():
    g = open_map(8, 8)
    s = js([(0, 0), (1, 0), (2, 0), (3, 0)], [(0, 0), (7, 7), (2, 0), (3, 0)])
    fields = build_fields(g, s.goals)
    roles = RoleAssignment((Role.NON_DEADLOCK, Role.LEAD, Role.YIELD, Role.RADIATE), {3: 0}, {0: (3.0, 1.0)})
    assert build_priorities(roles, s, fields) == (1, 3, 0, 2)


def test_two_leads_by_distance():
    g = open_map(20, 2)
    s = js([(0, 0), (0, 1)], [(9, 0), (12, 1)])
    roles = RoleAssignment((Role.LEAD, Role.LEAD))
    assert build_priorities(roles, s, build_fields(g, s.goals)) == (1, 0)


def test_all_non_deadlock_is_ascending():
    g = open_map(5, 5)
    s = js([(0, 0), (1, 1), (2, 2)], [(4, 4), (3, 3), (0, 0)])
    roles = RoleAssignment((Role.NON_DEADLOCK,) * 3)
    assert build_priorities(roles, s, build_fields(g, s.goals)) == (0, 1, 2)


def test_empty_report_rejected():
    g = open_map(3, 3)
    s = js([(0, 0)], [(2, 2)])
    with pytest.raises(ValueError):
        resolve_deadlock(report(), s, build_fields(g, s.goals), GreedyPolicy(), 4, g)


def test_epl_must_be_positive():
    g = open_map(3, 3)
    s = js([(0, 0)], [(2, 2)])
    with pytest.raises(ValueError):
        resolve_deadlock(report(({0}, L)), s, build_fields(g, s.goals), GreedyPolicy(), 0, g)


# corridor with a pocket above x=3
CORRIDOR = [
    "@@@.@@@",
    ".......",
    "@@@@@@@",
]


def test_corridor_leader_yield_enters_pocket():
    g = GridMap.from_rows(CORRIDOR)
    # agent 0 sits one step short of its goal, agent 1 must cross the whole corridor
    s = js([(5, 1), (6, 1)], [(6, 1), (0, 1)])
    fields = build_fields(g, s.goals)
    steps = resolve_deadlock(report(({0, 1}, L)), s, fields, GreedyPolicy(), 16, g)
    assert len(steps) == 16
    trace = [tuple(tuple(p) for p in st.positions) for st in steps]
    assert trace[:4] == [
        ((4, 1), (5, 1)),
        ((3, 1), (4, 1)),
        ((3, 0), (3, 1)),  # the yielding agent ducks into the pocket
        ((3, 1), (2, 1)),  # the lead has passed
    ]
    assert trace[8] == ((6, 1), (0, 1))
    assert steps[-1].all_arrived()


def test_radiation_cluster_disperses():
    g = open_map(12, 12)
    pos = [(5, 5), (6, 5), (5, 6), (6, 6)]
    s = js(pos, [(6, 6), (5, 6), (6, 5), (5, 5)])
    fields = build_fields(g, s.goals)
    cx = sum(p[0] for p in pos) / 4
    cy = sum(p[1] for p in pos) / 4
    steps = resolve_deadlock(report(({0, 1, 2, 3}, R)), s, fields, GreedyPolicy(), 3, g)
    prev = [euclid(p, (cx, cy)) for p in pos]
    for st_ in steps:
        now = [euclid(tuple(p), (cx, cy)) for p in st_.positions]
        assert all(b >= a - 1e-9 for a, b in zip(prev, now))
        prev = now
    assert all(d > euclid(pos[0], (cx, cy)) for d in prev)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_all_non_deadlock_equals_base_step(seed):
    import numpy as np
    from llmdr.pibt import pibt_step

    rng = np.random.default_rng(seed)
    g = open_map(8, 8)
    cells = g.passable_cells()
    n = int(rng.integers(1, 12))
    pick = rng.choice(len(cells), size=2 * n, replace=False)
    s = JointState(tuple(cells[i] for i in pick[:n]), tuple(cells[i] for i in pick[n:]))
    fields = build_fields(g, s.goals)
    roles = RoleAssignment((Role.NON_DEADLOCK,) * n)
    base = GreedyPolicy().preferences(s, g, fields)
    move = pibt_step(s, build_rankings(roles, s, fields, base), build_priorities(roles, s, fields), g)
    plain_state, plain_move = base_step(s, GreedyPolicy(), fields, g)
    assert move == plain_move
    assert build_priorities(roles, s, fields) == plain_priorities(n)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_strategized_steps_safe_and_lead_progresses(seed):
    import numpy as np
    from llmdr.bench import generate_random_map, largest_component

    rng = np.random.default_rng(seed)
    grid = generate_random_map(12, 12, 0.15, seed)
    cells = largest_component(grid)
    n = min(10, len(cells) // 2)
    pick = rng.choice(len(cells), size=2 * n, replace=False)
    s = JointState(tuple(cells[i] for i in pick[:n]), tuple(cells[i] for i in pick[n:]))
    fields = build_fields(grid, s.goals)
    ids = sorted(int(i) for i in rng.choice(n, size=min(4, n), replace=False))
    half = len(ids) // 2
    groups = [(set(ids[:half]), L)] if half else []
    groups.append((set(ids[half:]), R))
    rep = report(*groups)
    state = s
    for _, step in zip(range(12), iter_resolution(rep, s, fields, GreedyPolicy(), grid)):
        assert sorted(step.priorities) == list(range(n))
        assert not verify_joint_move(state, step.move, grid)
        for i in range(n):
            if step.rankings[i] == rank_actions_toward(fields[i], state.positions[i]) and i == step.priorities[0]:
                # the top agent always gets its first choice when it is passable
                if step.move.actions[i] == step.rankings[i][0] and step.move.actions[i] is not A.STAY:
                    assert fields[i].raw(step.state.positions[i]) < fields[i].raw(state.positions[i])
        state = step.state
