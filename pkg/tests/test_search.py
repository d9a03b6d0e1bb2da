import numpy as np
import pytest

from loha.gridmap import OccupancyGrid, generate_random
from loha.search import (
    EXHAUSTED,
    EXPANSION_LIMIT,
    SOLVED,
    astar,
    focal_search,
    local_residual_oracle,
)
from loha.statespace import Car4D, CarState, Grid2D, GridState, ProblemInstance
from loha.planner import sample_problems

from helpers import dijkstra_grid2d, local_residual_bfs, validate_path


def grid_instance(grid, start, goal, K=3, w=1.0):
    return ProblemInstance(domain=Grid2D(grid), start=start, goal=goal, K=K, w=w)


def test_straight_line_cost():
    g = generate_random(8, 8, 0.0, 0)
    res = astar(grid_instance(g, GridState(0, 0), GridState(5, 0)), w=1.0)
    assert res.status == SOLVED
    assert res.cost == 5
    assert res.path[0] == GridState(0, 0) and res.path[-1] == GridState(5, 0)


def test_detour_matches_dijkstra_oracle():
    cells = np.zeros((8, 8), dtype=bool)
    cells[0:7, 4] = True  # wall with a gap at the bottom
    g = OccupancyGrid(width=8, height=8, cells=cells)
    start, goal = GridState(1, 1), GridState(6, 1)
    res = astar(grid_instance(g, start, goal), w=1.0)
    assert res.cost == dijkstra_grid2d(g, start, goal)
    assert validate_path(res.path and Grid2D(g) or None, res.path, res.cost)


def test_random_instances_match_dijkstra():
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 40:
        g = generate_random(24, 24, 0.3, int(rng.integers(0, 10_000)))
        free = np.argwhere(~g.cells)
        (sy, sx), (gy, gx) = free[rng.integers(0, len(free), 2)]
        start, goal = GridState(int(sx), int(sy)), GridState(int(gx), int(gy))
        expected = dijkstra_grid2d(g, start, goal)
        res = astar(grid_instance(g, start, goal), w=1.0)
        if expected is None:
            assert res.status == EXHAUSTED
        else:
            assert res.cost == expected
            assert validate_path(Grid2D(g), res.path, res.cost)
        checked += 1


def test_weighted_bound_and_statuses():
    rng = np.random.default_rng(3)
    for _ in range(20):
        g = generate_random(20, 20, 0.25, int(rng.integers(0, 10_000)))
        free = np.argwhere(~g.cells)
        (sy, sx), (gy, gx) = free[rng.integers(0, len(free), 2)]
        start, goal = GridState(int(sx), int(sy)), GridState(int(gx), int(gy))
        optimal = dijkstra_grid2d(g, start, goal)
        if optimal is None:
            continue
        res = astar(grid_instance(g, start, goal), w=4.0)
        assert res.status == SOLVED
        assert res.cost <= 4 * optimal


def test_expansion_limit_status():
    g = generate_random(16, 16, 0.0, 0)
    res = astar(grid_instance(g, GridState(0, 0), GridState(15, 15)), w=1.0, expansion_limit=5)
    assert res.status == EXPANSION_LIMIT
    assert res.expansions == 5
    assert res.path is None and res.cost is None


def test_exhausted_on_sealed_goal():
    cells = np.zeros((8, 8), dtype=bool)
    cells[4, 3:6] = True
    cells[6, 3:6] = True
    cells[5, 3] = True
    cells[5, 5] = True  # goal cell (4,5) fully sealed
    g = OccupancyGrid(width=8, height=8, cells=cells)
    res = astar(grid_instance(g, GridState(0, 0), GridState(4, 5)), w=1.0)
    assert res.status == EXHAUSTED


def test_expansion_indices_and_parent_invariants():
    g = generate_random(16, 16, 0.25, 9)
    free = np.argwhere(~g.cells)
    start = GridState(int(free[0][1]), int(free[0][0]))
    goal = GridState(int(free[-1][1]), int(free[-1][0]))
    seen = []
    res = astar(grid_instance(g, start, goal), w=1.0,
                hook=lambda node, nodes: seen.append(node), keep_nodes=True)
    indices = [n.expansion_index for n in seen]
    assert indices == sorted(set(indices))
    # parent chains terminate at the start and g adds up edge by edge
    for node in seen:
        cur = node
        hops = 0
        while cur.parent is not None:
            parent = res.nodes[cur.parent]
            assert cur.g == parent.g + 1
            cur = parent
            hops += 1
            assert hops <= len(seen)
        assert cur.state == start


def test_monotone_priorities_consistent_heuristic():
    g = generate_random(20, 20, 0.3, 4)
    free = np.argwhere(~g.cells)
    start = GridState(int(free[0][1]), int(free[0][0]))
    goal = GridState(int(free[-1][1]), int(free[-1][0]))
    fs = []
    astar(grid_instance(g, start, goal), w=1.0,
          hook=lambda node, nodes: fs.append(node.g + node.h))
    assert all(a <= b for a, b in zip(fs, fs[1:]))


def test_deterministic_expansion_sequence():
    g = generate_random(20, 20, 0.3, 4)
    free = np.argwhere(~g.cells)
    start = GridState(int(free[0][1]), int(free[0][0]))
    goal = GridState(int(free[-1][1]), int(free[-1][0]))
    runs = []
    for _ in range(2):
        order = []
        astar(grid_instance(g, start, goal), w=1.0,
              hook=lambda node, nodes: order.append(node.state))
        runs.append(order)
    assert runs[0] == runs[1]


# ---------------------------------------------------------------------------
# Focal search
# ---------------------------------------------------------------------------

def test_focal_degenerate_matches_astar_cost():
    rng = np.random.default_rng(11)
    for _ in range(10):
        g = generate_random(16, 16, 0.25, int(rng.integers(0, 10_000)))
        free = np.argwhere(~g.cells)
        (sy, sx), (gy, gx) = free[rng.integers(0, len(free), 2)]
        inst = grid_instance(g, GridState(int(sx), int(sy)), GridState(int(gx), int(gy)))
        a = astar(inst, w=1.0)
        f = focal_search(inst, w=1.0, focal_priority=lambda n: n.g + n.h)
        assert a.status == f.status
        if a.status == SOLVED:
            assert a.cost == f.cost


def test_focal_with_oracle_residual_stays_within_bound():
    rng = np.random.default_rng(13)
    solved = 0
    while solved < 15:
        g = generate_random(32, 32, 0.3, int(rng.integers(0, 10_000)))
        free = np.argwhere(~g.cells)
        (sy, sx), (gy, gx) = free[rng.integers(0, len(free), 2)]
        inst = grid_instance(g, GridState(int(sx), int(sy)), GridState(int(gx), int(gy)), K=3, w=2.0)
        optimal = dijkstra_grid2d(g, inst.start, inst.goal)
        if optimal is None:
            continue

        def residual_priority(node):
            r = local_residual_oracle(inst.domain, node.state, inst.goal, 3)
            return node.g + node.h + (r.h_k if r.status == "ok" else 0.0)

        res = focal_search(inst, w=2.0, focal_priority=residual_priority)
        assert res.status == SOLVED
        assert res.cost <= 2 * optimal
        solved += 1


def test_focal_greedy_cul_de_sac_still_solves():
    cells = np.zeros((12, 12), dtype=bool)
    cells[2:9, 8] = True   # pocket wall in front of the goal direction
    cells[2, 4:8] = True
    cells[8, 4:8] = True
    g = OccupancyGrid(width=12, height=12, cells=cells)
    inst = grid_instance(g, GridState(5, 5), GridState(10, 5), w=3.0)
    res = focal_search(inst, w=3.0, focal_priority=lambda n: n.h)  # pure greedy
    assert res.status == SOLVED
    assert res.cost == dijkstra_grid2d(g, inst.start, inst.goal) or \
        res.cost <= 3 * dijkstra_grid2d(g, inst.start, inst.goal)


def test_focal_car_domain_bound():
    g = generate_random(48, 48, 0.25, 8)
    rng = np.random.default_rng(5)
    probs = sample_problems("car4d", [g], 3, rng, K=4, w=2.0, min_dist=8, max_dist=16)
    for p in probs:
        opt = astar(p, w=1.0, expansion_limit=400_000)
        if opt.status != SOLVED:
            continue
        res = focal_search(p, w=2.0, focal_priority=lambda n: n.g + 2.0 * n.h)
        assert res.status == SOLVED
        assert res.cost <= 2 * opt.cost


# ---------------------------------------------------------------------------
# Local residual oracle
# ---------------------------------------------------------------------------

def test_oracle_empty_grid_residual_zero():
    g = generate_random(32, 32, 0.0, 0)
    d = Grid2D(g)
    goal = GridState(30, 30)
    for s in (GridState(10, 10), GridState(5, 20), GridState(16, 4)):
        r = local_residual_oracle(d, s, goal, 3)
        assert r.status == "ok"
        assert r.h_k == 0.0


def test_oracle_enclosed_state_is_dead_end():
    cells = np.zeros((8, 8), dtype=bool)
    for x, y in ((2, 3), (4, 3), (3, 2), (3, 4)):
        cells[y, x] = True
    g = OccupancyGrid(width=8, height=8, cells=cells)
    r = local_residual_oracle(Grid2D(g), GridState(3, 3), GridState(7, 7), 3)
    assert r.status == "inf"
    assert r.h_k is None


def test_oracle_u_shape_matches_bfs_enumeration():
    cells = np.zeros((15, 15), dtype=bool)
    for y in range(5, 10):
        cells[y, 5] = True        # wall east of s
    for x in (3, 4):
        cells[5, x] = True        # north arm
        cells[9, x] = True        # south arm
    g = OccupancyGrid(width=15, height=15, cells=cells)
    s, goal = GridState(4, 7), GridState(12, 7)
    r = local_residual_oracle(Grid2D(g), s, goal, 3)
    expected = local_residual_bfs(g, s, goal, 3)
    assert r.status == "ok"
    assert expected is not None and expected > 0
    assert r.h_k == expected


def test_oracle_matches_bfs_on_random_windows():
    rng = np.random.default_rng(17)
    for escape in ("border", "beyond"):
        for _ in range(60):
            g = generate_random(20, 20, 0.35, int(rng.integers(0, 100_000)))
            free = np.argwhere(~g.cells)
            sy, sx = free[rng.integers(0, len(free))]
            gy, gx = free[rng.integers(0, len(free))]
            s, goal = GridState(int(sx), int(sy)), GridState(int(gx), int(gy))
            K = int(rng.integers(2, 5))
            r = local_residual_oracle(Grid2D(g), s, goal, K, escape=escape)
            expected = local_residual_bfs(g, s, goal, K, escape=escape)
            if expected is None:
                assert r.status == "inf"
            else:
                assert r.status == "ok"
                assert r.h_k == pytest.approx(expected, abs=1e-12)


def test_oracle_nonnegative_with_consistent_heuristic():
    rng = np.random.default_rng(23)
    for _ in range(50):
        g = generate_random(24, 24, 0.3, int(rng.integers(0, 100_000)))
        free = np.argwhere(~g.cells)
        sy, sx = free[rng.integers(0, len(free))]
        r = local_residual_oracle(Grid2D(g), GridState(int(sx), int(sy)), GridState(23, 23), 4)
        if r.status == "ok":
            assert r.h_k >= 0.0


def test_oracle_expansion_cap():
    g = generate_random(32, 32, 0.0, 0)
    r = local_residual_oracle(Grid2D(g), GridState(16, 16), GridState(30, 30), 8, expansion_cap=3)
    assert r.status == "capped"
    assert r.h_k is None
    assert r.expansions == 3


def test_oracle_goal_inside_region():
    g = generate_random(16, 16, 0.0, 0)
    d = Grid2D(g)
    s, goal = GridState(8, 8), GridState(9, 8)
    r = local_residual_oracle(d, s, goal, 4)
    assert r.status == "ok"
    # cost to goal is 1, h_g(s) is 1: residual 0
    assert r.h_k == 0.0
    r2 = local_residual_oracle(d, s, goal, 4, stop_at_goal=False)
    assert r2.status == "ok"
    assert r2.h_k >= r.h_k


def test_car_path_validity_and_admissibility():
    g = generate_random(32, 32, 0.2, 6)
    rng = np.random.default_rng(2)
    probs = sample_problems("car4d", [g], 3, rng, K=4, w=2.0, min_dist=6, max_dist=14)
    for p in probs:
        res = astar(p, w=2.0, expansion_limit=200_000)
        assert res.status == SOLVED
        assert validate_path(p.domain, res.path, res.cost)
        assert p.domain.h_g(p.start, p.goal) <= res.cost
