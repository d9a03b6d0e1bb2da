"""Independent reference implementations used as test oracles.

Everything here deliberately avoids the library's search code paths:
costs come from a heuristic-free Dijkstra, local residuals from

layered BFS over the window, and synthetic tree domains drive the
collector on graphs where every state has exactly one path from the root.
"""

from __future__ import annotations

import heapq
from collections import deque

import numpy as np

from loha.gridmap import OccupancyGrid
from loha.statespace import GridState, Transition


def dijkstra_grid2d(grid: OccupancyGrid, start: GridState, goal: GridState):
    """Optimal 4-connected path cost, or None if unreachable."""
    if grid.is_blocked(*start) or grid.is_blocked(*goal):
        return None
    dist = {start: 0}
    heap = [(0, start)]
    while heap:
        d, s = heapq.heappop(heap)
        if d > dist.get(s, float("inf")):
            continue
        if s == goal:
            return d
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            t = GridState(s.cx + dx, s.cy + dy)
            if grid.is_blocked(*t):
                continue
            nd = d + 1
            if nd < dist.get(t, float("inf")):
                dist[t] = nd
                heapq.heappush(heap, (nd, t))
    return None


def local_residual_bfs(grid: OccupancyGrid, s: GridState, goal: GridState, K: int,
                       escape: str = "border", include_goal_case: bool = True):
    """Grid2D local residual by exhaustive BFS over the window.

    BFS from s over free cells strictly inside the escape threshold, then
    minimize cost + h over every escape cell adjacent to the interior.
    Returns None for a dead end.
    """
    def cheb(a, b):
        return max(abs(a.cx - b.cx), abs(a.cy - b.cy))

    def h(a):
        return abs(a.cx - goal.cx) + abs(a.cy - goal.cy)

    interior_max = K - 1 if escape == "border" else K
    dist = {s: 0}
    queue = deque([s])
    best = None
    while queue:
        u = queue.popleft()
        du = dist[u]
        if include_goal_case and u == goal:
            cand = du + 0
            best = cand if best is None else min(best, cand)
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            v = GridState(u.cx + dx, u.cy + dy)
            if grid.is_blocked(*v):
                continue
            if cheb(s, v) > interior_max:
                cand = du + 1 + h(v)
                best = cand if best is None else min(best, cand)
                continue
            if v not in dist:
                dist[v] = du + 1
                queue.append(v)
    if best is None:
        return None
    return best - h(s)


class TreeDomain:
    """Directed tree with unit edge costs, integer node ids, and a 2D
    position per node (Manhattan heuristic; edges move positions by at
    most one cell, so the heuristic is consistent)."""

    name = "tree"

    def __init__(self, children: dict, positions: dict, goal_id: int):
        self.children = children
        self.positions = positions
        self.goal_id = goal_id
        self.collision_checks = 0
        self.grid = None

    def successors(self, s):
        return [Transition(c, 1) for c in self.children.get(s, ())]

    def h_g(self, s, goal) -> float:
        px, py = self.positions[s]
        gx, gy = self.positions[goal]
        return float(abs(px - gx) + abs(py - gy))

    def is_goal(self, s, goal) -> bool:
        return s == goal

    def region_distance(self, a, b) -> int:
        ax, ay = self.positions[a]
        bx, by = self.positions[b]
        return max(abs(ax - bx), abs(ay - by))

    def is_free(self, s) -> bool:
        return True

    @staticmethod
    def position_cell(s):
        raise NotImplementedError("tree states have no grid cell")


def random_tree(n_nodes: int, seed: int, branching: float = 0.35) -> TreeDomain:
    """Random tree embedded in the plane by unit random-walk steps. Lower
    ``branching`` makes longer chains (deeper trees collect more data)."""
    rng = np.random.default_rng(seed)
    children: dict = {0: []}
    positions = {0: (0, 0)}
    chain_tip = 0
    for node in range(1, n_nodes):
        if rng.random() < branching:
            parent = int(rng.integers(0, node))
        else:
            parent = chain_tip
        px, py = positions[parent]
        dx, dy = ((1, 0), (-1, 0), (0, 1), (0, -1))[int(rng.integers(0, 4))]
        positions[node] = (px + dx, py + dy)
        children.setdefault(parent, []).append(node)
        children[node] = []
        chain_tip = node
    goal_id = max(positions, key=lambda i: abs(positions[i][0]) + abs(positions[i][1]))
    return TreeDomain(children, positions, goal_id)


def validate_path(domain, path, cost) -> bool:
    """Path endpoints aside, every consecutive pair must be a real
    transition and the step costs must sum to the reported cost."""
    total = 0
    for a, b in zip(path, path[1:]):
        match = [t for t in domain.successors(a) if t.successor == b]
        if not match:
            return False
        total += match[0].cost
    return total == cost
