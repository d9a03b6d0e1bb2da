"""Best-first search engines: A*/weighted A*, focal search, and the local
multi-goal A* oracle for exact escape-cost residuals.

Fixed contracts shared by both global engines:

* Priority ties break toward larger g (depth-first bias), then toward
  lower push order, so expansion sequences are fully deterministic.
* Strict closed list: a state is expanded at most once. Rediscoveries with
  a lower g before expansion update g and the parent pointer; after
  expansion they are ignored.
* The per-expansion hook fires once per expansion, after the expanded
  node's successors have been relaxed (parent pointers set).

g-values are exact integers (unit costs); heuristic values are floats and
cached on the node at first computation so every consumer sees identical
bits.
"""

from __future__ import annotations

from dataclasses import dataclass
from heapq import heappop, heappush
from typing import Callable, Mapping, Optional

from loha.statespace import ProblemInstance, SearchState

SOLVED = "solved"
EXHAUSTED = "exhausted"
EXPANSION_LIMIT = "expansion-limit"


class SearchNode:
    """Per-state bookkeeping. ``expansion_index`` is None while the state
    is open and a unique monotone counter once expanded; ``completed`` is
    collector bookkeeping and never touched by the engines."""

    __slots__ = ("state", "g", "h", "parent", "expansion_index", "completed")

    def __init__(self, state: SearchState, g: int, h: float, parent: Optional[SearchState]):
        self.state = state
        self.g = g
        self.h = h
        self.parent = parent
        self.expansion_index: Optional[int] = None
        self.completed = False


@dataclass
class SearchResult:
    path: Optional[list]
    cost: Optional[int]
    expansions: int
    status: str
    nodes: Optional[dict] = None  # populated when keep_nodes=True

    @property
    def solved(self) -> bool:
        return self.status == SOLVED


Hook = Callable[[SearchNode, Mapping[SearchState, "SearchNode"]], None]


def _reconstruct(nodes: dict, state: SearchState) -> list:
    path = []
    cur: Optional[SearchState] = state
    while cur is not None:
        path.append(cur)
        cur = nodes[cur].parent
    path.reverse()
    return path


def astar(
    instance: ProblemInstance,
    w: Optional[float] = None,
    expansion_limit: Optional[int] = None,
    hook: Optional[Hook] = None,
    keep_nodes: bool = False,
) -> SearchResult:
    """Best-first search on g + w*h_g. w=1 with a consistent heuristic
    returns optimal costs; w>1 is weighted A* (no re-expansions, which
    preserves the w-suboptimality bound)."""
    if w is None:
        w = instance.w
    domain = instance.domain
    goal = instance.goal
    h_fn = domain.h_g
    is_goal = domain.is_goal
    successors = domain.successors

    start_node = SearchNode(instance.start, 0, h_fn(instance.start, goal), None)
    nodes: dict = {instance.start: start_node}
    counter = 0
    heap = [(w * start_node.h, 0, counter, instance.start, 0)]
    expansions = 0

    while heap:
        _, _, _, state, g_pushed = heappop(heap)
        node = nodes[state]
        if node.expansion_index is not None or node.g != g_pushed:
            continue
        if is_goal(state, goal):
            result_nodes = nodes if keep_nodes else None
            return SearchResult(_reconstruct(nodes, state), node.g, expansions, SOLVED, result_nodes)
        if expansion_limit is not None and expansions >= expansion_limit:
            return SearchResult(None, None, expansions, EXPANSION_LIMIT, nodes if keep_nodes else None)
        node.expansion_index = expansions
        expansions += 1
        g = node.g
        for s2, cost in successors(state):
            g2 = g + cost
            n2 = nodes.get(s2)
            if n2 is None:
                n2 = SearchNode(s2, g2, h_fn(s2, goal), state)
                nodes[s2] = n2
            elif n2.expansion_index is None and g2 < n2.g:
                n2.g = g2
                n2.parent = state
            else:
                continue
            counter += 1
            heappush(heap, (g2 + w * n2.h, -g2, counter, s2, g2))
        if hook is not None:
            hook(node, nodes)

    return SearchResult(None, None, expansions, EXHAUSTED, nodes if keep_nodes else None)


def focal_search(
    instance: ProblemInstance,
    w: Optional[float] = None,
    focal_priority: Optional[Callable[[SearchNode], float]] = None,
    expansion_limit: Optional[int] = None,
    hook: Optional[Hook] = None,
    keep_nodes: bool = False,
    successor_hook: Optional[Callable[[list], None]] = None,
) -> SearchResult:
    """Bounded-suboptimal focal search.

    OPEN is ordered by f = g + h_g; FOCAL holds the OPEN nodes with
    f <= w * f_min and is ordered by ``focal_priority`` (ties toward larger
    g, then push order). Because f_min never decreases under a consistent
    heuristic, the admission bound only grows, and each node moves from the
    admission queue into FOCAL at most once per g-improvement.

    Any ``focal_priority`` keeps the returned cost within w * optimal when
    h_g is admissible. Defaults to f itself (degenerates to A*).

    ``successor_hook`` is a performance hook: it receives each expansion's
    freshly relaxed successor states before their focal priorities are
    computed, so callers can batch expensive priority ingredients.
    """
    if w is None:
        w = instance.w
    domain = instance.domain
    goal = instance.goal
    h_fn = domain.h_g
    is_goal = domain.is_goal
    successors = domain.successors
    if focal_priority is None:
        focal_priority = lambda node: node.g + node.h

    start_node = SearchNode(instance.start, 0, h_fn(instance.start, goal), None)
    nodes: dict = {instance.start: start_node}
    counter = 0
    start_entry = (start_node.h, 0, counter, instance.start, 0)
    open_heap = [start_entry]   # tracks f_min over all open nodes
    admit_heap = [start_entry]  # open nodes not yet admitted to FOCAL
    focal_heap: list = []
    bound = -float("inf")
    expansions = 0

    def alive(state: SearchState, g_pushed: int) -> bool:
        node = nodes[state]
        return node.expansion_index is None and node.g == g_pushed

    while True:
        while open_heap and not alive(open_heap[0][3], open_heap[0][4]):
            heappop(open_heap)
        if not open_heap:
            return SearchResult(None, None, expansions, EXHAUSTED, nodes if keep_nodes else None)
        f_min = open_heap[0][0]
        if w * f_min > bound:
            bound = w * f_min
        while admit_heap:
            f, _, _, state, g_pushed = admit_heap[0]
            if not alive(state, g_pushed):
                heappop(admit_heap)
                continue
            if f > bound:
                break
            heappop(admit_heap)
            node = nodes[state]
            counter += 1
            heappush(focal_heap, (focal_priority(node), -node.g, counter, state, g_pushed))

        entry = None
        while focal_heap:
            candidate = heappop(focal_heap)
            if alive(candidate[3], candidate[4]):
                entry = candidate
                break
        if entry is None:
            continue  # everything admitted so far was stale; re-admit

        state, g_pushed = entry[3], entry[4]
        node = nodes[state]
        if is_goal(state, goal):
            return SearchResult(_reconstruct(nodes, state), node.g, expansions, SOLVED,
                                nodes if keep_nodes else None)
        if expansion_limit is not None and expansions >= expansion_limit:
            return SearchResult(None, None, expansions, EXPANSION_LIMIT, nodes if keep_nodes else None)
        node.expansion_index = expansions
        expansions += 1
        g = node.g
        relaxed = []
        for s2, cost in successors(state):
            g2 = g + cost
            n2 = nodes.get(s2)
            if n2 is None:
                n2 = SearchNode(s2, g2, h_fn(s2, goal), state)
                nodes[s2] = n2
            elif n2.expansion_index is None and g2 < n2.g:
                n2.g = g2
                n2.parent = state
            else:
                continue
            relaxed.append(n2)
        if successor_hook is not None and relaxed:
            successor_hook([n2.state for n2 in relaxed])
        for n2 in relaxed:
            g2 = n2.g
            counter += 1
            new_entry = (g2 + n2.h, -g2, counter, n2.state, g2)
            heappush(open_heap, new_entry)
            if new_entry[0] <= bound:
                counter += 1
                heappush(focal_heap, (focal_priority(n2), -g2, counter, n2.state, g2))
            else:
                heappush(admit_heap, new_entry)
        if hook is not None:
            hook(node, nodes)


OR_OK = "ok"
OR_INF = "inf"
OR_CAPPED = "capped"


@dataclass
class OracleResult:
    status: str
    h_k: Optional[float]
    expansions: int
    best_border: Optional[SearchState] = None


def local_residual_oracle(
    domain,
    s: SearchState,
    goal: SearchState,
    K: int,
    expansion_cap: Optional[int] = None,
    escape: str = "border",
    blocked_states=None,
    stop_at_goal: bool = True,
) -> OracleResult:
    """Ground-truth local residual by multi-goal A* rooted at ``s``.

    Nodes are prioritized by b = c(s, s') + h_g(s'). The search terminates
    on the first expanded state that escapes the local window (``escape``
    "border": region distance >= K; "beyond": > K, matching the
    backtracking collector's completion test), or on expanding the global
    goal inside the window (residual relative to h_g(goal) = 0). Returns
    the residual h_k = h_gk - h_g(s), the expansion count (work spent,
    including the terminal expansion), and the terminating state.

    Status "inf" marks a dead end (no escape exists), "capped" an aborted
    search; neither carries a residual. ``blocked_states`` optionally
    treats a set of states as obstacles (closed-list ablation).
    ``stop_at_goal=False`` disables the goal-in-window termination, which
    the backtracking collector has no counterpart for; comparisons between
    the two use that mode.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if escape not in ("border", "beyond"):
        raise ValueError(f"unknown escape mode {escape!r}")
    h_fn = domain.h_g
    is_goal = domain.is_goal
    successors = domain.successors
    dist = domain.region_distance
    beyond = escape == "beyond"

    h_s = h_fn(s, goal)
    g_values: dict = {s: 0}
    closed: set = set()
    counter = 0
    heap = [(h_s, 0, counter, s, 0)]
    expansions = 0

    while heap:
        b, _, _, state, g_pushed = heappop(heap)
        g = g_values[state]
        if state in closed or g != g_pushed:
            continue
        d = dist(s, state)
        if (d > K) if beyond else (d >= K):
            return OracleResult(OR_OK, b - h_s, expansions + 1, state)
        if stop_at_goal and is_goal(state, goal):
            return OracleResult(OR_OK, g - h_s, expansions + 1, state)
        if expansion_cap is not None and expansions >= expansion_cap:
            return OracleResult(OR_CAPPED, None, expansions)
        closed.add(state)
        expansions += 1
        for s2, cost in successors(state):
            if s2 in closed:
                continue
            if blocked_states is not None and s2 in blocked_states:
                continue
            g2 = g + cost
            old = g_values.get(s2)
            if old is not None and g2 >= old:
                continue
            g_values[s2] = g2
            counter += 1
            heappush(heap, (g2 + h_fn(s2, goal), -g2, counter, s2, g2))

    return OracleResult(OR_INF, None, expansions)
