"""State spaces over occupancy grids: a 4-connected 2D grid and a 4D car lattice.

Conventions shared by both domains:

* Grid cells are 1.0 world unit squares; cell (cx, cy) spans world
  [cx, cx+1) x [cy, cy+1).
* Car positions live on the half-cell lattice: state index xi means world
  x = 0.5 * xi. A position exactly on a cell boundary belongs to the cell
  on its right/top (floor convention).
* All actions cost exactly 1, so g-values are exact integers.
* Region distances are Chebyshev over positions, measured in cells.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Union

from loha.gridmap import OccupancyGrid, read_map


class GridState(NamedTuple):
    """2D grid cell."""

    cx: int
    cy: int


class CarState(NamedTuple):
    """Car on the half-cell lattice: heading index theta in [0, 12)
    (30 degree increments), velocity v in [-1, 3]."""

    xi: int
    yi: int
    theta: int
    v: int


SearchState = Union[GridState, CarState]


class Transition(NamedTuple):
    successor: SearchState
    cost: int


def region_distance(s: SearchState, s2: SearchState) -> float:
    """Chebyshev distance between positions, in cells.

    Car half-cell indices convert at 0.5 cells per index step.
    """
    if isinstance(s, GridState):
        return max(abs(s.cx - s2.cx), abs(s.cy - s2.cy))
    return 0.5 * max(abs(s.xi - s2.xi), abs(s.yi - s2.yi))


def in_lrb(s: SearchState, s2: SearchState, k: int) -> bool:
    """True when s2 sits exactly on the border of s's local region."""
    return region_distance(s, s2) == k


def escaped(s: SearchState, s2: SearchState, k: int) -> bool:
    """True when s2 lies strictly beyond s's local region (the collector's
    completion test; robust to non-unit jumps)."""
    return region_distance(s, s2) > k


def _snap(x: float) -> int:
    """Round half away from zero, so forward and reverse motions mirror."""
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


def _swept_cells(di: int, dj: int, px: int, py: int) -> tuple[tuple[int, int], ...]:
    """Cell offsets (relative to the start cell) touched by a straight
    segment of (di, dj) half-cells starting at parity (px, py), sampled at
    0.5-cell intervals. Exact integer arithmetic, no float floors."""
    n = math.isqrt(di * di + dj * dj)
    if n * n < di * di + dj * dj:
        n += 1  # ceil(segment length in half-cells)
    n = max(n, 1)
    offs = set()
    for k in range(n + 1):
        # world offset from the start cell corner: (p + k*d/n) / 2
        ox = (px * n + k * di) // (2 * n)
        oy = (py * n + k * dj) // (2 * n)
        offs.add((ox, oy))
    return tuple(sorted(offs))


def _build_primitives() -> dict:
    # velocity is world units per action: v' translates 2*v' half-cell
    # lattice steps, so a full-speed straight step covers exactly 3 world
    # units and h_g = L2/3 stays tight as well as consistent
    prims = {}
    for theta in range(12):
        ang = theta * math.pi / 6.0
        c, s = math.cos(ang), math.sin(ang)
        for v in (-1, 1, 2, 3):
            di, dj = _snap(2 * v * c), _snap(2 * v * s)
            for px in (0, 1):
                for py in (0, 1):
                    prims[(theta, v, px, py)] = (di, dj, _swept_cells(di, dj, px, py))
    return prims


_CAR_PRIMS = _build_primitives()

_DELTA_V = (-1, 0, 1)
_DELTA_STEER = (-2, -1, 0, 1, 2)  # steering command in 30-degree units


class Grid2D:
    """4-connected unit-cost grid. Heuristic: Manhattan distance (consistent).

    ``collision_checks`` counts cell queries made while generating
    successors; it is plain instance state, not thread-safe.
    """

    name = "grid2d"

    def __init__(self, grid: OccupancyGrid):
        self.grid = grid
        self.width = grid.width
        self.height = grid.height
        self._blocked = grid.cells.reshape(-1).tolist()
        self.collision_checks = 0

    def is_free(self, s: GridState) -> bool:
        self.collision_checks += 1
        if s.cx < 0 or s.cy < 0 or s.cx >= self.width or s.cy >= self.height:
            return False
        return not self._blocked[s.cy * self.width + s.cx]

    def successors(self, s: GridState) -> list[Transition]:
        out = []
        w, h = self.width, self.height
        blocked = self._blocked
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            cx, cy = s.cx + dx, s.cy + dy
            self.collision_checks += 1
            if 0 <= cx < w and 0 <= cy < h and not blocked[cy * w + cx]:
                out.append(Transition(GridState(cx, cy), 1))
        return out

    @staticmethod
    def h_g(s: GridState, goal: GridState) -> int:
        return abs(s.cx - goal.cx) + abs(s.cy - goal.cy)

    @staticmethod
    def is_goal(s: GridState, goal: GridState) -> bool:
        return s == goal

    @staticmethod
    def region_distance(s: GridState, s2: GridState) -> int:
        return max(abs(s.cx - s2.cx), abs(s.cy - s2.cy))

    @staticmethod
    def position_cell(s: GridState) -> tuple[int, int]:
        return s.cx, s.cy


class Car4D:
    """Car lattice on the half-cell grid.

    Actions combine a velocity change in {-1, 0, +1} with a steering
    command in {-60, -30, 0, 30, 60} degrees (15 actions, all cost 1).
    The new velocity v' is clamped to [-1, 3]; heading turns by the
    steering command and the car translates v' world units (2*v'
    half-cell steps) along the new heading, with the endpoint snapped to
    the half-cell lattice. A stationary result (v' == 0) keeps the
    position, and its heading only changes for commands up to 30 degrees.
    Segments are collision-checked at 0.5-cell intervals; blocked or
    out-of-bounds successors are dropped and duplicates deduplicated.

    Heuristic: straight-line world distance to the goal position divided
    by 3 (the top speed). No snapped step displaces more than 3.0 world
    units, so the heuristic is consistent, and a full-speed straight step
    drops it by exactly the step cost.
    """

    name = "car4d"

    def __init__(self, grid: OccupancyGrid):
        self.grid = grid
        self.width = grid.width
        self.height = grid.height
        self._blocked = grid.cells.reshape(-1).tolist()
        self.collision_checks = 0

    def is_free(self, s: CarState) -> bool:
        return self._cell_free(s.xi >> 1, s.yi >> 1)

    def _cell_free(self, cx: int, cy: int) -> bool:
        self.collision_checks += 1
        if cx < 0 or cy < 0 or cx >= self.width or cy >= self.height:
            return False
        return not self._blocked[cy * self.width + cx]

    def successors(self, s: CarState) -> list[Transition]:
        out = []
        seen = set()
        w, h = self.width, self.height
        blocked = self._blocked
        cx0, cy0 = s.xi >> 1, s.yi >> 1
        px, py = s.xi & 1, s.yi & 1
        for dv in _DELTA_V:
            v2 = s.v + dv
            if v2 < -1:
                v2 = -1
            elif v2 > 3:
                v2 = 3
            for dth in _DELTA_STEER:
                if v2 == 0:
                    th2 = (s.theta + dth) % 12 if -1 <= dth <= 1 else s.theta
                    nxt = CarState(s.xi, s.yi, th2, 0)
                    if nxt not in seen:
                        seen.add(nxt)
                        out.append(Transition(nxt, 1))
                    continue
                th2 = (s.theta + dth) % 12
                di, dj, offs = _CAR_PRIMS[(th2, v2, px, py)]
                nxt = CarState(s.xi + di, s.yi + dj, th2, v2)
                if nxt in seen:
                    continue
                ok = True
                for ox, oy in offs:
                    cx, cy = cx0 + ox, cy0 + oy
                    self.collision_checks += 1
                    if cx < 0 or cy < 0 or cx >= w or cy >= h or blocked[cy * w + cx]:
                        ok = False
                        break
                if ok:
                    seen.add(nxt)
                    out.append(Transition(nxt, 1))
        return out

    @staticmethod
    def h_g(s: CarState, goal: CarState) -> float:
        return math.hypot(0.5 * (s.xi - goal.xi), 0.5 * (s.yi - goal.yi)) / 3.0

    @staticmethod
    def is_goal(s: CarState, goal: CarState) -> bool:
        return s.xi == goal.xi and s.yi == goal.yi

    @staticmethod
    def region_distance(s: CarState, s2: CarState) -> float:
        return 0.5 * max(abs(s.xi - s2.xi), abs(s.yi - s2.yi))

    @staticmethod
    def position_cell(s: CarState) -> tuple[int, int]:
        return s.xi >> 1, s.yi >> 1


Domain = Union[Grid2D, Car4D]


def make_domain(name: str, grid: OccupancyGrid) -> Domain:
    if name == "grid2d":
        return Grid2D(grid)
    if name == "car4d":
        return Car4D(grid)
    raise ValueError(f"unknown domain {name!r}")


@dataclass
class ProblemInstance:
    """A start-goal planning problem: domain-bound grid, local window size
    K (cells), and suboptimality bound w."""

    domain: Domain
    start: SearchState
    goal: SearchState
    K: int
    w: float = 1.0
    problem_id: str = ""
    map_path: str = ""
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.w < 1.0:
            raise ValueError("w must be >= 1")
        if not self.domain.is_free(self.start):
            raise ValueError("start state is blocked")
        if not self.domain.is_free(self.goal):
            raise ValueError("goal state is blocked")


def _state_from_list(values: list) -> SearchState:
    if len(values) == 2:
        return GridState(*map(int, values))
    if len(values) == 4:
        return CarState(*map(int, values))
    raise ValueError(f"state must have 2 or 4 components, got {len(values)}")


def save_instance(instance: ProblemInstance, path) -> None:
    payload = {
        "map": instance.map_path,
        "start": list(instance.start),
        "goal": list(instance.goal),
        "K": instance.K,
        "w": instance.w,
        "seed": instance.seed,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_instance(path, map_root=None) -> ProblemInstance:
    """Load a problem instance file. The domain is inferred from the state
    arity (2 = grid2d, 4 = car4d); the referenced map is read relative to
    ``map_root`` (default: the instance file's directory)."""
    path = Path(path)
    with open(path) as fh:
        payload = json.load(fh)
    root = Path(map_root) if map_root is not None else path.parent
    map_path = payload["map"]
    grid = read_map(root / map_path if not Path(map_path).is_absolute() else map_path)
    start = _state_from_list(payload["start"])
    goal = _state_from_list(payload["goal"])
    domain = Car4D(grid) if isinstance(start, CarState) else Grid2D(grid)
    return ProblemInstance(
        domain=domain,
        start=start,
        goal=goal,
        K=int(payload["K"]),
        w=float(payload["w"]),
        map_path=str(map_path),
        seed=int(payload.get("seed", 0)),
    )
