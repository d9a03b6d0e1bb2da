"""Occupancy grids: random generation, blocked queries, and text map I/O.

The map file format is the plain-text benchmark style (header plus one
character per cell, ``.`` free and ``@`` obstacle), so generated maps are
human-diffable and standard benchmark maps can be dropped in directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MapFormatError(ValueError):
    """Raised on a malformed map file; carries the offending line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class OccupancyGrid:
    """2D boolean obstacle raster. Immutable after construction.

    ``cells[y, x]`` is True where blocked. ``resolution`` is metadata
    (world units per cell) recorded for provenance; the state spaces fix
    their own lattice conventions. ``seed`` records how a generated map
    was produced (0 for maps read from files).
    """

    width: int
    height: int
    cells: np.ndarray
    resolution: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.cells.shape != (self.height, self.width):
            raise ValueError(
                f"cells shape {self.cells.shape} != (height, width) = "
                f"({self.height}, {self.width})"
            )
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        self.cells.setflags(write=False)

    def is_blocked(self, cx: int, cy: int) -> bool:
        """True if (cx, cy) is an obstacle. Out-of-bounds counts as blocked."""
        if cx < 0 or cy < 0 or cx >= self.width or cy >= self.height:
            return True
        return bool(self.cells[cy, cx])

    def obstacle_count(self) -> int:
        return int(self.cells.sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.cells, other.cells)
        )


def generate_random(width: int, height: int, density: float, seed: int) -> OccupancyGrid:
    """Generate a map with each cell independently blocked with probability
    ``density``. Deterministic for fixed arguments."""
    if width < 4 or height < 4:
        raise ValueError(f"map dimensions must be >= 4, got {width}x{height}")
    if not 0.0 <= density < 1.0:
        raise ValueError(f"density must be in [0, 1), got {density}")
    rng = np.random.default_rng(np.uint64(seed))
    cells = rng.random((height, width)) < density
    return OccupancyGrid(width=width, height=height, cells=cells, seed=seed)


def write_map(grid: OccupancyGrid, path) -> None:
    """Write the text map format (bit-exact, newline-terminated rows)."""
    lines = [
        "type octile",
        f"height {grid.height}",
        f"width {grid.width}",
        "map",
    ]
    for y in range(grid.height):
        row = grid.cells[y]
        lines.append("".join("@" if row[x] else "." for x in range(grid.width)))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_map(path) -> OccupancyGrid:
    """Parse a text map. Raises MapFormatError with a line number on bad input."""
    with open(path) as fh:
        raw = fh.read().split("\n")
    # trailing newline produces one empty final element; drop it
    if raw and raw[-1] == "":
        raw.pop()

    def expect(idx: int, prefix: str) -> str:
        if idx >= len(raw):
            raise MapFormatError(f"missing '{prefix}' header", idx + 1)
        line = raw[idx]
        if prefix and not line.startswith(prefix):
            raise MapFormatError(f"expected '{prefix}', got {line!r}", idx + 1)
        return line

    expect(0, "type ")
    try:
        height = int(expect(1, "height ").split()[1])
        width = int(expect(2, "width ").split()[1])
    except (IndexError, ValueError):
        raise MapFormatError("bad height/width header", 2) from None
    if height <= 0 or width <= 0:
        raise MapFormatError("height and width must be positive", 2)
    expect(3, "map")
    if len(raw) - 4 != height:
        raise MapFormatError(f"expected {height} map rows, found {len(raw) - 4}", len(raw))

    cells = np.zeros((height, width), dtype=bool)
    for y in range(height):
        line_no = 5 + y  # 1-based line of this row in the file
        row = raw[4 + y]
        if len(row) != width:
            raise MapFormatError(
                f"row has {len(row)} characters, expected {width}", line_no
            )
        for x, ch in enumerate(row):
            if ch == "@":
                cells[y, x] = True
            elif ch != ".":
                raise MapFormatError(f"unknown cell character {ch!r}", line_no)
    return OccupancyGrid(width=width, height=height, cells=cells)
