"""Backtracking data collection: harvest local-residual training samples as
a byproduct of ordinary global searches.

On every expansion the collector walks the expanded node's ancestor chain.
An ancestor whose local window the expanded node has escaped (region
distance > K) gets a complete record whose target is exact with respect to
the search tree; ancestors reached only inside the window keep a running
lower-bound record, overwritten by the most recent in-window descendant.
Already-complete ancestors are skipped without a write. Backtracking
performs no collision checks and no queue operations; the hosting search
is unaffected.

By default the walk continues climbing past complete ancestors. Halting at
the first complete ancestor (``stop_at_completed=True``) is cheaper but can
starve an upper ancestor whose completion is pending while a descendant
subtree loops back inside its window: the first escaping descendant's walk
then never reaches it, and a later, costlier escape records its value
instead. The default keeps complete targets equal to the local-oracle
minimum on tree-structured graphs.

At finalize, complete records become full-weight samples and surviving
lower-bound records become fractional-weight samples with
alpha = best_d / K (progress toward the border). Records with zero
progress are dropped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from loha.search import OracleResult, SearchNode, local_residual_oracle
from loha.statespace import CarState, GridState, SearchState

SCHEMA_VERSION = 1

SOURCE_ORACLE = "oracle"
SOURCE_COMPLETE = "backtrack-complete"
SOURCE_INCOMPLETE = "backtrack-incomplete"


@dataclass
class Sample:
    """One training record: a state, its residual target, and its loss weight."""

    map_id: str
    state: SearchState
    K: int
    target: float
    alpha: float
    complete: bool
    source: str
    problem_id: str
    h_g_s: float
    features: Optional[object] = field(default=None, repr=False, compare=False)

    def to_json_dict(self) -> dict:
        return {
            "map_id": self.map_id,
            "state": list(self.state),
            "K": self.K,
            "target": self.target,
            "alpha": self.alpha,
            "complete": self.complete,
            "source": self.source,
            "problem_id": self.problem_id,
            "h_g_s": self.h_g_s,
            "schema_version": SCHEMA_VERSION,
        }


def _state_from_list(values: list) -> SearchState:
    if len(values) == 2:
        return GridState(*map(int, values))
    return CarState(*map(int, values))


def write_samples(samples: list[Sample], path) -> None:
    """JSONL, one sample per line, fixed field order (byte-stable)."""
    with open(path, "w", newline="\n") as fh:
        for sample in samples:
            fh.write(json.dumps(sample.to_json_dict(), separators=(",", ":")))
            fh.write("\n")


def read_samples(path) -> list[Sample]:
    samples = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec.get("schema_version") != SCHEMA_VERSION:
                raise ValueError(f"unsupported sample schema_version {rec.get('schema_version')}")
            samples.append(Sample(
                map_id=rec["map_id"],
                state=_state_from_list(rec["state"]),
                K=int(rec["K"]),
                target=float(rec["target"]),
                alpha=float(rec["alpha"]),
                complete=bool(rec["complete"]),
                source=rec["source"],
                problem_id=rec["problem_id"],
                h_g_s=float(rec["h_g_s"]),
            ))
    return samples


class BacktrackCollector:
    """Attach ``on_expand`` as a search hook, then call ``finalize`` once
    the search has returned.

    ``overwrite_violations`` / ``completion_violations`` count lower-bound
    updates that decreased, which cannot happen for optimal searches under
    a consistent heuristic; they exist so experiments can assert this.
    """

    def __init__(self, domain, K: int, map_id: str = "", problem_id: str = "",
                 stop_at_completed: bool = False):
        if K < 1:
            raise ValueError("K must be >= 1")
        self.domain = domain
        self.K = K
        self.map_id = map_id
        self.problem_id = problem_id
        self.stop_at_completed = stop_at_completed
        # state -> (target b, region distance d, h_g of the state)
        self._complete: dict = {}
        self._incomplete: dict = {}
        self.overwrite_violations = 0
        self.completion_violations = 0

    def on_expand(self, node: SearchNode, nodes) -> None:
        dist = self.domain.region_distance
        K = self.K
        state_s = node.state
        g_s = node.g
        h_s = node.h
        cur = node.parent
        incomplete = self._incomplete
        complete = self._complete
        while cur is not None:
            anc = nodes[cur]
            if anc.completed:
                if self.stop_at_completed:
                    break
                cur = anc.parent
                continue
            b = (g_s - anc.g) + h_s - anc.h
            d = dist(cur, state_s)
            if d > K:
                anc.completed = True
                old = incomplete.pop(cur, None)
                if old is not None and b < old[0]:
                    self.completion_violations += 1
                complete[cur] = (b, d, anc.h)
            else:
                old = incomplete.get(cur)
                if old is not None and b < old[0]:
                    self.overwrite_violations += 1
                incomplete[cur] = (b, d, anc.h)
            cur = anc.parent

    @property
    def complete_count(self) -> int:
        return len(self._complete)

    @property
    def incomplete_count(self) -> int:
        return len(self._incomplete)

    def finalize(self) -> list[Sample]:
        """Emit samples for this problem. Complete records carry alpha 1;
        surviving lower-bound records carry alpha = best_d / K and are
        dropped entirely when the last in-window descendant made no
        positional progress (best_d == 0)."""
        out = []
        for state, (b, _d, h) in self._complete.items():
            out.append(Sample(
                map_id=self.map_id, state=state, K=self.K, target=b,
                alpha=1.0, complete=True, source=SOURCE_COMPLETE,
                problem_id=self.problem_id, h_g_s=h,
            ))
        for state, (b, d, h) in self._incomplete.items():
            if d <= 0:
                continue
            out.append(Sample(
                map_id=self.map_id, state=state, K=self.K, target=b,
                alpha=d / self.K, complete=False, source=SOURCE_INCOMPLETE,
                problem_id=self.problem_id, h_g_s=h,
            ))
        return out


def collect_via_oracle(
    domain,
    states: list[SearchState],
    goal: SearchState,
    K: int,
    expansion_cap: Optional[int] = None,
    escape: str = "border",
    blocked_states=None,
    map_id: str = "",
    problem_id: str = "",
) -> tuple[list[Sample], int]:
    """Baseline collection: one local-oracle call per state.

    Dead-end and capped states yield no sample, but their expansions still
    count toward the returned total (work spent is work spent).
    """
    samples = []
    total_expansions = 0
    h_fn = domain.h_g
    for s in states:
        result: OracleResult = local_residual_oracle(
            domain, s, goal, K,
            expansion_cap=expansion_cap, escape=escape, blocked_states=blocked_states,
        )
        total_expansions += result.expansions
        if result.status != "ok":
            continue
        samples.append(Sample(
            map_id=map_id, state=s, K=K, target=result.h_k,
            alpha=1.0, complete=True, source=SOURCE_ORACLE,
            problem_id=problem_id, h_g_s=h_fn(s, goal),
        ))
    return samples, total_expansions
