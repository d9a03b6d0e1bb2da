"""Residual-guided bounded-suboptimal planning, paired-method evaluation,
and the online collect/retrain loop.

The planner runs focal search with OPEN ordered by f = g + h_g (this alone
preserves the w bound, whatever the model predicts) and picks from FOCAL
by a residual-informed priority. Two focal priorities are supported:

* weighted (default): g + w * (h_g + predicted residual). This mirrors the
  weighted A* baseline's greediness while steering around predicted local
  minima, and is what the evaluation drivers use.
* unweighted: g + h_g + predicted residual, i.e. plain f corrected by the
  residual. With a zero model this degenerates to f-ordered focal search.

Data collection can ride along on any planner run via the backtracking
collector; it touches no queues and no collision checks, so paths and
expansion counts are identical with collection on or off.
"""

from __future__ import annotations

import statistics
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from loha.collector import BacktrackCollector, Sample
from loha.gridmap import OccupancyGrid
from loha.model import FeatureExtractor, ResidualModel, feature_length
from loha.search import SOLVED, SearchResult, astar, focal_search
from loha.statespace import CarState, GridState, ProblemInstance, SearchState, make_domain


class ResidualPredictor:
    """Per-state residual cache over one (grid, goal, K). ``prime`` batches
    the forward pass for freshly generated states."""

    def __init__(self, model: Optional[ResidualModel], extractor: FeatureExtractor):
        self.model = model
        self.extractor = extractor
        self.cache: dict = {}

    def predict(self, state: SearchState) -> float:
        value = self.cache.get(state)
        if value is None:
            if self.model is None:
                value = 0.0
            else:
                value = float(self.model.forward(self.extractor.features_batch([state]))[0])
            self.cache[state] = value
        return value

    def prime(self, states: list[SearchState]) -> None:
        if self.model is None:
            return
        missing = [s for s in states if s not in self.cache]
        if not missing:
            return
        preds = self.model.forward(self.extractor.features_batch(missing))
        for s, p in zip(missing, preds):
            self.cache[s] = float(p)


def loha_plan(
    instance: ProblemInstance,
    model: Optional[ResidualModel],
    collect: bool = False,
    weighted: bool = True,
    expansion_limit: Optional[int] = None,
    map_id: str = "",
) -> tuple[SearchResult, list[Sample]]:
    """Plan with the learned residual; optionally collect samples during
    the same search. ``model=None`` plans with a zero residual."""
    domain = instance.domain
    if model is not None:
        expected = feature_length(domain.name, instance.K)
        if model.K and model.K != instance.K:
            raise ValueError(f"model K={model.K} does not match instance K={instance.K}")
        if model.domain and model.domain != domain.name:
            raise ValueError(f"model domain {model.domain!r} does not match {domain.name!r}")
        if model.input_dim != expected:
            raise ValueError(f"model input {model.input_dim} != feature length {expected}")

    predictor = ResidualPredictor(model, FeatureExtractor(domain.grid, instance.goal, instance.K))
    predict = predictor.predict
    w = instance.w
    if weighted:
        focal_priority = lambda node: node.g + w * (node.h + predict(node.state))
    else:
        focal_priority = lambda node: node.g + node.h + predict(node.state)

    collector = None
    hook = None
    if collect:
        collector = BacktrackCollector(domain, instance.K, map_id=map_id,
                                       problem_id=instance.problem_id)
        hook = collector.on_expand

    result = focal_search(
        instance, w=w, focal_priority=focal_priority,
        expansion_limit=expansion_limit, hook=hook,
        successor_hook=predictor.prime if model is not None else None,
    )
    samples = collector.finalize() if collector is not None else []
    return result, samples


@dataclass
class EvalRow:
    problem_id: str
    baseline_expansions: int
    method_expansions: int
    baseline_cost: Optional[int]
    method_cost: Optional[int]
    baseline_status: str = SOLVED
    method_status: str = SOLVED
    optimal_cost: Optional[int] = None


@dataclass
class EvalReport:
    """Paired per-problem work and cost comparison of two planners."""

    rows: list[EvalRow] = field(default_factory=list)

    def paired_rows(self) -> list[EvalRow]:
        return [r for r in self.rows if r.baseline_status == SOLVED and r.method_status == SOLVED]

    @property
    def unsolved(self) -> int:
        return len(self.rows) - len(self.paired_rows())

    @property
    def speedup(self) -> float:
        """Median over pairwise-solved problems of baseline/method expansions."""
        paired = self.paired_rows()
        if not paired:
            return float("nan")
        return statistics.median(r.baseline_expansions / r.method_expansions for r in paired)

    @property
    def median_cost_ratio(self) -> float:
        paired = [r for r in self.paired_rows() if r.baseline_cost]
        if not paired:
            return float("nan")
        return statistics.median(r.method_cost / r.baseline_cost for r in paired)

    def suboptimality_ratios(self) -> list[float]:
        return [r.method_cost / r.optimal_cost for r in self.paired_rows()
                if r.optimal_cost is not None]

    def summary(self) -> dict:
        return {
            "problems": len(self.rows),
            "paired_solved": len(self.paired_rows()),
            "unsolved": self.unsolved,
            "median_speedup": self.speedup,
            "median_cost_ratio": self.median_cost_ratio,
        }


Method = Callable[[ProblemInstance], SearchResult]


def evaluate(problems: list[ProblemInstance], baseline: Method, method: Method,
             optimal_costs: Optional[list] = None) -> EvalReport:
    """Run both methods on every problem. Problems either method failed are
    kept in the rows (for the unsolved count) but excluded from medians."""
    report = EvalReport()
    for i, problem in enumerate(problems):
        res_a = baseline(problem)
        res_b = method(problem)
        report.rows.append(EvalRow(
            problem_id=problem.problem_id or f"p{i:04d}",
            baseline_expansions=res_a.expansions,
            method_expansions=res_b.expansions,
            baseline_cost=res_a.cost,
            method_cost=res_b.cost,
            baseline_status=res_a.status,
            method_status=res_b.status,
            optimal_cost=None if optimal_costs is None else optimal_costs[i],
        ))
    return report


def weighted_astar_method(w: float, expansion_limit: Optional[int] = None) -> Method:
    return lambda instance: astar(instance, w=w, expansion_limit=expansion_limit)


def loha_method(model: Optional[ResidualModel], weighted: bool = True,
                expansion_limit: Optional[int] = None) -> Method:
    return lambda instance: loha_plan(instance, model, collect=False, weighted=weighted,
                                      expansion_limit=expansion_limit)[0]


# ---------------------------------------------------------------------------
# Problem sampling
# ---------------------------------------------------------------------------

_component_cache: dict = {}


def _free_components(grid: OccupancyGrid) -> np.ndarray:
    """4-connected component label per free cell (-1 on obstacles)."""
    key = id(grid)
    cached = _component_cache.get(key)
    if cached is not None and cached[0] is grid:
        return cached[1]
    h, w = grid.height, grid.width
    labels = np.full((h, w), -1, dtype=np.int32)
    free = ~np.asarray(grid.cells)
    next_label = 0
    for sy in range(h):
        for sx in range(w):
            if not free[sy, sx] or labels[sy, sx] != -1:
                continue
            labels[sy, sx] = next_label
            queue = deque([(sx, sy)])
            while queue:
                x, y = queue.popleft()
                for nx, ny in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
                    if 0 <= nx < w and 0 <= ny < h and free[ny, nx] and labels[ny, nx] == -1:
                        labels[ny, nx] = next_label
                        queue.append((nx, ny))
            next_label += 1
    _component_cache[key] = (grid, labels)
    return labels


def sample_problem(
    domain_name: str,
    grid: OccupancyGrid,
    rng: np.random.Generator,
    K: int,
    w: float,
    min_dist: float,
    max_dist: float,
    map_path: str = "",
    problem_id: str = "",
    max_tries: int = 500,
    bearing: Optional[tuple[float, float]] = None,
) -> ProblemInstance:
    """Draw a start/goal pair of free cells in the same connected component
    with straight-line separation in [min_dist, max_dist] cells. Cell
    connectivity is a cheap necessary filter; callers still handle the rare
    search failure by resampling. ``bearing`` optionally restricts the
    start-to-goal direction to an angle interval in radians (used to
    stratify small problem batches across headings)."""
    labels = _free_components(grid)
    free_ys, free_xs = np.nonzero(labels >= 0)
    if free_xs.size < 2:
        raise ValueError("map has fewer than two free cells")
    for _ in range(max_tries):
        i, j = rng.integers(0, free_xs.size, size=2)
        sx, sy = int(free_xs[i]), int(free_ys[i])
        gx, gy = int(free_xs[j]), int(free_ys[j])
        if labels[sy, sx] != labels[gy, gx]:
            continue
        dist = float(np.hypot(gx - sx, gy - sy))
        if not min_dist <= dist <= max_dist:
            continue
        if bearing is not None:
            lo, hi = bearing
            ang = float(np.arctan2(gy - sy, gx - sx)) % (2 * np.pi)
            width = (hi - lo) % (2 * np.pi)
            if (ang - lo) % (2 * np.pi) > width:
                continue
        domain = make_domain(domain_name, grid)
        if domain_name == "grid2d":
            start: SearchState = GridState(sx, sy)
            goal: SearchState = GridState(gx, gy)
        else:
            theta = int(rng.integers(0, 12))
            start = CarState(2 * sx + 1, 2 * sy + 1, theta, 0)
            goal = CarState(2 * gx + 1, 2 * gy + 1, 0, 0)
        return ProblemInstance(domain=domain, start=start, goal=goal, K=K, w=w,
                               problem_id=problem_id, map_path=map_path)
    raise RuntimeError(f"could not sample a feasible problem in {max_tries} tries")


def sample_problems(
    domain_name: str,
    grids: list[OccupancyGrid],
    n: int,
    rng: np.random.Generator,
    K: int,
    w: float,
    min_dist: float,
    max_dist: float,
    map_paths: Optional[list[str]] = None,
    id_prefix: str = "p",
    bearing_stratify: bool = False,
) -> list[ProblemInstance]:
    """Sample n problems across the given maps. With ``bearing_stratify``
    the start-to-goal directions are spread over n equal angular sectors,
    which keeps tiny batches (e.g. an online round of 5) representative."""
    problems = []
    for i in range(n):
        m = int(rng.integers(0, len(grids)))
        bearing = None
        if bearing_stratify:
            width = 2 * np.pi / n
            bearing = (i * width, (i + 1) * width)
        problems.append(sample_problem(
            domain_name, grids[m], rng, K, w, min_dist, max_dist,
            map_path=map_paths[m] if map_paths else f"map{m}",
            problem_id=f"{id_prefix}{i:04d}",
            bearing=bearing,
        ))
    return problems


# ---------------------------------------------------------------------------
# Online loop
# ---------------------------------------------------------------------------

@dataclass
class OnlineConfig:
    batch_size: int = 5
    rounds: int = 6
    w: float = 4.0
    K: int = 4
    eval_set: list = field(default_factory=list)
    seed: int = 0
    domain: str = "car4d"
    min_dist: float = 20.0
    max_dist: float = 60.0
    expansion_limit: Optional[int] = 200_000
    hyperparams: dict = field(default_factory=dict)
    fine_tune: bool = False
    max_retries_per_round: int = 10
    # the seed batch is solved with plain optimal A* (the planner has no
    # model yet anyway); every later batch plans and collects at w
    initial_w: float = 1.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.w < 1.0:
            raise ValueError("w must be >= 1")


@dataclass
class RoundResult:
    round_index: int
    report: EvalReport
    dataset_size: int
    new_samples: int
    solve_failures: int
    final_loss: float


def _attach_features(samples: list[Sample], grid: OccupancyGrid,
                     goal: SearchState, K: int) -> None:
    if not samples:
        return
    extractor = FeatureExtractor(grid, goal, K)
    feats = extractor.features_batch([s.state for s in samples])
    for s, f in zip(samples, feats):
        s.features = f


def online_loop(config: OnlineConfig, maps: list[OccupancyGrid]) -> list[RoundResult]:
    """Alternate planning-with-collection and retraining.

    Round 1 solves a batch with plain A* (at ``initial_w``) while
    backtracking collects the seed dataset; every later round plans with
    the current model at w, accumulates its samples, and retrains on
    everything gathered so far. After each retrain the model is scored on
    the fixed held-out eval set against the weighted A* baseline.
    """
    from loha.model import train  # local import to keep module load cheap

    if not config.eval_set:
        raise ValueError("config.eval_set must contain held-out problems")

    baseline = weighted_astar_method(config.w, config.expansion_limit)
    baseline_results = {id(p): baseline(p) for p in config.eval_set}

    def evaluate_model(model: ResidualModel) -> EvalReport:
        method = loha_method(model, expansion_limit=config.expansion_limit)
        report = EvalReport()
        for i, problem in enumerate(config.eval_set):
            res_a = baseline_results[id(problem)]
            res_b = method(problem)
            report.rows.append(EvalRow(
                problem_id=problem.problem_id or f"e{i:04d}",
                baseline_expansions=res_a.expansions,
                method_expansions=res_b.expansions,
                baseline_cost=res_a.cost,
                method_cost=res_b.cost,
                baseline_status=res_a.status,
                method_status=res_b.status,
            ))
        return report

    dataset: list[Sample] = []
    results: list[RoundResult] = []
    model: Optional[ResidualModel] = None

    for round_index in range(1, config.rounds + 1):
        rng = np.random.default_rng(np.uint64(config.seed) + np.uint64(round_index) * np.uint64(1_000_003))
        solved = 0
        failures = 0
        new_samples = 0
        problem_counter = 0
        sector = 2 * np.pi / config.batch_size
        while solved < config.batch_size:
            if failures > config.max_retries_per_round:
                raise RuntimeError(f"round {round_index}: too many unsolvable problems")
            # goal bearings stratified per slot so a 5-problem batch still
            # spans headings; the sector rotates with the round
            offset = (round_index - 1) * sector / config.rounds
            bearing = (offset + solved * sector, offset + (solved + 1) * sector)
            m = int(rng.integers(0, len(maps)))
            problem = sample_problem(
                config.domain, maps[m], rng, config.K, config.w,
                config.min_dist, config.max_dist,
                map_path=f"map{m}",
                problem_id=f"r{round_index:02d}t{problem_counter:03d}",
                bearing=bearing,
            )
            problem_counter += 1
            if round_index == 1 or model is None:
                collector = BacktrackCollector(problem.domain, config.K,
                                               map_id=problem.map_path,
                                               problem_id=problem.problem_id)
                result = astar(problem, w=config.initial_w,
                               expansion_limit=config.expansion_limit,
                               hook=collector.on_expand)
                samples = collector.finalize() if result.solved else []
            else:
                result, samples = loha_plan(problem, model, collect=True,
                                            expansion_limit=config.expansion_limit,
                                            map_id=problem.map_path)
                if not result.solved:
                    samples = []
            if not result.solved:
                failures += 1
                continue
            solved += 1
            _attach_features(samples, problem.domain.grid, problem.goal, config.K)
            dataset.extend(samples)
            new_samples += len(samples)

        # the same training seed every round: retraining differs from the
        # previous round only by the accumulated data, keeping the
        # held-out trajectory smooth
        train_seed = (config.seed * 7919 + 12289) & 0xFFFFFFFF
        if config.fine_tune and model is not None:
            model = _fine_tune(model, dataset, config.hyperparams, train_seed)
        else:
            model = train(dataset, hyperparams=config.hyperparams, seed=train_seed)
        report = evaluate_model(model)
        results.append(RoundResult(
            round_index=round_index,
            report=report,
            dataset_size=len(dataset),
            new_samples=new_samples,
            solve_failures=failures,
            final_loss=model.loss_history[-1],
        ))
    return results


def _fine_tune(model: ResidualModel, samples: list[Sample], hyperparams: dict,
               seed: int) -> ResidualModel:
    from loha.model import DEFAULT_HYPERPARAMS, _sgd_epochs, build_training_arrays

    hp = dict(DEFAULT_HYPERPARAMS)
    hp.update(hyperparams or {})
    X, y, alpha = build_training_arrays(samples)
    if not hp.get("alpha_weighting", True):
        alpha = np.ones_like(alpha)
    rng = np.random.default_rng(np.uint64(seed))
    _sgd_epochs(model, X, y, alpha, hp, rng)
    return model
