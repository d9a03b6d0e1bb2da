"""Experiment drivers behind the CLI subcommands.

Each driver is deterministic given its arguments: randomness flows from a
single root seed through purpose-labelled splits, and every output file
(CSV/JSON/JSONL/model) embeds or sits next to the hash of the resolved
configuration that produced it.
"""

from __future__ import annotations

import json
from functools import partial
from pathlib import Path
from typing import Optional

import numpy as np

from loha.collector import BacktrackCollector, Sample, collect_via_oracle, read_samples, write_samples
from loha.gridmap import OccupancyGrid, generate_random, read_map, write_map
from loha.harness.config import config_hash, file_sha256, pmap, split_seed, write_csv, write_json
from loha.harness import figures
from loha.model import FeatureExtractor, load_model, save_model, train
from loha.planner import (
    EvalReport,
    EvalRow,
    OnlineConfig,
    loha_plan,
    online_loop,
    sample_problem,
    sample_problems,
)
from loha.search import SOLVED, astar
from loha.statespace import CarState, GridState, ProblemInstance


class ValidationError(ValueError):
    """Bad arguments or inputs; maps to exit code 2."""


# ---------------------------------------------------------------------------
# Maps
# ---------------------------------------------------------------------------

def cmd_gen_maps(out_dir, num_maps: int, width: int, height: int,
                 density: float, seed: int) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = {"command": "gen-maps", "num_maps": num_maps, "width": width,
           "height": height, "density": density, "seed": seed}
    chash = config_hash(cfg)
    entries = []
    for i in range(num_maps):
        map_seed = split_seed(seed, "map", i)
        grid = generate_random(width, height, density, map_seed)
        name = f"map_{i:03d}.map"
        write_map(grid, out_dir / name)
        entries.append({
            "path": name,
            "seed": map_seed,
            "width": width,
            "height": height,
            "density": density,
            "obstacles": grid.obstacle_count(),
            "sha256": file_sha256(out_dir / name),
        })
    manifest = {"config_hash": chash, "config": cfg, "maps": entries}
    write_json(out_dir / "manifest.json", manifest)
    return manifest


def load_maps(map_dir) -> tuple[list[OccupancyGrid], list[str]]:
    map_dir = Path(map_dir)
    if not map_dir.is_dir():
        raise ValidationError(f"--map-dir {map_dir} is not a directory")
    manifest = map_dir / "manifest.json"
    if manifest.exists():
        with open(manifest) as fh:
            names = [entry["path"] for entry in json.load(fh)["maps"]]
    else:
        names = sorted(p.name for p in map_dir.glob("*.map"))
    if not names:
        raise ValidationError(f"no maps found in {map_dir}")
    return [read_map(map_dir / name) for name in names], names


# ---------------------------------------------------------------------------
# Problem manifests
# ---------------------------------------------------------------------------

def problem_entry(problem: ProblemInstance, domain_name: str, method: str,
                  result=None) -> dict:
    entry = {
        "problem_id": problem.problem_id,
        "map": problem.map_path,
        "domain": domain_name,
        "start": list(problem.start),
        "goal": list(problem.goal),
        "K": problem.K,
        "w": problem.w,
        "seed": problem.seed,
        "method": method,
    }
    if result is not None:
        entry["status"] = result.status
        entry["expansions"] = result.expansions
        entry["cost"] = result.cost
    return entry


def _problems_path(samples_path) -> Path:
    samples_path = Path(samples_path)
    return samples_path.with_name(samples_path.name.rsplit(".", 1)[0] + ".problems.json")


def _meta_path(out_path) -> Path:
    out_path = Path(out_path)
    return out_path.with_name(out_path.name.rsplit(".", 1)[0] + ".meta.json")


def _state_from_list(domain_name: str, values: list):
    return CarState(*values) if domain_name == "car4d" else GridState(*values)


# ---------------------------------------------------------------------------
# Backtracking collection
# ---------------------------------------------------------------------------

def cmd_collect(map_dir, domain: str, k: int, w: float, problems_per_map: int,
                seed: int, out, expansion_limit: Optional[int] = None,
                min_dist: float = 30.0, max_dist: float = 90.0) -> dict:
    grids, names = load_maps(map_dir)
    cfg = {"command": "collect", "map_dir": str(map_dir), "domain": domain, "k": k,
           "w": w, "problems_per_map": problems_per_map, "seed": seed,
           "expansion_limit": expansion_limit, "min_dist": min_dist, "max_dist": max_dist}
    chash = config_hash(cfg)

    samples: list[Sample] = []
    entries = []
    total_expansions = 0
    for m, (grid, name) in enumerate(zip(grids, names)):
        rng = np.random.default_rng(split_seed(seed, "collect", m))
        for j in range(problems_per_map):
            pid = f"m{m:03d}p{j:03d}"
            problem = _solvable_problem(domain, grid, rng, k, w, min_dist, max_dist,
                                        name, pid, expansion_limit)
            collector = BacktrackCollector(problem.domain, k, map_id=name, problem_id=pid)
            result = astar(problem, w=w, expansion_limit=expansion_limit,
                           hook=collector.on_expand)
            total_expansions += result.expansions
            if result.solved:
                samples.extend(collector.finalize())
            entries.append(problem_entry(problem, domain, f"wastar-w{w:g}", result))

    write_samples(samples, out)
    write_json(_problems_path(out), {"config_hash": chash, "problems": entries})
    write_json(_meta_path(out), {
        "config_hash": chash, "config": cfg,
        "samples": len(samples),
        "complete_samples": sum(s.complete for s in samples),
        "total_expansions": total_expansions,
    })
    return {"samples": len(samples), "total_expansions": total_expansions,
            "config_hash": chash}


def _solvable_problem(domain, grid, rng, k, w, min_dist, max_dist, map_name, pid,
                      expansion_limit, max_attempts: int = 8) -> ProblemInstance:
    """Sample until a capped probe search solves the instance (bounded)."""
    last = None
    for _ in range(max_attempts):
        problem = sample_problem(domain, grid, rng, k, w, min_dist, max_dist,
                                 map_path=map_name, problem_id=pid)
        probe = astar(problem, w=max(w, 2.0), expansion_limit=expansion_limit)
        if probe.status == SOLVED:
            return problem
        last = probe.status
    raise ValidationError(
        f"could not sample a solvable problem on {map_name} (last status: {last})"
    )


# ---------------------------------------------------------------------------
# Oracle collection
# ---------------------------------------------------------------------------

def cmd_oracle(map_dir, domain: str, k: int, w: float, states_per_map: int,
               seed: int, out, expansion_limit: Optional[int] = None,
               problems_per_map: int = 1, escape: str = "border",
               closed_list_ablation: bool = False,
               min_dist: float = 30.0, max_dist: float = 90.0) -> dict:
    """Baseline data collection: local-oracle calls on states drawn from the
    trees of ordinary global searches, so both collection routes see the
    same state distribution."""
    grids, names = load_maps(map_dir)
    cfg = {"command": "oracle", "map_dir": str(map_dir), "domain": domain, "k": k,
           "w": w, "states_per_map": states_per_map, "seed": seed,
           "expansion_limit": expansion_limit, "problems_per_map": problems_per_map,
           "escape": escape, "closed_list_ablation": closed_list_ablation,
           "min_dist": min_dist, "max_dist": max_dist}
    chash = config_hash(cfg)

    samples: list[Sample] = []
    entries = []
    total_expansions = 0
    per_problem = max(1, states_per_map // problems_per_map)
    for m, (grid, name) in enumerate(zip(grids, names)):
        rng = np.random.default_rng(split_seed(seed, "oracle", m))
        for j in range(problems_per_map):
            pid = f"m{m:03d}p{j:03d}"
            problem = _solvable_problem(domain, grid, rng, k, w, min_dist, max_dist,
                                        name, pid, expansion_limit)
            expanded = []
            closed_set = set()
            result = astar(problem, w=w, expansion_limit=expansion_limit,
                           hook=lambda node, nodes: expanded.append(node.state))
            entries.append(problem_entry(problem, domain, f"wastar-w{w:g}", result))
            if not expanded:
                continue
            picks = rng.integers(0, len(expanded), size=min(per_problem, len(expanded)))
            states = [expanded[i] for i in picks]
            if closed_list_ablation:
                closed_set = set(expanded)
            batch, work = collect_via_oracle(
                problem.domain, states, problem.goal, k,
                expansion_cap=expansion_limit, escape=escape,
                blocked_states=closed_set if closed_list_ablation else None,
                map_id=name, problem_id=pid,
            )
            samples.extend(batch)
            total_expansions += work

    write_samples(samples, out)
    write_json(_problems_path(out), {"config_hash": chash, "problems": entries})
    write_json(_meta_path(out), {
        "config_hash": chash, "config": cfg,
        "samples": len(samples),
        "total_expansions": total_expansions,
        "expansions_per_sample": total_expansions / len(samples) if samples else None,
    })
    return {"samples": len(samples), "total_expansions": total_expansions,
            "config_hash": chash}


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def attach_features_from_manifest(samples: list[Sample], problems: dict, map_dir) -> None:
    """Resolve each sample's (grid, goal, K) through the problems manifest
    and attach feature vectors in place."""
    lookup = {entry["problem_id"]: entry for entry in problems["problems"]}
    grids: dict = {}
    extractors: dict = {}
    for sample in samples:
        entry = lookup.get(sample.problem_id)
        if entry is None:
            raise ValidationError(f"sample references unknown problem_id {sample.problem_id!r}")
        map_name = entry["map"]
        if map_name not in grids:
            grids[map_name] = read_map(Path(map_dir) / map_name)
        goal = _state_from_list(entry["domain"], entry["goal"])
        key = (map_name, tuple(entry["goal"]), sample.K)
        if key not in extractors:
            extractors[key] = FeatureExtractor(grids[map_name], goal, sample.K)
        sample.features = extractors[key].features(sample.state)


def cmd_train(samples_path, problems_path, map_dir, out, seed: int,
              hyperparams: Optional[dict] = None) -> dict:
    samples = read_samples(samples_path)
    if not samples:
        raise ValidationError("empty dataset")
    with open(problems_path) as fh:
        problems = json.load(fh)
    attach_features_from_manifest(samples, problems, map_dir)
    cfg = {"command": "train", "samples": str(samples_path),
           "problems": str(problems_path), "map_dir": str(map_dir),
           "seed": seed, "hyperparams": hyperparams or {}}
    chash = config_hash(cfg)
    model = train(samples, hyperparams=hyperparams, seed=split_seed(seed, "train"))
    save_model(model, out, dataset_hash=file_sha256(samples_path),
               extra_meta={"config_hash": chash, "samples": len(samples)})
    return {"samples": len(samples), "final_loss": model.loss_history[-1],
            "config_hash": chash}


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _eval_pair(payload, problem: ProblemInstance):
    model, w, expansion_limit, weighted = payload
    base = astar(problem, w=w, expansion_limit=expansion_limit)
    res, _ = loha_plan(problem, model, collect=False, weighted=weighted,
                       expansion_limit=expansion_limit)
    return (base.expansions, res.expansions, base.cost, res.cost, base.status, res.status)


def cmd_eval(map_dir, model_path, domain: str, k: int, w: float, num_problems: int,
             seed: int, out, expansion_limit: Optional[int] = None,
             min_dist: float = 30.0, max_dist: float = 90.0,
             weighted_priority: bool = True) -> dict:
    grids, names = load_maps(map_dir)
    model = load_model(model_path)
    cfg = {"command": "eval", "map_dir": str(map_dir), "model": str(model_path),
           "domain": domain, "k": k, "w": w, "num_problems": num_problems,
           "seed": seed, "expansion_limit": expansion_limit,
           "min_dist": min_dist, "max_dist": max_dist,
           "weighted_priority": weighted_priority}
    chash = config_hash(cfg)

    rng = np.random.default_rng(split_seed(seed, "eval-problems"))
    problems = sample_problems(domain, grids, num_problems, rng, k, w,
                               min_dist, max_dist, map_paths=names, id_prefix="e")
    results = pmap(partial(_eval_pair, (model, w, expansion_limit, weighted_priority)),
                   problems)
    report = EvalReport(rows=[
        EvalRow(p.problem_id, be, me, bc, mc, bs, ms)
        for p, (be, me, bc, mc, bs, ms) in zip(problems, results)
    ])
    _write_eval_outputs(report, out, chash, w)
    return {"median_speedup": report.speedup, "config_hash": chash,
            "summary": report.summary()}


def _write_eval_outputs(report: EvalReport, out, chash: str, w: float) -> None:
    out = Path(out)
    write_csv(
        out.with_suffix(".csv"),
        ["problem_id", "baseline_expansions", "method_expansions",
         "baseline_cost", "method_cost"],
        [[r.problem_id, r.baseline_expansions, r.method_expansions,
          r.baseline_cost, r.method_cost] for r in report.rows],
        [f"config_hash={chash}",
         "baseline: weighted A*; method: residual-guided focal search"],
    )
    write_json(out.with_suffix(".json"),
               {"config_hash": chash, "summary": report.summary(),
                "rows": [vars(r) for r in report.rows]})
    figures.render_eval_scatter(report.rows, out.with_suffix(".png"), w)


# ---------------------------------------------------------------------------
# Online loop
# ---------------------------------------------------------------------------

def cmd_online(map_dir, domain: str, k: int, w: float, batch_size: int, rounds: int,
               eval_problems: int, seed: int, out_dir,
               expansion_limit: Optional[int] = None,
               min_dist: float = 30.0, max_dist: float = 90.0,
               hyperparams: Optional[dict] = None, fine_tune: bool = False) -> dict:
    grids, names = load_maps(map_dir)
    cfg = {"command": "online", "map_dir": str(map_dir), "domain": domain, "k": k,
           "w": w, "batch_size": batch_size, "rounds": rounds,
           "eval_problems": eval_problems, "seed": seed,
           "expansion_limit": expansion_limit, "min_dist": min_dist,
           "max_dist": max_dist, "hyperparams": hyperparams or {},
           "fine_tune": fine_tune}
    chash = config_hash(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    eval_rng = np.random.default_rng(split_seed(seed, "online-eval"))
    eval_set = sample_problems(domain, grids, eval_problems, eval_rng, k, w,
                               min_dist, max_dist, map_paths=names, id_prefix="e")
    config = OnlineConfig(
        batch_size=batch_size, rounds=rounds, w=w, K=k, eval_set=eval_set,
        seed=split_seed(seed, "online-loop"), domain=domain,
        min_dist=min_dist, max_dist=max_dist, expansion_limit=expansion_limit,
        hyperparams=hyperparams or {}, fine_tune=fine_tune,
    )
    results = online_loop(config, grids)

    rows = [[r.round_index, r.dataset_size, r.new_samples, r.solve_failures,
             r.report.speedup, r.report.median_cost_ratio,
             len(r.report.paired_rows()), r.report.unsolved] for r in results]
    write_csv(out_dir / "online.csv",
              ["round", "dataset_size", "new_samples", "solve_failures",
               "median_speedup", "median_cost_ratio", "paired_solved", "unsolved"],
              rows,
              [f"config_hash={chash}",
               f"held-out evaluation against weighted A* (w={w:g}) on "
               f"{eval_problems} fixed problems"])
    write_json(out_dir / "online.json", {
        "config_hash": chash, "config": cfg,
        "rounds": [{
            "round": r.round_index,
            "dataset_size": r.dataset_size,
            "new_samples": r.new_samples,
            "solve_failures": r.solve_failures,
            "final_loss": r.final_loss,
            "summary": r.report.summary(),
            "rows": [vars(row) for row in r.report.rows],
        } for r in results],
    })
    figures.render_online_curve([r.round_index for r in results],
                                [r.report.speedup for r in results],
                                out_dir / "online.png", w)
    return {"config_hash": chash,
            "speedups": [r.report.speedup for r in results]}


# ---------------------------------------------------------------------------
# Data-efficiency benchmark
# ---------------------------------------------------------------------------

def cmd_bench_efficiency(map_dir, domain: str, k_values: list[int], w: float,
                         problems_per_map: int, states_per_map: int, seed: int,
                         out_dir, expansion_limit: Optional[int] = None,
                         min_dist: float = 30.0, max_dist: float = 90.0) -> dict:
    """Work (expansions) per collected sample for the three collection
    routes, per window size K.

    Normalization: the local-oracle row divides the summed oracle
    expansions by the number of oracle samples; the complete and incomplete
    rows share the global searches' total expansions as numerator and
    divide by the complete-sample count and the all-sample count
    respectively. Identical problems are used for every K.
    """
    grids, names = load_maps(map_dir)
    cfg = {"command": "bench-efficiency", "map_dir": str(map_dir), "domain": domain,
           "k_values": list(k_values), "w": w, "problems_per_map": problems_per_map,
           "states_per_map": states_per_map, "seed": seed,
           "expansion_limit": expansion_limit, "min_dist": min_dist,
           "max_dist": max_dist}
    chash = config_hash(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    per_problem = max(1, states_per_map // problems_per_map)
    rows = []
    for k in k_values:
        global_expansions = 0
        complete_samples = 0
        all_samples = 0
        oracle_expansions = 0
        oracle_samples = 0
        for m, (grid, name) in enumerate(zip(grids, names)):
            # same problem stream for every K: seed split ignores k
            rng = np.random.default_rng(split_seed(seed, "bench", m))
            for j in range(problems_per_map):
                pid = f"k{k}m{m:03d}p{j:03d}"
                problem = _solvable_problem(domain, grid, rng, k, w, min_dist,
                                            max_dist, name, pid, expansion_limit)
                collector = BacktrackCollector(problem.domain, k, map_id=name,
                                               problem_id=pid)
                expanded: list = []

                def hook(node, nodes):
                    expanded.append(node.state)
                    collector.on_expand(node, nodes)

                result = astar(problem, w=w, expansion_limit=expansion_limit, hook=hook)
                global_expansions += result.expansions
                samples = collector.finalize()
                all_samples += len(samples)
                complete_samples += sum(s.complete for s in samples)
                if expanded:
                    picks = rng.integers(0, len(expanded),
                                         size=min(per_problem, len(expanded)))
                    states = [expanded[i] for i in picks]
                    batch, work = collect_via_oracle(
                        problem.domain, states, problem.goal, k,
                        expansion_cap=expansion_limit, map_id=name, problem_id=pid)
                    oracle_expansions += work
                    oracle_samples += len(batch)
        rows.append([
            k,
            oracle_expansions / oracle_samples if oracle_samples else None,
            global_expansions / complete_samples if complete_samples else None,
            global_expansions / all_samples if all_samples else None,
            oracle_expansions, oracle_samples,
            global_expansions, complete_samples, all_samples,
        ])

    write_csv(out_dir / "bench_efficiency.csv",
              ["k", "local_astar_exp_per_sample", "complete_exp_per_sample",
               "incomplete_exp_per_sample", "oracle_expansions", "oracle_samples",
               "global_expansions", "complete_samples", "total_samples"],
              rows,
              [f"config_hash={chash}",
               "complete/incomplete rows share the global-search expansion "
               "numerator; complete divides by complete samples only, "
               "incomplete by all samples"])
    write_json(out_dir / "bench_efficiency.json",
               {"config_hash": chash, "config": cfg, "rows": rows})
    figures.render_bench_lines(
        [row[0] for row in rows],
        {"local A* oracle": [row[1] for row in rows],
         "backtrack complete": [row[2] for row in rows],
         "backtrack incomplete": [row[3] for row in rows]},
        out_dir / "bench_efficiency.png")
    return {"config_hash": chash, "rows": rows}
