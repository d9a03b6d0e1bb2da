"""Heuristic-search planning toolkit with learned local-residual heuristics.

The package provides occupancy-grid worlds, two lattice state spaces (a
4-connected 2D grid and a 4D car with discrete heading and velocity),
best-first search engines (A*, weighted A*, focal search), a local
multi-goal A* oracle for exact escape-cost residuals, a backtracking
collector that harvests the same residuals as a byproduct of ordinary
global searches, a small from-scratch regressor for predicting residuals,
and experiment drivers comparing the resulting planner against weighted A*.
"""

from loha.gridmap import OccupancyGrid, generate_random, read_map, write_map
from loha.statespace import CarState, Car4D, Grid2D, GridState, ProblemInstance
from loha.search import SearchNode, SearchResult, astar, focal_search, local_residual_oracle
from loha.collector import BacktrackCollector, Sample, collect_via_oracle
from loha.model import ResidualModel, featurize, gradient_check, predict_residual, train
from loha.planner import EvalReport, OnlineConfig, evaluate, loha_plan, online_loop

__all__ = [
    "OccupancyGrid", "generate_random", "read_map", "write_map",
    "GridState", "CarState", "Grid2D", "Car4D", "ProblemInstance",
    "SearchNode", "SearchResult", "astar", "focal_search", "local_residual_oracle",
    "BacktrackCollector", "Sample", "collect_via_oracle",
    "ResidualModel", "featurize", "train", "gradient_check", "predict_residual",
    "EvalReport", "OnlineConfig", "loha_plan", "online_loop", "evaluate",
]
