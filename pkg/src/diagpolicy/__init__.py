"""Learning cost-sensitive diagnostic policies from data.

Systematic AO* search with regularizers, greedy baselines, and an
evaluation harness for comparing them.
"""

from .aostar import AOStar, SearchConfig, SearchResult, run_ao
from .data import (Dataset, build_mc_matrix, clean, cost_model, discretize, gen_synthetic,
                   load_dataset, make_replicas)
from .evaluate import bdeltacost, brute_force_optimal, chess_scores, run_sweep
from .learn import ALGORITHMS, train
from .mdp import CostModel, ProbEstimator
from .policy import PolicyNode, deserialize, evaluate, execute, policy_value, serialize, step

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS", "AOStar", "CostModel", "Dataset", "PolicyNode", "ProbEstimator", "SearchConfig",
    "SearchResult", "bdeltacost", "brute_force_optimal", "build_mc_matrix", "chess_scores", "clean",
    "cost_model", "deserialize", "discretize", "evaluate", "execute", "gen_synthetic", "load_dataset",
    "make_replicas", "policy_value", "run_ao", "run_sweep", "serialize", "step", "train",
]
