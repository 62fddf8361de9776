"""The fourteen named learning algorithms behind one ``train`` call."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .aostar import DEFAULT_MEMORY_LIMIT, AnytimeRecord, SearchConfig, run_ao
from .data import Dataset
from .greedy import GreedyConfig, grow_greedy
from .mdp import CostModel, ProbEstimator
from .policy import PolicyNode
from .regularize import SpConfig, ppp_ao, run_es

GREEDY = ("Nor", "MC-N", "VOI")
SYSTEMATIC = ("AO*", "SP", "ES", "PPP")
ALGORITHMS = tuple(f"{b}{s}" for b in GREEDY + SYSTEMATIC for s in ("", "-L"))


class UnknownAlgorithm(ValueError):
    def __init__(self, name: str):
        super().__init__(f"unknown algorithm {name!r}; valid: {', '.join(ALGORITHMS)}")
        self.name = name


def parse_name(name: str) -> tuple[str, bool]:
    """Split an algorithm name into its base and Laplace flag."""
    if name not in ALGORITHMS:
        raise UnknownAlgorithm(name)
    if name.endswith("-L"):
        return name[:-2], True
    return name, False


def is_systematic(name: str) -> bool:
    return parse_name(name)[0] in SYSTEMATIC


@dataclass
class TrainResult:
    algorithm: str
    policy: PolicyNode
    log: list[AnytimeRecord] = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    seconds: float = 0.0


def train(name: str, ds: Dataset, cost: CostModel, seed: int = 0,
          memory_limit: int = DEFAULT_MEMORY_LIMIT, voi_min_support: bool = True,
          heuristic: bool = True, test_data=None) -> TrainResult:
    """Learn a policy with algorithm ``name`` on every row of ``ds``."""
    base, laplace = parse_name(name)
    start = time.perf_counter()
    est = ProbEstimator.from_dataset(ds, laplace=laplace)
    log: list[AnytimeRecord] = []
    stats: dict = {}
    if base in GREEDY:
        cfg = GreedyConfig(variant=base, laplace=laplace, voi_min_support=voi_min_support)
        policy = grow_greedy(est, cost, cfg)
    else:
        cfg = SearchConfig(laplace=laplace, memory_limit=memory_limit, heuristic=heuristic, seed=seed,
                           test_data=test_data, sp=SpConfig() if base == "SP" else None)
        if base == "ES":
            res = run_es(ds, cost, cfg, seed=seed)
        else:
            res = run_ao(est, cost, cfg)
        policy, log, stats = res.policy, res.log, res.stats
        if base == "PPP":
            stats["size_before_ppp"] = policy.size()
            policy = ppp_ao(policy, est, cost)
    stats["policy_size"] = policy.size()
    stats["train_value"] = policy.value
    return TrainResult(name, policy, log, stats, time.perf_counter() - start)
