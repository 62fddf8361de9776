"""Regularizers for AO*: statistical pruning, early stopping, pessimistic post-pruning.

Laplace smoothing is an estimator mode (see :mod:`diagpolicy.mdp`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from statistics import NormalDist

import numpy as np

from .aostar import AOStar, OrNode, SearchConfig, SearchResult
from .data import DataError, Dataset, stratified_split
from .mdp import CostModel, ProbEstimator
from .policy import PolicyNode, copy_tree, leaf, policy_value


@dataclass(frozen=True)
class SpConfig:
    confidence: float = 0.95
    min_support: int = 2

    def __post_init__(self):
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie strictly between 0 and 1")


def z_value(confidence: float) -> float:
    """Two-sided standard normal critical value."""
    return NormalDist().inv_cdf(0.5 + confidence / 2.0)


def normal_ci(values, confidence: float = 0.95, center: float | None = None) -> tuple[float, float]:
    """Normal confidence interval for a mean; sample sd with n - 1 denominator.

    ``center`` replaces the sample mean as the midpoint while the width still
    comes from the sample.
    """
    values = np.asarray(values, dtype=float)
    n = len(values)
    if n == 0:
        raise ValueError("confidence interval of an empty sample")
    mid = float(values.mean()) if center is None else float(center)
    sd = float(values.std(ddof=1)) if n > 1 else 0.0
    half = z_value(confidence) * sd / math.sqrt(n)
    return mid - half, mid + half


def indistinguishable(totals, v_opt: float, confidence: float = 0.95,
                      center: float | None = None) -> bool:
    lo, hi = normal_ci(totals, confidence, center)
    tol = 1e-9 * max(1.0, abs(lo), abs(hi))
    return lo - tol <= v_opt <= hi + tol


def sp_check(search: AOStar, node: OrNode, cfg: SpConfig) -> bool:
    """True when the optimistic action at ``node`` should be pruned.

    The realistic policy below ``node`` is replayed on the matching training
    rows; if the optimistic value is inside the resulting confidence interval
    the two are treated as indistinguishable.  Too few rows to form an
    interval counts as indistinguishable as well.
    """
    rows = node.rows
    if len(rows) < cfg.min_support:
        return True
    est = search.est
    totals = search.realistic_costs(est.X[rows], est.y[rows], node)
    center = node.v_real if est.laplace else None
    return indistinguishable(totals, node.v_opt, cfg.confidence, center)


def run_es(train: Dataset, cost: CostModel, config: SearchConfig | None = None,
           seed: int = 0) -> SearchResult:
    """AO* on half the data, keeping the realistic policy best on the other half."""
    config = config or SearchConfig()
    if len(train) < 4:
        raise DataError("early stopping needs at least 4 training examples")
    rng = np.random.default_rng(seed)
    sub, hold = stratified_split(train.y, 0.5, rng)
    classes = set(np.unique(train.y).tolist())
    if set(np.unique(train.y[sub]).tolist()) != classes or set(np.unique(train.y[hold]).tolist()) != classes:
        raise DataError("early-stopping split left a class absent from one half")
    est = ProbEstimator.from_dataset(train, sub, laplace=config.laplace)
    Xh, yh = train.X[hold], train.y[hold]
    best = {"cost": math.inf, "iteration": None, "policy": None, "version": None, "last": None}
    outer = config.callback

    def watch(search: AOStar, iteration: int) -> None:
        if outer is not None:
            outer(search, iteration)
        if search.real_version != best["version"]:
            best["version"] = search.real_version
            best["last"] = float(search.realistic_costs(Xh, yh).mean())
            if best["last"] < best["cost"]:
                best.update(cost=best["last"], iteration=iteration, policy=search.extract())

    result = AOStar(est, cost, replace(config, callback=watch)).run()
    converged_policy = result.policy
    result.policy = best["policy"]
    policy_value(result.policy, est, cost)
    result.stats.update(es_best_iteration=best["iteration"], es_holdout_cost=best["cost"],
                        es_final_holdout_cost=best["last"], subtrain_size=len(sub), holdout_size=len(hold))
    result.final_policy = converged_policy
    return result


def _upper_mean(costs, z: float) -> float:
    costs = np.asarray(costs, dtype=float)
    n = len(costs)
    if n == 0:
        return math.inf
    sd = float(costs.std(ddof=1)) if n > 1 else 0.0
    return float(costs.mean()) + z * sd / math.sqrt(n)


def ppp_ao(policy: PolicyNode, est: ProbEstimator, cost: CostModel, confidence: float = 0.95,
           bounds: dict | None = None) -> PolicyNode:
    """Pessimistic post-pruning on misdiagnosis costs.

    Leaves get the upper limit of a normal interval on their misdiagnosis cost
    over matching training rows (plus one virtual row per class under
    Laplace); internal nodes combine children by the Bellman recursion and are
    turned into leaves when diagnosing right away has the smaller bound.
    ``bounds``, when given, receives the final bound of every kept node.
    """
    z = z_value(confidence)

    def leaf_ub(state, k: int) -> float:
        costs = cost.mc[k, est.y[est.rows(state)]]
        if est.laplace:
            costs = np.concatenate([costs, cost.mc[k, :]])
        return _upper_mean(costs, z)

    def visit(node: PolicyNode) -> tuple[PolicyNode, float]:
        if node.is_leaf:
            ub = leaf_ub(node.state, node.action.index)
            if bounds is not None:
                bounds[node.state] = ub
            return copy_tree(node), ub
        kids, ubs = {}, {}
        for v, child in node.children.items():
            kids[v], ubs[v] = visit(child)
        probs = est.p_values(node.action.index, node.state)
        ub = float(cost.measure_cost[node.action.index]) + sum(probs[v] * ubs[v] for v in kids)
        kb, _ = est.best_diagnosis(cost, node.state)
        ub_now = leaf_ub(node.state, kb)
        if ub_now < ub:
            out, ub = leaf(node.state, kb, support=node.support), ub_now
        else:
            out = PolicyNode(node.state, node.action, kids, dict(node.branch_prob), node.class_probs,
                             support=node.support)
        if bounds is not None:
            bounds[out.state] = ub
        return out, ub

    pruned, _ = visit(policy)
    policy_value(pruned, est, cost)
    return pruned
