"""Greedy policy growers and their post-pruning.

Three variants share one top-down template: stop, or pick a test and recurse
on each of its outcomes, or diagnose.

* ``Nor``: pick by information gain per unit cost; diagnose the most likely
  class; C4.5 pessimistic pruning on error rates.
* ``MC-N``: same growth; diagnose at minimum expected misdiagnosis cost;
  prune on expected total cost.
* ``VOI``: one-step lookahead on total cost; stop once no test pays for itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mdp import START, CostModel, ProbEstimator, State, argmin_first, extend
from .policy import PolicyNode, copy_tree, leaf, policy_value, measure_node

VARIANTS = ("Nor", "MC-N", "VOI")


@dataclass(frozen=True)
class GreedyConfig:
    variant: str = "VOI"
    laplace: bool = False
    min_support: int = 2  # 0 disables the eligibility rule
    z_c: float = 1.15
    voi_min_support: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown greedy variant {self.variant!r}; expected one of {VARIANTS}")
        if self.z_c <= 0:
            raise ValueError("z_c must be positive")


def entropy(dist) -> float:
    """Shannon entropy in bits, with 0 log 0 = 0."""
    p = np.asarray(dist, dtype=float)
    if np.any(p < 0):
        raise ValueError("probabilities must be nonnegative")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("probabilities must sum to 1")
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def _entropy_counts(counts: np.ndarray) -> float:
    tot = counts.sum()
    return entropy(counts / tot) if tot else 0.0


def info_gain_rows(est: ProbEstimator, rows: np.ndarray, x: int) -> float:
    joint = est.joint_counts(rows, x)
    n = len(rows)
    if n == 0:
        raise ValueError("information gain undefined on an empty state")
    cond = sum(row.sum() / n * _entropy_counts(row) for row in joint if row.sum())
    return _entropy_counts(joint.sum(axis=0)) - cond


def info_gain(est: ProbEstimator, state: State, x: int) -> float:
    """Mutual information (bits) between ``x`` and the class among rows matching ``state``.

    Always computed from raw counts, whatever the estimator's smoothing mode.
    """
    return info_gain_rows(est, est.rows(state), x)


def norton_score(est: ProbEstimator, cost: CostModel, state: State, x: int) -> float:
    gain = info_gain(est, state, x)
    c = float(cost.measure_cost[x])
    if c == 0:
        return math.inf if gain > 0 else 0.0
    return gain / c


def _la_from_joint(est: ProbEstimator, cost: CostModel, joint: np.ndarray, x: int) -> float:
    n_v = joint.sum(axis=1)
    probs = est.value_probs_from_counts(n_v)
    total = float(cost.measure_cost[x])
    for v, p in enumerate(probs):
        if p > 0:
            total += p * float((cost.mc @ est.class_probs_from_counts(joint[v])).min())
    return total


def one_step_la(est: ProbEstimator, cost: CostModel, state: State, x: int) -> float:
    """Cost of measuring ``x`` then diagnosing at minimum expected cost."""
    return _la_from_joint(est, cost, est.joint_counts(est.rows(state), x), x)


def one_step_voi(est: ProbEstimator, cost: CostModel, state: State, x: int) -> float:
    """Drop in expected misdiagnosis cost from observing ``x`` before diagnosing."""
    _, now = est.best_diagnosis(cost, state)
    return now - (one_step_la(est, cost, state, x) - float(cost.measure_cost[x]))


def worth_measuring(est: ProbEstimator, cost: CostModel, state: State, x: int) -> bool:
    return one_step_voi(est, cost, state, x) > float(cost.measure_cost[x])


def _eligible(est: ProbEstimator, rows: np.ndarray, x: int, min_support: int) -> bool:
    if min_support <= 0:
        return True
    counts = np.bincount(est.X[rows, x], minlength=int(est.arities[x]))
    return int((counts >= min_support).sum()) >= 2


def _stop_tol(v: float) -> float:
    return 1e-12 * max(1.0, abs(v))


def grow_greedy(est: ProbEstimator, cost: CostModel, cfg: GreedyConfig) -> PolicyNode:
    """Grow, then post-prune, a greedy policy on the estimator's training rows."""
    ml = est.with_laplace(False)
    lap = est.with_laplace(True)
    variant = cfg.variant
    # estimator used for diagnoses and the stored policy probabilities
    pol = lap if cfg.laplace and variant != "Nor" else ml
    all_values = cfg.laplace and variant != "Nor"
    use_support = variant != "VOI" or cfg.voi_min_support

    def diagnosis(rows: np.ndarray) -> int:
        counts = est.class_counts_of(rows)
        if variant == "Nor":
            return int(np.flatnonzero(counts == counts.max())[0])
        return argmin_first(cost.mc @ pol.class_probs_from_counts(counts))

    def make_leaf(state: State, rows: np.ndarray) -> PolicyNode:
        return leaf(state, diagnosis(rows), support=len(rows))

    def choose(state: State, rows: np.ndarray) -> int | None:
        n = len(rows)
        tests = pol.unmeasured(state)
        if use_support:
            tests = [x for x in tests if _eligible(est, rows, x, cfg.min_support)]
        if not tests:
            return None
        if variant == "VOI":
            _, now = pol.best_diagnosis(cost, state)
            la = [_la_from_joint(pol, cost, est.joint_counts(rows, x), x) for x in tests]
            i = argmin_first(la)
            if now <= la[i] + _stop_tol(now):
                return None
            return tests[i]
        counts = est.class_counts_of(rows)
        if n == 0 or counts.max() == n:
            return None
        scores = np.array([norton_score(est, cost, state, x) for x in tests])
        best = scores.max()
        if best <= 0:
            return None
        return tests[int(np.flatnonzero(scores >= best - 1e-12 * max(1.0, best))[0])]

    def grow(state: State, rows: np.ndarray) -> PolicyNode:
        x = choose(state, rows)
        if x is None:
            return make_leaf(state, rows)
        col = est.X[rows, x]
        kids = {}
        for v in range(int(est.arities[x])):
            sub = rows[col == v]
            if len(sub) or all_values:
                kids[v] = grow(extend(state, x, v), sub)
        return measure_node(state, x, kids, {v: 0.0 for v in kids}, support=len(rows))

    tree = grow(START, est.rows(START))
    policy_value(tree, pol, cost)
    if variant == "Nor":
        tree = c45_ppp(tree, est, cfg)
        policy_value(tree, pol, cost)
    elif variant == "MC-N":
        tree = total_cost_prune(tree, est, cost, cfg.laplace)
    return tree


def pessimistic_errors(n: int, p: float, z_c: float = 1.15) -> float:
    """C4.5 upper bound on the number of errors among ``n`` rows with error rate ``p``."""
    if n <= 0:
        raise ValueError("pessimistic error estimate needs at least one example")
    return n * (p + z_c * math.sqrt(p * (1.0 - p) / n) + 1.0 / (2.0 * n))


def c45_ppp(policy: PolicyNode, est: ProbEstimator, cfg: GreedyConfig) -> PolicyNode:
    """Error-rate pessimistic pruning; Laplace adds one virtual row per class to the rate."""
    K = est.n_classes

    def leaf_errors(state: State, k: int) -> float:
        y = est.y[est.rows(state)]
        n = len(y)
        if n == 0:
            raise ValueError(f"no training rows reach the leaf at {state}")
        e = int((y != k).sum())
        p = (e + K - 1) / (n + K) if cfg.laplace else e / n
        return pessimistic_errors(n, p, cfg.z_c)

    def visit(node: PolicyNode) -> tuple[PolicyNode, float]:
        if node.is_leaf:
            return copy_tree(node), leaf_errors(node.state, node.action.index)
        kids, total = {}, 0.0
        for v, child in node.children.items():
            kids[v], ub = visit(child)
            total += ub
        counts = est.class_counts_of(est.rows(node.state))
        k = int(np.flatnonzero(counts == counts.max())[0])
        as_leaf = leaf_errors(node.state, k)
        if total >= as_leaf:
            return leaf(node.state, k, support=node.support), as_leaf
        return PolicyNode(node.state, node.action, kids, dict(node.branch_prob), node.class_probs,
                          support=node.support), total

    return visit(policy)[0]


def total_cost_prune(policy: PolicyNode, est: ProbEstimator, cost: CostModel, laplace: bool = False) -> PolicyNode:
    """Collapse every test whose expected total cost is no better than diagnosing now."""
    e = est.with_laplace(laplace)

    def visit(node: PolicyNode) -> tuple[PolicyNode, float]:
        if node.is_leaf:
            return copy_tree(node), e.diag_cost(cost, node.state, node.action.index)
        kids, vals = {}, {}
        for v, child in node.children.items():
            kids[v], vals[v] = visit(child)
        probs = e.p_values(node.action.index, node.state)
        q = float(cost.measure_cost[node.action.index]) + sum(probs[v] * vals[v] for v in kids)
        kb, now = e.best_diagnosis(cost, node.state)
        if now <= q:
            return leaf(node.state, kb, support=node.support), now
        return PolicyNode(node.state, node.action, kids, dict(node.branch_prob), node.class_probs,
                          support=node.support), q

    pruned, _ = visit(policy)
    policy_value(pruned, e, cost)
    return pruned
