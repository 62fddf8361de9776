import math

import numpy as np
import pytest

from conftest import make_ds, oracle_instances
from diagpolicy.aostar import AOStar, SearchConfig, run_ao
from diagpolicy.data import DataError
from diagpolicy.mdp import START, CostModel, ProbEstimator, extend
from diagpolicy.policy import is_contraction, leaf, measure_node, policy_value
from diagpolicy.regularize import (SpConfig, indistinguishable, normal_ci, ppp_ao, run_es, sp_check,
                                   z_value)


def test_z_value():
    assert z_value(0.95) == pytest.approx(1.959964, abs=1e-6)


def test_ci_hand_computation():
    lo, hi = normal_ci([8, 12, 10, 10, 9, 11])
    half = z_value(0.95) * math.sqrt(2.0) / math.sqrt(6)
    assert (lo, hi) == pytest.approx((10 - half, 10 + half))
    assert hi - 10 == pytest.approx(1.13, abs=5e-3)
    assert indistinguishable([8, 12, 10, 10, 9, 11], 9.2)
    assert not indistinguishable([8, 12, 10, 10, 9, 11], 8.5)


def test_degenerate_ci_is_a_point():
    assert not indistinguishable([10, 10, 10, 10], 9.0)
    assert indistinguishable([10, 10, 10, 10], 10.0)


def test_ci_center_override():
    lo, hi = normal_ci([8, 12, 10, 10, 9, 11], center=20.0)
    assert (lo + hi) / 2 == pytest.approx(20.0)
    with pytest.raises(ValueError):
        SpConfig(confidence=1.0)


def _sp_manual(est, cost, cfg=SpConfig()):
    """Drive the search by hand, checking that pruning leaves the realistic side alone."""
    s = AOStar(est, cost)
    prunes = 0
    while (picked := s.select()) is not None:
        node, a = picked
        if sp_check(s, node, cfg):
            real = [(n.v_real, n.pi_real) for n in s.table.values()]
            s.prune(node, a)
            assert real == [(n.v_real, n.pi_real) for n in s.table.values()]
            prunes += 1
        else:
            s.expand(node, a)
            s.backup(node)
    return prunes


def test_sp_prune_keeps_realistic_side():
    total = sum(_sp_manual(ProbEstimator.from_dataset(ds), cost) for _, ds, cost in oracle_instances(30))
    assert total > 0


def test_sp_low_support_prunes():
    ds = make_ds([[0], [1]], [0, 1])
    s = AOStar(ProbEstimator.from_dataset(ds), CostModel([0.1], [[0, 10], [10, 0]]))
    assert sp_check(s, s.root, SpConfig(min_support=3))


def test_sp_value_never_beats_optimum():
    for _, ds, cost in oracle_instances(40):
        est = ProbEstimator.from_dataset(ds)
        plain = run_ao(est, cost).policy.value
        sp = run_ao(est, cost, SearchConfig(sp=SpConfig())).policy.value
        assert sp >= plain - 1e-9


def _noisy_problem(seed, n=15, m=100, acc=0.7):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, m)
    X = np.where(rng.random((m, n)) < acc, y[:, None], 1 - y[:, None])
    return make_ds(X, y, arities=[2] * n), CostModel([1.0] * n, [[0, 20], [20, 0]])


def test_es_beats_or_matches_converged_on_holdout():
    ds, cost = _noisy_problem(1)
    res = run_es(ds, cost, seed=0)
    assert res.stats["es_holdout_cost"] <= res.stats["es_final_holdout_cost"]
    assert res.final_policy is not None
    assert res.stats["subtrain_size"] + res.stats["holdout_size"] == len(ds)


def test_es_ties_go_to_earliest():
    # constant holdout cost: every realistic policy diagnoses the same way
    ds = make_ds([[0], [1]] * 4, [0, 0, 0, 0, 1, 1, 1, 1])
    res = run_es(ds, CostModel([100.0], [[0, 1], [1, 0]]))
    assert res.stats["es_best_iteration"] == 0


def test_es_final_iteration_best_gives_converged_policy(perfect_test):
    ds, cost, _ = perfect_test
    res = run_es(ds, cost)
    assert res.policy.action == res.final_policy.action
    assert res.policy.size() == res.final_policy.size()


def test_es_input_errors():
    with pytest.raises(DataError):
        run_es(make_ds([[0], [1], [0]], [0, 1, 0]), CostModel([1.0], [[0, 1], [1, 0]]))
    with pytest.raises(DataError):
        run_es(make_ds([[0]] * 5, [0, 0, 0, 0, 1], arities=[2]), CostModel([1.0], [[0, 1], [1, 0]]))


def test_ppp_leaf_only_unchanged():
    ds = make_ds([[0], [1]] * 3, [0, 1, 1, 1, 0, 1])
    est = ProbEstimator.from_dataset(ds)
    cost = CostModel([1.0], [[0, 5], [5, 0]])
    lf = leaf(START, 1)
    policy_value(lf, est, cost)
    out = ppp_ao(lf, est, cost)
    assert out.is_leaf and out.action == lf.action


def test_ppp_collapses_unneeded_split():
    ds = make_ds([[0], [1], [0], [1]], [1, 1, 1, 1])
    est = ProbEstimator.from_dataset(ds)
    cost = CostModel([1.0], [[0, 5], [5, 0]])
    tree = measure_node(START, 0, {v: leaf(extend(START, 0, v), 1) for v in (0, 1)}, {0: .5, 1: .5})
    policy_value(tree, est, cost)
    bounds = {}
    out = ppp_ao(tree, est, cost, bounds=bounds)
    assert out.is_leaf and out.size() < tree.size()
    assert bounds[START] == 0.0


def test_ppp_laplace_leaf_bound_includes_virtual_rows():
    ds = make_ds([[0]] * 4, [1] * 4, arities=[2])
    est = ProbEstimator.from_dataset(ds, laplace=True)
    cost = CostModel([1.0], [[0, 5], [5, 0]])
    lf = leaf(START, 1)
    policy_value(lf, est, cost)
    bounds = {}
    ppp_ao(lf, est, cost, bounds=bounds)
    vals = np.array([0, 0, 0, 0, 5.0, 0.0])
    expect = vals.mean() + z_value(0.95) * vals.std(ddof=1) / math.sqrt(6)
    assert bounds[START] == pytest.approx(expect)


def test_ppp_is_contraction():
    for _, ds, cost in oracle_instances(30):
        for lap in (False, True):
            est = ProbEstimator.from_dataset(ds, laplace=lap)
            pol = run_ao(est, cost, SearchConfig(laplace=lap)).policy
            out = ppp_ao(pol, est, cost)
            assert is_contraction(out, pol)
            assert sum(1 for _ in out.internal_nodes()) <= sum(1 for _ in pol.internal_nodes())
