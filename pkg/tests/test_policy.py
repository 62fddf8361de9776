import numpy as np
import pytest

from diagpolicy import screening as sc
from diagpolicy.mdp import START, CostModel, ProbEstimator, diagnose, extend, measure
from diagpolicy.policy import (PolicyError, copy_tree, deserialize, evaluate, execute, is_contraction, leaf,
                               policy_value, same_structure, serialize, step, measure_node)


def episode_policy():
    # x0 (cost .5) then x1 (cost 1), diagnose Healthy on (0, 0)
    s0 = extend(START, 0, 0)
    inner = measure_node(s0, 1, {0: leaf(extend(s0, 1, 0), 0, [0.5, 0.5]),
                              1: leaf(extend(s0, 1, 1), 1, [0.5, 0.5])}, {0: .5, 1: .5})
    root = measure_node(START, 0, {0: inner, 1: leaf(extend(START, 0, 1), 1, [0.5, 0.5])}, {0: .5, 1: .5})
    cost = CostModel([0.5, 1.0], [[0, 100], [80, 0]])
    return root, cost


def test_bmi_first_value():
    root = sc.bmi_first()
    assert root.value == pytest.approx(28.99, abs=1e-9)
    assert root.children[sc.LARGE].value == pytest.approx(45.98, abs=1e-9)
    assert root.children[sc.SMALL].value == pytest.approx(10.0, abs=1e-12)


def test_insulin_first_value():
    assert sc.insulin_first().value == pytest.approx(40.138, abs=1e-9)


def test_bellman_consistency():
    cost = sc.cost()
    for root in (sc.bmi_first(), sc.insulin_first()):
        for node in root.internal_nodes():
            expect = cost.measure_cost[node.action.index] + sum(
                node.branch_prob[v] * c.value for v, c in node.children.items())
            assert node.value == pytest.approx(expect, abs=1e-9)


def test_dataset_reproduces_stated_probabilities():
    root = sc.bmi_first()
    again = copy_tree(root)
    assert policy_value(again, ProbEstimator.from_dataset(sc.dataset()), sc.cost()) == pytest.approx(28.99, abs=1e-9)


def test_leaf_only_value():
    cost = CostModel([1.0], [[0, 10], [4, 0]])
    assert policy_value(leaf(START, 1, [0.25, 0.75]), None, cost) == pytest.approx(1.0)


def test_episode_cost():
    root, cost = episode_policy()
    tr = execute(root, [0, 0], truth=1, cost=cost)
    assert tr.total == 101.5
    assert [s[2] for s in tr.steps] == [0.5, 1.0, 100.0]
    assert not tr.fallback


def test_correct_leaf_only_episode_is_free():
    cost = CostModel([1.0], [[0, 10], [4, 0]])
    assert execute(leaf(START, 0, [1, 0]), [0], 0, cost).total == 0.0


def test_misdiagnosis_episode_on_screening_policy():
    tr = execute(sc.bmi_first(), [sc.LARGE, sc.HIGH], sc.HEALTHY, sc.cost())
    assert tr.total == pytest.approx(1 + 22.78 + 80)


def test_unseen_value_falls_back():
    s = extend(START, 0, 0)
    root = measure_node(START, 0, {0: leaf(s, 0, [1, 0])}, {0: 1.0}, class_probs=[0.2, 0.8])
    cost = CostModel([2.0], [[0, 10], [10, 0]])
    tr = execute(root, [1], truth=1, cost=cost)
    assert tr.fallback
    assert tr.steps[-1][0] == diagnose(1)
    assert tr.total == 2.0


def test_evaluate_mean():
    root, cost = episode_policy()
    v, per = evaluate(root, [[0, 0], [0, 0]], [1, 0], cost)
    np.testing.assert_allclose(per, [101.5, 1.5])
    assert v == pytest.approx(51.5)
    v, per = evaluate(root, [[0, 0], [1, 1]], [1, 1], cost)
    assert v == pytest.approx((101.5 + 0.5) / 2)
    with pytest.raises(PolicyError):
        evaluate(root, np.zeros((0, 2)), [], cost)


def test_evaluate_matches_value_by_sampling():
    ds = sc.dataset()
    rng = np.random.default_rng(0)
    idx = rng.integers(0, len(ds), 10000)
    v, _ = evaluate(sc.bmi_first(), ds.X[idx], ds.y[idx], sc.cost())
    assert abs(v - 28.99) / 28.99 < 0.02


def test_serialize_round_trip():
    root = sc.bmi_first()
    text = serialize(root, sc.cost(), sc.labels())
    back = deserialize(text, sc.cost())
    assert same_structure(root, back)
    assert policy_value(back, None, sc.cost()) == pytest.approx(root.value, abs=1e-9)
    assert serialize(back, sc.cost(), sc.labels()) == text


def test_deserialize_errors():
    text = serialize(sc.bmi_first(), sc.cost())
    with pytest.raises(PolicyError, match="line"):
        deserialize(text[: len(text) // 2])
    with pytest.raises(PolicyError, match="different cost"):
        deserialize(text, CostModel([1.0, 1.0], [[0, 1], [1, 0]]))
    with pytest.raises(PolicyError):
        deserialize('{"format": "other"}')


def test_step_walks_the_tree():
    root = sc.bmi_first()
    assert step(root, []) == measure(sc.BMI)
    assert step(root, [(sc.BMI, sc.SMALL)]) == diagnose(sc.HEALTHY)
    assert step(root, [(sc.BMI, sc.LARGE)]) == measure(sc.INSULIN)
    assert step(root, [(sc.BMI, sc.LARGE), (sc.INSULIN, sc.HIGH)]) == diagnose(sc.DIABETES)
    with pytest.raises(PolicyError):
        step(root, [(sc.INSULIN, sc.HIGH)])


def test_step_unknown_value_falls_back():
    s = extend(START, 0, 0)
    root = measure_node(START, 0, {0: leaf(s, 0, [1, 0])}, {0: 1.0}, class_probs=[0.2, 0.8])
    assert step(root, [(0, 1)], CostModel([1.0], [[0, 5], [5, 0]])) == diagnose(1)


def test_contraction():
    root = sc.bmi_first()
    pruned = copy_tree(root)
    large = pruned.children[sc.LARGE]
    pruned.children[sc.LARGE] = leaf(large.state, 1, large.class_probs)
    assert is_contraction(pruned, root)
    assert not is_contraction(root, pruned)


def test_malformed_tree_rejected():
    bad = measure_node(START, 0, {0: leaf(extend(START, 1, 0), 0, [1, 0])}, {0: 1.0})
    with pytest.raises(PolicyError):
        policy_value(bad, None, CostModel([1.0, 1.0], [[0, 1], [1, 0]]))
