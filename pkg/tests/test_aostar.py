import numpy as np
import pytest

from conftest import make_ds, oracle_instances
from diagpolicy.aostar import (CSV_HEADER, AOStar, SearchConfig, anytime_csv, h_opt, init_graph,
                               q_opt_unexpanded, run_ao)
from diagpolicy.evaluate import brute_force_optimal
from diagpolicy.mdp import START, CostModel, ProbEstimator, diagnose, extend, measure

SCREEN_MC = [[0, 100], [80, 0]]


def test_h_opt_takes_cheapest_action():
    # 7 diabetic of 10: Healthy costs 70, Diabetes costs 24
    ds = make_ds([[0]] * 10, [1] * 7 + [0] * 3, arities=[2])
    est = ProbEstimator.from_dataset(ds)
    assert h_opt(est, CostModel([1.0], SCREEN_MC), START) == 1.0
    assert h_opt(est, CostModel([30.0], SCREEN_MC), START) == pytest.approx(24.0)
    assert h_opt(est, CostModel([1.0], SCREEN_MC), ((0, 0),)) == pytest.approx(24.0)


def test_h_opt_min_over_costs():
    ds = make_ds([[0, 0]] * 10, [1] * 3 + [0] * 7, arities=[2, 2])
    est = ProbEstimator.from_dataset(ds)
    assert h_opt(est, CostModel([5.0, 7.0], [[0, 10], [10, 0]]), START) == pytest.approx(3.0)


def test_q_opt_unexpanded_direct():
    X = [[0]] * 5 + [[1]] * 5
    y = [1, 0, 0, 0, 0] + [1, 1, 0, 0, 0]
    est = ProbEstimator.from_dataset(make_ds(X, y))
    assert q_opt_unexpanded(est, CostModel([1.0], [[0, 10], [10, 0]]), START, 0) == pytest.approx(4.0)


def test_q_opt_zero_costs():
    X = [[0, 1], [1, 0], [1, 1], [0, 0]]
    est = ProbEstimator.from_dataset(make_ds(X, [0, 1, 1, 0]))
    assert q_opt_unexpanded(est, CostModel([3.0, 0.0], np.zeros((2, 2))), START, 0) == 3.0


def test_q_opt_is_admissible():
    for seed, ds, cost in oracle_instances(20):
        est = ProbEstimator.from_dataset(ds)
        for x in est.unmeasured(START):
            q_star = cost.measure_cost[x] + sum(
                p * _v_star(est, cost, extend(START, x, v))
                for v, p in enumerate(est.p_values(x, START)) if p > 0)
            assert q_opt_unexpanded(est, cost, START, x) <= q_star + 1e-9


def _v_star(est, cost, state):
    # optimal value below a state, by restricting the oracle to its rows
    rows = est.rows(state)
    sub = ProbEstimator(est.X[rows], est.y[rows], est.arities, est.n_classes,
                        measurable=[n for n in est.unmeasured(state)])
    return brute_force_optimal(sub, cost)[0]


def test_init_graph_root():
    ds = make_ds([[0], [1]] * 4, [0, 1] * 4)
    g = init_graph(ProbEstimator.from_dataset(ds), CostModel([1.0], [[0, 10], [10, 0]]))
    assert g.root.v_real == 5.0
    assert g.root.v_opt <= g.root.v_real
    assert list(g.root.ands) == [0]
    assert not g.root.ands[0].expanded


def test_no_tests_gives_leaf():
    ds = make_ds([[0]] * 4, [0, 1, 1, 1], arities=[1])
    res = run_ao(ProbEstimator.from_dataset(ds), CostModel([1.0], [[0, 10], [10, 0]]))
    assert res.policy.is_leaf and res.stats["expansions"] == 0 and res.stats["converged"]


def test_expensive_tests_are_never_expanded(perfect_test):
    ds, _, est = perfect_test
    res = run_ao(est, CostModel([1000.0, 1000.0], [[0, 10], [10, 0]]))
    assert res.stats["expansions"] == 0
    assert res.policy.is_leaf


def test_zero_mc_gives_free_leaf(perfect_test):
    ds, _, est = perfect_test
    res = run_ao(est, CostModel([1.0, 1.0], np.zeros((2, 2))))
    assert res.policy.is_leaf and res.policy.value == 0.0


def test_perfect_test_solution(perfect_test):
    _, cost, est = perfect_test
    res = run_ao(est, cost)
    assert res.policy.action == measure(0)
    assert res.policy.value == pytest.approx(1.0)


def test_ml_expansion_skips_empty_outcomes():
    X = [[0, 0], [0, 1], [1, 0], [1, 1]]
    ds = make_ds(X, [0, 1, 1, 0], arities=[3, 2])
    search = AOStar(ProbEstimator.from_dataset(ds), CostModel([1.0, 1.0], [[0, 50], [50, 0]]))
    search.expand(search.root, search.root.ands[0])
    assert sorted(search.root.ands[0].children) == [0, 1]
    lap = AOStar(ProbEstimator.from_dataset(ds), CostModel([1.0, 1.0], [[0, 50], [50, 0]]),
                 SearchConfig(laplace=True))
    lap.expand(lap.root, lap.root.ands[0])
    assert sorted(lap.root.ands[0].children) == [0, 1, 2]


def test_shared_states_are_stored_once(perfect_test):
    _, cost, est = perfect_test
    s = AOStar(est, cost)
    for child in s.expand(s.root, s.root.ands[0]):
        s.expand(child, child.ands[1])
    before = len(s.table)
    for child in s.expand(s.root, s.root.ands[1]):
        s.expand(child, child.ands[0])
    # x1-first adds only the two single-observation states
    assert len(s.table) == before + 2
    shared = s.table[((0, 0), (1, 0))]
    assert len(shared.parents) == 2


def test_select_prefers_gap_times_reach(perfect_test):
    _, cost, est = perfect_test
    s = AOStar(est, cost)
    a = s.root.ands[0]
    s.expand(s.root, a)
    s.root.pi_opt = measure(0)
    c0, c1 = a.children[0], a.children[1]
    for c, gap in ((c0, 10.0), (c1, 2.0)):
        c.pi_opt = measure(1)
        c.v_opt, c.v_real = 0.0, gap
    a.probs = np.array([0.2, 0.9])
    assert s.select()[0] is c0
    a.probs = np.array([0.1, 0.9])
    assert s.select()[0] is c1


def test_select_tie_goes_to_older_node(perfect_test):
    _, cost, est = perfect_test
    s = AOStar(est, cost)
    a = s.root.ands[0]
    s.expand(s.root, a)
    s.root.pi_opt = measure(0)
    for c in a.children.values():
        c.pi_opt = measure(1)
        c.v_opt, c.v_real = 0.0, 1.0
    assert s.select()[0] is a.children[0]


def test_select_converged_when_policy_complete(perfect_test):
    _, cost, est = perfect_test
    s = AOStar(est, cost)
    s.root.pi_opt = diagnose(0)
    assert s.select() is None


def test_memory_limit_returns_realistic_policy():
    ds, cost = oracle_instances(4)[3][1:]
    est = ProbEstimator.from_dataset(ds)
    first = AOStar(est, cost).root
    tiny = AOStar(est, cost, SearchConfig(memory_limit=1)).bytes + 1
    res = run_ao(est, cost, SearchConfig(memory_limit=tiny))
    assert res.stats["memory_limit_hit"] and not res.stats["converged"]
    assert res.policy.is_leaf
    assert res.policy.value == pytest.approx(first.diag_cost)


def test_byte_model():
    ds = make_ds([[0, 0, 0], [1, 1, 2]], [0, 1], arities=[2, 2, 3])
    s = AOStar(ProbEstimator.from_dataset(ds), CostModel([1.0] * 3, [[0, 5], [5, 0]]))
    # root: 64 + 8*(3+1), diagnosis AND 48, measurement ANDs 48 + 16*arity
    assert s.bytes == 64 + 32 + 48 + (48 + 32) + (48 + 32) + (48 + 48)


def test_anytime_log_and_csv():
    for seed, ds, cost in oracle_instances(10):
        res = run_ao(ProbEstimator.from_dataset(ds), cost)
        its = [r.iteration for r in res.log]
        assert its == list(range(len(its)))
        text = anytime_csv(res.log)
        assert text.splitlines()[0] == CSV_HEADER
        assert len(text.splitlines()) == len(res.log) + 1


def test_two_test_instance_matches_oracle():
    from diagpolicy.data import random_problem

    ds, cost = random_problem(11, n_tests=2, max_arity=2, m=40)
    est = ProbEstimator.from_dataset(ds)
    res = run_ao(est, cost)
    v_star, _ = brute_force_optimal(est, cost)
    assert res.log[-1].v_opt == pytest.approx(v_star, abs=1e-9)
    assert res.log[-1].v_real == pytest.approx(v_star, abs=1e-9)
    assert res.policy.value == pytest.approx(v_star, abs=1e-9)


def test_laplace_search_matches_laplace_oracle():
    for seed, ds, cost in oracle_instances(15):
        est = ProbEstimator.from_dataset(ds, laplace=True)
        res = run_ao(est, cost, SearchConfig(laplace=True))
        assert res.policy.value == pytest.approx(brute_force_optimal(est, cost)[0], abs=1e-9)


@pytest.mark.parametrize("laplace", [False, True])
@pytest.mark.parametrize("heuristic", [False, True])
def test_batched_q_matches_per_attribute(laplace, heuristic):
    for _, ds, cost in oracle_instances(15):
        s = AOStar(ProbEstimator.from_dataset(ds), cost, SearchConfig(laplace=laplace, heuristic=heuristic))
        for node in list(s.table.values()) + s.expand(s.root, next(iter(s.root.ands.values()))):
            xs = list(node.ands)
            if not xs:
                continue
            for x, (probs, q) in zip(xs, s._unexpanded_qs(node.rows, xs)):
                p_ref, q_ref = s.q_opt_unexpanded(node, x)
                assert probs == pytest.approx(p_ref, abs=1e-12)
                assert q == pytest.approx(q_ref, abs=1e-9)
