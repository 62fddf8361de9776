"""AO* search over the AND/OR graph of diagnostic policies.

Every OR node carries two bounds on the optimal cost-to-go: an optimistic
value backed by an admissible one-step heuristic on unexpanded actions, and a
realistic value computed only from expanded actions.  The realistic policy is
complete at every iteration, which makes the search anytime.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .mdp import (START, CostModel, ProbEstimator, State, argmin_first, diagnose, extend,
                  measure)
from .policy import PolicyNode, policy_value

DEFAULT_MEMORY_LIMIT = 100 * 1024 * 1024

# byte model of a compact graph representation
OR_BYTES, OR_ACTION_BYTES = 64, 8
AND_BYTES, AND_OUTCOME_BYTES = 48, 16


@dataclass
class SearchConfig:
    laplace: bool = False
    memory_limit: int = DEFAULT_MEMORY_LIMIT
    sp: "object | None" = None  # regularize.SpConfig enables statistical pruning
    heuristic: bool = True
    seed: int = 0
    test_data: tuple | None = None  # (X, y) scored into the anytime log
    callback: Callable | None = None  # called as callback(search, iteration)
    max_iterations: int | None = None

    def __post_init__(self):
        if self.memory_limit <= 0:
            raise ValueError("memory limit must be positive")


@dataclass
class AnytimeRecord:
    iteration: int
    v_real: float
    v_opt: float
    v_test: float | None
    nodes: int
    bytes: int


CSV_HEADER = "iter,v_real_train,v_opt_train,v_test,nodes,bytes"


def anytime_csv(log: list[AnytimeRecord]) -> str:
    lines = [CSV_HEADER]
    for r in log:
        vt = "" if r.v_test is None else repr(r.v_test)
        lines.append(f"{r.iteration},{r.v_real!r},{r.v_opt!r},{vt},{r.nodes},{r.bytes}")
    return "\n".join(lines) + "\n"


class AndNode:
    __slots__ = ("parent", "attr", "probs", "plist", "cost", "q_opt", "q_real", "expanded", "pruned",
                 "children")

    def __init__(self, parent: "OrNode", attr: int, probs: np.ndarray, q_opt: float, cost: float = 0.0):
        self.parent = parent
        self.attr = attr
        self.probs = probs
        self.plist = probs.tolist()
        self.cost = cost
        self.q_opt = q_opt
        self.q_real: float | None = None
        self.expanded = False
        self.pruned = False
        self.children: dict[int, OrNode] = {}


class OrNode:
    __slots__ = ("state", "rows", "order", "class_probs", "diag_k", "diag_cost", "ands", "parents",
                 "v_opt", "v_real", "pi_opt", "pi_real", "pi_diag")

    def __init__(self, state: State, rows: np.ndarray, order: int):
        self.state = state
        self.rows = rows
        self.order = order
        self.ands: dict[int, AndNode] = {}
        self.parents: list[AndNode] = []

    def __repr__(self) -> str:
        return f"OrNode({self.state}, v_opt={self.v_opt:.6g}, v_real={self.v_real:.6g})"


class MemoryLimitReached(RuntimeError):
    pass


@dataclass
class SearchResult:
    policy: PolicyNode
    log: list[AnytimeRecord]
    stats: dict = field(default_factory=dict)
    final_policy: PolicyNode | None = None  # converged policy when ``policy`` is an earlier one


class AOStar:
    """One search over one training set; mutated by a single caller."""

    def __init__(self, est: ProbEstimator, cost: CostModel, config: SearchConfig | None = None):
        self.config = config or SearchConfig()
        self.est = est.with_laplace(self.config.laplace)
        self.cost = cost
        self.mc = cost.mc
        self.C = cost.measure_cost
        self._measures = [measure(x) for x in range(len(self.C))]
        self.table: dict[State, OrNode] = {}
        self.bytes = 0
        self.n_and = 0
        self.expansions = 0
        self.sp_prunes = 0
        self.real_version = 0
        self.iteration = 0
        self.root = self._new_or(START, self.est.rows(START))

    # node construction

    def _bytes_for(self, state: State) -> int:
        unmeasured = self.est.unmeasured(state)
        return (OR_BYTES + OR_ACTION_BYTES * (len(unmeasured) + 1) + AND_BYTES
                + sum(AND_BYTES + AND_OUTCOME_BYTES * int(self.est.arities[x]) for x in unmeasured))

    def _class_probs(self, counts: np.ndarray) -> np.ndarray:
        return self.est.class_probs_from_counts(counts)

    def h_opt_children(self, rows: np.ndarray, state: State, x: int) -> tuple[np.ndarray, np.ndarray]:
        """Outcome probabilities of measuring ``x`` and ``h_opt`` of each resulting state."""
        est = self.est
        joint = est.joint_counts(rows, x)
        n_v = joint.sum(axis=1)
        probs = est.value_probs_from_counts(n_v)
        others = [self.C[o] for o in est.unmeasured(state) if o != x]
        cheapest = min(others) if others else math.inf
        live = probs > 0.0
        if est.laplace:
            cp = (joint + 1.0) / (n_v[:, None] + est.n_classes)
        else:
            cp = joint / np.where(live, n_v, 1)[:, None]
        h = np.minimum((cp @ self.mc.T).min(axis=1), cheapest)
        return probs, np.where(live, h, 0.0)

    def q_opt_unexpanded(self, node: OrNode, x: int) -> tuple[np.ndarray, float]:
        probs, h = self.h_opt_children(node.rows, node.state, x)
        if not self.config.heuristic:
            return probs, 0.0
        return probs, float(self.C[x] + probs @ h)

    def _unexpanded_qs(self, rows: np.ndarray, xs: list[int]) -> list[tuple[np.ndarray, float]]:
        """``q_opt_unexpanded`` for every attribute in ``xs`` at once."""
        est, K = self.est, self.est.n_classes
        u = len(xs)
        ar = est.arities[xs]
        A = int(ar.max())
        sub = est.X[np.ix_(rows, xs)]
        flat = (np.arange(u) * A + sub) * K + est.y[rows][:, None]
        joint = np.bincount(flat.ravel(), minlength=u * A * K).reshape(u, A, K)
        n_v = joint.sum(axis=2)
        valid = np.arange(A) < ar[:, None]
        if est.laplace:
            probs = np.where(valid, (n_v + 1.0) / (len(rows) + ar[:, None]), 0.0)
            cp = (joint + 1.0) / (n_v[..., None] + K)
        else:
            est.value_probs_from_counts(n_v[0], laplace=False)  # raises on zero support
            probs = n_v / float(len(rows))
            cp = joint / np.maximum(n_v, 1)[..., None]
        costs = self.C[xs]
        if u > 1:
            # cheapest other test: the minimum, or the runner-up at the minimum's position
            lo = int(np.argmin(costs))
            cheapest = np.full(u, costs[lo])
            cheapest[lo] = np.partition(costs, 1)[1]
        else:
            cheapest = np.full(u, math.inf)
        h = np.minimum((cp @ self.mc.T).min(axis=2), cheapest[:, None])
        h = np.where(probs > 0.0, h, 0.0)
        q = costs + (probs * h).sum(axis=1) if self.config.heuristic else np.zeros(u)
        return [(probs[i, :ar[i]], float(q[i])) for i in range(u)]

    def _new_or(self, state: State, rows: np.ndarray) -> OrNode:
        node = OrNode(state, rows, len(self.table))
        node.class_probs = self._class_probs(self.est.class_counts_of(rows))
        dc = self.mc @ node.class_probs
        node.diag_k = argmin_first(dc)
        node.diag_cost = float(dc[node.diag_k])
        xs = list(self.est.unmeasured(state))
        if xs:
            for x, (probs, q) in zip(xs, self._unexpanded_qs(rows, xs)):
                node.ands[x] = AndNode(node, x, probs, q, float(self.C[x]))
        self.n_and += len(node.ands) + 1
        node.v_opt = node.v_real = node.diag_cost
        node.pi_opt = node.pi_real = node.pi_diag = diagnose(node.diag_k)
        self._recompute(node)
        self.table[state] = node
        self.bytes += self._bytes_for(state)
        return node

    # value maintenance

    def _recompute(self, node: OrNode) -> bool:
        """Refresh Q of expanded children and both bounds of ``node``; report change."""
        opt_x, opt_vals = [-1], [node.diag_cost]
        real_x, real_vals = [-1], [node.diag_cost]
        for x, a in node.ands.items():
            if a.expanded:
                q_opt = q_real = a.cost
                p = a.plist
                for v, child in a.children.items():
                    q_opt += p[v] * child.v_opt
                    q_real += p[v] * child.v_real
                a.q_opt, a.q_real = q_opt, q_real
                real_x.append(x)
                real_vals.append(q_real)
            if not a.pruned:
                opt_x.append(x)
                opt_vals.append(a.q_opt)
        i = argmin_first(opt_vals)
        j = argmin_first(real_vals)
        before = (node.v_opt, node.pi_opt, node.v_real, node.pi_real)
        node.v_opt, node.pi_opt = opt_vals[i], self._action(node, opt_x[i])
        node.v_real, node.pi_real = real_vals[j], self._action(node, real_x[j])
        if before[2:] != (node.v_real, node.pi_real):
            self.real_version += 1
        return before != (node.v_opt, node.pi_opt, node.v_real, node.pi_real)

    def _action(self, node: OrNode, x: int):
        return node.pi_diag if x < 0 else self._measures[x]

    def backup(self, start: OrNode) -> None:
        """Propagate changes at ``start`` to every ancestor, deepest first."""
        heap = [(-len(start.state), start.order, start)]
        queued = {start.order}
        while heap:
            _, _, node = heapq.heappop(heap)
            queued.discard(node.order)
            if not self._recompute(node):
                continue
            for a in node.parents:
                p = a.parent
                if p.order not in queued:
                    queued.add(p.order)
                    heapq.heappush(heap, (-len(p.state), p.order, p))

    # search steps

    def select(self) -> tuple[OrNode, AndNode] | None:
        """Unexpanded AND node on the optimistic policy with the largest gap x reach."""
        best = None
        best_key = None
        stack = [(self.root, 1.0)]
        while stack:
            node, reach = stack.pop()
            act = node.pi_opt
            if act.is_diagnosis:
                continue
            a = node.ands[act.index]
            if a.expanded:
                for v, child in a.children.items():
                    stack.append((child, reach * a.probs[v]))
                continue
            key = ((node.v_real - node.v_opt) * reach, -node.order)
            if best_key is None or key > best_key:
                best, best_key = (node, a), key
        return best

    def expand(self, node: OrNode, a: AndNode) -> list[OrNode]:
        if a.expanded or a.pruned:
            raise ValueError(f"AND node ({node.state}, x{a.attr}) is not expandable")
        x = a.attr
        col = self.est.X[node.rows, x]
        values = [v for v in range(int(self.est.arities[x])) if self.est.laplace or a.probs[v] > 0]
        extra = sum(self._bytes_for(extend(node.state, x, v)) for v in values
                    if extend(node.state, x, v) not in self.table)
        if self.bytes + extra > self.config.memory_limit:
            raise MemoryLimitReached(f"expansion needs {extra} bytes beyond {self.bytes}")
        created = []
        for v in values:
            s2 = extend(node.state, x, v)
            child = self.table.get(s2)
            if child is None:
                child = self._new_or(s2, node.rows[col == v])
                created.append(child)
            child.parents.append(a)
            a.children[v] = child
        a.expanded = True
        self.expansions += 1
        return created

    def prune(self, node: OrNode, a: AndNode) -> None:
        """Drop an unexpanded action from the optimistic side."""
        a.pruned = True
        self.sp_prunes += 1
        self.backup(node)

    # reading the graph

    @property
    def n_nodes(self) -> int:
        return len(self.table) + self.n_and

    def cutoffs(self) -> int:
        """Unexpanded live AND nodes whose optimistic Q already exceeds the realistic value."""
        return sum(1 for node in self.table.values() for a in node.ands.values()
                   if not a.expanded and not a.pruned and node.v_real < a.q_opt)

    def realistic_costs(self, X, y, node: OrNode | None = None) -> np.ndarray:
        """Total cost of following the realistic policy from ``node`` on each row."""
        X = np.asarray(X)
        y = np.asarray(y)
        out = np.zeros(len(y))
        stack = [(node or self.root, np.arange(len(y)))]
        while stack:
            nd, idx = stack.pop()
            if len(idx) == 0:
                continue
            act = nd.pi_real
            if act.is_diagnosis:
                out[idx] += self.mc[act.index, y[idx]]
                continue
            x = act.index
            out[idx] += self.C[x]
            a = nd.ands[x]
            vals = X[idx, x]
            for v in np.unique(vals):
                sub = idx[vals == v]
                child = a.children.get(int(v))
                if child is None:
                    out[sub] += self.mc[nd.diag_k, y[sub]]
                else:
                    stack.append((child, sub))
        return out

    def extract(self, node: OrNode | None = None) -> PolicyNode:
        """Standalone tree following the realistic policy."""

        def build(nd: OrNode) -> PolicyNode:
            pn = PolicyNode(nd.state, nd.pi_real, class_probs=nd.class_probs.copy(), support=len(nd.rows))
            if not nd.pi_real.is_diagnosis:
                a = nd.ands[nd.pi_real.index]
                pn.children = {v: build(c) for v, c in sorted(a.children.items())}
                pn.branch_prob = {v: float(a.probs[v]) for v in pn.children}
            return pn

        root = build(node or self.root)
        policy_value(root, None, self.cost)
        return root

    def record(self) -> AnytimeRecord:
        v_test = None
        if self.config.test_data is not None:
            Xt, yt = self.config.test_data
            v_test = float(self.realistic_costs(Xt, yt).mean())
        return AnytimeRecord(self.iteration, self.root.v_real, self.root.v_opt, v_test,
                             self.n_nodes, self.bytes)

    def stats(self, converged: bool, memory_hit: bool) -> dict:
        return {"iterations": self.iteration, "expansions": self.expansions,
                "or_nodes": len(self.table), "and_nodes": self.n_and, "nodes": self.n_nodes,
                "bytes": self.bytes, "cutoffs": self.cutoffs(), "sp_prunes": self.sp_prunes,
                "converged": converged, "memory_limit_hit": memory_hit}

    def run(self) -> SearchResult:
        cfg = self.config
        sp_check = None
        if cfg.sp is not None:
            from .regularize import sp_check
        log = [self.record()]
        if cfg.callback is not None:
            cfg.callback(self, 0)
        converged = memory_hit = False
        while True:
            if cfg.max_iterations is not None and self.iteration >= cfg.max_iterations:
                break
            picked = self.select()
            if picked is None:
                converged = True
                break
            node, a = picked
            if sp_check is not None and sp_check(self, node, cfg.sp):
                self.prune(node, a)
            else:
                try:
                    self.expand(node, a)
                except MemoryLimitReached:
                    memory_hit = True
                    break
                self.backup(node)
            self.iteration += 1
            log.append(self.record())
            if cfg.callback is not None:
                cfg.callback(self, self.iteration)
        return SearchResult(self.extract(), log, self.stats(converged, memory_hit))


def h_opt(est: ProbEstimator, cost: CostModel, state: State) -> float:
    """Cheapest single action available in ``state``: best diagnosis or any remaining test."""
    _, c = est.best_diagnosis(cost, state)
    rest = [cost.measure_cost[x] for x in est.unmeasured(state)]
    return float(min([c] + rest))


def q_opt_unexpanded(est: ProbEstimator, cost: CostModel, state: State, x: int) -> float:
    """``C(x) + sum_v P(x=v|s) h_opt(s + {x=v})``, skipping zero-probability outcomes."""
    probs = est.p_values(x, state)
    total = float(cost.measure_cost[x])
    for v, p in enumerate(probs):
        if p > 0:
            total += p * h_opt(est, cost, extend(state, x, v))
    return total


def init_graph(est: ProbEstimator, cost: CostModel, config: SearchConfig | None = None) -> AOStar:
    return AOStar(est, cost, config)


def run_ao(est: ProbEstimator, cost: CostModel, config: SearchConfig | None = None) -> SearchResult:
    return AOStar(est, cost, config).run()
