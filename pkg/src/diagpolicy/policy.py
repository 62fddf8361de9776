"""Diagnostic policies as decision trees: value, execution, evaluation, I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .mdp import (Action, CostModel, ProbEstimator, State, best_diagnosis_from_probs,
                  diagnose, extend, measure)

FORMAT = "diagpolicy/1"


class PolicyError(ValueError):
    """Structurally invalid policy, or a policy used with the wrong inputs."""


@dataclass
class PolicyNode:
    state: State
    action: Action
    children: dict[int, "PolicyNode"] = field(default_factory=dict)
    branch_prob: dict[int, float] = field(default_factory=dict)
    class_probs: np.ndarray | None = None
    value: float = float("nan")
    support: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.action.is_diagnosis

    def nodes(self) -> Iterator["PolicyNode"]:
        yield self
        for v in sorted(self.children):
            yield from self.children[v].nodes()

    def internal_nodes(self) -> Iterator["PolicyNode"]:
        return (n for n in self.nodes() if not n.is_leaf)

    def size(self) -> int:
        return sum(1 for _ in self.nodes())

    def depth(self) -> int:
        if not self.children:
            return 0
        return 1 + max(c.depth() for c in self.children.values())


@dataclass
class Trace:
    steps: list[tuple[Action, int, float]]
    total: float
    fallback: bool = False


def leaf(state: State, k: int, class_probs=None, support: int = 0) -> PolicyNode:
    cp = None if class_probs is None else np.asarray(class_probs, dtype=float)
    return PolicyNode(state, diagnose(k), class_probs=cp, support=support)


def measure_node(state: State, n: int, children: dict[int, PolicyNode], branch_prob: dict[int, float],
              class_probs=None, support: int = 0) -> PolicyNode:
    cp = None if class_probs is None else np.asarray(class_probs, dtype=float)
    return PolicyNode(state, measure(n), dict(children), dict(branch_prob), cp, support=support)


def _check(node: PolicyNode) -> None:
    if node.is_leaf:
        if node.children:
            raise PolicyError(f"diagnosis node at {node.state} has children")
        return
    if not node.children:
        raise PolicyError(f"measurement node at {node.state} has no children")
    n = node.action.index
    for v, child in node.children.items():
        if child.state != extend(node.state, n, v):
            raise PolicyError(f"child state {child.state} does not extend {node.state} by x{n}={v}")
        if v not in node.branch_prob:
            raise PolicyError(f"no branch probability for x{n}={v} at {node.state}")


def refresh(root: PolicyNode, est: ProbEstimator) -> None:
    """Re-read branch and class probabilities and supports from ``est``."""
    for node in root.nodes():
        cnt, cc = est.match_count(node.state)
        node.support = cnt
        node.class_probs = est.class_probs_from_counts(cc) if (cnt or est.laplace) else None
        if not node.is_leaf:
            probs = est.p_values(node.action.index, node.state) if (cnt or est.laplace) else None
            node.branch_prob = {v: (float(probs[v]) if probs is not None else 0.0)
                                for v in node.children}


def policy_value(root: PolicyNode, est: ProbEstimator | None, cost: CostModel) -> float:
    """Fill every node's value by a bottom-up Bellman sweep; return the root value.

    With ``est`` the probabilities are re-estimated first; without it the
    stored branch and class probabilities are used as they are.
    """
    if est is not None:
        refresh(root, est)

    def sweep(node: PolicyNode) -> float:
        _check(node)
        if node.is_leaf:
            if node.class_probs is None:
                raise PolicyError(f"leaf at {node.state} has no class distribution")
            node.value = float(cost.mc[node.action.index] @ node.class_probs)
        else:
            node.value = float(cost.measure_cost[node.action.index]) + sum(
                node.branch_prob[v] * sweep(c) for v, c in node.children.items())
        return node.value

    return sweep(root)


def _fallback_diagnosis(node: PolicyNode, cost: CostModel) -> int:
    if node.class_probs is None:
        raise PolicyError(f"no class distribution at {node.state} for a fallback diagnosis")
    return best_diagnosis_from_probs(cost, node.class_probs)[0]


def execute(root: PolicyNode, example: Sequence[int], truth: int, cost: CostModel) -> Trace:
    """Run one episode on a complete example; unseen values diagnose in place."""
    steps = []
    node = root
    fallback = False
    while not node.is_leaf:
        n = node.action.index
        v = int(example[n])
        c = float(cost.measure_cost[n])
        steps.append((node.action, v, c))
        nxt = node.children.get(v)
        if nxt is None:
            fallback = True
            k = _fallback_diagnosis(node, cost)
            break
        node = nxt
    else:
        k = node.action.index
    mcost = float(cost.mc[k, int(truth)])
    steps.append((diagnose(k), k, mcost))
    return Trace(steps, float(sum(s[2] for s in steps)), fallback)


def example_costs(root: PolicyNode, X, y, cost: CostModel) -> np.ndarray:
    return np.array([execute(root, x, t, cost).total for x, t in zip(np.asarray(X), np.asarray(y))],
                    dtype=float)


def evaluate(root: PolicyNode, X, y, cost: CostModel) -> tuple[float, np.ndarray]:
    """Mean total cost over a test set, with the per-example vector."""
    if len(y) == 0:
        raise PolicyError("cannot evaluate on an empty test set")
    per = example_costs(root, X, y, cost)
    return float(per.mean()), per


def step(root: PolicyNode, answers: Sequence[tuple[int, int]], cost: CostModel | None = None) -> Action:
    """Next action after consuming ``answers`` in the order the tree asks."""
    node = root
    for a, v in answers:
        if node.is_leaf:
            raise PolicyError(f"answer for x{a} given after the policy already diagnosed")
        if node.action.index != a:
            raise PolicyError(f"policy asks x{node.action.index} at this point, not x{a}")
        nxt = node.children.get(int(v))
        if nxt is None:
            if cost is None:
                raise PolicyError(f"value {v} of x{a} is not in the policy and no cost model was given")
            return diagnose(_fallback_diagnosis(node, cost))
        node = nxt
    return node.action


def node_at(root: PolicyNode, answers: Sequence[tuple[int, int]]) -> PolicyNode | None:
    node = root
    for _, v in answers:
        node = node.children.get(int(v))
        if node is None:
            return None
    return node


def copy_tree(root: PolicyNode) -> PolicyNode:
    return PolicyNode(root.state, root.action, {v: copy_tree(c) for v, c in root.children.items()},
                      dict(root.branch_prob),
                      None if root.class_probs is None else root.class_probs.copy(),
                      root.value, root.support)


def same_structure(a: PolicyNode, b: PolicyNode) -> bool:
    if a.state != b.state or a.action != b.action or set(a.children) != set(b.children):
        return False
    return all(same_structure(a.children[v], b.children[v]) for v in a.children)


def is_contraction(pruned: PolicyNode, original: PolicyNode) -> bool:
    """Every node of ``pruned`` exists in ``original`` (leaves may replace subtrees)."""
    if pruned.state != original.state:
        return False
    if pruned.is_leaf:
        return True
    if pruned.action != original.action or not set(pruned.children) <= set(original.children):
        return False
    return all(is_contraction(c, original.children[v]) for v, c in pruned.children.items())


# serialization


def _node_to_json(node: PolicyNode) -> dict:
    d = {
        "state": [list(p) for p in node.state],
        "action": {"kind": node.action.kind, "index": node.action.index},
        "value": node.value,
        "support": node.support,
        "class_probs": None if node.class_probs is None else [float(p) for p in node.class_probs],
    }
    if not node.is_leaf:
        d["prob"] = {str(v): node.branch_prob[v] for v in sorted(node.children)}
        d["children"] = {str(v): _node_to_json(node.children[v]) for v in sorted(node.children)}
    return d


def serialize(root: PolicyNode, cost: CostModel | None = None, labels: dict | None = None) -> str:
    doc = {"format": FORMAT,
           "cost_fingerprint": cost.fingerprint() if cost is not None else None,
           "labels": labels,
           "root": _node_to_json(root)}
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=True) + "\n"


def _node_from_json(d, where: str) -> PolicyNode:
    try:
        state = tuple((int(a), int(v)) for a, v in d["state"])
        act = d["action"]
        if act["kind"] not in ("diagnose", "measure"):
            raise PolicyError(f"{where}: unknown action kind {act['kind']!r}")
        action = Action(act["kind"], int(act["index"]))
        cp = d.get("class_probs")
        node = PolicyNode(state, action, class_probs=None if cp is None else np.asarray(cp, dtype=float),
                          value=float(d["value"]), support=int(d["support"]))
        if not action.is_diagnosis:
            node.children = {int(v): _node_from_json(c, f"{where}/{v}") for v, c in d["children"].items()}
            node.branch_prob = {int(v): float(p) for v, p in d["prob"].items()}
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, PolicyError):
            raise
        raise PolicyError(f"{where}: malformed policy node ({exc!r})") from None
    _check(node)
    return node


def load_document(text: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PolicyError(f"policy parse error at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise PolicyError(f"not a {FORMAT} policy document")
    return doc


def deserialize(text: str, cost: CostModel | None = None) -> PolicyNode:
    """Parse a policy; with ``cost`` the stored fingerprint must match."""
    doc = load_document(text)
    if cost is not None and doc.get("cost_fingerprint") not in (None, cost.fingerprint()):
        raise PolicyError("policy was learned under a different cost model")
    if "root" not in doc:
        raise PolicyError("policy document has no root")
    return _node_from_json(doc["root"], "root")
