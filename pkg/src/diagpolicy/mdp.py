"""States, actions, costs and counting-based probability estimates.

A knowledge state is the tuple of ``(attribute, value)`` pairs observed so
far, sorted by attribute index.  Probabilities are estimated by counting the
training rows that match a state, either as maximum-likelihood ratios or with
add-one (Laplace) smoothing.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

State = tuple  # tuple[tuple[int, int], ...]

START: State = ()

# relative tolerance used when deciding that two costs are tied
TIE_TOL = 1e-12


class ZeroSupportError(ValueError):
    """A maximum-likelihood estimate was requested for a state no row matches."""


class Action(NamedTuple):
    kind: str  # "diagnose" or "measure"
    index: int

    @property
    def is_diagnosis(self) -> bool:
        return self.kind == "diagnose"

    def sort_key(self) -> tuple[int, int]:
        # diagnoses before measurements, each by ascending index
        return (0 if self.kind == "diagnose" else 1, self.index)

    def __str__(self) -> str:
        return f"{'Diagnose' if self.is_diagnosis else 'Measure'}({self.index})"


def diagnose(k: int) -> Action:
    return Action("diagnose", int(k))


def measure(n: int) -> Action:
    return Action("measure", int(n))


def make_state(pairs) -> State:
    """Canonical state from an iterable of (attribute, value) pairs."""
    st = tuple(sorted((int(a), int(v)) for a, v in pairs))
    attrs = [a for a, _ in st]
    if len(set(attrs)) != len(attrs):
        raise ValueError(f"attribute repeated in state {st}")
    return st


def extend(state: State, n: int, v: int) -> State:
    """``state ∪ {x_n = v}``."""
    if any(a == n for a, _ in state):
        raise ValueError(f"attribute {n} already observed in {state}")
    return tuple(sorted(state + ((int(n), int(v)),)))


def observed(state: State) -> set[int]:
    return {a for a, _ in state}


def argmin_first(values: Sequence[float]) -> int:
    """Index of the minimum, ties resolved towards the smallest index."""
    if isinstance(values, np.ndarray):
        values = values.tolist()
    lo = min(values)
    cut = lo + TIE_TOL * max(1.0, abs(lo))
    return next(i for i, v in enumerate(values) if v <= cut)


@dataclass(frozen=True)
class CostModel:
    """Measurement costs ``C(x_n)`` and the misdiagnosis matrix ``mc[k][y]``."""

    measure_cost: np.ndarray
    mc: np.ndarray

    def __post_init__(self):
        mcost = np.asarray(self.measure_cost, dtype=float)
        mc = np.asarray(self.mc, dtype=float)
        if mcost.ndim != 1 or np.any(mcost < 0) or not np.all(np.isfinite(mcost)):
            raise ValueError("measurement costs must be finite and nonnegative")
        if mc.ndim != 2 or mc.shape[0] != mc.shape[1]:
            raise ValueError("misdiagnosis matrix must be square")
        if np.any(mc < 0) or np.any(np.diag(mc) != 0):
            raise ValueError("misdiagnosis costs must be nonnegative with a zero diagonal")
        object.__setattr__(self, "measure_cost", mcost)
        object.__setattr__(self, "mc", mc)

    @property
    def n_classes(self) -> int:
        return self.mc.shape[0]

    def fingerprint(self) -> str:
        blob = json.dumps(
            {"c": [repr(float(c)) for c in self.measure_cost],
             "mc": [[repr(float(v)) for v in row] for row in self.mc]},
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def scaled_mc(self, factor: float) -> "CostModel":
        return CostModel(self.measure_cost, self.mc * factor)


class ProbEstimator:
    """Counting estimates of ``P(x_n = v | s)`` and ``P(y | s)`` from training rows.

    Matching rows are materialized per state by filtering the parent state's
    rows, so repeated lookups along a search path reuse earlier work.  The
    estimator is read-only once built; the row cache only ever stores values
    that are a pure function of the state.
    """

    def __init__(self, X, y, arities, n_classes: int, laplace: bool = False,
                 measurable: Sequence[int] | None = None, _cache=None):
        self.X = np.asarray(X, dtype=np.int64)
        self.y = np.asarray(y, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X must be (m, N) with one label per row")
        self.arities = np.asarray(arities, dtype=np.int64)
        self.n_classes = int(n_classes)
        self.laplace = bool(laplace)
        if measurable is None:
            measurable = [n for n, a in enumerate(self.arities) if a >= 2]
        self.measurable = tuple(int(n) for n in measurable)
        self._rows = {START: np.arange(len(self.y))} if _cache is None else _cache

    @classmethod
    def from_dataset(cls, ds, indices=None, laplace: bool = False) -> "ProbEstimator":
        X, y = ds.X, ds.y
        if indices is not None:
            idx = np.asarray(indices, dtype=np.int64)
            X, y = X[idx], y[idx]
        return cls(X, y, ds.arities, ds.n_classes, laplace=laplace, measurable=ds.measurable)

    @property
    def n_attrs(self) -> int:
        return self.X.shape[1]

    @property
    def size(self) -> int:
        return len(self.y)

    def with_laplace(self, laplace: bool) -> "ProbEstimator":
        """Same data and row cache, different smoothing mode."""
        if laplace == self.laplace:
            return self
        return ProbEstimator(self.X, self.y, self.arities, self.n_classes, laplace,
                             self.measurable, _cache=self._rows)

    def unmeasured(self, state: State) -> list[int]:
        seen = observed(state)
        return [n for n in self.measurable if n not in seen]

    # counting

    def rows(self, state: State) -> np.ndarray:
        """Indices of training rows agreeing with every observed pair."""
        hit = self._rows.get(state)
        if hit is not None:
            return hit
        parent = state[:-1]
        a, v = state[-1]
        prows = self.rows(parent)
        out = prows[self.X[prows, a] == v]
        self._rows[state] = out
        return out

    def class_counts_of(self, rows: np.ndarray) -> np.ndarray:
        return np.bincount(self.y[rows], minlength=self.n_classes)

    def match_count(self, state: State) -> tuple[int, np.ndarray]:
        r = self.rows(state)
        return len(r), self.class_counts_of(r)

    def joint_counts(self, rows: np.ndarray, n: int) -> np.ndarray:
        """``(V_n, K)`` table of counts of (value of x_n, class) among ``rows``."""
        V, K = int(self.arities[n]), self.n_classes
        flat = self.X[rows, n] * K + self.y[rows]
        return np.bincount(flat, minlength=V * K).reshape(V, K)

    # probabilities from counts

    def class_probs_from_counts(self, counts: np.ndarray, laplace: bool | None = None) -> np.ndarray:
        laplace = self.laplace if laplace is None else laplace
        total = counts.sum()
        if laplace:
            return (counts + 1.0) / (total + self.n_classes)
        if total == 0:
            raise ZeroSupportError("P(y|s) undefined under maximum likelihood: no matching rows")
        return counts / float(total)

    def value_probs_from_counts(self, counts: np.ndarray, laplace: bool | None = None) -> np.ndarray:
        laplace = self.laplace if laplace is None else laplace
        total = counts.sum()
        if laplace:
            return (counts + 1.0) / (total + len(counts))
        if total == 0:
            raise ZeroSupportError("P(x=v|s) undefined under maximum likelihood: no matching rows")
        return counts / float(total)

    # probabilities by state

    def p_values(self, n: int, state: State) -> np.ndarray:
        if n in observed(state):
            raise ValueError(f"attribute {n} already observed in {state}")
        r = self.rows(state)
        counts = np.bincount(self.X[r, n], minlength=int(self.arities[n]))
        return self.value_probs_from_counts(counts)

    def p_value(self, n: int, v: int, state: State) -> float:
        return float(self.p_values(n, state)[v])

    def p_classes(self, state: State) -> np.ndarray:
        return self.class_probs_from_counts(self.match_count(state)[1])

    def p_class(self, y: int, state: State) -> float:
        return float(self.p_classes(state)[y])

    # diagnosis costs

    def diag_costs(self, cost: CostModel, state: State) -> np.ndarray:
        """Expected cost ``C(s, f_k)`` of every diagnosis action."""
        return cost.mc @ self.p_classes(state)

    def diag_cost(self, cost: CostModel, state: State, k: int) -> float:
        return float(self.diag_costs(cost, state)[k])

    def best_diagnosis(self, cost: CostModel, state: State) -> tuple[int, float]:
        return best_of(cost.mc @ self.p_classes(state))


def best_of(diag_costs: np.ndarray) -> tuple[int, float]:
    k = argmin_first(diag_costs)
    return k, float(diag_costs[k])


def best_diagnosis_from_probs(cost: CostModel, class_probs) -> tuple[int, float]:
    return best_of(cost.mc @ np.asarray(class_probs, dtype=float))
