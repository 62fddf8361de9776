"""A two-test diabetes screening problem, small enough to check by hand.

Classes are 0 = Healthy and 1 = Diabetes.  BMI (cost 1) takes values
small/large; Insulin (cost 22.78) takes low/high.
"""

from __future__ import annotations

import numpy as np

from .data import AttributeMeta, Dataset
from .mdp import START, CostModel, ProbEstimator, extend
from .policy import PolicyNode, leaf, policy_value, measure_node

BMI, INSULIN = 0, 1
SMALL, LARGE = 0, 1
LOW, HIGH = 0, 1
HEALTHY, DIABETES = 0, 1

# (bmi, insulin) -> (rows, diabetic rows)
CELLS = {(SMALL, HIGH): (3580, 358), (SMALL, LOW): (1420, 142),
         (LARGE, HIGH): (4000, 2800), (LARGE, LOW): (1000, 200)}


def cost() -> CostModel:
    # mc[k][y]: calling a healthy patient diabetic costs 80, missing diabetes 100
    return CostModel([1.0, 22.78], [[0.0, 100.0], [80.0, 0.0]])


def attrs() -> list[AttributeMeta]:
    return [AttributeMeta("BMI", 2, 1.0, values=("small", "large")),
            AttributeMeta("Insulin", 2, 22.78, values=("low", "high"))]


def dataset() -> Dataset:
    """10000 patients whose frequencies reproduce the policy probabilities exactly."""
    X, y = [], []
    for (b, i), (n, d) in CELLS.items():
        X += [(b, i)] * n
        y += [DIABETES] * d + [HEALTHY] * (n - d)
    return Dataset(np.array(X), np.array(y), attrs(), 2, ["Healthy", "Diabetes"])


def labels() -> dict:
    c = cost()
    return {"attributes": [{"name": a.name, "values": list(a.values)} for a in attrs()],
            "classes": ["Healthy", "Diabetes"],
            "cost": {"measure_cost": c.measure_cost.tolist(), "mc": c.mc.tolist()}}


def bmi_first() -> PolicyNode:
    """BMI first; large BMI goes on to Insulin.  Value 28.99."""
    s_small, s_large = extend(START, BMI, SMALL), extend(START, BMI, LARGE)
    insulin = measure_node(s_large, INSULIN, {
        HIGH: leaf(extend(s_large, INSULIN, HIGH), DIABETES, [0.3, 0.7]),
        LOW: leaf(extend(s_large, INSULIN, LOW), HEALTHY, [0.8, 0.2]),
    }, {HIGH: 0.8, LOW: 0.2})
    root = measure_node(START, BMI, {SMALL: leaf(s_small, HEALTHY, [0.9, 0.1]), LARGE: insulin},
                     {SMALL: 0.5, LARGE: 0.5})
    policy_value(root, None, cost())
    return root


def insulin_first() -> PolicyNode:
    """Insulin first, BMI only after a high reading.  Probabilities from :func:`dataset`."""
    s_high, s_low = extend(START, INSULIN, HIGH), extend(START, INSULIN, LOW)
    bmi = measure_node(s_high, BMI, {SMALL: leaf(extend(s_high, BMI, SMALL), HEALTHY),
                                  LARGE: leaf(extend(s_high, BMI, LARGE), DIABETES)}, {SMALL: 0, LARGE: 0})
    root = measure_node(START, INSULIN, {HIGH: bmi, LOW: leaf(s_low, HEALTHY)}, {HIGH: 0, LOW: 0})
    policy_value(root, ProbEstimator.from_dataset(dataset()), cost())
    return root
