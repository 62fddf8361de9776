"""Loading, cleaning, discretizing and splitting tabular diagnosis data."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .mdp import CostModel

MC_MULTIPLIERS = {1: 0.5, 2: 1.0, 3: 2.0, 4: 4.0, 5: 8.0}


class DataError(ValueError):
    """Malformed input data or an impossible preprocessing request."""


@dataclass
class RawDataset:
    names: list[str]
    rows: list[list[str]]
    labels: list
    class_name: str = "class"
    costs: dict[str, float] = field(default_factory=dict)
    removed: int = 0

    def __post_init__(self):
        for i, r in enumerate(self.rows):
            if len(r) != len(self.names):
                raise DataError(f"row {i} has {len(r)} attribute values, expected {len(self.names)}")
        if len(self.rows) != len(self.labels):
            raise DataError("one label per row required")

    def cost_of(self, name: str) -> float:
        return float(self.costs.get(name, 1.0))


@dataclass(frozen=True)
class AttributeMeta:
    name: str
    arity: int
    cost: float = 1.0
    thresholds: tuple[float, ...] | None = None
    values: tuple[str, ...] | None = None  # token per code, categorical only

    @property
    def constant(self) -> bool:
        return self.arity < 2

    def to_json(self) -> dict:
        return {"name": self.name, "arity": self.arity, "cost": self.cost,
                "thresholds": list(self.thresholds) if self.thresholds is not None else None,
                "values": list(self.values) if self.values is not None else None}

    @classmethod
    def from_json(cls, d: dict) -> "AttributeMeta":
        th = d.get("thresholds")
        vals = d.get("values")
        return cls(d["name"], int(d["arity"]), float(d["cost"]),
                   tuple(th) if th is not None else None,
                   tuple(vals) if vals is not None else None)

    def value_label(self, v: int) -> str:
        if self.values is not None:
            return self.values[v]
        if self.thresholds is not None:
            th = self.thresholds
            if v == 0:
                return f"<={th[0]:g}"
            if v == len(th):
                return f">{th[-1]:g}"
            return f"({th[v - 1]:g},{th[v]:g}]"
        return str(v)


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    attrs: list[AttributeMeta]
    n_classes: int
    class_names: list[str] | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.int64).reshape(len(self.y), len(self.attrs))
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.n_classes < 2:
            raise DataError("at least two classes are required")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise DataError("class label out of range")
        for n, a in enumerate(self.attrs):
            col = self.X[:, n]
            if len(col) and (col.min() < 0 or col.max() >= max(a.arity, 1)):
                raise DataError(f"attribute {a.name!r} has a value outside its arity {a.arity}")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def arities(self) -> np.ndarray:
        return np.array([a.arity for a in self.attrs], dtype=np.int64)

    @property
    def costs(self) -> np.ndarray:
        return np.array([a.cost for a in self.attrs], dtype=float)

    @property
    def measurable(self) -> list[int]:
        return [n for n, a in enumerate(self.attrs) if not a.constant]

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attrs]

    def priors(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes) / float(len(self.y))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], self.attrs, self.n_classes, self.class_names)

    def to_raw(self) -> RawDataset:
        """Integer codes back to text tokens, labels as class indices."""
        rows = [[str(int(v)) for v in r] for r in self.X]
        return RawDataset(self.names, rows, [int(c) for c in self.y],
                          costs={a.name: a.cost for a in self.attrs})


# loading


def read_cost_sidecar(path) -> dict[str, float]:
    costs: dict[str, float] = {}
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or not "".join(rec).strip() or rec[0].lstrip().startswith("#"):
                continue
            if len(rec) != 2:
                raise DataError(f"{path}:{lineno}: expected 'name,cost'")
            name, val = rec[0].strip(), rec[1].strip()
            if lineno == 1 and name == "name" and val == "cost":
                continue
            try:
                costs[name] = float(val)
            except ValueError:
                raise DataError(f"{path}:{lineno}: cost {val!r} is not a number") from None
            if not math.isfinite(costs[name]) or costs[name] < 0:
                raise DataError(f"{path}:{lineno}: cost must be finite and nonnegative")
    return costs


def load_dataset(path, class_column: str, cost_sidecar=None) -> RawDataset:
    """Read a comma-separated file with a header row.

    Attributes missing from the cost sidecar cost 1.0.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if class_column not in header:
            raise DataError(f"class column {class_column!r} not in header {header}")
        ci = header.index(class_column)
        rows, labels = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(rec)} fields, expected {len(header)}")
            rec = [t.strip() for t in rec]
            labels.append(rec[ci])
            rows.append(rec[:ci] + rec[ci + 1:])
    names = header[:ci] + header[ci + 1:]
    costs = read_cost_sidecar(cost_sidecar) if cost_sidecar else {}
    unknown = set(costs) - set(names)
    if unknown:
        raise DataError(f"cost sidecar names unknown attributes: {sorted(unknown)}")
    costs = {n: costs.get(n, 1.0) for n in names}
    return RawDataset(names, rows, labels, class_column, costs)


def clean(raw: RawDataset, class_merge: Mapping | None = None, missing_token: str = "?") -> RawDataset:
    """Drop rows with a missing value and remap class labels.

    ``class_merge`` maps every observed label (compared as text) to a class
    index; ``None`` keeps labels as they are.
    """
    keep = [i for i, r in enumerate(raw.rows) if missing_token not in r]
    if not keep:
        raise DataError("no examples remain after removing rows with missing values")
    labels = [raw.labels[i] for i in keep]
    if class_merge is not None:
        merge = {str(k): int(v) for k, v in class_merge.items()}
        missing = sorted({str(l) for l in labels} - set(merge))
        if missing:
            raise DataError(f"class label {missing[0]!r} is not covered by the class merge map")
        labels = [merge[str(l)] for l in labels]
    return RawDataset(list(raw.names), [list(raw.rows[i]) for i in keep], labels,
                      raw.class_name, dict(raw.costs), raw.removed + len(raw.rows) - len(keep))


# discretization


def _entropy_rows(counts: np.ndarray) -> np.ndarray:
    """Entropy in bits of each count vector along the last axis, 0 for empty."""
    counts = np.asarray(counts, dtype=float)
    tot = counts.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(tot > 0, counts / np.where(tot > 0, tot, 1), 0.0)
        logs = np.where(p > 0, np.log2(np.where(p > 0, p, 1)), 0.0)
    return -(p * logs).sum(axis=-1)


def threshold_gain(values, labels, thresholds) -> float:
    """Information gain (bits) of discretizing ``values`` at ``thresholds``."""
    values = np.asarray(values, dtype=float)
    labels = np.asarray(labels)
    codes = np.searchsorted(np.asarray(thresholds, dtype=float), values, side="left")
    _, y = np.unique(labels, return_inverse=True)
    K = y.max() + 1
    table = np.zeros((len(thresholds) + 1, K))
    np.add.at(table, (codes, y), 1)
    n = len(values)
    h0 = _entropy_rows(table.sum(axis=0))
    return float(h0 - (table.sum(axis=1) / n * _entropy_rows(table)).sum())


def best_thresholds(values, labels) -> tuple[float, ...]:
    """Two cut points maximizing information gain with the class.

    Candidates are midpoints between consecutive distinct sorted values; ties
    go to the lexicographically smallest pair.  With two distinct values the
    single midpoint is returned; with one, no cut at all.
    """
    values = np.asarray(values, dtype=float)
    distinct = np.unique(values)
    if len(distinct) < 2:
        return ()
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    if len(mids) == 1:
        return (float(mids[0]),)
    _, y = np.unique(np.asarray(labels), return_inverse=True)
    K = int(y.max()) + 1
    # below[i, k]: rows of class k with value <= mids[i]
    pos = np.searchsorted(distinct, values)
    per_value = np.zeros((len(distinct), K))
    np.add.at(per_value, (pos, y), 1)
    below = np.cumsum(per_value, axis=0)[:-1]
    total = per_value.sum(axis=0)
    n = float(len(values))
    b0 = below[:, None, :]
    b1 = below[None, :, :] - below[:, None, :]
    b2 = total[None, None, :] - below[None, :, :]
    cond = sum(bk.sum(-1) / n * _entropy_rows(bk) for bk in np.broadcast_arrays(b0, b1, b2))
    gain = _entropy_rows(total) - cond
    M = len(mids)
    valid = np.triu(np.ones((M, M), dtype=bool), k=1)
    gain = np.where(valid, gain, -np.inf)
    best = gain.max()
    i, j = np.argwhere(gain >= best - 1e-12)[0]  # row-major: smallest i, then j
    return (float(mids[i]), float(mids[j]))


def _sort_tokens(tokens) -> list[str]:
    try:
        return sorted(tokens, key=float)
    except ValueError:
        return sorted(tokens)


def discretize(raw: RawDataset, continuous_attrs=()) -> Dataset:
    """Map every attribute to dense integer codes.

    Continuous attributes are cut into three levels (``<= t1``, ``(t1, t2]``,
    ``> t2``) with thresholds chosen by information gain over the whole data.
    """
    continuous = set(continuous_attrs)
    unknown = continuous - set(raw.names)
    if unknown:
        raise DataError(f"unknown continuous attributes: {sorted(unknown)}")
    label_tokens = _sort_tokens({str(l) for l in raw.labels})
    if all(isinstance(l, (int, np.integer)) for l in raw.labels):
        y = np.asarray(raw.labels, dtype=np.int64)
        class_names = None
        n_classes = int(y.max()) + 1 if len(y) else 0
    else:
        lookup = {t: i for i, t in enumerate(label_tokens)}
        y = np.array([lookup[str(l)] for l in raw.labels], dtype=np.int64)
        class_names = label_tokens
        n_classes = len(label_tokens)
    m = len(raw.rows)
    X = np.zeros((m, len(raw.names)), dtype=np.int64)
    attrs = []
    for n, name in enumerate(raw.names):
        col = [r[n] for r in raw.rows]
        if name in continuous:
            try:
                vals = np.array([float(t) for t in col])
            except ValueError as exc:
                raise DataError(f"continuous attribute {name!r}: {exc}") from None
            th = best_thresholds(vals, y)
            X[:, n] = np.searchsorted(np.asarray(th), vals, side="left")
            attrs.append(AttributeMeta(name, len(th) + 1, raw.cost_of(name), th))
        else:
            tokens = _sort_tokens(set(col))
            lookup = {t: i for i, t in enumerate(tokens)}
            X[:, n] = [lookup[t] for t in col]
            attrs.append(AttributeMeta(name, len(tokens), raw.cost_of(name), None, tuple(tokens)))
    return Dataset(X, y, attrs, max(n_classes, 2), class_names)


# replicas


@dataclass(frozen=True)
class Replica:
    train: tuple[int, ...]
    test: tuple[int, ...]
    seed: int

    def to_text(self) -> str:
        lines = [f"seed: {self.seed}", "train:"]
        lines += [str(i) for i in self.train]
        lines.append("test:")
        lines += [str(i) for i in self.test]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Replica":
        seed, section = None, None
        parts: dict[str, list[int]] = {"train": [], "test": []}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("seed:"):
                seed = int(line.split(":", 1)[1])
            elif line in ("train:", "test:"):
                section = line[:-1]
            elif section is None:
                raise DataError(f"replica line {lineno}: index before a train:/test: header")
            else:
                try:
                    parts[section].append(int(line))
                except ValueError:
                    raise DataError(f"replica line {lineno}: {line!r} is not an index") from None
        if seed is None:
            raise DataError("replica file lacks a seed header")
        return cls(tuple(parts["train"]), tuple(parts["test"]), seed)


def stratified_split(y, frac: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Split indices so each class contributes ``round(frac * count)`` to the first part."""
    y = np.asarray(y)
    first, second = [], []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        rng.shuffle(idx)
        cut = int(math.floor(frac * len(idx) + 0.5))
        first.append(idx[:cut])
        second.append(idx[cut:])
    return np.sort(np.concatenate(first)), np.sort(np.concatenate(second))


def make_replicas(ds: Dataset, n: int = 20, train_frac: float = 2 / 3, seed: int = 0) -> list[Replica]:
    counts = np.bincount(ds.y, minlength=ds.n_classes)
    present = counts[counts > 0]
    if len(present) < 2 or present.min() < 2:
        raise DataError("every class needs at least 2 examples to stratify")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        tr, te = stratified_split(ds.y, train_frac, rng)
        out.append(Replica(tuple(int(i) for i in tr), tuple(int(i) for i in te), seed))
    return out


# misdiagnosis costs


@dataclass(frozen=True)
class MCMatrix:
    mc: np.ndarray
    level: int | None = None

    def to_json(self) -> dict:
        return {"level": self.level, "mc": [[float(v) for v in row] for row in self.mc]}

    @classmethod
    def from_json(cls, d: dict) -> "MCMatrix":
        return cls(np.asarray(d["mc"], dtype=float), d.get("level"))


def build_mc_matrix(ds: Dataset, level: int, base_unit: float | None = None) -> MCMatrix:
    """Two-class misdiagnosis matrix at one of five cost levels.

    Both diagnoses have equal expected cost under the class priors, and the
    smaller off-diagonal entry equals ``multiplier(level) * base_unit``; the
    base defaults to the summed measurement cost.
    """
    if ds.n_classes != 2:
        raise DataError("misdiagnosis levels are defined for two classes only")
    if level not in MC_MULTIPLIERS:
        raise DataError(f"level must be 1..5, got {level}")
    prior = ds.priors()
    if np.any(prior == 0):
        raise DataError("a class has zero prior; equal expected cost is unsatisfiable")
    B = float(ds.costs[ds.measurable].sum()) if base_unit is None else float(base_unit)
    c = MC_MULTIPLIERS[level] * B * prior.max()
    mc = np.array([[0.0, c / prior[1]], [c / prior[0], 0.0]])
    return MCMatrix(mc, level)


def cost_model(ds: Dataset, mc) -> CostModel:
    mc = mc.mc if isinstance(mc, MCMatrix) else mc
    return CostModel(ds.costs, mc)


# synthetic data


@dataclass
class SyntheticSpec:
    """Generative description of a synthetic diagnosis problem.

    Exactly one of ``joint`` (probability table of shape ``arities + [K]``),
    ``cond`` (class prior plus per-test ``(K, V_n)`` tables, tests independent
    given the class) or ``rule`` (``values -> class`` with independent
    values drawn from ``value_probs``) describes the distribution.
    """

    arities: list[int]
    n_classes: int = 2
    costs: list[float] | None = None
    mc: list[list[float]] | None = None
    joint: np.ndarray | None = None
    class_prior: list[float] | None = None
    cond: list[np.ndarray] | None = None
    rule: Callable | None = None
    value_probs: list[list[float]] | None = None
    names: list[str] | None = None

    def attrs(self) -> list[AttributeMeta]:
        costs = self.costs or [1.0] * len(self.arities)
        names = self.names or [f"x{n}" for n in range(len(self.arities))]
        return [AttributeMeta(nm, int(a), float(c)) for nm, a, c in zip(names, self.arities, costs)]

    def cost_model(self) -> CostModel:
        mc = self.mc
        if mc is None:
            K = self.n_classes
            mc = (1.0 - np.eye(K)).tolist()
        return CostModel([a.cost for a in self.attrs()], mc)

    @classmethod
    def from_json(cls, d: dict) -> "SyntheticSpec":
        kw = dict(d)
        if kw.get("joint") is not None:
            kw["joint"] = np.asarray(kw["joint"], dtype=float)
        if kw.get("cond") is not None:
            kw["cond"] = [np.asarray(t, dtype=float) for t in kw["cond"]]
        if "rule" in kw:
            raise DataError("generative rules cannot be given as JSON; use 'joint' or 'cond'")
        return cls(**kw)


def _check_dist(p, what: str) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise DataError(f"{what} must be nonnegative and sum to 1")
    return p


def gen_synthetic(spec: SyntheticSpec, seed: int, m: int) -> Dataset:
    """Draw ``m`` i.i.d. complete examples from ``spec``."""
    rng = np.random.default_rng(seed)
    N, K = len(spec.arities), spec.n_classes
    given = [spec.joint is not None, spec.cond is not None, spec.rule is not None]
    if sum(given) != 1:
        raise DataError("give exactly one of joint, cond or rule")
    if spec.joint is not None:
        joint = _check_dist(spec.joint, "joint distribution")
        if list(joint.shape) != list(spec.arities) + [K]:
            raise DataError(f"joint table shape {joint.shape} does not match arities + [K]")
        flat = rng.choice(joint.size, size=m, p=joint.ravel())
        cells = np.array(np.unravel_index(flat, joint.shape)).T
        X, y = cells[:, :N], cells[:, N]
    elif spec.cond is not None:
        prior = _check_dist(spec.class_prior if spec.class_prior is not None else np.full(K, 1.0 / K),
                            "class prior")
        y = rng.choice(K, size=m, p=prior)
        X = np.zeros((m, N), dtype=np.int64)
        for n, table in enumerate(spec.cond):
            table = np.asarray(table, dtype=float)
            for k in range(K):
                p = _check_dist(table[k], f"P(x{n} | y={k})")
                sel = np.flatnonzero(y == k)
                X[sel, n] = rng.choice(spec.arities[n], size=len(sel), p=p)
    else:
        vps = spec.value_probs or [[1.0 / a] * a for a in spec.arities]
        X = np.zeros((m, N), dtype=np.int64)
        for n, p in enumerate(vps):
            X[:, n] = rng.choice(spec.arities[n], size=m, p=_check_dist(p, f"P(x{n})"))
        y = np.array([int(spec.rule(row)) for row in X], dtype=np.int64)
    return Dataset(X, y, spec.attrs(), K)


def random_problem(seed: int, n_tests: int | None = None, max_arity: int = 3,
                   m: int | None = None, n_classes: int = 2) -> tuple[Dataset, CostModel]:
    """Small random diagnosis instance with correlated tests and random costs."""
    rng = np.random.default_rng(seed)
    N = int(rng.integers(1, 4)) if n_tests is None else n_tests
    arities = [int(rng.integers(2, max_arity + 1)) for _ in range(N)]
    m = int(rng.integers(20, 201)) if m is None else m
    joint = rng.dirichlet(np.full(int(np.prod(arities)) * n_classes, 0.5))
    spec = SyntheticSpec(arities, n_classes, joint=joint.reshape(arities + [n_classes]))
    ds = gen_synthetic(spec, int(rng.integers(2**31)), m)
    costs = rng.uniform(0.5, 10.0, size=N)
    ds = Dataset(ds.X, ds.y, [AttributeMeta(f"x{n}", a, float(c)) for n, (a, c) in enumerate(zip(arities, costs))],
                 n_classes)
    scale = rng.choice([1.0, 5.0, 20.0, 100.0])
    mc = rng.uniform(0.2, 1.0, size=(n_classes, n_classes)) * scale
    np.fill_diagonal(mc, 0.0)
    return ds, CostModel(costs, mc)


def write_dataset_csv(ds: Dataset, path, class_column: str = "class") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ds.names + [class_column])
        for row, c in zip(ds.X, ds.y):
            w.writerow([int(v) for v in row] + [int(c)])


def write_cost_sidecar(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "cost"])
        for a in ds.attrs:
            w.writerow([a.name, repr(float(a.cost))])


def read_prepared(path) -> Dataset:
    """Read a discretized dataset written by ``save_prepared``."""
    import json

    path = Path(path)
    meta = json.loads((path / "meta.json").read_text())
    attrs = [AttributeMeta.from_json(a) for a in meta["attrs"]]
    raw = load_dataset(path / "data.csv", meta["class_column"])
    X = np.array([[int(t) for t in r] for r in raw.rows], dtype=np.int64).reshape(len(raw.rows), len(attrs))
    y = np.array([int(l) for l in raw.labels], dtype=np.int64)
    return Dataset(X, y, attrs, int(meta["n_classes"]), meta.get("class_names"))


def save_prepared(ds: Dataset, path, name: str | None = None, extra: dict | None = None) -> None:
    import json

    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    write_dataset_csv(ds, path / "data.csv")
    meta = {"name": name or path.name, "class_column": "class", "n_classes": ds.n_classes,
            "class_names": ds.class_names, "attrs": [a.to_json() for a in ds.attrs]}
    if extra:
        meta.update(extra)
    (path / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
