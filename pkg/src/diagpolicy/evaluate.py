"""Comparing learned policies: paired bootstrap, chess scores, exact optimum, sweeps."""

from __future__ import annotations

import csv
import itertools
import re
import traceback
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .aostar import DEFAULT_MEMORY_LIMIT, anytime_csv
from .data import Dataset, Replica, build_mc_matrix, cost_model, make_replicas
from .learn import ALGORITHMS, UnknownAlgorithm, is_systematic, train
from .mdp import (CostModel, ProbEstimator, State, START, argmin_first, diagnose, extend,
                  measure)
from .policy import PolicyNode, evaluate as evaluate_policy, policy_value

WIN, TIE, LOSS = "win", "tie", "loss"


@dataclass(frozen=True)
class ComparisonOutcome:
    result: str
    ci: tuple[float, float]
    resamples: int
    mean_diff: float = 0.0


def classify(lo: float, hi: float) -> str:
    if hi < 0:
        return WIN
    if lo > 0:
        return LOSS
    return TIE


def bdeltacost(c1, c2, resamples: int = 1000, confidence: float = 0.95, seed: int = 0) -> ComparisonOutcome:
    """Paired percentile bootstrap on the mean cost difference ``c1 - c2``.

    Negative differences favour the first policy, so an interval entirely
    below zero is a win for it.
    """
    c1 = np.asarray(c1, dtype=float)
    c2 = np.asarray(c2, dtype=float)
    if c1.shape != c2.shape or c1.ndim != 1:
        raise ValueError(f"cost vectors must have equal length, got {c1.shape} and {c2.shape}")
    m = len(c1)
    if m < 2:
        raise ValueError("need at least two paired costs")
    delta = c1 - c2
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, m, size=(resamples, m))
    means = delta[idx].mean(axis=1)
    alpha = 1.0 - confidence
    lo, hi = np.quantile(means, [alpha / 2.0, 1.0 - alpha / 2.0])
    return ComparisonOutcome(classify(float(lo), float(hi)), (float(lo), float(hi)), resamples,
                             float(delta.mean()))


@dataclass
class ChessTable:
    """Pairwise win/tie/loss tallies; each recorded game counts for both players."""

    records: dict = field(default_factory=lambda: defaultdict(lambda: [0, 0, 0]))

    def add(self, alg1: str, alg2: str, domain: str, result: str) -> None:
        mirror = {WIN: LOSS, LOSS: WIN, TIE: TIE}
        for a, b, r in ((alg1, alg2, result), (alg2, alg1, mirror[result])):
            rec = self.records[(a, b, domain)]
            rec[(WIN, TIE, LOSS).index(r)] += 1

    def wtl(self, alg1: str, alg2: str, domain: str) -> tuple[int, int, int]:
        return tuple(self.records.get((alg1, alg2, domain), (0, 0, 0)))

    def score(self, alg1: str, alg2: str, domain: str) -> float:
        w, t, _ = self.wtl(alg1, alg2, domain)
        return w + 0.5 * t

    def _select(self, alg: str, domain: str | None):
        return [(k, v) for k, v in self.records.items()
                if k[0] == alg and (domain is None or k[2] == domain)]

    def overall(self, alg: str, domain: str | None = None) -> float:
        return sum(v[0] + 0.5 * v[1] for _, v in self._select(alg, domain))

    def games(self, alg: str, domain: str | None = None) -> int:
        return sum(sum(v) for _, v in self._select(alg, domain))

    def tie_score(self, alg: str, domain: str | None = None) -> float:
        return 0.5 * self.games(alg, domain)

    def algorithms(self) -> list[str]:
        return sorted({k[0] for k in self.records})

    def domains(self) -> list[str]:
        return sorted({k[2] for k in self.records})

    def to_csv(self) -> str:
        lines = ["alg1,alg2,domain,wins,ties,losses,score,tie_score"]
        for (a, b, d) in sorted(self.records):
            w, t, l = self.records[(a, b, d)]
            lines.append(f"{a},{b},{d},{w},{t},{l},{w + 0.5 * t:g},{0.5 * (w + t + l):g}")
        for d in self.domains():
            for a in self.algorithms():
                sel = self._select(a, d)
                if not sel:
                    continue
                w = sum(v[0] for _, v in sel)
                t = sum(v[1] for _, v in sel)
                l = sum(v[2] for _, v in sel)
                lines.append(f"{a},*,{d},{w},{t},{l},{w + 0.5 * t:g},{0.5 * (w + t + l):g}")
        return "\n".join(lines) + "\n"


def chess_scores(outcomes) -> ChessTable:
    """Tally ``(alg1, alg2, domain, result)`` games into a chess table."""
    table = ChessTable()
    for alg1, alg2, domain, result in outcomes:
        table.add(alg1, alg2, domain, result)
    return table


# exact optimum by enumeration


class OracleTooLarge(ValueError):
    pass


def brute_force_optimal(est: ProbEstimator, cost: CostModel, max_tests: int = 4) -> tuple[float, PolicyNode]:
    """Exact minimum expected cost over all policies, by memoized recursion over states.

    At each reachable state every diagnosis and every remaining test is tried;
    ties go to diagnoses first, then tests in index order.
    """
    N = len(est.measurable)
    if N > max_tests:
        raise OracleTooLarge(f"{N} tests exceeds the enumeration limit of {max_tests}")
    memo: dict[State, tuple[float, object]] = {}

    def solve(state: State) -> float:
        if state in memo:
            return memo[state][0]
        dc = est.diag_costs(cost, state)
        options = [(float(dc[k]), diagnose(k), None) for k in range(est.n_classes)]
        for x in est.unmeasured(state):
            probs = est.p_values(x, state)
            q = float(cost.measure_cost[x])
            kids = {}
            for v, p in enumerate(probs):
                if p > 0:
                    q += float(p) * solve(extend(state, x, v))
                    kids[v] = float(p)
            options.append((q, measure(x), kids))
        i = argmin_first([o[0] for o in options])
        memo[state] = (options[i][0], options[i][1:])
        return options[i][0]

    def build(state: State) -> PolicyNode:
        action, kids = memo[state][1]
        node = PolicyNode(state, action, support=est.match_count(state)[0])
        if not action.is_diagnosis:
            node.children = {v: build(extend(state, action.index, v)) for v in kids}
            node.branch_prob = dict(kids)
        return node

    value = solve(START)
    policy = build(START)
    policy_value(policy, est, cost)
    return value, policy


# sweeps


@dataclass
class EvalReport:
    rows: list[dict]
    comparisons: list[dict]
    chess: ChessTable
    out_dir: Path | None = None


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", lambda m: "star" if m.group() == "*" else "_", name)


def _cell_seed(seed: int, *parts: int) -> int:
    return int(np.random.SeedSequence([seed, *parts]).generate_state(1)[0])


def _run_cell(job: dict) -> dict:
    ds: Dataset = job["dataset"]
    rep: Replica = job["replica"]
    out = {"domain": job["domain"], "level": job["level"], "replica": job["r"], "algorithm": job["alg"]}
    try:
        mc = build_mc_matrix(ds, job["level"])
        cost = cost_model(ds, mc)
        tr, te = ds.subset(rep.train), ds.subset(rep.test)
        res = train(job["alg"], tr, cost, seed=job["seed"], memory_limit=job["memory_limit"],
                    voi_min_support=job["voi_min_support"],
                    test_data=(te.X, te.y) if job["anytime"] else None)
        v_test, per = evaluate_policy(res.policy, te.X, te.y, cost)
        out.update(v_test=v_test, per_example=per, seconds=res.seconds,
                   bytes=res.stats.get("bytes"), log=res.log, error=None)
    except Exception as exc:  # recorded per run; the sweep goes on
        out.update(v_test=None, per_example=None, seconds=None, bytes=None, log=[],
                   error=f"{type(exc).__name__}: {exc}".replace("\n", " "),
                   trace=traceback.format_exc())
    return out


def run_sweep(datasets: dict[str, Dataset], algorithms, levels=(1, 2, 3, 4, 5), n_replicas: int = 20,
              seed: int = 0, out_dir=None, replicas: dict[str, list[Replica]] | None = None,
              resamples: int = 1000, workers: int = 1, memory_limit: int = DEFAULT_MEMORY_LIMIT,
              voi_min_support: bool = True, anytime: bool = True, pair: tuple[str, str] | None = None,
              timing: bool = True) -> EvalReport:
    """Train and test every (domain, level, replica, algorithm) cell and compare algorithms."""
    algorithms = list(algorithms)
    for a in algorithms:
        if a not in ALGORITHMS:
            raise UnknownAlgorithm(a)
    if pair is None and len(algorithms) >= 2:
        pair = (algorithms[0], algorithms[1])
    jobs = []
    reps_by_domain = {}
    for domain, ds in datasets.items():
        reps = (replicas or {}).get(domain) or make_replicas(ds, n_replicas, seed=seed)
        reps_by_domain[domain] = reps
        for level in levels:
            for r, rep in enumerate(reps):
                for alg in algorithms:
                    jobs.append({"dataset": ds, "replica": rep, "domain": domain, "level": level, "r": r,
                                 "alg": alg, "seed": _cell_seed(seed, level, r),
                                 "memory_limit": memory_limit, "voi_min_support": voi_min_support,
                                 "anytime": anytime and is_systematic(alg)})
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]

    by_cell = {(r["domain"], r["level"], r["replica"], r["algorithm"]): r for r in results}
    comparisons = []
    table = ChessTable()
    for domain, reps in reps_by_domain.items():
        for level in levels:
            for r in range(len(reps)):
                for (i, a), (j, b) in itertools.combinations(enumerate(algorithms), 2):
                    ra, rb = by_cell[(domain, level, r, a)], by_cell[(domain, level, r, b)]
                    if ra["per_example"] is None or rb["per_example"] is None:
                        continue
                    oc = bdeltacost(ra["per_example"], rb["per_example"], resamples,
                                    seed=_cell_seed(seed, level, r, i, j))
                    table.add(a, b, domain, oc.result)
                    comparisons.append({"domain": domain, "level": level, "replica": r, "alg1": a,
                                        "alg2": b, "result": oc.result, "lo": oc.ci[0], "hi": oc.ci[1]})
    report = EvalReport(results, comparisons, table)
    if out_dir is not None:
        report.out_dir = Path(out_dir)
        write_report(report, report.out_dir, levels, pair, timing)
    return report


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_report(report: EvalReport, out: Path, levels, pair, timing: bool = True) -> None:
    out.mkdir(parents=True, exist_ok=True)
    rows = sorted(report.rows, key=lambda r: (r["domain"], r["level"], r["replica"],
                                              ALGORITHMS.index(r["algorithm"])))
    secs = (lambda r: r["seconds"]) if timing else (lambda r: None)
    _write_csv(out / "summary.csv", ["domain", "level", "replica", "algorithm", "v_test", "seconds", "bytes", "error"],
               [(r["domain"], r["level"], r["replica"], r["algorithm"], r["v_test"], secs(r), r["bytes"],
                 r["error"]) for r in rows])
    _write_csv(out / "comparisons.csv", ["domain", "level", "replica", "alg1", "alg2", "result", "lo", "hi"],
               [tuple(c.values()) for c in report.comparisons])
    (out / "chess.csv").write_text(report.chess.to_csv())
    _write_csv(out / "memory.csv", ["domain", "level", "replica", "algorithm", "bytes"],
               [(r["domain"], r["level"], r["replica"], r["algorithm"], r["bytes"])
                for r in rows if r["bytes"] is not None])
    _write_csv(out / "cpu.csv", ["domain", "level", "replica", "algorithm", "seconds"],
               [(r["domain"], r["level"], r["replica"], r["algorithm"], secs(r)) for r in rows])
    for r in rows:
        if r["log"]:
            name = f"anytime_{_safe(r['domain'])}_{r['level']}_{r['replica']}_{_safe(r['algorithm'])}.csv"
            (out / name).write_text(anytime_csv(r["log"]))
    if pair is None:
        return
    a, b = pair
    verdict = {(c["domain"], c["level"], c["replica"]): c["result"] for c in report.comparisons
               if (c["alg1"], c["alg2"]) == (a, b)}
    for domain in sorted({r["domain"] for r in rows}):
        for level in levels:
            cells = defaultdict(dict)
            for r in rows:
                if r["domain"] == domain and r["level"] == level and r["algorithm"] in pair:
                    cells[r["replica"]][r["algorithm"]] = r["v_test"]
            data = [(c[a], c[b], rep, verdict.get((domain, level, rep), ""))
                    for rep, c in cells.items() if c.get(a) is not None and c.get(b) is not None]
            data.sort(key=lambda t: (t[0], t[2]))
            _write_csv(out / f"pairs_{_safe(domain)}_{level}.csv",
                       [f"v_test_{a}", f"v_test_{b}", "replica", "result"], data)
