"""Command-line interface: ``diagpolicy <command> ...``."""

from __future__ import annotations

import argparse
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .aostar import anytime_csv
from .data import (DataError, Dataset, MCMatrix, Replica, SyntheticSpec, build_mc_matrix, clean,
                   cost_model, discretize, gen_synthetic, load_dataset, make_replicas, random_problem,
                   read_prepared, save_prepared, write_cost_sidecar)
from .evaluate import bdeltacost, brute_force_optimal, run_sweep
from .learn import ALGORITHMS, UnknownAlgorithm, train
from .mdp import CostModel, ProbEstimator
from .policy import PolicyError, deserialize, evaluate, load_document, serialize, step

MB = 1024 * 1024


class CliError(Exception):
    pass


def _write_manifest(out: Path, args: argparse.Namespace, extra: dict | None = None) -> None:
    spec = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
            if k != "func"}
    doc = {"command": args.command, "args": spec, "seed": getattr(args, "seed", None),
           "versions": {"diagpolicy": __version__, "numpy": np.__version__,
                        "python": platform.python_version()}}
    if extra:
        doc.update(extra)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _check_alg(name: str) -> str:
    if name not in ALGORITHMS:
        raise UnknownAlgorithm(name)
    return name


def _labels(ds: Dataset, cost: CostModel) -> dict:
    return {"attributes": [{"name": a.name, "values": [a.value_label(v) for v in range(a.arity)]}
                           for a in ds.attrs],
            "classes": ds.class_names or [str(k) for k in range(ds.n_classes)],
            "cost": {"measure_cost": cost.measure_cost.tolist(), "mc": cost.mc.tolist()}}


def _cost_for(ds: Dataset, args) -> CostModel:
    if getattr(args, "mc", None):
        return cost_model(ds, MCMatrix.from_json(json.loads(Path(args.mc).read_text())))
    level_file = Path(args.data) / "mc" / f"level_{args.level}.json"
    if level_file.exists():
        return cost_model(ds, MCMatrix.from_json(json.loads(level_file.read_text())))
    synth_mc = Path(args.data) / "mc.json"
    if synth_mc.exists() and args.level is None:
        return cost_model(ds, MCMatrix.from_json(json.loads(synth_mc.read_text())))
    if args.level is None:
        raise CliError("give --level or --mc")
    return cost_model(ds, build_mc_matrix(ds, args.level))


def _split(ds: Dataset, args) -> tuple[Dataset, Dataset]:
    """(train, test) for ``--replica``; without one both are the full data."""
    if args.replica is None:
        return ds, ds
    path = Path(args.data) / "replicas" / f"replica_{args.replica:02d}.txt"
    if not path.exists():
        raise CliError(f"no replica file {path}")
    rep = Replica.from_text(path.read_text())
    return ds.subset(rep.train), ds.subset(rep.test)


# commands


def cmd_prepare(args) -> int:
    costs = args.costs if args.costs else None
    raw = load_dataset(args.input, args.class_column, costs)
    merge = None
    if args.class_merge:
        merge = {}
        for item in args.class_merge.split(","):
            label, _, code = item.partition("=")
            if not code:
                raise CliError(f"bad --class-merge item {item!r}; expected label=code")
            merge[label] = int(code)
    before = len(raw.rows)
    raw = clean(raw, merge, args.missing)
    cont = set(filter(None, (args.continuous or "").split(",")))
    unknown = cont - set(raw.names)
    if unknown:
        raise CliError(f"unknown continuous attribute(s): {', '.join(sorted(unknown))}")
    ds = discretize(raw, cont)
    out = Path(args.out)
    save_prepared(ds, out, extra={"rows_read": before, "rows_removed": before - len(ds)})
    write_cost_sidecar(ds, out / "costs.csv")
    (out / "replicas").mkdir(exist_ok=True)
    for i, rep in enumerate(make_replicas(ds, args.replicas, seed=args.seed)):
        (out / "replicas" / f"replica_{i:02d}.txt").write_text(rep.to_text())
    if ds.n_classes == 2:
        (out / "mc").mkdir(exist_ok=True)
        for level in range(1, 6):
            m = build_mc_matrix(ds, level)
            (out / "mc" / f"level_{level}.json").write_text(json.dumps(m.to_json(), indent=1) + "\n")
    _write_manifest(out, args)
    print(f"prepared {len(ds)} examples ({before - len(ds)} removed), {len(ds.attrs)} attributes -> {out}")
    return 0


def cmd_train(args) -> int:
    alg = _check_alg(args.alg)
    ds = read_prepared(args.data)
    cost = _cost_for(ds, args)
    tr, te = _split(ds, args)
    res = train(alg, tr, cost, seed=args.seed, memory_limit=int(args.mem_limit_mb * MB),
                voi_min_support=not args.no_min_support_voi,
                test_data=(te.X, te.y) if args.replica is not None else None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "policy.json").write_text(serialize(res.policy, cost, _labels(ds, cost)))
    if res.log:
        (out / "anytime.csv").write_text(anytime_csv(res.log))
    stats = {k: v for k, v in res.stats.items() if isinstance(v, (int, float, str, bool, type(None)))}
    (out / "stats.json").write_text(json.dumps(stats, indent=1, sort_keys=True) + "\n")
    _write_manifest(out, args)
    print(f"{alg}: train value {res.policy.value:.6g}, {res.policy.size()} nodes -> {out / 'policy.json'}")
    return 0


def _load_policy(path, cost: CostModel | None = None):
    return deserialize(Path(path).read_text(), cost)


def cmd_eval(args) -> int:
    ds = read_prepared(args.data)
    cost = _cost_for(ds, args)
    _, te = _split(ds, args)
    v, per = evaluate(_load_policy(args.policy, cost), te.X, te.y, cost)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "per_example.csv").write_text("cost\n" + "".join(f"{c!r}\n" for c in per))
        _write_manifest(out, args, {"v_test": v})
    print(f"v_test={v!r} n={len(per)}")
    return 0


def cmd_compare(args) -> int:
    ds = read_prepared(args.data)
    cost = _cost_for(ds, args)
    _, te = _split(ds, args)
    _, c1 = evaluate(_load_policy(args.policy_a, cost), te.X, te.y, cost)
    _, c2 = evaluate(_load_policy(args.policy_b, cost), te.X, te.y, cost)
    oc = bdeltacost(c1, c2, args.resamples, seed=args.seed)
    print(f"result={oc.result} lo={oc.ci[0]!r} hi={oc.ci[1]!r} mean_diff={oc.mean_diff!r}")
    return 0


def cmd_sweep(args) -> int:
    algs = [_check_alg(a) for a in args.algs.split(",")]
    datasets = {Path(p).name: read_prepared(p) for p in args.data}
    replicas = {}
    for p in args.data:
        files = sorted((Path(p) / "replicas").glob("replica_*.txt"))[: args.replicas]
        if files:
            replicas[Path(p).name] = [Replica.from_text(f.read_text()) for f in files]
    levels = [int(x) for x in args.levels.split(",")]
    report = run_sweep(datasets, algs, levels, n_replicas=args.replicas, seed=args.seed, out_dir=args.out,
                       replicas=replicas, resamples=args.resamples, workers=args.workers,
                       memory_limit=int(args.mem_limit_mb * MB),
                       voi_min_support=not args.no_min_support_voi, timing=not args.no_timing)
    _write_manifest(Path(args.out), args)
    failed = sum(1 for r in report.rows if r["error"])
    print(f"{len(report.rows)} runs ({failed} failed), {len(report.comparisons)} comparisons -> {args.out}")
    return 0


def cmd_walk(args) -> int:
    doc = load_document(Path(args.policy).read_text())
    root = deserialize(Path(args.policy).read_text())
    labels = doc.get("labels") or {}
    attrs = labels.get("attributes") or []
    classes = labels.get("classes") or []
    cost = None
    if labels.get("cost"):
        cost = CostModel(labels["cost"]["measure_cost"], labels["cost"]["mc"])
    inp = sys.stdin
    answers: list[tuple[int, int]] = []
    while True:
        action = step(root, answers, cost)
        if action.is_diagnosis:
            k = action.index
            print(f"Diagnose {classes[k] if k < len(classes) else k}")
            return 0
        n = action.index
        name = attrs[n]["name"] if n < len(attrs) else f"x{n}"
        values = attrs[n]["values"] if n < len(attrs) else []
        print(f"Measure {name}" + (f" [{' / '.join(values)}]" if values else ""), flush=True)
        token = inp.readline()
        if not token:
            raise CliError(f"input ended while waiting for a value of {name}")
        token = token.strip()
        if "=" in token:
            token = token.split("=", 1)[1].strip()
        if token in values:
            v = values.index(token)
        else:
            try:
                v = int(token)
            except ValueError:
                raise CliError(f"unknown value {token!r} for {name}") from None
        answers.append((n, v))


def cmd_synth(args) -> int:
    out = Path(args.out)
    if args.spec:
        spec = SyntheticSpec.from_json(json.loads(Path(args.spec).read_text()))
        ds = gen_synthetic(spec, args.seed, args.m)
        cost = spec.cost_model()
    else:
        ds, cost = random_problem(args.seed, args.tests, m=args.m)
    save_prepared(ds, out)
    write_cost_sidecar(ds, out / "costs.csv")
    (out / "mc.json").write_text(json.dumps(MCMatrix(cost.mc).to_json(), indent=1) + "\n")
    _write_manifest(out, args)
    print(f"synthesized {len(ds)} examples with {len(ds.attrs)} tests -> {out}")
    return 0


def cmd_oracle(args) -> int:
    ds = read_prepared(args.data)
    cost = _cost_for(ds, args)
    tr, _ = _split(ds, args)
    v, pol = brute_force_optimal(ProbEstimator.from_dataset(tr), cost, args.max_tests)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "policy.json").write_text(serialize(pol, cost, _labels(ds, cost)))
        _write_manifest(out, args, {"v_star": v})
    print(f"v_star={v!r}")
    return 0


def _common(p: argparse.ArgumentParser, level=True, replica=True) -> None:
    p.add_argument("--data", required=True, help="prepared dataset directory")
    if level:
        p.add_argument("--level", type=int, choices=range(1, 6), help="misdiagnosis cost level")
        p.add_argument("--mc", help="JSON misdiagnosis matrix overriding --level")
    if replica:
        p.add_argument("--replica", type=int, help="replica index; omit to use all rows")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="diagpolicy", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="clean, discretize and split a CSV dataset")
    p.add_argument("input")
    p.add_argument("--class-column", required=True)
    p.add_argument("--costs", help="name,cost sidecar")
    p.add_argument("--continuous", help="comma-separated attributes to discretize")
    p.add_argument("--class-merge", help="label=code pairs, comma-separated")
    p.add_argument("--missing", default="?")
    p.add_argument("--replicas", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="learn a policy")
    _common(p)
    p.add_argument("--alg", required=True)
    p.add_argument("--mem-limit-mb", type=float, default=100)
    p.add_argument("--no-min-support-voi", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="test-set cost of a policy")
    _common(p)
    p.add_argument("--policy", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="paired bootstrap comparison of two policies")
    _common(p)
    p.add_argument("--policy-a", required=True)
    p.add_argument("--policy-b", required=True)
    p.add_argument("--resamples", type=int, default=1000)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="train and compare algorithms over levels and replicas")
    p.add_argument("--data", required=True, nargs="+")
    p.add_argument("--algs", default=",".join(ALGORITHMS))
    p.add_argument("--levels", default="1,2,3,4,5")
    p.add_argument("--replicas", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--resamples", type=int, default=1000)
    p.add_argument("--mem-limit-mb", type=float, default=100)
    p.add_argument("--no-min-support-voi", action="store_true")
    p.add_argument("--no-timing", action="store_true", help="leave the seconds columns blank")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("walk", help="step through a policy interactively")
    p.add_argument("--policy", required=True)
    p.set_defaults(func=cmd_walk)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", help="JSON generative spec; omit for a random small problem")
    p.add_argument("--tests", type=int, help="number of tests for a random problem")
    p.add_argument("--m", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("oracle", help="exact optimal policy by enumeration")
    _common(p)
    p.add_argument("--max-tests", type=int, default=4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UnknownAlgorithm as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CliError, DataError, PolicyError, ValueError, OSError, KeyError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
