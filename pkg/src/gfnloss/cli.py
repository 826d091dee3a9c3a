"""Command-line entry point: run, suite, verify, classify, convert."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from gfnloss.config import ExperimentConfig
from gfnloss.errors import GFNLossError
from gfnloss.expr import Expression
from gfnloss.losses import (
    BUILTIN_LOSSES,
    FDivergenceSpec,
    classify_loss,
    f_from_g,
    g_from_f,
    loss_from_expression,
    make_builtin_loss,
)
from gfnloss.runner import RunFailure, aggregate, output_root, run_experiment, run_suite


def _parse_seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers: {text!r}") from exc


def cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.full:
        cfg = cfg.full_scale()
    summary = run_experiment(cfg)
    print(summary.to_json())
    return 0


def cmd_suite(args) -> int:
    paths = sorted(Path(args.config_dir).glob("*.ini"))
    if not paths:
        print(f"no *.ini configs in {args.config_dir}", file=sys.stderr)
        return 1
    base = [ExperimentConfig.load(p) for p in paths]
    configs = [c.with_seed(s) for c in base for s in (args.seeds or [c.training.seed])]
    results = run_suite(configs, parallelism=args.parallelism)
    for r in results:
        if isinstance(r, RunFailure):
            print(f"FAILED {r.name} seed={r.seed}: {r.error}", file=sys.stderr)
    groups = aggregate(results)
    out = output_root() / "suite_summary.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps([asdict(g) for g in groups], indent=2, sort_keys=True))
    for g in groups:
        print(json.dumps(asdict(g), sort_keys=True))
    return 0 if all(not isinstance(r, RunFailure) for r in results) else 1


def cmd_verify(args) -> int:
    from gfnloss.oracle import run_matrix

    seeds = args.seeds or list(range(20))
    rows = run_matrix(seeds=seeds, losses=BUILTIN_LOSSES, tol=args.tol, parallelism=args.parallelism)
    out = output_root()
    out.mkdir(parents=True, exist_ok=True)
    report = out / "verify_report.csv"
    with open(report, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dag_seed", "loss", "case", "family", "max_rel_error", "pass"])
        for r in rows:
            w.writerow([r.dag_seed, r.loss, r.case, r.family, repr(r.max_rel_error), int(r.passed)])
    failed = [r for r in rows if not r.passed]
    for r in failed:
        path = out / f"counterexample-{r.dag_seed}-{r.loss}-{r.case}-{r.family}.dag"
        path.write_text(r.counterexample or "")
    worst = max((r.max_rel_error for r in rows), default=0.0)
    print(f"{len(rows) - len(failed)}/{len(rows)} configurations pass at tol={args.tol:g}; "
          f"worst relative error {worst:.3e}; report: {report}")
    return 1 if failed else 0


def _loss_arg(name: str, expr: str | None):
    if expr:
        return loss_from_expression(name, expr)
    return make_builtin_loss(name)


def cmd_classify(args) -> int:
    g = _loss_arg(args.loss, args.expr)
    c = classify_loss(g)
    print(json.dumps({"loss": g.name, "zero_forcing": c.zero_forcing, "zero_avoiding": c.zero_avoiding,
                      "f_at_zero_probes": c.probes_at_zero, "f_slope_at_infinity_probes": c.probes_at_infinity}))
    return 0


def cmd_convert(args) -> int:
    if args.g:
        g = _loss_arg(args.g, args.expr)
        print("t,f(t)")
        for t in np.logspace(-3, 3, args.points).tolist():
            print(f"{t!r},{f_from_g(g, t)!r}")
        return 0
    f_expr = Expression(args.f)

    def f(t: float) -> float:
        return f_expr.jet(t).v

    def fp(t: float) -> float:
        return f_expr.jet(t).d1

    spec = FDivergenceSpec("custom", f, fp, math.nan, math.nan)
    print("t,g(t)")
    for t in np.linspace(-3, 3, args.points).tolist():
        print(f"{t!r},{g_from_f(spec, t)!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gfnloss", description="Regression losses for GFlowNet training.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train one configuration")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--full", action="store_true",
                   help="use full-size environment constants (hyper-grid D=4, H=20; 120-bit sequences)")
    r.set_defaults(fn=cmd_run)

    s = sub.add_parser("suite", help="train every *.ini in a directory over several seeds")
    s.add_argument("config_dir")
    s.add_argument("--seeds", type=_parse_seeds)
    s.add_argument("--parallelism", type=int, default=1)
    s.set_defaults(fn=cmd_suite)

    v = sub.add_parser("verify", help="gradient correspondence matrix on random DAGs")
    v.add_argument("--tol", type=float, default=1e-6)
    v.add_argument("--seeds", type=_parse_seeds)
    v.add_argument("--parallelism", type=int, default=1)
    v.set_defaults(fn=cmd_verify)

    c = sub.add_parser("classify", help="zero-forcing / zero-avoiding classification of a loss")
    c.add_argument("loss", help=f"built-in ({', '.join(BUILTIN_LOSSES)}) or a name with --expr")
    c.add_argument("--expr", help="expression in t defining a custom loss")
    c.set_defaults(fn=cmd_classify)

    k = sub.add_parser("convert", help="tabulate the dual of a loss or the loss of a generator")
    grp = k.add_mutually_exclusive_group(required=True)
    grp.add_argument("--g", help="loss name (with --expr for custom losses)")
    grp.add_argument("--f", help="generator expression in t")
    k.add_argument("--expr")
    k.add_argument("--points", type=int, default=13)
    k.set_defaults(fn=cmd_convert)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except GFNLossError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
