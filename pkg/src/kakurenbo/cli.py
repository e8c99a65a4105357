"""Command-line entry point.

Subcommands: train, compare, verify-lemma, gradcheck, inspect, report.
Any flag of the form ``--section.key value`` overrides that config entry;
dedicated shorthands (``--strategy``, ``--seed``, ...) take precedence over
dotted overrides, which take precedence over the config file.

Exit codes: 0 success, 1 runtime failure, 2 configuration/usage error.
The default output root is $KAKU_OUT (falling back to ./runs).
"""

from __future__ import annotations

import argparse
import dataclasses
import glob
import json
import os
import sys

import numpy as np

from . import config as config_mod
from . import harness, report
from . import model as model_mod
from .config import ConfigError
from .harness import PreconditionViolated
from .rng import Xoshiro256StarStar

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2

GRADCHECK_GATE = 1e-4


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kaku",
                                description="Sample-hiding training laboratory")
    sub = p.add_subparsers(dest="command")

    t = sub.add_parser("train", help="run one training experiment")
    t.add_argument("--config", default=None, help="TOML config file")
    t.add_argument("--out", default=None, help="output directory")
    t.add_argument("--strategy", default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--dump-plans", default=None, metavar="DIR",
                   help="write per-epoch plan files to DIR")
    t.add_argument("--figures", action="store_true",
                   help="render figures alongside the metrics")
    t.add_argument("--verbose", action="store_true",
                   help="print one progress line per epoch")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compare", help="run a strategy comparison matrix")
    c.add_argument("--config", default=None)
    c.add_argument("--out", default=None)
    c.add_argument("--strategies", default="baseline,kakurenbo",
                   help="comma-separated strategy list")
    c.add_argument("--repeats", type=int, default=3)
    c.add_argument("--jobs", type=int, default=None)
    c.add_argument("--seed", type=int, default=None)
    c.add_argument("--epochs", type=int, default=None)
    c.add_argument("--verbose", action="store_true",
                   help="print one progress line per finished cell")
    c.set_defaults(func=cmd_compare)

    v = sub.add_parser("verify-lemma", help="Monte-Carlo check of the "
                       "convergence bound over the default cell grid")
    v.add_argument("--eta", type=float, default=None,
                   help="override the step size of every cell")
    v.add_argument("--steps", type=int, default=None)
    v.add_argument("--trials", type=int, default=None)
    v.add_argument("--out", default=None)
    v.set_defaults(func=cmd_verify_lemma)

    g = sub.add_parser("gradcheck", help="finite-difference gradient check")
    g.add_argument("--arch", default="both",
                   choices=["softmax_reg", "mlp1", "both"])
    g.add_argument("--eps", type=float, default=1e-5)
    g.add_argument("--hidden", type=int, default=16)
    g.add_argument("--d", type=int, default=20)
    g.add_argument("--k", type=int, default=5)
    g.set_defaults(func=cmd_gradcheck)

    i = sub.add_parser("inspect", help="print dataset or run-directory stats")
    i.add_argument("--config", default=None)
    i.add_argument("--run-dir", default=None)
    i.set_defaults(func=cmd_inspect)

    r = sub.add_parser("report", help="regenerate figures and CSV from a "
                       "run or comparison directory")
    r.add_argument("--run-dir", default=None)
    r.add_argument("--compare-dir", default=None)
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_report)

    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args, extras = parser.parse_known_args(argv)
    except SystemExit as e:
        code = e.code if isinstance(e.code, int) else 0
        return code
    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG
    try:
        return args.func(args, extras)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except PreconditionViolated as e:
        print(f"precondition violated: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


# ======================================================================
# shared plumbing
# ======================================================================


def _parse_overrides(extras: list) -> list:
    """Pair up leftover argv tokens as (dotted-key, value) overrides."""
    pairs = []
    i = 0
    while i < len(extras):
        tok = extras[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        body = tok[2:]
        if "=" in body:
            key, val = body.split("=", 1)
            i += 1
        else:
            key = body
            if i + 1 >= len(extras):
                raise ConfigError(f"flag --{key} needs a value")
            val = extras[i + 1]
            i += 2
        pairs.append((key, val))
    return pairs


def _load_effective(args, extras) -> dict:
    cfg = config_mod.load_config(getattr(args, "config", None))
    for key, val in _parse_overrides(extras):
        config_mod.apply_override(cfg, key, val)
    for attr, dotted in (("strategy", "run.strategy"), ("seed", "run.seed"),
                         ("epochs", "run.epochs"), ("batch_size", "run.batch_size"),
                         ("jobs", "run.jobs")):
        v = getattr(args, attr, None)
        if v is not None:
            config_mod.apply_override(cfg, dotted, str(v))
    return cfg


def _resolve_out(explicit: str | None, default_name: str) -> str:
    if explicit:
        return explicit
    root = os.environ.get("KAKU_OUT", "runs")
    return os.path.join(root, default_name)


# ======================================================================
# subcommands
# ======================================================================


def cmd_train(args, extras) -> int:
    cfg = _load_effective(args, extras)
    rc = config_mod.build_run_config(cfg)
    out = _resolve_out(args.out, f"train-{rc.strategy}-s{rc.seed}")
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "effective_config.toml"), "w") as f:
        f.write(config_mod.echo_toml(cfg))

    progress = None
    if args.verbose:
        def progress(rec):
            print(f"epoch {rec.epoch:4d} [{rec.phase}] loss={rec.train_loss:.4f} "
                  f"top1={rec.test_top1:.4f} f*={rec.f_star:.3f} "
                  f"lr={rec.eta_e:.5g}")

    result = harness.run_experiment(rc, out_dir=out, dump_plans_dir=args.dump_plans,
                                    progress=progress)
    if args.figures:
        report.render_run_figures(result.records, out)
        report.write_run_csv(result.records, os.path.join(out, "metrics.csv"))

    s = result.summary
    print(f"strategy={s['strategy']} seed={s['seed']} epochs={s['epochs']} "
          f"best_top1={s['best_test_top1']:.4f} (epoch {s['best_epoch']}) "
          f"backward={s['total_backward']} out={out}")
    return EXIT_OK


def cmd_compare(args, extras) -> int:
    cfg = _load_effective(args, extras)
    rc = config_mod.build_run_config(cfg)

    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    if not strategies:
        raise ConfigError("--strategies must name at least one strategy")
    seen = set()
    for s in strategies:
        if s in seen:
            raise ConfigError(
                f"duplicate strategy {s!r} in --strategies (list each once)")
        seen.add(s)
        if s not in harness.STRATEGIES:
            raise ConfigError(
                f"unknown strategy {s!r}; choose from {', '.join(harness.STRATEGIES)}")
    if args.repeats < 1:
        raise ConfigError("--repeats must be >= 1")
    jobs = args.jobs if args.jobs is not None else rc.jobs

    # echo the effective config before any cell runs
    out = _resolve_out(args.out, "compare")
    os.makedirs(os.path.join(out, "cells"), exist_ok=True)
    with open(os.path.join(out, "effective_config.toml"), "w") as f:
        f.write(config_mod.echo_toml(cfg))

    progress = None
    if args.verbose:
        def progress(strategy, seed, summary):
            print(f"done: {strategy} seed={seed} "
                  f"best_top1={summary['best_test_top1']:.4f} "
                  f"backward={summary['total_backward']}")

    result = harness.compare(rc, strategies, repeats=args.repeats, jobs=jobs,
                             progress=progress)

    with open(os.path.join(out, "comparison_meta.json"), "w") as f:
        json.dump({"strategies": result.strategies, "seeds": result.seeds,
                   "repeats": args.repeats}, f)
    for (s, seed), cell in result.cells.items():
        harness.write_metrics(
            os.path.join(out, "cells", f"{s}-s{seed}.metrics.jsonl"),
            cell["records"], cell["summary"])
    report.write_comparison_csv(result.rows, os.path.join(out, "comparison.csv"))
    table = report.format_comparison_table(result.rows)
    with open(os.path.join(out, "comparison.txt"), "w") as f:
        f.write(table + "\n")
    report.render_compare_figures(result.cells, result.strategies, out)

    print(table)
    print(f"written to {out}")
    return EXIT_OK


def cmd_verify_lemma(args, extras) -> int:
    if extras:
        raise ConfigError(f"unknown arguments: {' '.join(extras)}")
    trials = 10_000 if args.trials is None else args.trials
    if trials < 1:
        raise ConfigError("--trials must be >= 1")
    if args.steps is not None and args.steps < 1:
        raise ConfigError("--steps must be >= 1")
    if args.eta is not None and args.eta <= 0:
        raise ConfigError("--eta must be > 0")

    grid = harness.default_lemma_grid(trials=trials)
    if args.eta is not None:
        grid = [dataclasses.replace(c, eta=args.eta) for c in grid]
    if args.steps is not None:
        grid = [dataclasses.replace(c, steps=args.steps) for c in grid]

    # surface step-size violations before burning any compute
    for cell in grid:
        sup_l = max(cell.curvatures)
        if cell.eta > 1.0 / sup_l:
            raise PreconditionViolated(
                f"cell {cell.name!r}: eta = {cell.eta} exceeds 1 / sup L = {1.0 / sup_l}")

    reports = [harness.verify_lemma(c) for c in grid]
    print(report.format_lemma_lines(reports))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        report.write_lemma_csv(reports, os.path.join(args.out, "lemma_report.csv"))
        print(f"written to {args.out}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_RUNTIME


def cmd_gradcheck(args, extras) -> int:
    if extras:
        raise ConfigError(f"unknown arguments: {' '.join(extras)}")
    if args.eps <= 0:
        raise ConfigError("--eps must be > 0")
    if args.d < 1 or args.k < 2:
        raise ConfigError("need --d >= 1 and --k >= 2")
    archs = [args.arch] if args.arch != "both" else ["softmax_reg", "mlp1"]
    if "mlp1" in archs and args.hidden < 1:
        raise ConfigError("--hidden must be >= 1 for mlp1")
    if args.eps < 1e-9:
        print(f"warning: eps={args.eps:g} is below float64 cancellation "
              "territory; the reported error will be dominated by roundoff")

    batch = 8
    worst_overall = 0.0
    for arch in archs:
        worst = 0.0
        for trial in range(10):
            g = np.random.default_rng(9000 + trial)
            x = g.normal(size=(batch, args.d))
            y = g.integers(0, args.k, size=batch)
            mdl = model_mod.init_model(arch, args.d, args.k, h=args.hidden,
                                       rng=Xoshiro256StarStar(500 + trial))
            mdl.params[:] = g.normal(scale=0.3, size=mdl.n_params)
            worst = max(worst, model_mod.grad_check(mdl, x, y, eps=args.eps))
        print(f"{arch}: max relative error {worst:.3e} over 10 batches "
              f"(eps={args.eps:g})")
        worst_overall = max(worst_overall, worst)
    return EXIT_OK if worst_overall < GRADCHECK_GATE else EXIT_RUNTIME


def cmd_inspect(args, extras) -> int:
    if args.run_dir:
        if extras:
            raise ConfigError(f"unknown arguments: {' '.join(extras)}")
        metrics_path = os.path.join(args.run_dir, "metrics.jsonl")
        records, summary = harness.read_metrics(metrics_path)
        print(f"run: strategy={summary.get('strategy')} seed={summary.get('seed')} "
              f"epochs={len(records)}")
        print(f"  arch={summary.get('arch')} n_train={summary.get('n_train')} "
              f"n_test={summary.get('n_test')} d={summary.get('d')} k={summary.get('k')}")
        print(f"  best_top1={summary.get('best_test_top1'):.4f} "
              f"(epoch {summary.get('best_epoch')}), "
              f"final_top1={summary.get('final_test_top1'):.4f}")
        print(f"  total_forward={summary.get('total_forward')} "
              f"total_backward={summary.get('total_backward')}")
        ckpt = os.path.join(args.run_dir, "model.ckpt")
        if os.path.exists(ckpt):
            mdl = model_mod.load_checkpoint(ckpt)
            print(f"  checkpoint: arch={mdl.arch} d={mdl.d} h={mdl.h} k={mdl.k} "
                  f"params={mdl.n_params}")
        return EXIT_OK

    cfg = _load_effective(args, extras)
    rc = config_mod.build_run_config(cfg)
    train, test = harness.build_datasets(rc.dataset)
    hist = np.bincount(train.labels, minlength=train.k)
    print(f"dataset: source={rc.dataset.source} n_train={train.n} "
          f"n_test={test.n} d={train.d} k={train.k}")
    print(f"  class histogram (train): {hist.tolist()}")
    print(f"  feature range: [{train.features.min():.4g}, {train.features.max():.4g}], "
          f"mean {train.features.mean():.4g}, std {train.features.std():.4g}")
    return EXIT_OK


def cmd_report(args, extras) -> int:
    if extras:
        raise ConfigError(f"unknown arguments: {' '.join(extras)}")
    if bool(args.run_dir) == bool(args.compare_dir):
        raise ConfigError("report needs exactly one of --run-dir or --compare-dir")

    if args.run_dir:
        records, summary = harness.read_metrics(
            os.path.join(args.run_dir, "metrics.jsonl"))
        out = args.out or args.run_dir
        os.makedirs(out, exist_ok=True)
        paths = report.render_run_figures(records, out)
        csv_path = os.path.join(out, "metrics.csv")
        report.write_run_csv(records, csv_path)
        for p in paths + [csv_path]:
            print(p)
        return EXIT_OK

    meta_path = os.path.join(args.compare_dir, "comparison_meta.json")
    with open(meta_path) as f:
        meta = json.load(f)
    cells = {}
    for path in sorted(glob.glob(os.path.join(args.compare_dir, "cells", "*.metrics.jsonl"))):
        records, summary = harness.read_metrics(path)
        cells[(summary["strategy"], summary["seed"])] = {
            "records": records, "summary": summary}
    if not cells:
        raise ConfigError(f"no cell metrics under {args.compare_dir}")
    rows = harness.aggregate_rows(cells, meta["strategies"], meta["seeds"])
    out = args.out or args.compare_dir
    os.makedirs(out, exist_ok=True)
    report.write_comparison_csv(rows, os.path.join(out, "comparison.csv"))
    table = report.format_comparison_table(rows)
    with open(os.path.join(out, "comparison.txt"), "w") as f:
        f.write(table + "\n")
    paths = report.render_compare_figures(cells, meta["strategies"], out)
    print(table)
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
