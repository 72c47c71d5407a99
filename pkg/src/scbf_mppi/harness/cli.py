"""Command line entry point: ``scbf-mppi {run,benchmark,samplesize,validate}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from pydantic import ValidationError

from ..sample_complexity import AssumptionViolated
from .config import ExperimentConfig, default_config_json, load_config
from .experiment import parse_grid, run_benchmark, run_samplesize, run_trial, summarize
from .export import export_results, version_string, write_csv, write_summary
from .validate import run_checks


def _config(path: Optional[str]) -> ExperimentConfig:
    return load_config(path) if path else ExperimentConfig()


def _with(cfg: ExperimentConfig, **updates) -> ExperimentConfig:
    data = cfg.model_dump()
    for key, value in updates.items():
        if value is None:
            continue
        section, _, field = key.partition("__")
        if field:
            data[section][field] = value
        else:
            data[section] = value
    return ExperimentConfig.model_validate(data)


def cmd_run(args) -> int:
    cfg = _with(_config(args.config), seed=args.seed)
    records = [run_trial(cfg, i) for i in range(args.trials or 1)]
    row = summarize(records, cfg.controller.mode, cfg.controller.samples)
    for r in records:
        print(f"trial {r.trial}: ttf={r.ttf} collisions={r.collisions} steps={r.steps}")
    if args.out:
        csv_path, _ = export_results(records, args.out, cfg.barriers(), config=cfg.model_dump(), stem="run")
        print(f"wrote {csv_path}")
    print(json.dumps(row.__dict__))
    return 0


def cmd_benchmark(args) -> int:
    cfg = _with(_config(args.config), seed=args.seed)
    grid = parse_grid(args.grid)
    table = run_benchmark(cfg, grid, args.trials, workers=args.workers)
    print(f"{'algorithm':<10}{'K':>6}{'collision':>12}{'mean TTF':>10}{'DNF':>5}")
    for r in table.rows:
        ttf = "-" if r.mean_ttf is None else f"{r.mean_ttf:.1f}"
        print(f"{r.algorithm:<10}{r.samples:>6}{r.collision_rate:>12.4f}{ttf:>10}{r.did_not_finish:>5}")
    if args.out:
        out = Path(args.out)
        barriers = cfg.barriers()
        for mode, k in grid:
            cell = [r for r in table.records if r.mode == mode and r.samples == k]
            write_csv(cell, out / f"trajectories_{mode}_{k}.csv", barriers)
        write_summary(table.records, out / "summary.json", table, cfg.model_dump())
        print(f"wrote {out / 'summary.json'}")
    return 0


def cmd_samplesize(args) -> int:
    cfg = _with(
        _config(args.config),
        complexity__step=args.step,
        complexity__eps1=args.eps1,
        complexity__eps2=args.eps2,
        complexity__rho1=args.rho1,
        complexity__rho2=args.rho2,
    )
    reports = run_samplesize(cfg)
    print(f"{'algorithm':<10}{'E1_hat':>10}{'N1':>8}{'N2':>10}")
    for mode, rep in reports.items():
        print(f"{mode:<10}{rep.stats.e1_hat:>10.4f}{rep.n1:>8}{rep.n2:>10}")
    if args.out:
        path = Path(args.out)
        path.mkdir(parents=True, exist_ok=True)
        doc = {"version": version_string(), "config": cfg.model_dump(), "reports": {m: r.to_dict() for m, r in reports.items()}}
        (path / "samplesize.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_validate(args) -> int:
    results = run_checks()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return 0 if all(ok for _, ok, _ in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scbf-mppi", description=__doc__)
    parser.add_argument("--print-default-config", action="store_true", help="print the documented default config")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("run", help="closed-loop trial(s) with one config")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("benchmark", help="grid of (algorithm, K) cells")
    p.add_argument("--config")
    p.add_argument("--grid", default="plain:200,plain:500,scbf:200,scbf:500")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("samplesize", help="N1 / N2 at one closed-loop step")
    p.add_argument("--config")
    p.add_argument("--step", type=int)
    for name in ("eps1", "eps2", "rho1", "rho2"):
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_samplesize)

    p = sub.add_parser("validate", help="config-free invariant checks")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.print_default_config:
        print(default_config_json())
        return 0
    if not args.command:
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except (ValidationError, ValueError, OSError, AssumptionViolated) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
