"""Command-line front end.

    mecpow list
    mecpow validate --config cfg.yaml
    mecpow run fig5 --config cfg.yaml --seed 7 --out results/
    mecpow solve --config cfg.yaml --out solution.csv
    mecpow merge --input nonces.txt --seed 0 --out merged.csv

Exit codes: 0 success/pass, 1 acceptance failure or system crash, 2 usage or
config error. ``MECPOW_OUT_DIR`` sets the default output directory.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

from .config import ConfigError, validate_config
from .difficulty import SystemCrash
from .experiments import EXPERIMENTS, run_experiment
from .game import access_filter, write_solution_csv
from .ordering import merge, read_nonce_file, wrr_merge, write_merged_csv

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
OUT_ENV = "MECPOW_OUT_DIR"


def _default_out() -> str:
    return os.environ.get(OUT_ENV, "mecpow-out")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mecpow", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("list", help="list experiment names")

    v = sub.add_parser("validate", help="check a config file and print the effective values")
    v.add_argument("--config", required=True)

    r = sub.add_parser("run", help="run a named experiment")
    r.add_argument("experiment")
    r.add_argument("--config")
    r.add_argument("--seed", type=int)
    r.add_argument("--out")

    s = sub.add_parser("solve", help="equilibrium with dropout filtering, as CSV")
    s.add_argument("--config")
    s.add_argument("--out", required=True)

    m = sub.add_parser("merge", help="merge nonce sequences from a text file")
    m.add_argument("--input", required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--wrr", help="comma-separated weights; use round robin instead")
    m.add_argument("--out", help="CSV path (default stdout)")
    return ap


def _cmd_run(args) -> int:
    if args.experiment not in EXPERIMENTS:
        print(f"error: unknown experiment {args.experiment!r}; "
              f"choose from {', '.join(EXPERIMENTS)}", file=sys.stderr)
        return EXIT_USAGE
    cfg = validate_config(args.config)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
            return EXIT_USAGE
        cfg.seed = args.seed
    out = Path(args.out or cfg.out_dir or _default_out())
    cfg.experiment = args.experiment
    start = time.perf_counter()
    try:
        report = run_experiment(args.experiment, cfg, out)
    except SystemCrash as exc:
        print(f"{args.experiment}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    elapsed = time.perf_counter() - start
    for label, ok in report.checks.items():
        print(f"[{'PASS' if ok else 'FAIL'}] {label}")
    for p in report.csv_paths:
        print(f"wrote {p}")
    print(f"{args.experiment}: {'pass' if report.passed else 'FAIL'} in {elapsed:.1f} s")
    return EXIT_OK if report.passed else EXIT_FAIL


def _cmd_solve(args) -> int:
    cfg = validate_config(args.config)
    sol = access_filter(cfg.system, cfg.sizes)
    write_solution_csv(sol, cfg.system, cfg.sizes, args.out)
    print(f"case {sol.case}; active users {list(sol.active_set)}; M* {list(sol.M_star)}")
    return EXIT_FAIL if sol.crashed else EXIT_OK


def _cmd_merge(args) -> int:
    seqs = read_nonce_file(args.input)
    if args.wrr:
        weights = [int(w) for w in args.wrr.split(",")]
        merged = wrr_merge(seqs, weights)
    else:
        merged = merge(seqs, seed=args.seed).merged
    if args.out:
        write_merged_csv(merged, args.out)
    else:
        write_merged_csv(merged, sys.stdout)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "list":
            for name, (_, desc) in EXPERIMENTS.items():
                print(f"{name}\t{desc}")
            return EXIT_OK
        if args.command == "validate":
            cfg = validate_config(args.config)
            cfg.dump(Path(args.config).with_suffix(".effective.yaml"))
            for k, v in cfg.to_dict().items():
                print(f"{k}: {v}")
            return EXIT_OK
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "solve":
            return _cmd_solve(args)
        if args.command == "merge":
            return _cmd_merge(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
