"""Command-line interface: gen / run / sweep / check.

Exit codes: 0 success, 2 input or usage error, 3 internal contract violation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .fixedpoint import ContractViolation
from .harness import (
    ExperimentConfig,
    gen_synthetic,
    load_matrix,
    run_experiment,
    save_matrix,
    self_check,
)

_EXIT_INPUT = 2
_EXIT_INTERNAL = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attnsim",
        description="Fixed-point attention pipeline simulator with greedy "
                    "candidate selection and cycle accounting.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    gen = sub.add_parser("gen", help="write synthetic key/value/query CSVs")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--n", type=int, default=320)
    gen.add_argument("--d", type=int, default=64)
    gen.add_argument("--planted", type=int, default=5)
    gen.add_argument("--queries", type=int, default=8, help="number of queries")
    gen.add_argument("--seed", type=int, default=0)

    run = sub.add_parser("run", help="run one experiment from a JSON config")
    run.add_argument("--config", required=True)
    run.add_argument("--key", help="key matrix CSV (default: synthesize from config)")
    run.add_argument("--value", help="value matrix CSV")
    run.add_argument("--queries", help="query matrix CSV, one query per row")
    run.add_argument("--out", help="report path (default: stdout)")
    run.add_argument("--seed", type=int, help="override the config seed")

    sweep = sub.add_parser("sweep", help="grid over iteration fractions and thresholds")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--key")
    sweep.add_argument("--value")
    sweep.add_argument("--queries")
    sweep.add_argument("--out", required=True, help="directory for per-cell reports")
    sweep.add_argument("--seed", type=int)

    sub.add_parser("check", help="run the built-in oracle and invariant battery")
    return parser


def _load_config(path, seed_override):
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if seed_override is not None:
        data["seed"] = seed_override
    return data


def _load_data(cfg: ExperimentConfig, args):
    paths = (args.key, args.value, args.queries)
    if any(paths) and not all(paths):
        raise ValueError("--key, --value and --queries must be given together")
    if all(paths):
        key = load_matrix(args.key, (cfg.n, cfg.d))
        value = load_matrix(args.value, (cfg.n, cfg.d))
        queries = load_matrix(args.queries)
        if queries.shape[1] != cfg.d:
            raise ValueError(
                f"{args.queries}: queries have dim {queries.shape[1]}, expected {cfg.d}"
            )
        return key, value, queries
    return gen_synthetic(cfg.n, cfg.d, cfg.planted, cfg.seed, cfg.n_queries)


def _cmd_gen(args) -> int:
    key, value, queries = gen_synthetic(args.n, args.d, args.planted,
                                        args.seed, args.queries)
    os.makedirs(args.out, exist_ok=True)
    save_matrix(os.path.join(args.out, "key.csv"), key)
    save_matrix(os.path.join(args.out, "value.csv"), value)
    save_matrix(os.path.join(args.out, "queries.csv"), queries)
    print(f"wrote key/value/queries CSVs to {args.out}")
    return 0


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.from_dict(_load_config(args.config, args.seed))
    key, value, queries = _load_data(cfg, args)
    report = run_experiment(cfg, key, value, queries)
    text = report.to_json() + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_sweep(args) -> int:
    data = _load_config(args.config, args.seed)
    fractions = data.pop("iteration_fractions", None)
    percents = data.pop("keep_percents", None)
    if not fractions or not percents:
        raise ValueError("sweep config needs iteration_fractions and keep_percents lists")
    data.pop("iterations", None)
    data.pop("iteration_fraction", None)
    data.pop("keep_percent", None)
    os.makedirs(args.out, exist_ok=True)
    for frac in fractions:
        for pct in percents:
            cfg = ExperimentConfig.from_dict(
                dict(data, iteration_fraction=frac, keep_percent=pct))
            key, value, queries = _load_data(cfg, args)
            report = run_experiment(cfg, key, value, queries)
            name = f"report_m{frac:g}_t{pct:g}.json"
            with open(os.path.join(args.out, name), "w", encoding="utf-8") as fh:
                fh.write(report.to_json() + "\n")
            print(f"wrote {name}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.verb == "gen":
            return _cmd_gen(args)
        if args.verb == "run":
            return _cmd_run(args)
        if args.verb == "sweep":
            return _cmd_sweep(args)
        if args.verb == "check":
            return 0 if self_check(verbose=True) else _EXIT_INTERNAL
    except ContractViolation as exc:
        print(f"internal contract violation: {exc}", file=sys.stderr)
        return _EXIT_INTERNAL
    except (OSError, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_INPUT
    return 0


if __name__ == "__main__":
    sys.exit(main())
