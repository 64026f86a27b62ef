"""Command-line interface: run experiments, compare trace sets, run diagnostics.

Exit codes: 0 success, 1 config error, 2 runtime failure, 3 a diagnostic
gate failed. The default output root comes from OPTEX_OUTPUT_ROOT.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

from .config import ConfigError, parse_config
from .diagnostics import (
    check_error_trend,
    check_information_gain,
    check_posterior_equivalence,
    check_speedup,
    check_variance_properties,
)
from .harness import compare, run_experiment

DIAG_TARGETS = {
    "prop1": check_posterior_equivalence,
    "variance": check_variance_properties,
    "infogain": check_information_gain,
    "error-vs-t0": check_error_trend,
    "speedup": check_speedup,
}


def _output_root() -> Path:
    return Path(os.environ.get("OPTEX_OUTPUT_ROOT", "optex_out"))


def _parse_scalar(raw: str):
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            continue
    return raw


def _write_rows_csv(rows: list[dict], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def cmd_run(args) -> int:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    config = parse_config(args.config, overrides)
    out = Path(args.out) if args.out else _output_root() / config.config_hash()
    traces, summary = run_experiment(config, out)
    print(f"wrote {len(traces)} traces to {out} (config {config.config_hash()})")
    for method, agg in summary.aggregates.items():
        final = agg["final_best_value"]
        print(f"  {method:<12} final best value: median {final['median']!r} "
              f"(mean {final['mean']!r})")
    return 0


def cmd_compare(args) -> int:
    rows, lines = compare(args.dirs, args.threshold)
    for line in lines:
        print(line)
    if args.out:
        _write_rows_csv(rows, Path(args.out) / "compare.csv")
    return 0


def cmd_diag(args) -> int:
    check = DIAG_TARGETS[args.target]
    kwargs = {}
    for item in args.set:
        key, _, raw = item.partition("=")
        if not _:
            raise ConfigError(f"diag override must be key=value, got {item!r}")
        if key == "t0_grid":
            kwargs[key] = tuple(int(v) for v in raw.split(","))
        else:
            kwargs[key] = _parse_scalar(raw)
    try:
        report = check(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad diag parameter for {args.target}: {exc}") from exc
    out = Path(args.out) if args.out else _output_root() / "diag"
    if report.rows:
        _write_rows_csv(report.rows, out / f"diag_{args.target}.csv")
    verdict = "PASS" if report.passed else "FAIL"
    print(f"{args.target}: {verdict} - {report.summary}")
    return 0 if report.passed else 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="optex",
        description="Parallelized-iteration first-order optimization harness.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a configured experiment")
    p_run.add_argument("--config", default=None, help="config file path")
    p_run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable; beats the file)")
    p_run.add_argument("--seed", type=int, default=None, help="override run.seed")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="speedup table from persisted traces")
    p_cmp.add_argument("dirs", nargs="+", help="directories holding trace CSVs")
    p_cmp.add_argument("--threshold", type=float, required=True,
                       help="optimality-gap threshold")
    p_cmp.add_argument("--out", default=None, help="write compare.csv here")
    p_cmp.set_defaults(func=cmd_compare)

    p_diag = sub.add_parser("diag", help="run a numeric verification target")
    p_diag.add_argument("target", choices=sorted(DIAG_TARGETS))
    p_diag.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a check parameter (e.g. trials=20)")
    p_diag.add_argument("--out", default=None, help="output directory")
    p_diag.set_defaults(func=cmd_diag)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
