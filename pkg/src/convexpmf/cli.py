"""Command-line front end.

``convexpmf test`` runs one convexity test on a dataset and exits 0 when
convexity is not rejected, 1 when it is, 2 on usage or data errors.
``convexpmf simulate`` reproduces the rejection-rate tables.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import IO, Sequence

from .calibration import CalibrationConfig, TestReport, VnRule, calibrate
from .pmf import Sample
from .simulation import ExperimentPlan, emit_table, preset, run_plan

EXIT_ACCEPT, EXIT_REJECT, EXIT_ERROR = 0, 1, 2


class DataError(ValueError):
    """Malformed or unusable input dataset."""


def read_dataset(stream: IO[str], fmt: str) -> Sample:
    """Parse ``raw`` (one integer per line) or ``histogram`` (``value,count``)."""
    values: list[int] = []
    seen: set[int] = set()
    for lineno, line in enumerate(stream, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            if fmt == "raw":
                v = int(line)
                if v < 0:
                    raise ValueError
                values.append(v)
            else:
                a, b = (int(x) for x in line.split(","))
                if a < 0 or b < 1 or a in seen:
                    raise ValueError
                seen.add(a)
                values.extend([a] * b)
        except ValueError:
            raise DataError(f"line {lineno}: cannot parse {line!r} as {fmt} data") from None
    if not values:
        raise DataError("dataset is empty")
    return Sample(values)


def _text_report(r: TestReport) -> str:
    cal = "least favorable hypothesis" if r.method == "lfh" else f"knot threshold v_n={r.vn} ({r.vn_value:.6g})"
    lines = [
        f"n = {r.n}, largest observation S_n = {r.s_n}",
        f"calibration: {cal}, B = {r.B}, alpha = {r.alpha:g}, seed = {r.seed}",
        f"statistic       {r.statistic:.6g}",
        f"critical value  {r.critical_value:.6g}",
        f"p-value         {r.p_value:.6g}",
        f"constrained     {', '.join(map(str, r.constrained_positions)) or '(none)'}",
        "decision        " + ("reject convexity" if r.reject else "do not reject convexity"),
    ]
    return "\n".join(lines) + "\n"


def cmd_test(args: argparse.Namespace) -> int:
    try:
        if not 0 < args.alpha < 1:
            raise DataError(f"--alpha must lie in (0, 1), got {args.alpha}")
        if args.B < 1:
            raise DataError(f"--B must be >= 1, got {args.B}")
        vn = VnRule.parse(args.vn) if args.method == "knot" else None
        if args.input in (None, "-"):
            sample = read_dataset(sys.stdin, args.format)
        else:
            with open(args.input) as fh:
                sample = read_dataset(fh, args.format)
        cfg = CalibrationConfig(alpha=args.alpha, B=args.B, method=args.method, vn=vn, seed=args.seed)
        report = calibrate(sample, cfg)
    except (OSError, ValueError) as exc:
        print(f"convexpmf test: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.output == "json":
        sys.stdout.write(json.dumps(report.to_dict(), indent=2) + "\n")
    else:
        sys.stdout.write(_text_report(report))
    return EXIT_REJECT if report.reject else EXIT_ACCEPT


def cmd_simulate(args: argparse.Namespace) -> int:
    try:
        if args.plan:
            plan = ExperimentPlan.from_dict(json.loads(Path(args.plan).read_text()))
            if args.N is not None:
                plan.N = args.N
            if args.B is not None:
                plan.B = args.B
            if args.seed is not None:
                plan.master_seed = args.seed
        else:
            plan = preset(args.preset, N=args.N or 500, B=args.B or 1000, seed=args.seed or 0)
        plan.__post_init__()
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"convexpmf simulate: invalid plan: {exc}", file=sys.stderr)
        return EXIT_ERROR
    table = run_plan(plan)
    data = emit_table(table, args.format)
    if args.out:
        Path(args.out).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    return EXIT_ACCEPT


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="convexpmf", description="Test convexity of a discrete distribution.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", help="test one dataset for convexity")
    t.add_argument("--input", help="data file (default: standard input)")
    t.add_argument("--format", choices=("raw", "histogram"), default="raw")
    t.add_argument("--method", choices=("knot", "lfh"), default="lfh")
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--B", type=int, default=1000, help="Monte Carlo draws")
    t.add_argument("--vn", default="quarter", help="zero, loglog, quarter or a constant (knot method)")
    t.add_argument("--seed", type=int, help="omit to draw entropy from the system")
    t.add_argument("--output", choices=("text", "json"), default="text")
    t.set_defaults(func=cmd_test)

    s = sub.add_parser("simulate", help="estimate rejection rates")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=("table1", "table2", "both"), default="table2")
    src.add_argument("--plan", help="JSON plan file")
    s.add_argument("--N", type=int, help="replications per cell (default 500)")
    s.add_argument("--B", type=int, help="Monte Carlo draws per test (default 1000)")
    s.add_argument("--seed", type=int)
    s.add_argument("--format", choices=("csv", "json", "text"), default="csv")
    s.add_argument("--out", help="output file (default: standard output)")
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
