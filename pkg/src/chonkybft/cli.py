"""Command-line front end.

Exit codes depend on verdicts only:
  0  every monitor and expectation passed (replay: byte-identical)
  1  a monitor or expectation failed (replay: divergence)
  2  the input could not be parsed (bad JSON, schema violation, trace
     version mismatch)
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .bench import bench
from .explore import explore
from .messages import Config
from .replay import replay
from .scenario import (
    EXIT_FAIL,
    EXIT_OK,
    EXIT_PARSE,
    TRACE_DIR_ENV,
    ParseError,
    Scenario,
    execute,
    save_trace,
    trace_dir,
)
from .trace import TraceError


def _seeds(text: str) -> range:
    """``N`` means 0..N-1; ``A:B`` means A..B-1."""
    if ":" in text:
        lo, hi = text.split(":", 1)
        return range(int(lo), int(hi))
    return range(int(text))


def cmd_run(args) -> int:
    try:
        scenario = Scenario.load(args.file)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    outcome = execute(scenario, args.seed)
    for v in outcome.report.verdicts:
        if v.skipped:
            status = "SKIP"
        else:
            status = "ok" if v.ok else "FAIL"
        line = f"{status:4} {v.name}"
        if not v.ok:
            line += f" @ record {v.index}: {v.detail}"
        print(line)
    for problem in outcome.failed_expectations:
        print(f"FAIL expect: {problem}")
    chains = outcome.trace.final.get("chains", {})
    for node in sorted(chains, key=int):
        print(f"replica {node}: {chains[node]}")
    if not outcome.ok or TRACE_DIR_ENV in os.environ:
        path = save_trace(outcome.trace, scenario.name)
        print(f"trace: {path}")
    print("PASS" if outcome.ok else "FAIL")
    return outcome.exit_code


def cmd_explore(args) -> int:
    try:
        Config(args.n, args.f, unsafe=args.unsafe_config)
    except ValueError as exc:
        print(f"bad configuration: {exc}", file=sys.stderr)
        return EXIT_PARSE
    summary = explore(
        args.n,
        args.f,
        _seeds(args.seeds),
        steps=args.steps,
        unsafe=args.unsafe_config,
        guided=args.guided,
        workers=args.workers,
        out_dir=Path(args.out) if args.out else trace_dir(),
        stop_after=args.stop_after,
    )
    print(json.dumps(summary.to_dict(), indent=2))
    return EXIT_OK if summary.ok else EXIT_FAIL


def cmd_replay(args) -> int:
    try:
        result = replay(args.file)
    except (OSError, TraceError) as exc:
        print(f"cannot replay: {exc}", file=sys.stderr)
        return EXIT_PARSE
    if result.identical:
        n = len(result.stored.records)
        print(f"identical: {n} records, seed {result.stored.seed}")
        return EXIT_OK
    print(result.divergence.describe())
    return EXIT_FAIL


def cmd_bench(args) -> int:
    result = bench(args.n, args.views, f=args.f)
    out = result.to_dict()
    print(json.dumps(out, indent=2))
    return EXIT_OK if out["one_proposal_per_view"] and out["quorum_votes_per_view"] else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="chonkybft",
        description="Deterministic simulator and checker for ChonkyBFT.",
        epilog=f"Traces go to ${TRACE_DIR_ENV} (default ./traces).",
    )
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario file and check it")
    run.add_argument("file")
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.set_defaults(func=cmd_run)

    ex = sub.add_parser("explore", help="randomized seeded exploration")
    ex.add_argument("--n", type=int, required=True)
    ex.add_argument("--f", type=int, required=True)
    ex.add_argument("--seeds", default="1000", help="N or START:END")
    ex.add_argument("--steps", type=int, default=30, help="handler steps per replica")
    ex.add_argument("--unsafe-config", action="store_true", help="allow n < 5f + 1")
    ex.add_argument("--guided", action="store_true", help="target quorum intersection")
    ex.add_argument("--workers", type=int, default=1)
    ex.add_argument("--stop-after", type=int, default=None, help="stop after K violations")
    ex.add_argument("--out", default=None, help="directory for violation traces")
    ex.set_defaults(func=cmd_explore)

    rp = sub.add_parser("replay", help="re-run a trace and compare bytes")
    rp.add_argument("file")
    rp.set_defaults(func=cmd_replay)

    be = sub.add_parser("bench", help="failure-free throughput run")
    be.add_argument("--n", type=int, required=True)
    be.add_argument("--views", type=int, required=True)
    be.add_argument("--f", type=int, default=None)
    be.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
