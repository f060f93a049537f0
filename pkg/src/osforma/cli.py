"""``osforma`` command line.

Exit codes: 0 ok, 1 invalid model, 2 runtime fault, 3 deadlock, 4 usage.
Diagnostics go to stderr and data to stdout.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Sequence

from .analysis import CYCLE_LIMIT, WaitForGraph, replay_snapshot, state_census
from .engine import Engine, StopReason, resolve_max_steps
from .errors import MalformedTrace, OsformaError
from .layers import validate_service_hierarchy
from .parser import ModelDocument, check_model
from .trace import dump_trace, load_trace

EXIT_OK, EXIT_INVALID, EXIT_FAULT, EXIT_DEADLOCK, EXIT_USAGE = range(5)
MAX_ENUMERATE = 12
QUANTUM_ENV = "OSFORMA_QUANTUM"


class UsageError(Exception):
    pass


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_bytes(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from None


def _load_model(path: str) -> ModelDocument | None:
    doc, errors = check_model(_read_bytes(path))
    for e in errors:
        print(e.format(path), file=sys.stderr)
    return doc


def _emit(record: dict) -> None:
    print(json.dumps(record, sort_keys=True, separators=(",", ":")))


def _quantum(flag: int | None) -> int | None:
    if flag is not None:
        value, source = flag, "--quantum"
    elif os.environ.get(QUANTUM_ENV):
        raw = os.environ[QUANTUM_ENV]
        try:
            value = int(raw)
        except ValueError:
            raise UsageError(f"{QUANTUM_ENV}={raw!r} is not an integer") from None
        source = QUANTUM_ENV
    else:
        return None
    if value < 1:
        raise UsageError(f"{source} must be positive, got {value}")
    return value


def cmd_validate(args: argparse.Namespace) -> int:
    return EXIT_OK if _load_model(args.path) is not None else EXIT_INVALID


def cmd_run(args: argparse.Namespace) -> int:
    if args.steps is not None and args.steps < 0:
        raise UsageError("--steps must be non-negative")
    quantum = _quantum(args.quantum)
    doc = _load_model(args.path)
    if doc is None:
        return EXIT_INVALID
    try:
        engine = Engine(doc, quantum=quantum)
    except OsformaError as exc:
        print(f"{args.path}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    result = engine.run(resolve_max_steps(doc, args.steps))
    if args.trace:
        try:
            with open(args.trace, "w", encoding="utf-8", newline="\n") as fp:
                dump_trace(result.events, fp)
        except OSError as exc:
            raise UsageError(f"cannot write {args.trace}: {exc.strerror or exc}") from None
    print(result.summary)
    for p in engine.processes.values():
        if p.faulted:
            print(f"{args.path}: process {p.pid} faulted: {p.fault}", file=sys.stderr)
    if result.reason is StopReason.DEADLOCK:
        return EXIT_DEADLOCK
    return EXIT_FAULT if result.faulted else EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    text = _read_bytes(args.trace).decode("utf-8", errors="replace")
    try:
        events = load_trace(text.splitlines())
        if args.kind == "census":
            for row in state_census(events):
                _emit(row.to_record())
            return EXIT_OK
        if args.kind == "hierarchy":
            for v in validate_service_hierarchy(events):
                _emit(v.to_record())
            return EXIT_OK
        graph = WaitForGraph.from_processes(replay_snapshot(events))
    except MalformedTrace as exc:
        print(f"{args.trace}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    cycles, truncated = graph.cycles(CYCLE_LIMIT)
    for cycle in cycles:
        _emit({"kind": "deadlock", "cycle": cycle})
    if truncated:
        print(f"{args.trace}: cycle enumeration stopped at {CYCLE_LIMIT}", file=sys.stderr)
        _emit({"kind": "deadlock", "truncated": True, "limit": CYCLE_LIMIT})
    return EXIT_DEADLOCK if cycles else EXIT_OK


def cmd_aggregations(args: argparse.Namespace) -> int:
    doc = _load_model(args.path)
    if doc is None:
        return EXIT_INVALID
    try:
        layers = Engine(doc).layers
    except OsformaError as exc:
        print(f"{args.path}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        n = len(layers.layer(args.layer).resource_ids)
    except OsformaError as exc:
        raise UsageError(str(exc)) from None
    if args.enumerate and n > MAX_ENUMERATE:
        raise UsageError(f"--enumerate needs at most {MAX_ENUMERATE} resources, layer has {n}")
    print(layers.count_candidate_aggregations(args.layer))
    if args.enumerate:
        for subset in layers.enumerate_candidate_aggregations(args.layer):
            print(",".join(subset))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="osforma", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    p = sub.add_parser("validate", help="parse and check a model file")
    p.add_argument("path")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="simulate a model")
    p.add_argument("path")
    p.add_argument("--steps", type=int, help="step budget (default: model max_steps or 10000)")
    p.add_argument("--trace", help="write the JSONL trace here")
    p.add_argument("--quantum", type=int, help=f"time slice; overrides {QUANTUM_ENV}")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="analyze a JSONL trace")
    p.add_argument("trace")
    p.add_argument("--kind", required=True, choices=("deadlock", "census", "hierarchy"))
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("aggregations", help="count candidate aggregations of a layer")
    p.add_argument("path")
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--enumerate", action="store_true", help="list every subset")
    p.set_defaults(func=cmd_aggregations)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"osforma: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
