"""Trace events and their line-delimited JSON encoding."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

from .errors import MalformedTrace


class EventKind(str, enum.Enum):
    STATE_CHANGE = "STATE_CHANGE"
    INSTR = "INSTR"
    ALLOC = "ALLOC"
    RELEASE = "RELEASE"
    AGGREGATE = "AGGREGATE"
    LIFT = "LIFT"
    SERVICE_CALL = "SERVICE_CALL"
    SERVICE_RETURN = "SERVICE_RETURN"
    TRANSFER = "TRANSFER"
    HALT = "HALT"


@dataclass(frozen=True)
class TraceEvent:
    tick: int
    kind: EventKind
    pid: str | None = None
    detail: dict = field(default_factory=dict)

    def to_json(self) -> str:
        # stable key order: tick, kind, pid, detail (detail keys sorted)
        detail = json.dumps(self.detail, sort_keys=True, separators=(",", ":"))
        return '{"tick":%d,"kind":%s,"pid":%s,"detail":%s}' % (
            self.tick,
            json.dumps(self.kind.value),
            json.dumps(self.pid),
            detail,
        )

    @classmethod
    def from_json(cls, line: str) -> TraceEvent:
        try:
            obj = json.loads(line)
            tick, kind = obj["tick"], EventKind(obj["kind"])
            pid, detail = obj.get("pid"), obj.get("detail", {})
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedTrace(f"bad trace record: {exc}") from None
        if not isinstance(tick, int) or not isinstance(detail, dict):
            raise MalformedTrace("bad trace record: tick must be int, detail an object")
        if pid is not None and not isinstance(pid, str):
            raise MalformedTrace("bad trace record: pid must be a string or null")
        return cls(tick, kind, pid, detail)


def dump_trace(events: Iterable[TraceEvent], fp: IO[str]) -> None:
    for ev in events:
        fp.write(ev.to_json())
        fp.write("\n")


def dumps_trace(events: Iterable[TraceEvent]) -> str:
    return "".join(ev.to_json() + "\n" for ev in events)


def iter_trace(lines: Iterable[str]) -> Iterator[TraceEvent]:
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            yield TraceEvent.from_json(line)
        except MalformedTrace as exc:
            raise MalformedTrace(f"line {n}: {exc}") from None


def load_trace(fp: IO[str]) -> list[TraceEvent]:
    return list(iter_trace(fp))
