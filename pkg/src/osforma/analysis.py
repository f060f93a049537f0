"""Deadlock detection, state census and trace replay."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Protocol

from .errors import MalformedTrace
from .program import GlobalState
from .trace import EventKind, TraceEvent

log = logging.getLogger(__name__)

CYCLE_LIMIT = 10_000


class ProcessLike(Protocol):
    pid: str
    global_state: GlobalState
    r_alloc: set[str] | frozenset[str]
    r_req: set[str] | frozenset[str]
    cpu: str


@dataclass
class ProcessSnapshot:
    pid: str
    global_state: GlobalState = GlobalState.CREATED
    r_alloc: set[str] = field(default_factory=set)
    r_req: set[str] = field(default_factory=set)
    cpu: str = ""


@dataclass
class WaitForGraph:
    """``p -> q`` when p waits for a resource that q holds."""

    nodes: list[str]
    edges: dict[str, set[str]]

    @classmethod
    def from_processes(cls, procs: Iterable[ProcessLike]) -> WaitForGraph:
        procs = list(procs)
        holder = {rid: p.pid for p in procs for rid in p.r_alloc}
        edges: dict[str, set[str]] = {p.pid: set() for p in procs}
        for p in procs:
            if p.global_state is not GlobalState.BLOCKED:
                continue
            for rid in set(p.r_req) - set(p.r_alloc) - {p.cpu}:
                q = holder.get(rid)
                if q is not None and q != p.pid:
                    edges[p.pid].add(q)
        return cls(sorted(edges), edges)

    def cycles(self, limit: int = CYCLE_LIMIT) -> tuple[list[list[str]], bool]:
        """Elementary cycles, each rotated to start at its smallest pid, sorted.

        Every cycle is found exactly once by rooting it at its smallest
        node and only walking through larger nodes. Returns the cycles and
        whether the enumeration was cut off at ``limit``.
        """
        rank = {n: i for i, n in enumerate(self.nodes)}
        found: list[list[str]] = []
        for root in self.nodes:
            stack = [(root, iter(sorted(self.edges[root])))]
            path = [root]
            on_path = {root}
            while stack:
                node, it = stack[-1]
                nxt = next(it, None)
                if nxt is None:
                    stack.pop()
                    on_path.discard(path.pop())
                    continue
                if nxt == root:
                    found.append(list(path))
                    if len(found) >= limit:
                        log.warning("cycle enumeration truncated at %d", limit)
                        return sorted(found), True
                elif rank[nxt] > rank[root] and nxt not in on_path:
                    path.append(nxt)
                    on_path.add(nxt)
                    stack.append((nxt, iter(sorted(self.edges[nxt]))))
        return sorted(found), False


def detect_deadlock(
    snapshot: Iterable[ProcessLike], limit: int = CYCLE_LIMIT
) -> list[list[str]]:
    """All wait-for cycles among the given processes; empty means no deadlock."""
    cycles, _ = WaitForGraph.from_processes(snapshot).cycles(limit)
    return cycles


def replay_snapshot(trace: Iterable[TraceEvent]) -> list[ProcessSnapshot]:
    """Rebuild every process's state, Ra and Rr as of the end of ``trace``."""
    procs: dict[str, ProcessSnapshot] = {}
    for ev in trace:
        if ev.pid is None:
            continue
        p = procs.setdefault(ev.pid, ProcessSnapshot(ev.pid))
        d = ev.detail
        if ev.kind is EventKind.STATE_CHANGE:
            try:
                p.global_state = GlobalState(d["to"])
                p.r_alloc = set(d["ra"])
                p.r_req = set(d["rr"])
                p.cpu = d["cpu"]
            except (KeyError, ValueError, TypeError) as exc:
                raise MalformedTrace(f"bad STATE_CHANGE detail: {exc}") from None
        elif ev.kind is EventKind.ALLOC:
            p.r_alloc.add(d.get("resource"))
        elif ev.kind is EventKind.RELEASE:
            rid = d.get("resource")
            p.r_alloc.discard(rid)
            if rid != p.cpu:
                p.r_req.discard(rid)
        elif ev.kind is EventKind.INSTR and d.get("opcode") == "REQUEST":
            p.r_req.update(d.get("args", [])[:1])
    return sorted(procs.values(), key=lambda p: p.pid)


@dataclass(frozen=True)
class CensusRow:
    tick: int
    active: int
    ready: int
    blocked: int

    @property
    def live(self) -> int:
        return self.active + self.ready + self.blocked

    def to_record(self) -> dict:
        return {
            "kind": "census",
            "tick": self.tick,
            "active": self.active,
            "ready": self.ready,
            "blocked": self.blocked,
        }


def state_census(trace: Iterable[TraceEvent]) -> list[CensusRow]:
    """Per-tick ACTIVE/READY/BLOCKED counts, as they stand at the end of each tick."""
    states: dict[str, GlobalState] = {}
    rows: list[CensusRow] = []
    current: int | None = None

    def close(tick: int) -> None:
        vals = list(states.values())
        rows.append(
            CensusRow(
                tick,
                vals.count(GlobalState.ACTIVE),
                vals.count(GlobalState.READY),
                vals.count(GlobalState.BLOCKED),
            )
        )

    for ev in trace:
        if current is not None and ev.tick < current:
            raise MalformedTrace(f"tick {ev.tick} after tick {current}")
        if current is not None:
            for t in range(current, ev.tick):
                close(t)
        current = ev.tick
        if ev.kind is EventKind.STATE_CHANGE:
            try:
                states[ev.pid] = GlobalState(ev.detail["to"])
            except (KeyError, ValueError, TypeError) as exc:
                raise MalformedTrace(f"bad STATE_CHANGE detail: {exc}") from None
    if current is not None:
        close(current)
    return rows
