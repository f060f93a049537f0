"""Global process states and the allocator that moves processes between them.

The three live states are read off cardinalities of the allocated set
``Ra`` and the requested set ``Rr``:

* ACTIVE  when ``|Ra| = |Rr|``
* READY   when ``|Ra| = |Rr| - 1`` and the one missing resource is the processor
* BLOCKED when ``|Ra| < |Rr| - 1`` (or one non-processor resource is missing)

The allocator hands out the processor last and takes it back on any
blocking request, so a process never holds a CPU while waiting on
something else and the formulas above hold for every engine state.
"""

from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable

from .core import Registry
from .errors import (
    InvalidRelease,
    NotActive,
    NotHeld,
    NotLive,
    ProcessorClaimError,
    ResourceNotClaimed,
)
from .program import GlobalState, Process
from .trace import EventKind, TraceEvent

ACTIVE, READY, BLOCKED = GlobalState.ACTIVE, GlobalState.READY, GlobalState.BLOCKED


def classify_state(p: Process) -> GlobalState:
    """Classify a live process purely from ``|Ra|``, ``|Rr|`` and its processor slot."""
    if not p.live:
        raise NotLive(f"{p.pid} is {p.global_state.value}")
    n_alloc, n_req = len(p.r_alloc), len(p.r_req)
    if n_alloc == n_req:
        return ACTIVE
    if n_alloc == n_req - 1 and p.r_req - p.r_alloc == {p.cpu}:
        return READY
    return BLOCKED


class ProcessorPool:
    """The processors of one model and who holds each."""

    def __init__(self, cpu_ids: Iterable[str]) -> None:
        self.cpu_ids: tuple[str, ...] = tuple(sorted(cpu_ids))
        self.holder: dict[str, str | None] = dict.fromkeys(self.cpu_ids)

    @property
    def capacity(self) -> int:
        return len(self.cpu_ids)

    def free(self) -> list[str]:
        return [c for c in self.cpu_ids if self.holder[c] is None]


@dataclass(frozen=True, order=True)
class AllocationRequest:
    tick: int
    pid: str
    resource_id: str


class Allocator:
    """Owns who-holds-what, the ready queue and the per-resource wait queues.

    Every transition appends :class:`TraceEvent` records to ``events``;
    ``clock`` supplies the current global tick.
    """

    def __init__(
        self,
        registry: Registry,
        *,
        clock: Callable[[], int] = lambda: 0,
        events: list[TraceEvent] | None = None,
    ) -> None:
        self.registry = registry
        self.clock = clock
        self.events: list[TraceEvent] = [] if events is None else events
        self.pool = ProcessorPool(registry.processor_ids)
        self.holders: dict[str, str] = {}
        self.ready_queue: deque[str] = deque()
        self.wait_queues: dict[str, list[AllocationRequest]] = {}

    @property
    def processes(self) -> dict[str, Process]:
        return self.registry.processes

    def _emit(self, kind: EventKind, pid: str | None, **detail) -> None:
        self.events.append(TraceEvent(self.clock(), kind, pid, detail))

    def _set_state(self, p: Process, new: GlobalState) -> None:
        old = p.global_state
        p.global_state = new
        self._emit(
            EventKind.STATE_CHANGE,
            p.pid,
            cpu=p.cpu,
            ra=sorted(p.r_alloc),
            rr=sorted(p.r_req),
            **{"from": old.value, "to": new.value},
        )

    def _grant(self, p: Process, rid: str) -> None:
        r = self.registry.resource(rid)
        self.holders[rid] = p.pid
        p.r_alloc.add(rid)
        # security reset: the new holder never sees the previous holder's data
        r.load(p.w_init.get(rid, (0,) * r.size))
        self._emit(EventKind.ALLOC, p.pid, resource=rid, reset=True)

    def _enqueue_wait(self, p: Process, rid: str) -> None:
        queue = self.wait_queues.setdefault(rid, [])
        bisect.insort(queue, AllocationRequest(self.clock(), p.pid, rid))

    def pending(self, pid: str) -> list[AllocationRequest]:
        return [
            req for q in self.wait_queues.values() for req in q if req.pid == pid
        ]

    def _make_ready(self, p: Process) -> None:
        self._set_state(p, READY)
        self.ready_queue.append(p.pid)

    # --- transitions -------------------------------------------------

    def admit(self, p: Process) -> Process:
        """CREATED -> READY, or BLOCKED if a non-processor claim is held elsewhere."""
        if p.global_state is not GlobalState.CREATED:
            raise NotLive(f"{p.pid} is {p.global_state.value}, expected CREATED")
        blocked = False
        for rid in p.claims:
            if rid not in p.r_req or rid == p.cpu:
                continue
            if rid in self.holders:
                self._enqueue_wait(p, rid)
                blocked = True
            else:
                self._grant(p, rid)
        if blocked:
            self._set_state(p, BLOCKED)
        else:
            self._make_ready(p)
        return p

    def dispatch(self) -> str | None:
        """Give the lowest free processor to the front of the ready queue."""
        free = self.pool.free()
        if not free or not self.ready_queue:
            return None
        p = self.processes[self.ready_queue.popleft()]
        cpu = free[0]
        # processors are interchangeable: rebind the slot before granting
        p.r_req.discard(p.cpu)
        p.cpu = cpu
        p.r_req.add(cpu)
        self.pool.holder[cpu] = p.pid
        self.holders[cpu] = p.pid
        p.r_alloc.add(cpu)
        self._emit(EventKind.ALLOC, p.pid, resource=cpu, reset=False)
        p.slice_count = 0
        self._set_state(p, ACTIVE)
        return p.pid

    def _revoke_cpu(self, p: Process) -> None:
        cpu = p.cpu
        if cpu in p.r_alloc:
            p.r_alloc.discard(cpu)
            self.pool.holder[cpu] = None
            del self.holders[cpu]
            self._emit(EventKind.RELEASE, p.pid, resource=cpu)

    def request(self, p: Process, rid: str) -> bool:
        """Claim ``rid`` for an ACTIVE process; True if granted without blocking."""
        if rid not in p.claims:
            raise ResourceNotClaimed(f"{p.pid} never claimed {rid!r}")
        if self.registry.resource(rid).processor:
            raise ProcessorClaimError(f"processor {rid!r} moves only by dispatch")
        if rid in p.r_alloc:
            return True
        p.r_req.add(rid)
        if rid in self.holders:
            self.block_on_request(p, rid)
            return False
        self._grant(p, rid)
        return True

    def block_on_request(self, p: Process, rid: str) -> Process:
        """ACTIVE -> BLOCKED on a busy resource; the processor goes back to the pool."""
        if p.global_state is not ACTIVE:
            raise NotActive(f"{p.pid} is {p.global_state.value}")
        if rid not in p.r_req:
            raise ResourceNotClaimed(f"{p.pid} does not request {rid!r}")
        self._revoke_cpu(p)
        self._enqueue_wait(p, rid)
        self._set_state(p, BLOCKED)
        return p

    def release(self, p: Process, rid: str) -> Process:
        """Return a non-processor resource and hand it to its longest waiter."""
        if rid not in p.r_alloc:
            raise NotHeld(f"{p.pid} does not hold {rid!r}")
        if self.registry.resource(rid).processor:
            raise InvalidRelease(f"processor {rid!r} moves only by dispatch")
        p.r_alloc.discard(rid)
        p.r_req.discard(rid)
        del self.holders[rid]
        self._emit(EventKind.RELEASE, p.pid, resource=rid)
        self._hand_over(rid)
        return p

    def _hand_over(self, rid: str) -> None:
        queue = self.wait_queues.get(rid)
        if not queue:
            return
        req = queue.pop(0)
        if not queue:
            del self.wait_queues[rid]
        waiter = self.processes[req.pid]
        self._grant(waiter, rid)
        if waiter.global_state is BLOCKED and waiter.missing == {waiter.cpu}:
            self._make_ready(waiter)

    def preempt(self, p: Process) -> Process:
        """ACTIVE -> READY at the back of the ready queue."""
        if p.global_state is not ACTIVE:
            raise NotActive(f"{p.pid} is {p.global_state.value}")
        self._revoke_cpu(p)
        self._make_ready(p)
        return p

    def terminate(self, p: Process) -> Process:
        """Drop every holding and pending request; waiters are served FIFO."""
        if p.global_state is READY:
            self.ready_queue.remove(p.pid)
        for rid, queue in list(self.wait_queues.items()):
            queue[:] = [req for req in queue if req.pid != p.pid]
            if not queue:
                del self.wait_queues[rid]
        self._revoke_cpu(p)
        for rid in sorted(p.r_alloc):
            p.r_alloc.discard(rid)
            del self.holders[rid]
            self._emit(EventKind.RELEASE, p.pid, resource=rid)
            self._hand_over(rid)
        self._set_state(p, GlobalState.TERMINATED)
        return p
