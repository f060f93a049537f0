"""Deterministic discrete-time executor.

Each :meth:`Engine.step` fills free processors from the ready queue, lets
every ACTIVE process execute exactly one instruction (in processor order),
preempts processes whose quantum is used up, refills processors and
advances the global tick. Instruction effects on resources go through
:func:`~osforma.core.apply_transform`, so FUNC admissibility and the
per-resource tick apply to every write.

Control flow inside a process has two shapes. ``CALL``/``RET`` is the
procedure mechanism: a return point is pushed and the label's single
entry point is entered. ``TRANSFER`` is the coroutine-style mechanism for
ancillary procedures: the current activity's resume point is saved, and
the target continues from wherever it last transferred away (or from its
entry point the first time). Nothing is pushed by a transfer.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

from .core import (
    DEFAULT_FUNCS,
    UNDEF,
    LiftedResource,
    Registry,
    Resource,
    add_words,
    apply_transform,
    copy_in,
    set_word,
)
from .errors import (
    InvalidTarget,
    NotHeld,
    OsformaError,
    ResourceNotClaimed,
    SelfTransfer,
    StackOverflow,
    StackUnderflow,
    UndefinedRead,
)
from .layers import LayerSystem, Relation, build_layer_system
from .parser import ModelDocument
from .program import LOCAL, MAIN, GlobalState, Opcode, Process, make_process
from .states import Allocator
from .trace import EventKind, TraceEvent

log = logging.getLogger(__name__)

DEFAULT_QUANTUM = 5
DEFAULT_SCRATCH = 8
MAX_CALL_DEPTH = 1024

ACTIVE, READY, BLOCKED = GlobalState.ACTIVE, GlobalState.READY, GlobalState.BLOCKED
TERMINATED = GlobalState.TERMINATED


class StopReason(str, enum.Enum):
    COMPLETED = "COMPLETED"
    MAX_STEPS = "MAX_STEPS"
    DEADLOCK = "DEADLOCK"


@dataclass
class RunResult:
    reason: StopReason
    steps: int
    terminated: int
    total: int
    faulted: int
    events: list[TraceEvent]

    @property
    def summary(self) -> str:
        return (
            f"{self.reason.value} steps={self.steps} "
            f"processes={self.terminated}/{self.total}"
        )


class Engine:
    def __init__(
        self,
        doc: ModelDocument,
        *,
        quantum: int | None = None,
        scratch_size: int = DEFAULT_SCRATCH,
    ) -> None:
        self.doc = doc
        self.quantum = quantum or doc.quantum or DEFAULT_QUANTUM
        if self.quantum < 1:
            raise ValueError("quantum must be positive")
        self.scratch_size = scratch_size
        self.tick = 0
        self.events: list[TraceEvent] = []
        self.registry = Registry()
        self.layers = self._build_layers(doc)
        self.allocator = Allocator(self.registry, clock=self._clock, events=self.events)
        for decl in doc.processes:
            make_process(self.registry, decl.pid, decl.requests, decl.program)
        self.admitted = False

    def _clock(self) -> int:
        return self.tick

    def _build_layers(self, doc: ModelDocument) -> LayerSystem:
        names = [l.name for l in doc.layers]
        system = build_layer_system(len(names), names, self.registry)
        system.clock = self._clock
        system.events = self.events
        for r in doc.resources:
            funcs = r.funcs if r.funcs is not None else DEFAULT_FUNCS
            self.registry.make_resource(r.id, r.size, funcs, processor=r.cpu)
            system.assign_resource(r.layer, r.id)
        for lift in doc.lifts:
            source = system.layer_of(lift.members[0])
            system.register_f(source, lift.via)
            funcs = lift.funcs if lift.funcs is not None else DEFAULT_FUNCS
            system.lift_resource(source, lift.members, lift.id, lift.via, funcs)
        return system

    @property
    def processes(self) -> dict[str, Process]:
        return self.registry.processes

    # --- scheduling ----------------------------------------------------

    def admit_all(self) -> None:
        """Admit every process in declaration order."""
        for p in self.processes.values():
            self.allocator.admit(p)
        self.admitted = True

    def _fill_processors(self) -> None:
        while self.allocator.dispatch() is not None:
            pass

    def deadlocked(self) -> bool:
        states = [p.global_state for p in self.processes.values()]
        return BLOCKED in states and ACTIVE not in states and READY not in states

    def finished(self) -> bool:
        return all(p.global_state is TERMINATED for p in self.processes.values())

    def step(self) -> list[TraceEvent]:
        """Advance one tick; return the events it produced."""
        if not self.admitted:
            self.admit_all()
        if self.finished():
            raise OsformaError("every process has terminated")
        start = len(self.events)
        self._fill_processors()
        pool = self.allocator.pool
        running = [pool.holder[c] for c in pool.cpu_ids if pool.holder[c] is not None]
        for pid in running:
            p = self.processes[pid]
            if p.global_state is ACTIVE:
                self._execute(p)
        for pid in running:
            p = self.processes[pid]
            if p.global_state is ACTIVE and p.slice_count >= self.quantum:
                self.allocator.preempt(p)
        self._fill_processors()
        self.tick += 1
        return self.events[start:]

    def run(self, max_steps: int) -> RunResult:
        if not self.admitted:
            self.admit_all()
        steps = 0
        while True:
            if self.finished():
                reason = StopReason.COMPLETED
            elif self.deadlocked():
                reason = StopReason.DEADLOCK
            elif steps >= max_steps:
                reason = StopReason.MAX_STEPS
            else:
                self.step()
                steps += 1
                continue
            break
        procs = list(self.processes.values())
        terminated = sum(p.global_state is TERMINATED for p in procs)
        faulted = sum(p.faulted for p in procs)
        self.events.append(
            TraceEvent(
                self.tick,
                EventKind.HALT,
                None,
                {
                    "reason": reason.value,
                    "steps": steps,
                    "terminated": terminated,
                    "total": len(procs),
                    "faulted": faulted,
                },
            )
        )
        log.debug("run stopped: %s after %d steps", reason.value, steps)
        return RunResult(reason, steps, terminated, len(procs), faulted, self.events)

    # --- instruction execution ----------------------------------------

    def _resource(self, p: Process, rid: str) -> Resource:
        if rid == LOCAL:
            scratch = p.scratch.get(p.activity)
            if scratch is None:
                scratch = Resource(f"{p.pid}:{p.activity}", self.scratch_size)
                scratch.load((0,) * self.scratch_size)
                p.scratch[p.activity] = scratch
            return scratch
        if rid not in p.claims:
            raise ResourceNotClaimed(f"{p.pid} never claimed {rid!r}")
        if rid not in p.r_alloc:
            raise NotHeld(f"{p.pid} does not hold {rid!r}")
        return self.registry.resource(rid)

    def _read(self, p: Process, rid: str, adr: int, reads: list, touched: list):
        value = self._resource(p, rid).read(adr)
        if value is UNDEF:
            raise UndefinedRead(f"{p.pid} read undefined {rid}[{adr}]")
        reads.append([rid, adr, value])
        touched.append((rid, adr))
        return value

    def _execute(self, p: Process) -> None:
        pc = p.pc
        instr = p.program[pc]
        op, args = instr.opcode, instr.operands
        mark = len(self.events)
        reads: list = []
        writes: list = []
        touched: list[tuple[str, int]] = []
        halt = False
        try:
            p.pc = pc + 1
            if op is Opcode.SET:
                rid, adr, value = args
                apply_transform(self._resource(p, rid), set_word(adr, value))
                writes.append([rid, adr, value])
                touched.append((rid, adr))
            elif op is Opcode.ADD:
                rid, dst, src = args
                self._read(p, rid, dst, reads, touched)
                self._read(p, rid, src, reads, touched)
                res = self._resource(p, rid)
                apply_transform(res, add_words(dst, src))
                writes.append([rid, dst, res.read(dst)])
            elif op is Opcode.COPY:
                src, sadr, dst, dadr = args
                value = self._read(p, src, sadr, reads, touched)
                apply_transform(self._resource(p, dst), copy_in(dadr, value))
                writes.append([dst, dadr, value])
                touched.append((dst, dadr))
            elif op is Opcode.REQUEST:
                self.allocator.request(p, args[0])
            elif op is Opcode.RELEASE:
                self.allocator.release(p, args[0])
            elif op is Opcode.CALL:
                entry = p.program.entry(args[0])
                if entry is None:
                    raise InvalidTarget(f"no label {args[0]!r}")
                if len(p.call_stack) >= MAX_CALL_DEPTH:
                    raise StackOverflow(f"{p.pid}: call depth exceeds {MAX_CALL_DEPTH}")
                p.call_stack.append(pc + 1)
                p.pc = entry
            elif op is Opcode.RET:
                if not p.call_stack:
                    raise StackUnderflow(f"{p.pid}: RET with an empty call stack")
                p.pc = p.call_stack.pop()
            elif op is Opcode.TRANSFER:
                self._transfer(p, args[0], pc)
            elif op is Opcode.HALT:
                halt = True
        except OsformaError as exc:
            del self.events[mark:]
            self._terminate(p, fault=exc, pc=pc)
            return
        p.executed_count += 1
        p.slice_count += 1
        detail = {
            "opcode": op.value,
            "args": list(args),
            "pc": pc,
            "next_pc": p.pc,
            "activity": p.activity,
            "executed": p.executed_count,
            "stack_depth": len(p.call_stack),
            "reads": reads,
            "writes": writes,
        }
        self.events.insert(mark, TraceEvent(self.tick, EventKind.INSTR, p.pid, detail))
        for rid, adr in touched:
            self._service_calls(p, rid, adr)
        if halt:
            self._terminate(p, reason="HALT", pc=pc)
        elif p.global_state is not TERMINATED and p.pc >= len(p.program):
            self._terminate(p, reason="END", pc=pc)

    def _transfer(self, p: Process, target: str, pc: int) -> None:
        if target == p.activity:
            raise SelfTransfer(f"{p.pid}: activity {target!r} transfers to itself")
        entry = 0 if target == MAIN else p.program.entry(target)
        if entry is None:
            raise InvalidTarget(f"no ancillary procedure {target!r}")
        p.resume_points[p.activity] = pc + 1
        resume = p.resume_points.get(target, entry)
        self.events.append(
            TraceEvent(
                self.tick,
                EventKind.TRANSFER,
                p.pid,
                {
                    "from": p.activity,
                    "to": target,
                    "saved_pc": pc + 1,
                    "resume_pc": resume,
                    "first": target not in p.resume_points,
                },
            )
        )
        p.activity = target
        p.pc = resume

    def _service_calls(self, p: Process, rid: str, adr: int) -> None:
        """Emit the USES chain for an access that lands in lower layers."""
        if rid == LOCAL:
            return
        res = self.registry.resource(rid)
        opened = []
        while isinstance(res, LiftedResource):
            member, madr = res.locate(adr)
            pair = (self.layers.layer_of(res.id), self.layers.layer_of(member.id))
            detail = {
                "caller": pair[0],
                "callee": pair[1],
                "relation": Relation.USES.value,
                "resource": res.id,
                "via": member.id,
                "adr": madr,
            }
            self.events.append(TraceEvent(self.tick, EventKind.SERVICE_CALL, p.pid, detail))
            opened.append(detail)
            res, adr = member, madr
        for detail in reversed(opened):
            self.events.append(TraceEvent(self.tick, EventKind.SERVICE_RETURN, p.pid, detail))

    def _terminate(
        self,
        p: Process,
        *,
        reason: str = "HALT",
        pc: int,
        fault: OsformaError | None = None,
    ) -> None:
        detail: dict = {"pc": pc, "executed": p.executed_count}
        if fault is not None:
            p.faulted = True
            p.fault = type(fault).__name__
            detail.update(reason="FAULT", error=p.fault, message=str(fault))
        else:
            detail["reason"] = reason
            if p.call_stack:
                # terminating inside a procedure leaves the stack unbalanced
                p.faulted = True
                p.fault = "StackImbalance"
                detail["error"] = p.fault
        detail["faulted"] = p.faulted
        self.events.append(TraceEvent(self.tick, EventKind.HALT, p.pid, detail))
        self.allocator.terminate(p)
        self.layers.expire_owned_by(p.pid)


def resolve_max_steps(doc: ModelDocument, max_steps: int | None) -> int:
    if max_steps is not None:
        return max_steps
    return doc.max_steps if doc.max_steps is not None else 10_000


def run(
    doc: ModelDocument,
    max_steps: int | None = None,
    *,
    quantum: int | None = None,
) -> list[TraceEvent]:
    """Run ``doc`` to completion, deadlock or the step budget; return the trace."""
    return Engine(doc, quantum=quantum).run(resolve_max_steps(doc, max_steps)).events
