"""Exhaustive interleaving search for small models.

This is a second, deliberately separate implementation of the execution
semantics: it shares nothing with :mod:`osforma.engine` except the parsed
document. Instead of a FIFO ready queue and a quantum, every step may
run *any* ``min(cpus, runnable)`` runnable processes in *any* order, so
the deterministic engine's schedule is one path through this state
graph. The search is a depth-first walk with visited-state hashing.

Word values are left out of the state. No instruction branches on a
value and every reachable read sees a reset (zero) word, so values can
never change which instruction runs next or whether a process faults.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

from .core import DEFAULT_FUNCS
from .errors import ModelTooLarge
from .parser import ModelDocument
from .program import LOCAL, MAIN, WRITE_FUNC, Opcode

MAX_DEPTH_CALLS = 1024


@dataclass(frozen=True)
class Bounds:
    max_processes: int = 3
    max_resources: int = 4
    max_instructions: int = 20
    max_steps: int = 200


@dataclass
class Reachability:
    deadlock_reachable: bool
    states: int
    exhausted: bool
    census_bounds: dict[str, tuple[int, int]] = field(default_factory=dict)
    witness: list[tuple[str, ...]] | None = None


# process state: (status, pc, held, rr, stack, activity, resume, faulted)
# status: "R" runnable, "B" blocked, "T" terminated
_R, _B, _T = "R", "B", "T"


class _Model:
    def __init__(self, doc: ModelDocument, scratch_size: int) -> None:
        self.cpus = sum(r.cpu for r in doc.resources)
        self.size = {r.id: r.size for r in doc.resources}
        self.funcs = {r.id: r.funcs or DEFAULT_FUNCS for r in doc.resources}
        for lift in doc.lifts:
            self.size[lift.id] = sum(self.size[m] for m in lift.members)
            self.funcs[lift.id] = lift.funcs or DEFAULT_FUNCS
        self.cpu_ids = {r.id for r in doc.resources if r.cpu}
        self.pids = [p.pid for p in doc.processes]
        self.claims = [frozenset(p.requests) - self.cpu_ids for p in doc.processes]
        self.order = [tuple(r for r in p.requests if r not in self.cpu_ids) for p in doc.processes]
        self.programs = [p.program for p in doc.processes]
        self.scratch = scratch_size


class _Work:
    """Mutable copy of one state while a step is applied to it."""

    def __init__(self, m: _Model, procs, queues) -> None:
        self.m = m
        self.procs = [list(p) for p in procs]
        for p in self.procs:
            p[2], p[3], p[4], p[6] = set(p[2]), set(p[3]), list(p[4]), dict(p[6])
        self.queues = {rid: list(q) for rid, q in queues}

    def freeze(self, clear_new: bool):
        procs = tuple(
            (s, pc, frozenset(h), frozenset(rr), tuple(st), act, tuple(sorted(res.items())), f)
            for s, pc, h, rr, st, act, res, f in self.procs
        )
        queues = tuple(
            (rid, tuple((pid, 0 if clear_new else g) for pid, g in q))
            for rid, q in sorted(self.queues.items())
            if q
        )
        return procs, queues

    def holder(self, rid: str) -> int | None:
        for i, p in enumerate(self.procs):
            if rid in p[2]:
                return i
        return None

    def enqueue(self, i: int, rid: str) -> None:
        q = self.queues.setdefault(rid, [])
        pid = self.m.pids[i]
        pos = len(q)
        for k, (other, g) in enumerate(q):
            if g == 1 and other > pid:
                pos = k
                break
        q.insert(pos, (pid, 1))

    def hand_over(self, rid: str) -> None:
        q = self.queues.get(rid)
        if not q:
            return
        pid, _ = q.pop(0)
        j = self.m.pids.index(pid)
        w = self.procs[j]
        w[2].add(rid)
        if w[0] == _B and w[3] <= w[2]:
            w[0] = _R

    def terminate(self, i: int, faulted: bool) -> None:
        p = self.procs[i]
        pid = self.m.pids[i]
        for rid in self.queues:
            self.queues[rid] = [e for e in self.queues[rid] if e[0] != pid]
        p[0] = _T
        p[7] = p[7] or faulted or bool(p[4])
        for rid in sorted(p[2]):
            p[2].discard(rid)
            self.hand_over(rid)

    def can_touch(self, i: int, rid: str, adr: int, func: str | None) -> bool:
        if rid == LOCAL:
            return 1 <= adr <= self.m.scratch
        if rid not in self.procs[i][2]:
            return False
        if not 1 <= adr <= self.m.size[rid]:
            return False
        return func is None or func in self.m.funcs[rid]

    def execute(self, i: int) -> None:
        p = self.procs[i]
        prog = self.m.programs[i]
        pc = p[1]
        ins = prog.instructions[pc]
        op, a = ins.opcode, ins.operands
        p[1] = pc + 1
        ok = True
        if op in (Opcode.SET, Opcode.ADD):
            ok = self.can_touch(i, a[0], a[1], WRITE_FUNC[op])
            if op is Opcode.ADD:
                ok = ok and self.can_touch(i, a[0], a[2], None)
        elif op is Opcode.COPY:
            ok = self.can_touch(i, a[0], a[1], None) and self.can_touch(i, a[2], a[3], "copy")
        elif op is Opcode.REQUEST:
            rid = a[0]
            if rid not in self.m.claims[i]:
                ok = False
            elif rid not in p[2]:
                p[3].add(rid)
                if self.holder(rid) is None:
                    p[2].add(rid)
                else:
                    self.enqueue(i, rid)
                    p[0] = _B
        elif op is Opcode.RELEASE:
            rid = a[0]
            if rid not in p[2]:
                ok = False
            else:
                p[2].discard(rid)
                p[3].discard(rid)
                self.hand_over(rid)
        elif op is Opcode.CALL:
            entry = prog.entry(a[0])
            if entry is None or len(p[4]) >= MAX_DEPTH_CALLS:
                ok = False
            else:
                p[4].append(pc + 1)
                p[1] = entry
        elif op is Opcode.RET:
            if not p[4]:
                ok = False
            else:
                p[1] = p[4].pop()
        elif op is Opcode.TRANSFER:
            target = a[0]
            entry = 0 if target == MAIN else prog.entry(target)
            if target == p[5] or entry is None:
                ok = False
            else:
                p[6][p[5]] = pc + 1
                p[1] = p[6].get(target, entry)
                p[5] = target
        elif op is Opcode.HALT:
            self.terminate(i, False)
            return
        if not ok:
            self.terminate(i, True)
        elif p[0] != _T and p[1] >= len(prog.instructions):
            self.terminate(i, False)


def _initial(m: _Model):
    procs = []
    held_by: dict[str, int] = {}
    queues: dict[str, list] = {}
    for i, prog in enumerate(m.programs):
        later = {ins.operands[0] for ins in prog.instructions if ins.opcode is Opcode.REQUEST}
        rr = {rid for rid in m.claims[i] if rid not in later}
        held = set()
        for rid in m.order[i]:
            if rid not in rr:
                continue
            if rid in held_by:
                q = queues.setdefault(rid, [])
                # every admission happens at tick 0: same-tick waiters go by pid
                q.append((m.pids[i], 1))
                q.sort(key=lambda e: e[0])
            else:
                held_by[rid] = i
                held.add(rid)
        status = _R if rr <= held else _B
        procs.append([status, 0, held, rr, [], MAIN, {}, False])
    w = _Work.__new__(_Work)
    w.m, w.procs, w.queues = m, procs, queues
    return w.freeze(clear_new=False)


def _census(m: _Model, procs) -> tuple[int, int, int]:
    runnable = sum(p[0] == _R for p in procs)
    active = min(m.cpus, runnable)
    return active, runnable - active, sum(p[0] == _B for p in procs)


def brute_force_reachability(
    doc: ModelDocument, bounds: Bounds = Bounds(), *, scratch_size: int = 8
) -> Reachability:
    """Search every scheduler interleaving of ``doc`` for a reachable deadlock."""
    n_res = len(doc.resources) + len(doc.lifts)
    n_ins = sum(len(p.program) for p in doc.processes)
    if (
        len(doc.processes) > bounds.max_processes
        or n_res > bounds.max_resources
        or n_ins > bounds.max_instructions
    ):
        raise ModelTooLarge(
            f"{len(doc.processes)} processes, {n_res} resources, {n_ins} instructions"
            f" exceed {bounds.max_processes}/{bounds.max_resources}/{bounds.max_instructions}"
        )
    m = _Model(doc, scratch_size)
    start = _initial(m)
    depth_of = {start: 0}
    parent: dict = {start: None}
    stack = [start]
    exhausted = True
    deadlock_state = None
    lo = [10**9] * 3
    hi = [0] * 3
    while stack:
        state = stack.pop()
        depth = depth_of[state]
        procs, queues = state
        for k, v in enumerate(_census(m, procs)):
            lo[k], hi[k] = min(lo[k], v), max(hi[k], v)
        runnable = [i for i, p in enumerate(procs) if p[0] == _R]
        if not runnable:
            if deadlock_state is None and any(p[0] == _B for p in procs):
                deadlock_state = state
            continue
        if depth >= bounds.max_steps:
            exhausted = False
            continue
        k = min(m.cpus, len(runnable))
        for chosen in permutations(runnable, k):
            w = _Work(m, procs, queues)
            for i in chosen:
                w.execute(i)
            nxt = w.freeze(clear_new=True)
            if depth + 1 < depth_of.get(nxt, bounds.max_steps + 1):
                depth_of[nxt] = depth + 1
                parent[nxt] = (state, tuple(m.pids[i] for i in chosen))
                stack.append(nxt)
    witness = None
    if deadlock_state is not None:
        witness = []
        s = deadlock_state
        while parent[s] is not None:
            s, choice = parent[s]
            witness.append(choice)
        witness.reverse()
    names = ("ACTIVE", "READY", "BLOCKED")
    return Reachability(
        deadlock_reachable=deadlock_state is not None,
        states=len(depth_of),
        exhausted=exhausted,
        census_bounds={n: (lo[k], hi[k]) for k, n in enumerate(names)},
        witness=witness,
    )
