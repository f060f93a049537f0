"""Instructions, programs and the process tuple ``(id, Ra, Rr, F, Wa(Ra))``."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .core import Registry
from .errors import DuplicateId, EmptyProgram, ProcessorClaimError

LOCAL = "local"
"""Operand naming the current activity's private scratch resource."""

MAIN = "main"
"""Activity id of a program's implicit top-level activity."""


class Opcode(str, enum.Enum):
    NOP = "NOP"
    SET = "SET"
    ADD = "ADD"
    COPY = "COPY"
    REQUEST = "REQUEST"
    RELEASE = "RELEASE"
    CALL = "CALL"
    RET = "RET"
    TRANSFER = "TRANSFER"
    HALT = "HALT"


# operand kinds per opcode: r = resource id, a = address, w = word, l = label
SIGNATURES: dict[Opcode, str] = {
    Opcode.NOP: "",
    Opcode.SET: "raw",
    Opcode.ADD: "raa",
    Opcode.COPY: "rara",
    Opcode.REQUEST: "r",
    Opcode.RELEASE: "r",
    Opcode.CALL: "l",
    Opcode.RET: "",
    Opcode.TRANSFER: "l",
    Opcode.HALT: "",
}

# transform each writing opcode needs admitted on its target resource
WRITE_FUNC = {Opcode.SET: "set", Opcode.ADD: "add", Opcode.COPY: "copy"}


@dataclass(frozen=True)
class Instruction:
    opcode: Opcode
    operands: tuple = ()

    def __post_init__(self) -> None:
        sig = SIGNATURES[self.opcode]
        if len(self.operands) != len(sig):
            raise ValueError(f"{self.opcode.value} takes {len(sig)} operands")

    def __str__(self) -> str:
        return " ".join([self.opcode.value, *map(str, self.operands)])

    @property
    def resources(self) -> tuple[str, ...]:
        sig = SIGNATURES[self.opcode]
        return tuple(op for op, k in zip(self.operands, sig) if k == "r")


def parse_instruction(text: str) -> Instruction:
    """Parse one instruction in its textual form, e.g. ``SET mem 2 7``."""
    parts = text.split()
    if not parts:
        raise ValueError("empty instruction")
    try:
        opcode = Opcode(parts[0].upper())
    except ValueError:
        raise ValueError(f"unknown opcode {parts[0]!r}") from None
    sig = SIGNATURES[opcode]
    if len(parts) - 1 != len(sig):
        raise ValueError(f"{opcode.value} takes {len(sig)} operands, got {len(parts) - 1}")
    ops: list = []
    for tok, kind in zip(parts[1:], sig):
        ops.append(int(tok) if kind in "aw" else tok)
    return Instruction(opcode, tuple(ops))


@dataclass(frozen=True)
class Program:
    """Instruction sequence ``F`` plus label entry points.

    ``labels`` keeps declaration order as ``(name, index)`` pairs; the
    label's single entry point is the instruction at ``index``.
    """

    instructions: tuple[Instruction, ...]
    labels: tuple[tuple[str, int], ...] = ()

    def __len__(self) -> int:
        return len(self.instructions)

    def __getitem__(self, pc: int) -> Instruction:
        return self.instructions[pc]

    def entry(self, label: str) -> int | None:
        for name, index in self.labels:
            if name == label:
                return index
        return None

    @property
    def requested_later(self) -> frozenset[str]:
        """Resources acquired by an explicit REQUEST somewhere in the program."""
        return frozenset(
            i.operands[0] for i in self.instructions if i.opcode is Opcode.REQUEST
        )

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> Program:
        instrs: list[Instruction] = []
        labels: list[tuple[str, int]] = []
        for raw in lines:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.endswith(":"):
                labels.append((line[:-1], len(instrs)))
            else:
                instrs.append(parse_instruction(line))
        return cls(tuple(instrs), tuple(labels))


class GlobalState(str, enum.Enum):
    CREATED = "CREATED"
    READY = "READY"
    ACTIVE = "ACTIVE"
    BLOCKED = "BLOCKED"
    TERMINATED = "TERMINATED"


LIVE_STATES = frozenset({GlobalState.READY, GlobalState.ACTIVE, GlobalState.BLOCKED})


@dataclass(eq=False)
class Process:
    """A process ``P = (id, Ra, Rr, F, Wa(Ra))`` with its global and micro status.

    ``claims`` is everything the process may ever hold. ``r_req`` is the
    part of it currently requested; ``cpu`` names the processor slot in
    ``r_req`` (rebound to whichever processor is dispatched to it).
    """

    pid: str
    claims: tuple[str, ...]
    program: Program
    cpu: str
    w_init: dict[str, tuple] = field(default_factory=dict)
    r_req: set[str] = field(default_factory=set)
    r_alloc: set[str] = field(default_factory=set)
    global_state: GlobalState = GlobalState.CREATED
    pc: int = 0
    executed_count: int = 0
    faulted: bool = False
    fault: str | None = None
    call_stack: list[int] = field(default_factory=list)
    activity: str = MAIN
    resume_points: dict[str, int] = field(default_factory=dict)
    slice_count: int = 0
    scratch: dict = field(default_factory=dict)

    def __repr__(self) -> str:
        return f"Process({self.pid!r}, {self.global_state.value}, pc={self.pc})"

    @property
    def live(self) -> bool:
        return self.global_state in LIVE_STATES

    @property
    def missing(self) -> set[str]:
        return self.r_req - self.r_alloc


def make_process(
    registry: Registry,
    pid: str,
    r_req: Sequence[str],
    program: Program | Sequence[Instruction],
) -> Process:
    """Create a CREATED process and register it.

    Every claimed resource gets an all-zeros initial vector: memory handed
    to a process is reset before the process may see it.
    """
    if pid in registry.processes:
        raise DuplicateId(f"process {pid!r} already exists")
    if not isinstance(program, Program):
        program = Program(tuple(program))
    if len(program) == 0:
        raise EmptyProgram(f"process {pid!r} has no instructions")
    claims = tuple(dict.fromkeys(r_req))
    resources = [registry.resource(rid) for rid in claims]
    cpus = [r.id for r in resources if r.processor]
    if len(cpus) != 1:
        raise ProcessorClaimError(f"process {pid!r} claims {len(cpus)} processors, need 1")
    w_init = {r.id: (0,) * r.size for r in resources}
    later = program.requested_later
    p = Process(
        pid=pid,
        claims=claims,
        program=program,
        cpu=cpus[0],
        w_init=w_init,
        r_req={rid for rid in claims if rid not in later or rid == cpus[0]},
    )
    registry.processes[pid] = p
    return p
