"""Line-oriented model language.

::

    model <name>
    quantum <int>                       # optional, default 5
    max_steps <int>                     # optional
    seed <int>                          # optional
    layer <index> <name>
    resource <layer-index> <id> size <int> [cpu]
    funcs <resource-id> <name>,<name>,...
    lift <new-id> from <id>,<id>,... via <fname>
    process <pid> requests <id>,<id>,...
    begin
      <instruction per line, labels as "<label>:">
    end

Declarations appear in that order: header, layers, resources (with their
``funcs`` and ``lift`` lines), processes. ``#`` starts a comment.
:func:`parse_model` collects every error in the file instead of stopping
at the first one.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field, replace

from .core import BUILTIN_FUNCS, DEFAULT_FUNCS, WORD_MAX, WORD_MIN
from .errors import OsformaError
from .program import (
    LOCAL,
    MAIN,
    SIGNATURES,
    WRITE_FUNC,
    Instruction,
    Opcode,
    Program,
)

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
INT_RE = re.compile(r"[+-]?[0-9]+\Z")
MAX_IDENT = 64


class ErrorKind(str, enum.Enum):
    SYNTAX = "SYNTAX"
    UNKNOWN_REFERENCE = "UNKNOWN_REFERENCE"
    DUPLICATE = "DUPLICATE"
    ARITY = "ARITY"


@dataclass(frozen=True)
class ParseError:
    line: int
    column: int
    message: str
    kind: ErrorKind
    token: str = ""

    def format(self, path: str) -> str:
        return f"{path}:{self.line}:{self.column}: {self.kind.value}: {self.message}"


class ModelParseError(OsformaError):
    def __init__(self, errors: list[ParseError]) -> None:
        self.errors = errors
        super().__init__("\n".join(e.format("<model>") for e in errors))


@dataclass(frozen=True)
class LayerDecl:
    index: int
    name: str


@dataclass(frozen=True)
class ResourceDecl:
    layer: int
    id: str
    size: int
    cpu: bool = False
    funcs: tuple[str, ...] | None = None


@dataclass(frozen=True)
class LiftDecl:
    id: str
    members: tuple[str, ...]
    via: str
    funcs: tuple[str, ...] | None = None


@dataclass(frozen=True)
class ProcessDecl:
    pid: str
    requests: tuple[str, ...]
    program: Program


@dataclass(frozen=True)
class ModelDocument:
    name: str
    layers: tuple[LayerDecl, ...] = ()
    resources: tuple[ResourceDecl, ...] = ()
    lifts: tuple[LiftDecl, ...] = ()
    processes: tuple[ProcessDecl, ...] = ()
    quantum: int | None = None
    max_steps: int | None = None
    seed: int | None = None

    def layer_of(self, rid: str) -> int:
        for r in self.resources:
            if r.id == rid:
                return r.layer
        for lift in self.lifts:
            if lift.id == rid:
                return self.layer_of(lift.members[0]) + 1
        raise KeyError(rid)

    def size_of(self, rid: str) -> int:
        for r in self.resources:
            if r.id == rid:
                return r.size
        for lift in self.lifts:
            if lift.id == rid:
                return sum(self.size_of(m) for m in lift.members)
        raise KeyError(rid)


@dataclass
class _Token:
    text: str
    col: int


@dataclass
class _ResInfo:
    layer: int
    size: int
    cpu: bool
    funcs: frozenset[str] | None = None


@dataclass
class _OpenProcess:
    pid: str | None
    requests: tuple[str, ...]
    line: int
    head: _Token
    instrs: list[Instruction] = field(default_factory=list)
    labels: list[tuple[str, int]] = field(default_factory=list)
    label_sites: dict[str, tuple[int, _Token]] = field(default_factory=dict)
    targets: list[tuple[str, int, _Token, Opcode]] = field(default_factory=list)
    started: bool = False
    bodied: bool = False  # saw at least one instruction line, valid or not


_SECTION = {
    "model": 0,
    "quantum": 1,
    "max_steps": 1,
    "seed": 1,
    "layer": 2,
    "resource": 3,
    "funcs": 3,
    "lift": 3,
    "process": 4,
}
_SECTION_NAME = {1: "directives", 2: "layers", 3: "resources", 4: "processes"}


class _Parser:
    def __init__(self) -> None:
        self.errors: list[ParseError] = []
        self.name: str | None = None
        self.directives: dict[str, int] = {}
        self.layers: list[LayerDecl] = []
        self.resources: list[ResourceDecl] = []
        self.lifts: list[LiftDecl] = []
        self.processes: list[ProcessDecl] = []
        self.info: dict[str, _ResInfo] = {}
        self.lifted: set[str] = set()
        self.pids: set[str] = set()
        self.section = -1
        self.block: _OpenProcess | None = None
        self.first_token: tuple[int, _Token] | None = None

    def error(self, kind: ErrorKind, line: int, tok: _Token | None, msg: str) -> None:
        if tok is None:
            self.errors.append(ParseError(line, 1, msg, kind, ""))
        else:
            self.errors.append(ParseError(line, tok.col, msg, kind, tok.text))

    # --- token helpers ------------------------------------------------

    def ident(self, line: int, tok: _Token, what: str) -> str | None:
        if len(tok.text) > MAX_IDENT or not IDENT_RE.match(tok.text):
            self.error(ErrorKind.SYNTAX, line, tok, f"invalid {what} {tok.text!r}")
            return None
        return tok.text

    def integer(self, line: int, tok: _Token, what: str, lo: int | None = None,
                hi: int | None = None) -> int | None:
        if not INT_RE.match(tok.text):
            self.error(ErrorKind.SYNTAX, line, tok, f"{what} must be an integer, got {tok.text!r}")
            return None
        value = int(tok.text)
        if (lo is not None and value < lo) or (hi is not None and value > hi):
            self.error(ErrorKind.SYNTAX, line, tok, f"{what} {value} out of range")
            return None
        return value

    def id_list(self, line: int, tok: _Token, what: str) -> list[tuple[str, _Token]] | None:
        out = []
        seen: set[str] = set()
        col = tok.col
        ok = True
        for part in tok.text.split(","):
            sub = _Token(part, col)
            col += len(part) + 1
            if not part:
                self.error(ErrorKind.SYNTAX, line, tok, f"empty entry in {what} list")
                ok = False
                continue
            name = self.ident(line, sub, what)
            if name is None:
                ok = False
                continue
            if name in seen:
                self.error(ErrorKind.DUPLICATE, line, sub, f"{what} {name!r} listed twice")
                ok = False
                continue
            seen.add(name)
            out.append((name, sub))
        return out if ok else None

    def arity(self, line: int, toks: list[_Token], counts: tuple[int, ...], usage: str) -> bool:
        if len(toks) not in counts:
            self.error(ErrorKind.ARITY, line, toks[0], f"expected: {usage}")
            return False
        return True

    def keyword(self, line: int, tok: _Token, word: str) -> bool:
        if tok.text != word:
            self.error(ErrorKind.SYNTAX, line, tok, f"expected {word!r}, got {tok.text!r}")
            return False
        return True

    # --- top level ----------------------------------------------------

    def feed(self, line: int, toks: list[_Token]) -> None:
        if self.first_token is None:
            self.first_token = (line, toks[0])
        if self.block is not None:
            self.block_line(line, toks)
            return
        word = toks[0].text
        if word in ("begin", "end"):
            self.error(ErrorKind.SYNTAX, line, toks[0], f"{word!r} outside a process")
            return
        rank = _SECTION.get(word)
        if rank is None:
            self.error(ErrorKind.SYNTAX, line, toks[0], f"unknown declaration {word!r}")
            return
        if self.section < 0 and word != "model":
            self.error(ErrorKind.SYNTAX, line, toks[0], "the file must start with 'model <name>'")
            self.section = 0
        if rank < self.section and word != "model":
            self.error(
                ErrorKind.SYNTAX, line, toks[0],
                f"{word!r} must come before {_SECTION_NAME.get(self.section, 'this point')}",
            )
            return
        self.section = max(self.section, rank)
        getattr(self, "decl_" + word)(line, toks)

    def decl_model(self, line: int, toks: list[_Token]) -> None:
        if not self.arity(line, toks, (2,), "model <name>"):
            return
        if self.name is not None:
            self.error(ErrorKind.DUPLICATE, line, toks[0], "model declared twice")
            return
        self.name = self.ident(line, toks[1], "model name") or ""

    def _directive(self, line: int, toks: list[_Token], lo: int) -> None:
        word = toks[0].text
        if not self.arity(line, toks, (2,), f"{word} <int>"):
            return
        if word in self.directives:
            self.error(ErrorKind.DUPLICATE, line, toks[0], f"{word!r} given twice")
            return
        value = self.integer(line, toks[1], word, lo, WORD_MAX)
        if value is not None:
            self.directives[word] = value

    def decl_quantum(self, line, toks):
        self._directive(line, toks, 1)

    def decl_max_steps(self, line, toks):
        self._directive(line, toks, 0)

    def decl_seed(self, line, toks):
        self._directive(line, toks, 0)

    def decl_layer(self, line: int, toks: list[_Token]) -> None:
        if not self.arity(line, toks, (3,), "layer <index> <name>"):
            return
        index = self.integer(line, toks[1], "layer index", 0)
        name = self.ident(line, toks[2], "layer name")
        if index is None or name is None:
            return
        if index < len(self.layers):
            self.error(ErrorKind.DUPLICATE, line, toks[1], f"layer {index} declared twice")
            return
        if index != len(self.layers):
            self.error(ErrorKind.SYNTAX, line, toks[1],
                       f"layers are declared in order; expected layer {len(self.layers)}")
            return
        self.layers.append(LayerDecl(index, name))

    def _new_resource_id(self, line: int, tok: _Token) -> str | None:
        rid = self.ident(line, tok, "resource id")
        if rid is None:
            return None
        if rid == LOCAL:
            self.error(ErrorKind.SYNTAX, line, tok, f"{LOCAL!r} is reserved")
            return None
        if rid in self.info:
            self.error(ErrorKind.DUPLICATE, line, tok, f"resource {rid!r} declared twice")
            return None
        return rid

    def decl_resource(self, line: int, toks: list[_Token]) -> None:
        usage = "resource <layer-index> <id> size <int> [cpu]"
        if not self.arity(line, toks, (5, 6), usage):
            return
        ok = self.keyword(line, toks[3], "size")
        cpu = len(toks) == 6
        if cpu:
            ok = self.keyword(line, toks[5], "cpu") and ok
        layer = self.integer(line, toks[1], "layer index", 0)
        if layer is not None and layer >= len(self.layers):
            self.error(ErrorKind.UNKNOWN_REFERENCE, line, toks[1], f"no layer {layer}")
            layer = None
        rid = self._new_resource_id(line, toks[2])
        size = self.integer(line, toks[4], "size", 0, 2**31)
        if size is not None and cpu and size != 0:
            self.error(ErrorKind.SYNTAX, line, toks[4], "a cpu resource must have size 0")
            size = None
        if None in (layer, rid, size) or not ok:
            return
        self.info[rid] = _ResInfo(layer, size, cpu)
        self.resources.append(ResourceDecl(layer, rid, size, cpu))

    def decl_funcs(self, line: int, toks: list[_Token]) -> None:
        if not self.arity(line, toks, (3,), "funcs <resource-id> <name>,<name>,..."):
            return
        rid = toks[1].text
        names = self.id_list(line, toks[2], "function")
        if rid not in self.info:
            self.error(ErrorKind.UNKNOWN_REFERENCE, line, toks[1], f"unknown resource {rid!r}")
            return
        if self.info[rid].funcs is not None:
            self.error(ErrorKind.DUPLICATE, line, toks[0], f"funcs for {rid!r} given twice")
            return
        if names is None:
            return
        bad = False
        for name, sub in names:
            if name not in BUILTIN_FUNCS:
                self.error(ErrorKind.UNKNOWN_REFERENCE, line, sub, f"unknown function {name!r}")
                bad = True
        if bad:
            return
        funcs = tuple(sorted(n for n, _ in names))
        self.info[rid].funcs = frozenset(funcs)
        for seq in (self.resources, self.lifts):
            for i, decl in enumerate(seq):
                if decl.id == rid:
                    seq[i] = replace(decl, funcs=funcs)

    def decl_lift(self, line: int, toks: list[_Token]) -> None:
        usage = "lift <new-id> from <id>,<id>,... via <fname>"
        if not self.arity(line, toks, (6,), usage):
            return
        ok = self.keyword(line, toks[2], "from")
        ok = self.keyword(line, toks[4], "via") and ok
        rid = self._new_resource_id(line, toks[1])
        via = self.ident(line, toks[5], "function name")
        members = self.id_list(line, toks[3], "member")
        if members is None or rid is None or via is None or not ok:
            return
        layers = set()
        for name, sub in members:
            info = self.info.get(name)
            if info is None:
                self.error(ErrorKind.UNKNOWN_REFERENCE, line, sub, f"unknown resource {name!r}")
                ok = False
            elif info.cpu:
                self.error(ErrorKind.SYNTAX, line, sub, f"cannot lift processor {name!r}")
                ok = False
            elif name in self.lifted:
                self.error(ErrorKind.DUPLICATE, line, sub, f"{name!r} is already lifted")
                ok = False
            else:
                layers.add(info.layer)
        if not ok:
            return
        if len(layers) != 1:
            self.error(ErrorKind.SYNTAX, line, toks[3], "lift members must share one layer")
            return
        source = layers.pop()
        if source + 1 >= len(self.layers):
            self.error(ErrorKind.SYNTAX, line, toks[3], f"layer {source} has no layer above")
            return
        names = tuple(n for n, _ in members)
        self.lifted.update(names)
        size = sum(self.info[n].size for n in names)
        self.info[rid] = _ResInfo(source + 1, size, False)
        self.lifts.append(LiftDecl(rid, names, via))

    def decl_process(self, line: int, toks: list[_Token]) -> None:
        usage = "process <pid> requests <id>,<id>,..."
        block = _OpenProcess(None, (), line, toks[0])
        self.block = block
        if not self.arity(line, toks, (4,), usage):
            return
        ok = self.keyword(line, toks[2], "requests")
        pid = self.ident(line, toks[1], "process id")
        if pid is not None and pid in self.pids:
            self.error(ErrorKind.DUPLICATE, line, toks[1], f"process {pid!r} declared twice")
            pid = None
        if pid is not None:
            self.pids.add(pid)
        reqs = self.id_list(line, toks[3], "resource")
        if reqs is None:
            return
        for name, sub in reqs:
            if name not in self.info:
                self.error(ErrorKind.UNKNOWN_REFERENCE, line, sub, f"unknown resource {name!r}")
                ok = False
        if not ok:
            return
        ncpu = sum(self.info[n].cpu for n, _ in reqs)
        if ncpu != 1:
            self.error(ErrorKind.ARITY, line, toks[3],
                       f"a process requests exactly one cpu, found {ncpu}")
            return
        block.pid = pid
        block.requests = tuple(n for n, _ in reqs)

    # --- process bodies -----------------------------------------------

    def block_line(self, line: int, toks: list[_Token]) -> None:
        b = self.block
        assert b is not None
        word = toks[0].text
        if not b.started:
            if word == "begin" and len(toks) == 1:
                b.started = True
                return
            self.error(ErrorKind.SYNTAX, line, toks[0], "expected 'begin'")
            b.started = True
            if word == "begin":
                return
        if word == "end":
            if len(toks) != 1:
                self.error(ErrorKind.ARITY, line, toks[1], "'end' takes no operands")
            self.close_block(line, toks[0])
            return
        if word in _SECTION or word == "begin":
            self.error(ErrorKind.SYNTAX, line, toks[0], "missing 'end' before this line")
            self.close_block(line, toks[0])
            if word != "begin":
                self.feed(line, toks)
            return
        if word.endswith(":") and len(toks) == 1:
            self.label(line, toks[0])
        else:
            b.bodied = True
            self.instruction(line, toks)

    def label(self, line: int, tok: _Token) -> None:
        b = self.block
        name = self.ident(line, _Token(tok.text[:-1], tok.col), "label")
        if name is None:
            return
        if name == MAIN:
            self.error(ErrorKind.SYNTAX, line, tok, f"{MAIN!r} names the top-level activity")
            return
        if name in b.label_sites:
            self.error(ErrorKind.DUPLICATE, line, tok, f"label {name!r} defined twice")
            return
        b.label_sites[name] = (line, tok)
        b.labels.append((name, len(b.instrs)))

    def instruction(self, line: int, toks: list[_Token]) -> None:
        b = self.block
        try:
            opcode = Opcode(toks[0].text.upper())
        except ValueError:
            self.error(ErrorKind.SYNTAX, line, toks[0], f"unknown opcode {toks[0].text!r}")
            return
        sig = SIGNATURES[opcode]
        if len(toks) - 1 != len(sig):
            self.error(ErrorKind.ARITY, line, toks[0],
                       f"{opcode.value} takes {len(sig)} operand(s), got {len(toks) - 1}")
            return
        ops: list = []
        res: str | None = None
        ok = True
        for tok, kind in zip(toks[1:], sig):
            if kind == "r":
                res = self.res_operand(line, tok, opcode)
                ok = ok and res is not None
                ops.append(res)
            elif kind == "a":
                adr = self.integer(line, tok, "address", 1, 2**31)
                if adr is not None and res is not None and res != LOCAL:
                    size = self.info[res].size
                    if adr > size:
                        self.error(ErrorKind.UNKNOWN_REFERENCE, line, tok,
                                   f"address {adr} outside 1..{size} of {res!r}")
                        adr = None
                ok = ok and adr is not None
                ops.append(adr)
            elif kind == "w":
                w = self.integer(line, tok, "word", WORD_MIN, WORD_MAX)
                ok = ok and w is not None
                ops.append(w)
            else:
                name = self.ident(line, tok, "label")
                if name is None:
                    ok = False
                else:
                    b.targets.append((name, line, tok, opcode))
                    ops.append(name)
        if not ok:
            return
        func = WRITE_FUNC.get(opcode)
        if func is not None:
            target = ops[0] if opcode is not Opcode.COPY else ops[2]
            tok = toks[1] if opcode is not Opcode.COPY else toks[3]
            if target != LOCAL:
                allowed = self.info[target].funcs
                if func not in (DEFAULT_FUNCS if allowed is None else allowed):
                    self.error(ErrorKind.UNKNOWN_REFERENCE, line, tok,
                               f"function {func!r} not admissible on {target!r}")
                    return
        b.instrs.append(Instruction(opcode, tuple(ops)))

    def res_operand(self, line: int, tok: _Token, opcode: Opcode) -> str | None:
        b = self.block
        rid = self.ident(line, tok, "resource id")
        if rid is None:
            return None
        if rid == LOCAL:
            if opcode in (Opcode.REQUEST, Opcode.RELEASE):
                self.error(ErrorKind.SYNTAX, line, tok, f"{LOCAL!r} is always held")
                return None
            return rid
        if rid not in self.info:
            self.error(ErrorKind.UNKNOWN_REFERENCE, line, tok, f"unknown resource {rid!r}")
            return None
        if b.pid is not None and rid not in b.requests:
            self.error(ErrorKind.UNKNOWN_REFERENCE, line, tok,
                       f"resource {rid!r} is not requested by {b.pid!r}")
            return None
        if opcode in (Opcode.REQUEST, Opcode.RELEASE) and self.info[rid].cpu:
            self.error(ErrorKind.SYNTAX, line, tok, "processors move only by dispatch")
            return None
        return rid

    def close_block(self, line: int, tok: _Token) -> None:
        b = self.block
        self.block = None
        ok = b.pid is not None
        if not b.instrs:
            ok = False
            if not b.bodied:
                self.error(ErrorKind.SYNTAX, b.line, b.head, "process has an empty program")
        for name, (lline, ltok) in b.label_sites.items():
            if dict(b.labels)[name] >= len(b.instrs) and b.instrs:
                self.error(ErrorKind.SYNTAX, lline, ltok, f"label {name!r} precedes no instruction")
                ok = False
        for name, tline, ttok, opcode in b.targets:
            if name in b.label_sites or (opcode is Opcode.TRANSFER and name == MAIN):
                continue
            self.error(ErrorKind.UNKNOWN_REFERENCE, tline, ttok, f"undeclared label {name!r}")
            ok = False
        if ok:
            self.processes.append(
                ProcessDecl(b.pid, b.requests, Program(tuple(b.instrs), tuple(b.labels)))
            )

    def finish(self, last_line: int) -> ModelDocument | None:
        if self.block is not None:
            b = self.block
            self.error(ErrorKind.SYNTAX, b.line, b.head, "missing 'end' for this process")
            self.block = None
        if self.name is None and self.section < 0:
            line, tok = self.first_token or (1, None)
            self.error(ErrorKind.SYNTAX, line, tok, "the file must start with 'model <name>'")
        if not self.layers:
            line, tok = self.first_token or (1, None)
            self.error(ErrorKind.SYNTAX, line, tok, "no layers declared")
        if self.errors:
            return None
        return ModelDocument(
            name=self.name or "",
            layers=tuple(self.layers),
            resources=tuple(self.resources),
            lifts=tuple(self.lifts),
            processes=tuple(self.processes),
            quantum=self.directives.get("quantum"),
            max_steps=self.directives.get("max_steps"),
            seed=self.directives.get("seed"),
        )


_TOKEN_RE = re.compile(r"\S+")


def _decode(source: str | bytes, errors: list[ParseError]) -> str:
    if isinstance(source, str):
        return source
    try:
        return source.decode("utf-8")
    except UnicodeDecodeError as exc:
        head = source[: exc.start]
        line = head.count(b"\n") + 1
        col = len(head) - (head.rfind(b"\n") + 1) + 1
        errors.append(ParseError(line, col, "input is not valid UTF-8", ErrorKind.SYNTAX))
        return source.decode("utf-8", errors="replace")


def check_model(source: str | bytes) -> tuple[ModelDocument | None, list[ParseError]]:
    """Parse ``source``; return the document (or None) and every error found."""
    decode_errors: list[ParseError] = []
    text = _decode(source, decode_errors)
    p = _Parser()
    lines = text.split("\n")
    for n, raw in enumerate(lines, 1):
        if raw.endswith("\r"):
            raw = raw[:-1]
        body = raw.split("#", 1)[0]
        toks = [_Token(m.group(), m.start() + 1) for m in _TOKEN_RE.finditer(body)]
        if toks:
            p.feed(n, toks)
    doc = p.finish(len(lines))
    errors = decode_errors + p.errors
    errors.sort(key=lambda e: (e.line, e.column))
    return (doc if not errors else None), errors


def parse_model(source: str | bytes) -> ModelDocument:
    """Parse a model file; raise :class:`ModelParseError` listing every problem."""
    doc, errors = check_model(source)
    if errors:
        raise ModelParseError(errors)
    assert doc is not None
    return doc


def serialize_model(doc: ModelDocument) -> str:
    """Canonical text for ``doc``: comments dropped, fixed spacing, LF endings."""
    out = [f"model {doc.name}"]
    for key in ("quantum", "max_steps", "seed"):
        value = getattr(doc, key)
        if value is not None:
            out.append(f"{key} {value}")
    out.extend(f"layer {l.index} {l.name}" for l in doc.layers)
    for r in doc.resources:
        out.append(f"resource {r.layer} {r.id} size {r.size}" + (" cpu" if r.cpu else ""))
        if r.funcs is not None:
            out.append(f"funcs {r.id} {','.join(r.funcs)}")
    for lift in doc.lifts:
        out.append(f"lift {lift.id} from {','.join(lift.members)} via {lift.via}")
        if lift.funcs is not None:
            out.append(f"funcs {lift.id} {','.join(lift.funcs)}")
    for p in doc.processes:
        out.append("")
        out.append(f"process {p.pid} requests {','.join(p.requests)}")
        out.append("begin")
        labels_at: dict[int, list[str]] = {}
        for name, index in p.program.labels:
            labels_at.setdefault(index, []).append(name)
        for pc, instr in enumerate(p.program.instructions):
            out.extend(f"{name}:" for name in labels_at.get(pc, ()))
            out.append(f"  {instr}")
        out.append("end")
    return "\n".join(out) + "\n"
