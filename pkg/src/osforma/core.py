"""Resources as addressed value vectors, and the transforms that move them.

A resource is the four-tuple (id, ADR, W, FUNC): an identifier, the
address space ``{1..n}``, a word domain (64-bit signed integers plus
``UNDEF``) and the set of transform names that may be applied to it.
Its state ``Z(t)`` is a :class:`StateVector` that changes only through
:func:`apply_transform`, which computes ``Z(t+1) = f(Z(t))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .errors import (
    AddressOutOfRange,
    DuplicateId,
    InvalidSize,
    UndefinedRead,
    UnknownResource,
    UnregisteredFunction,
)

WORD_MIN = -(2**63)
WORD_MAX = 2**63 - 1


class _Undef:
    __slots__ = ()
    _instance: _Undef | None = None

    def __new__(cls) -> _Undef:
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "UNDEF"

    def __reduce__(self):
        return (_Undef, ())


UNDEF = _Undef()
"""Value of an element that has never been written."""


def wrap_word(x: int) -> int:
    """Reduce an integer to the signed 64-bit range (two's complement)."""
    return ((x - WORD_MIN) % 2**64) + WORD_MIN


def is_word(x: object) -> bool:
    return x is UNDEF or (
        isinstance(x, int) and not isinstance(x, bool) and WORD_MIN <= x <= WORD_MAX
    )


@dataclass(frozen=True)
class StateVector:
    """Snapshot of one resource at a discrete observation point."""

    tick: int
    values: tuple

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, adr: int):
        # 1-based, matching ADR = {1..n}
        if not 1 <= adr <= len(self.values):
            raise AddressOutOfRange(f"address {adr} outside 1..{len(self.values)}")
        return self.values[adr - 1]


@dataclass(frozen=True)
class TransformFn:
    """A named, deterministic map from a state vector to one of equal length."""

    name: str
    effect: Callable[[tuple], tuple] = field(compare=False)

    def __call__(self, values: tuple) -> tuple:
        return tuple(self.effect(values))


def _check_adr(values: tuple, adr: int) -> None:
    if not 1 <= adr <= len(values):
        raise AddressOutOfRange(f"address {adr} outside 1..{len(values)}")


def identity() -> TransformFn:
    return TransformFn("identity", lambda v: v)


def set_word(adr: int, value: int) -> TransformFn:
    """``w_adr := value``."""

    def effect(v: tuple) -> tuple:
        _check_adr(v, adr)
        out = list(v)
        out[adr - 1] = value
        return tuple(out)

    return TransformFn("set", effect)


def add_words(dst: int, src: int) -> TransformFn:
    """``w_dst := w_dst + w_src`` with 64-bit wraparound."""

    def effect(v: tuple) -> tuple:
        _check_adr(v, dst)
        _check_adr(v, src)
        a, b = v[dst - 1], v[src - 1]
        if a is UNDEF or b is UNDEF:
            raise UndefinedRead("add reads an undefined element")
        out = list(v)
        out[dst - 1] = wrap_word(a + b)
        return tuple(out)

    return TransformFn("add", effect)


def copy_in(adr: int, value: int) -> TransformFn:
    """Store a word fetched from another resource (the write half of COPY)."""

    def effect(v: tuple) -> tuple:
        _check_adr(v, adr)
        out = list(v)
        out[adr - 1] = value
        return tuple(out)

    return TransformFn("copy", effect)


BUILTIN_FUNCS = frozenset({"identity", "set", "add", "copy"})
DEFAULT_FUNCS = BUILTIN_FUNCS


class Resource:
    """A uniformly structured set of addressed elements.

    ``size`` fixes the address space ``{1..size}``. A resource with
    ``processor=True`` is a zero-length stand-in for a CPU.
    """

    def __init__(
        self,
        id: str,
        size: int,
        func_ids: Iterable[str] = DEFAULT_FUNCS,
        *,
        processor: bool = False,
    ) -> None:
        if not isinstance(id, str) or not id:
            raise ValueError("resource id must be a nonempty string")
        if size < 0:
            raise InvalidSize(f"resource {id!r}: size {size} is negative")
        if processor and size != 0:
            raise InvalidSize(f"processor {id!r} must have size 0")
        self.id = id
        self.func_ids = frozenset(func_ids)
        self.processor = processor
        self._size = size
        self._values: tuple = (UNDEF,) * size
        self.tick = 0

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.id!r}, size={self.size})"

    @property
    def size(self) -> int:
        return self._size

    @property
    def values(self) -> tuple:
        return self._values

    @property
    def state(self) -> StateVector:
        return StateVector(self.tick, self.values)

    def read(self, adr: int):
        if not 1 <= adr <= self.size:
            raise AddressOutOfRange(f"{self.id}: address {adr} outside 1..{self.size}")
        return self.values[adr - 1]

    def _commit(self, values: tuple) -> None:
        self._values = values
        self.tick += 1

    def load(self, values: Sequence) -> StateVector:
        """Install initial values (allocation reset); not a FUNC transform."""
        values = tuple(values)
        if len(values) != self.size:
            raise InvalidSize(f"{self.id}: expected {self.size} values, got {len(values)}")
        self._commit(values)
        return self.state


class LiftedResource(Resource):
    """A resource one layer up, realized by concatenating its substrate.

    Reads and writes go straight through to the member resources, so the
    substrate and the lifted view never disagree.
    """

    def __init__(
        self,
        id: str,
        substrate: Sequence[Resource],
        func_ids: Iterable[str] = DEFAULT_FUNCS,
    ) -> None:
        self.substrate = tuple(substrate)
        super().__init__(id, sum(m.size for m in self.substrate), func_ids)
        del self._values

    @property
    def values(self) -> tuple:
        out: tuple = ()
        for m in self.substrate:
            out += m.values
        return out

    def locate(self, adr: int) -> tuple[Resource, int]:
        """Map a lifted address to (member, member-address)."""
        if not 1 <= adr <= self.size:
            raise AddressOutOfRange(f"{self.id}: address {adr} outside 1..{self.size}")
        offset = adr - 1
        for m in self.substrate:
            if offset < m.size:
                return m, offset + 1
            offset -= m.size
        raise AssertionError("unreachable")

    def _commit(self, values: tuple) -> None:
        start = 0
        for m in self.substrate:
            chunk = values[start : start + m.size]
            start += m.size
            if chunk != m.values:
                m._commit(chunk)
        self.tick += 1


def read_element(r: Resource, adr: int):
    """Return the word at ``adr`` in the current state of ``r``."""
    return r.read(adr)


def apply_transform(r: Resource, f: TransformFn) -> StateVector:
    """Replace ``Z(t)`` by ``f(Z(t))`` and advance the resource tick."""
    if f.name not in r.func_ids:
        raise UnregisteredFunction(f"{f.name!r} is not admissible on {r.id!r}")
    new = f(r.values)
    if len(new) != r.size:
        raise InvalidSize(f"{f.name!r} changed the length of {r.id!r}")
    if not all(is_word(w) for w in new):
        raise ValueError(f"{f.name!r} produced a value outside W")
    r._commit(new)
    return r.state


class Registry:
    """Global table of resources and processes of one model."""

    def __init__(self) -> None:
        self.resources: dict[str, Resource] = {}
        self.processes: dict = {}

    def __contains__(self, rid: str) -> bool:
        return rid in self.resources

    def resource(self, rid: str) -> Resource:
        try:
            return self.resources[rid]
        except KeyError:
            raise UnknownResource(f"no resource {rid!r}") from None

    def add(self, r: Resource) -> Resource:
        if r.id in self.resources:
            raise DuplicateId(f"resource {r.id!r} already exists")
        self.resources[r.id] = r
        return r

    def make_resource(
        self,
        id: str,
        n: int,
        func_ids: Iterable[str] = DEFAULT_FUNCS,
        *,
        processor: bool = False,
    ) -> Resource:
        if id in self.resources:
            raise DuplicateId(f"resource {id!r} already exists")
        if n < 0:
            raise InvalidSize(f"resource {id!r}: size {n} is negative")
        return self.add(Resource(id, n, func_ids, processor=processor))

    @property
    def processor_ids(self) -> list[str]:
        return sorted(rid for rid, r in self.resources.items() if r.processor)


def make_resource(
    registry: Registry,
    id: str,
    n: int,
    func_ids: Iterable[str] = DEFAULT_FUNCS,
    *,
    processor: bool = False,
) -> Resource:
    return registry.make_resource(id, n, func_ids, processor=processor)
