"""Layered system model.

Layers ``S^0 .. S^{m-1}`` each own a disjoint resource set ``R^i``; layer 0
is the hardware. Two adjacent layers are related by *uses* (the upper
layer calls the lower one) and *controls* (the lower layer acts on the
upper one). Two operations cross a layer boundary:

* :meth:`LayerSystem.form_activity` -- a function ``g`` living in layer
  ``i-1`` binds a subset of ``R^i`` into a live control aggregation;
* :meth:`LayerSystem.lift_resource` -- a function ``f`` spanning layers
  ``i`` and ``i+1`` builds a new layer-``i+1`` resource out of a subset
  of ``R^i`` (e.g. logical memory out of physical blocks).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Iterable, Sequence

from .core import DEFAULT_FUNCS, LiftedResource, Registry
from .errors import (
    AlreadyOwned,
    BusyMember,
    CountMismatch,
    DuplicateId,
    NotOwned,
    Overflow,
    TopLayer,
    UnknownLayer,
    UnknownResource,
    UnregisteredFunction,
    WrongLocus,
)
from .trace import EventKind, TraceEvent

MAX_COUNT_BITS = 62


class Relation(str, enum.Enum):
    USES = "USES"
    CONTROLS = "CONTROLS"


class Lifetime(str, enum.Enum):
    LIVE = "LIVE"
    EXPIRED = "EXPIRED"


@dataclass
class Layer:
    index: int
    name: str
    resource_ids: set[str] = field(default_factory=set)
    interface: set[str] = field(default_factory=set)

    @property
    def hardware(self) -> bool:
        return self.index == 0


@dataclass
class ControlAggregation:
    agg_id: str
    layer_index: int
    member_ids: frozenset[str]
    g_name: str
    owner: str | None = None
    lifetime: Lifetime = Lifetime.LIVE


@dataclass(frozen=True)
class ServiceRelation:
    upper: int
    lower: int
    kind: Relation

    def __post_init__(self) -> None:
        if self.upper != self.lower + 1:
            raise WrongLocus(f"layers {self.upper} and {self.lower} are not adjacent")


class LayerSystem:
    def __init__(self, names: Sequence[str], registry: Registry | None = None) -> None:
        self.layers = [Layer(i, name) for i, name in enumerate(names)]
        self.registry = registry if registry is not None else Registry()
        self.owner: dict[str, int] = {}
        self.substrate_of: dict[str, str] = {}
        self.g_funcs: dict[int, set[str]] = {}
        self.f_funcs: dict[int, set[str]] = {}
        self.aggregations: dict[str, ControlAggregation] = {}
        self.events: list[TraceEvent] = []
        self.clock: Callable[[], int] = lambda: 0
        self._agg_counter: dict[int, int] = {}

    @property
    def layer_count(self) -> int:
        return len(self.layers)

    def layer(self, index: int) -> Layer:
        if not 0 <= index < len(self.layers):
            raise UnknownLayer(f"no layer {index} (have 0..{len(self.layers) - 1})")
        return self.layers[index]

    def layer_of(self, rid: str) -> int:
        try:
            return self.owner[rid]
        except KeyError:
            raise NotOwned(f"{rid!r} belongs to no layer") from None

    def _emit(self, kind: EventKind, pid: str | None = None, **detail) -> None:
        self.events.append(TraceEvent(self.clock(), kind, pid, detail))

    def register_g(self, layer: int, name: str) -> None:
        """Register an activity-forming function living in ``layer``."""
        self.layer(layer)
        self.g_funcs.setdefault(layer, set()).add(name)
        self.layers[layer].interface.add(name)

    def register_f(self, source_layer: int, name: str) -> None:
        """Register a lifting function spanning ``source_layer`` and the one above."""
        self.layer(source_layer)
        if source_layer >= self.layer_count - 1:
            raise TopLayer(f"layer {source_layer} has no layer above it")
        self.f_funcs.setdefault(source_layer, set()).add(name)
        self.layers[source_layer].interface.add(name)
        self.layers[source_layer + 1].interface.add(name)

    def assign_resource(self, layer: int, rid: str) -> LayerSystem:
        target = self.layer(layer)
        if rid not in self.registry:
            raise UnknownResource(f"no resource {rid!r}")
        if rid in self.owner:
            raise AlreadyOwned(f"{rid!r} already belongs to layer {self.owner[rid]}")
        target.resource_ids.add(rid)
        self.owner[rid] = layer
        return self

    def count_candidate_aggregations(self, layer: int) -> int:
        n = len(self.layer(layer).resource_ids)
        if n > MAX_COUNT_BITS:
            raise Overflow(f"2**{n} candidate aggregations does not fit in 63 bits")
        return 1 << n

    def enumerate_candidate_aggregations(self, layer: int) -> list[tuple[str, ...]]:
        """All subsets of ``R^layer``, smallest first, members sorted."""
        members = sorted(self.layer(layer).resource_ids)
        return [c for k in range(len(members) + 1) for c in combinations(members, k)]

    def form_activity(
        self,
        caller_layer: int,
        target_layer: int,
        members: Iterable[str],
        g_name: str,
        *,
        owner: str | None = None,
    ) -> ControlAggregation:
        """Turn a passive subset of ``R^target`` into a live aggregation."""
        self.layer(caller_layer)
        target = self.layer(target_layer)
        if target_layer < 1 or caller_layer != target_layer - 1:
            raise WrongLocus(
                f"g must live in layer {target_layer - 1} to act on layer {target_layer},"
                f" called from {caller_layer}"
            )
        members = frozenset(members)
        stray = sorted(members - target.resource_ids)
        if stray:
            raise NotOwned(f"{stray} not in layer {target_layer}")
        if g_name not in self.g_funcs.get(caller_layer, ()):
            raise UnregisteredFunction(f"g {g_name!r} not registered in layer {caller_layer}")
        busy = sorted(members & self.live_members())
        if busy:
            raise BusyMember(f"{busy} already in a live aggregation")
        j = self._agg_counter.get(target_layer, 0)
        self._agg_counter[target_layer] = j + 1
        agg = ControlAggregation(f"C{target_layer}_{j}", target_layer, members, g_name, owner)
        self.aggregations[agg.agg_id] = agg
        self._emit(
            EventKind.AGGREGATE,
            owner,
            agg_id=agg.agg_id,
            caller_layer=caller_layer,
            layer=target_layer,
            members=sorted(members),
            g=g_name,
            lifetime=agg.lifetime.value,
        )
        return agg

    def live_members(self) -> set[str]:
        return {
            m
            for a in self.aggregations.values()
            if a.lifetime is Lifetime.LIVE
            for m in a.member_ids
        }

    def expire(self, agg_id: str) -> ControlAggregation:
        agg = self.aggregations[agg_id]
        if agg.lifetime is Lifetime.LIVE:
            agg.lifetime = Lifetime.EXPIRED
            self._emit(
                EventKind.AGGREGATE,
                agg.owner,
                agg_id=agg_id,
                caller_layer=agg.layer_index - 1,
                layer=agg.layer_index,
                members=sorted(agg.member_ids),
                g=agg.g_name,
                lifetime=agg.lifetime.value,
            )
        return agg

    def expire_owned_by(self, owner: str) -> list[ControlAggregation]:
        """Expire every live aggregation whose activity has ended."""
        return [
            self.expire(a.agg_id)
            for a in list(self.aggregations.values())
            if a.owner == owner and a.lifetime is Lifetime.LIVE
        ]

    def lift_resource(
        self,
        source_layer: int,
        members: Sequence[str],
        new_id: str,
        f_name: str,
        func_ids: Iterable[str] = DEFAULT_FUNCS,
    ) -> str:
        """Build ``new_id`` in layer ``source_layer + 1`` out of ``members``.

        The new resource's address space is the concatenation of the
        members' spaces, in the order given.
        """
        source = self.layer(source_layer)
        if source_layer >= self.layer_count - 1:
            raise TopLayer(f"layer {source_layer} is the highest layer")
        members = list(dict.fromkeys(members))
        stray = [m for m in members if m not in source.resource_ids]
        if stray:
            raise NotOwned(f"{stray} not in layer {source_layer}")
        if new_id in self.registry:
            raise DuplicateId(f"resource {new_id!r} already exists")
        if f_name not in self.f_funcs.get(source_layer, ()):
            raise UnregisteredFunction(
                f"f {f_name!r} not registered across layers {source_layer}/{source_layer + 1}"
            )
        taken = [m for m in members if m in self.substrate_of]
        if taken:
            raise BusyMember(f"{taken} already lifted into another resource")
        lifted = LiftedResource(
            new_id, [self.registry.resource(m) for m in members], func_ids
        )
        self.registry.add(lifted)
        self.assign_resource(source_layer + 1, new_id)
        for m in members:
            self.substrate_of[m] = new_id
        self._emit(
            EventKind.LIFT,
            None,
            resource=new_id,
            source_layer=source_layer,
            target_layer=source_layer + 1,
            members=members,
            f=f_name,
            size=lifted.size,
        )
        return new_id

    def check_partition(self) -> list[str]:
        """Resource ids that are not in exactly one layer (empty when sound)."""
        bad = []
        for rid in self.registry.resources:
            homes = [l.index for l in self.layers if rid in l.resource_ids]
            if len(homes) != 1:
                bad.append(rid)
        return bad


def build_layer_system(
    layer_count: int, names: Sequence[str], registry: Registry | None = None
) -> LayerSystem:
    if layer_count < 1:
        raise CountMismatch("a layer system needs at least one layer")
    if len(names) != layer_count:
        raise CountMismatch(f"{layer_count} layers but {len(names)} names")
    return LayerSystem(names, registry)


@dataclass(frozen=True)
class Violation:
    index: int
    tick: int
    kind: str
    reason: str
    caller: int | None = None
    callee: int | None = None

    def to_record(self) -> dict:
        return {
            "kind": "hierarchy_violation",
            "index": self.index,
            "tick": self.tick,
            "event": self.kind,
            "reason": self.reason,
            "caller": self.caller,
            "callee": self.callee,
        }


def validate_service_hierarchy(trace: Iterable[TraceEvent]) -> list[Violation]:
    """Report cross-layer events that break strict adjacency or bracketing.

    A USES call must go from layer ``j+1`` to ``j``; a CONTROLS call from
    ``j`` to ``j+1``. Every SERVICE_RETURN must close the innermost open
    SERVICE_CALL of the same process. Aggregation and lift events must
    respect their locality rules.
    """
    out: list[Violation] = []
    open_calls: dict[str | None, list[tuple[int, int]]] = {}
    for i, ev in enumerate(trace):
        d = ev.detail
        if ev.kind is EventKind.SERVICE_CALL:
            caller, callee = d.get("caller"), d.get("callee")
            relation = d.get("relation", Relation.USES.value)
            if not isinstance(caller, int) or not isinstance(callee, int):
                out.append(Violation(i, ev.tick, ev.kind.value, "missing layer pair"))
                continue
            if relation == Relation.CONTROLS.value:
                if callee != caller + 1:
                    out.append(Violation(i, ev.tick, ev.kind.value,
                                         "control must act on the adjacent higher layer",
                                         caller, callee))
            elif caller != callee + 1:
                reason = "upward use" if caller <= callee else "skips a layer"
                out.append(Violation(i, ev.tick, ev.kind.value, reason, caller, callee))
            open_calls.setdefault(ev.pid, []).append((caller, callee))
        elif ev.kind is EventKind.SERVICE_RETURN:
            caller, callee = d.get("caller"), d.get("callee")
            stack = open_calls.get(ev.pid)
            if not stack:
                out.append(Violation(i, ev.tick, ev.kind.value, "return without call",
                                     caller, callee))
            elif stack[-1] != (caller, callee):
                out.append(Violation(i, ev.tick, ev.kind.value, "return does not match call",
                                     caller, callee))
                stack.pop()
            else:
                stack.pop()
        elif ev.kind is EventKind.AGGREGATE:
            caller, layer = d.get("caller_layer"), d.get("layer")
            if not isinstance(layer, int) or layer < 1 or caller != layer - 1:
                out.append(Violation(i, ev.tick, ev.kind.value,
                                     "g must live directly below its aggregation",
                                     caller, layer))
        elif ev.kind is EventKind.LIFT:
            src, dst = d.get("source_layer"), d.get("target_layer")
            if not isinstance(src, int) or dst != src + 1:
                out.append(Violation(i, ev.tick, ev.kind.value,
                                     "lift must land one layer up", src, dst))
    return out
