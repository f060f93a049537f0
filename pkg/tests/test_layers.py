import pytest

from osforma.core import Registry
from osforma.errors import (
    AlreadyOwned,
    BusyMember,
    CountMismatch,
    DuplicateId,
    NotOwned,
    Overflow,
    TopLayer,
    UnknownLayer,
    UnregisteredFunction,
    WrongLocus,
)
from osforma.layers import (
    Lifetime,
    Relation,
    ServiceRelation,
    build_layer_system,
    validate_service_hierarchy,
)
from osforma.trace import EventKind, TraceEvent

OSI = ["physical", "datalink", "network", "transport", "session", "presentation", "application"]


def system(n=3):
    return build_layer_system(n, [f"L{i}" for i in range(n)])


def with_resources(sys, layer, *ids, size=1):
    for rid in ids:
        sys.registry.make_resource(rid, size)
        sys.assign_resource(layer, rid)
    return sys


def test_seven_layers():
    s = build_layer_system(7, OSI)
    assert s.layer_count == 7
    assert s.layer(0).hardware and s.layer(6).name == "application"


def test_single_layer_has_nowhere_to_go():
    s = with_resources(build_layer_system(1, ["hw"]), 0, "a")
    with pytest.raises(TopLayer):
        s.register_f(0, "f")
    with pytest.raises(WrongLocus):
        s.form_activity(0, 0, ["a"], "g")


def test_count_mismatch():
    with pytest.raises(CountMismatch):
        build_layer_system(3, ["a", "b"])
    with pytest.raises(CountMismatch):
        build_layer_system(0, [])


def test_assign_and_reassign():
    s = with_resources(system(), 0, "mem")
    assert s.layer(0).resource_ids == {"mem"}
    with pytest.raises(AlreadyOwned):
        s.assign_resource(1, "mem")
    assert s.check_partition() == []


def test_assign_unknown_layer():
    s = system()
    s.registry.make_resource("mem", 1)
    with pytest.raises(UnknownLayer):
        s.assign_resource(9, "mem")


@pytest.mark.parametrize("n, count", [(0, 1), (3, 8), (10, 1024)])
def test_candidate_count(n, count):
    s = with_resources(system(), 1, *[f"r{i}" for i in range(n)])
    assert s.count_candidate_aggregations(1) == count
    subsets = s.enumerate_candidate_aggregations(1)
    assert len(subsets) == count == len(set(subsets))


def test_enumeration_order():
    s = with_resources(system(), 0, "c", "a", "b")
    assert s.enumerate_candidate_aggregations(0) == [
        (), ("a",), ("b",), ("c",), ("a", "b"), ("a", "c"), ("b", "c"), ("a", "b", "c"),
    ]


def test_count_overflow():
    s = with_resources(system(), 0, *[f"r{i}" for i in range(63)])
    with pytest.raises(Overflow):
        s.count_candidate_aggregations(0)


def test_form_process_creation():
    s = with_resources(system(), 1, "code", "mem_block", "pid_slot")
    s.register_g(0, "fork")
    agg = s.form_activity(0, 1, ["code", "mem_block", "pid_slot"], "fork", owner="p1")
    assert agg.lifetime is Lifetime.LIVE and agg.agg_id == "C1_0"
    assert agg.member_ids == {"code", "mem_block", "pid_slot"}
    assert s.events[-1].kind is EventKind.AGGREGATE
    with pytest.raises(BusyMember):
        s.form_activity(0, 1, ["code"], "fork")
    s.expire_owned_by("p1")
    assert agg.lifetime is Lifetime.EXPIRED
    assert s.form_activity(0, 1, ["code"], "fork").agg_id == "C1_1"


def test_form_locality():
    s = with_resources(system(), 1, "a")
    s.register_g(0, "g")
    s.register_g(1, "g")
    with pytest.raises(WrongLocus):
        s.form_activity(1, 1, ["a"], "g")
    with pytest.raises(WrongLocus):
        s.form_activity(0, 0, [], "g")
    with pytest.raises(NotOwned):
        s.form_activity(1, 2, ["a"], "g")
    with pytest.raises(UnregisteredFunction):
        s.form_activity(0, 1, ["a"], "nope")


def test_lift_logical_memory():
    s = with_resources(system(), 0, "b0", "b1", "b2", "b3", size=16)
    s.register_f(0, "pager")
    rid = s.lift_resource(0, ["b0", "b1", "b2", "b3"], "vmem", "pager")
    vmem = s.registry.resource(rid)
    assert vmem.size == 64 and s.layer_of("vmem") == 1
    for b in ("b0", "b1", "b2", "b3"):
        s.registry.resource(b).load((0,) * 16)
    assert vmem.values == (0,) * 64
    assert s.check_partition() == []


def test_lift_errors():
    s = with_resources(system(), 0, "b0", "b1")
    with_resources(s, 2, "top")
    s.register_f(0, "f")
    with pytest.raises(TopLayer):
        s.lift_resource(2, ["top"], "x", "f")
    with pytest.raises(DuplicateId):
        s.lift_resource(0, ["b0"], "b1", "f")
    with pytest.raises(UnregisteredFunction):
        s.lift_resource(0, ["b0"], "x", "g")
    with pytest.raises(NotOwned):
        s.lift_resource(0, ["top"], "x", "f")
    s.lift_resource(0, ["b0"], "x", "f")
    with pytest.raises(BusyMember):
        s.lift_resource(0, ["b0"], "y", "f")


def test_service_relation_adjacency():
    ServiceRelation(2, 1, Relation.USES)
    with pytest.raises(WrongLocus):
        ServiceRelation(2, 0, Relation.USES)


def _call(caller, callee, pid="p", relation="USES"):
    d = {"caller": caller, "callee": callee, "relation": relation}
    return [TraceEvent(0, EventKind.SERVICE_CALL, pid, d),
            TraceEvent(0, EventKind.SERVICE_RETURN, pid, d)]


def test_hierarchy_conforming_chain():
    d21 = {"caller": 2, "callee": 1, "relation": "USES"}
    d10 = {"caller": 1, "callee": 0, "relation": "USES"}
    trace = [
        TraceEvent(0, EventKind.SERVICE_CALL, "p", d21),
        TraceEvent(0, EventKind.SERVICE_CALL, "p", d10),
        TraceEvent(0, EventKind.SERVICE_RETURN, "p", d10),
        TraceEvent(0, EventKind.SERVICE_RETURN, "p", d21),
    ]
    assert validate_service_hierarchy(trace) == []


def test_hierarchy_skip_and_upward():
    skip = validate_service_hierarchy(_call(2, 0))
    assert [v.reason for v in skip] == ["skips a layer"]
    up = validate_service_hierarchy(_call(0, 1))
    assert [v.reason for v in up] == ["upward use"]
    assert up[0].to_record()["kind"] == "hierarchy_violation"


def test_hierarchy_controls_direction():
    assert validate_service_hierarchy(_call(0, 1, relation="CONTROLS")) == []
    assert len(validate_service_hierarchy(_call(1, 0, relation="CONTROLS"))) == 1


def test_hierarchy_bracketing():
    d = {"caller": 1, "callee": 0}
    lone = [TraceEvent(0, EventKind.SERVICE_RETURN, "p", d)]
    assert [v.reason for v in validate_service_hierarchy(lone)] == ["return without call"]
    crossed = _call(2, 1)[:1] + _call(1, 0)[:1] + _call(2, 1)[1:]
    assert "return does not match call" in [v.reason for v in validate_service_hierarchy(crossed)]


def test_hierarchy_aggregate_and_lift_locality():
    bad = [
        TraceEvent(0, EventKind.AGGREGATE, None, {"caller_layer": 0, "layer": 2}),
        TraceEvent(0, EventKind.LIFT, None, {"source_layer": 0, "target_layer": 2}),
    ]
    assert len(validate_service_hierarchy(bad)) == 2


def test_shared_registry():
    reg = Registry()
    reg.make_resource("mem", 1)
    s = build_layer_system(2, ["a", "b"], reg)
    s.assign_resource(1, "mem")
    assert s.registry is reg
