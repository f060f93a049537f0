import io

import pytest

from osforma.engine import run
from osforma.errors import MalformedTrace
from osforma.trace import EventKind, TraceEvent, dump_trace, dumps_trace, iter_trace, load_trace


def test_key_order_and_compact():
    ev = TraceEvent(3, EventKind.ALLOC, "p1", {"resource": "mem", "reset": True})
    assert ev.to_json() == '{"tick":3,"kind":"ALLOC","pid":"p1","detail":{"reset":true,"resource":"mem"}}'


def test_null_pid():
    assert TraceEvent(0, EventKind.HALT).to_json() == '{"tick":0,"kind":"HALT","pid":null,"detail":{}}'


def test_round_trip(corpus_doc):
    events = run(corpus_doc("layered"))
    buf = io.StringIO()
    dump_trace(events, buf)
    assert buf.getvalue() == dumps_trace(events)
    buf.seek(0)
    assert load_trace(buf) == events


@pytest.mark.parametrize(
    "line",
    ["not json", "[]", '{"tick":1}', '{"tick":"1","kind":"HALT"}', '{"tick":1,"kind":"NOPE"}',
     '{"tick":1,"kind":"HALT","pid":3}', '{"tick":1,"kind":"HALT","detail":[]}'],
)
def test_malformed(line):
    with pytest.raises(MalformedTrace):
        list(iter_trace([line]))


def test_blank_lines_skipped():
    assert list(iter_trace(["", "  "])) == []
