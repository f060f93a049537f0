"""Acceptance gate: one check per criterion, each printing a PASS/FAIL line.

Run directly (``python tests/test_acceptance.py``) or under pytest, which
also lists the lines in its terminal summary.
"""

from __future__ import annotations

import contextlib
import io
import random
import sys
import tempfile
import time
from functools import cache
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from conftest import ACCEPTANCE_LINES, CORPUS  # noqa: E402
from modelgen import FUZZ, SMALL, contended_model, random_model  # noqa: E402

from osforma.cli import main as cli_main  # noqa: E402
from osforma.engine import Engine, StopReason, run  # noqa: E402
from osforma.errors import AlreadyOwned, BusyMember  # noqa: E402
from osforma.layers import build_layer_system  # noqa: E402
from osforma.oracle import brute_force_reachability  # noqa: E402
from osforma.parser import check_model, parse_model, serialize_model  # noqa: E402
from osforma.program import GlobalState  # noqa: E402
from osforma.states import classify_state  # noqa: E402
from osforma.trace import EventKind  # noqa: E402

FUZZ_MODELS = 1000
FUZZ_STEPS = 300
ORACLE_MODELS = 200
BYTE_FUZZ = 10_000
CORPUS_FILES = sorted(CORPUS.glob("*.model"))

ACTIVE, READY, BLOCKED = GlobalState.ACTIVE, GlobalState.READY, GlobalState.BLOCKED


# --- shared fuzz run for criteria 1, 2 and 9 -------------------------------

def _check_tick(eng: Engine, cpus: set[str], bad: dict[str, list]) -> None:
    live = [p for p in eng.processes.values() if p.live]
    for p in live:
        a, r = len(p.r_alloc), len(p.r_req)
        formulas = {ACTIVE: a == r, READY: a == r - 1, BLOCKED: a < r - 1}
        matched = [s for s, ok in formulas.items() if ok]
        if not p.r_alloc <= p.r_req or matched != [p.global_state] or classify_state(p) is not p.global_state:
            bad["states"].append((p.pid, p.global_state.value, a, r))
        holds_cpu = bool(p.r_alloc & cpus)
        if holds_cpu != (p.global_state is ACTIVE):
            bad["processor"].append((p.pid, p.global_state.value, sorted(p.r_alloc)))
    if sum(p.global_state is ACTIVE for p in live) > len(cpus):
        bad["processor"].append(("active count", len(cpus)))


def _check_reads(events, written: set, bad: dict[str, list]) -> None:
    """Reads of never-written words (since the last reset) must see 0."""
    for e in events:
        if e.kind is EventKind.ALLOC and e.detail.get("reset"):
            rid = e.detail["resource"]
            written -= {k for k in written if k[0] == rid}
        elif e.kind is EventKind.INSTR:
            act = (e.pid, e.detail["activity"])
            key = lambda rid, adr: (rid, act, adr) if rid == "local" else (rid, None, adr)  # noqa: E731
            for rid, adr, val in e.detail["reads"]:
                if key(rid, adr) not in written and val != 0:
                    bad["zero_init"].append((e.pid, rid, adr, val))
            for rid, adr, _ in e.detail["writes"]:
                written.add(key(rid, adr))
        elif e.kind is EventKind.HALT and e.detail.get("error") == "UndefinedRead":
            bad["zero_init"].append((e.pid, "UndefinedRead"))


@cache
def fuzz_run() -> tuple[dict[str, list], dict[str, int], float]:
    start = time.perf_counter()
    rng = random.Random(20240601)
    bad: dict[str, list] = {"states": [], "processor": [], "zero_init": []}
    stats = {"models": 0, "ticks": 0, "reads": 0, "deadlocks": 0, "faults": 0}
    for _ in range(FUZZ_MODELS):
        doc = parse_model(random_model(rng, FUZZ))
        eng = Engine(doc)
        cpus = set(eng.registry.processor_ids)
        written: set = set()
        eng.admit_all()
        _check_tick(eng, cpus, bad)
        _check_reads(eng.events, written, bad)
        steps = 0
        while not eng.finished() and not eng.deadlocked() and steps < FUZZ_STEPS:
            new = eng.step()
            steps += 1
            _check_tick(eng, cpus, bad)
            _check_reads(new, written, bad)
            stats["reads"] += sum(len(e.detail["reads"]) for e in new if e.kind is EventKind.INSTR)
        stats["models"] += 1
        stats["ticks"] += steps + 1
        stats["deadlocks"] += eng.deadlocked()
        stats["faults"] += sum(p.faulted for p in eng.processes.values())
    return bad, stats, time.perf_counter() - start


# --- criteria ---------------------------------------------------------------

def criterion_1():
    bad, stats, secs = fuzz_run()
    return not bad["states"], (
        f"{stats['models']} models, {stats['ticks']} ticks, {len(bad['states'])} violations, {secs:.1f}s"
    )


def criterion_2():
    bad, stats, _ = fuzz_run()
    return not bad["processor"], f"{stats['ticks']} ticks, {len(bad['processor'])} violations"


def criterion_3():
    violations = 0
    sequences = 50
    for seed in range(sequences):
        rng = random.Random(seed)
        sys_ = build_layer_system(4, ["hardware", "kernel", "services", "user"])
        counter = 0
        for _ in range(100):
            if rng.random() < 0.6:
                if rng.random() < 0.8 or not sys_.registry.resources:
                    rid = f"r{counter}"
                    counter += 1
                    sys_.registry.make_resource(rid, rng.randint(1, 4))
                else:
                    rid = rng.choice(sorted(sys_.registry.resources))
                with contextlib.suppress(AlreadyOwned):
                    sys_.assign_resource(rng.randrange(4), rid)
            else:
                layer = rng.randrange(3)
                pool = sorted(sys_.layer(layer).resource_ids)
                members = rng.sample(pool, k=min(len(pool), rng.randint(1, 3)))
                f = f"f{layer}"
                sys_.register_f(layer, f)
                with contextlib.suppress(BusyMember):
                    if members:
                        sys_.lift_resource(layer, members, f"lift{counter}", f)
                        counter += 1
            homes = {rid: [l.index for l in sys_.layers if rid in l.resource_ids]
                     for rid in sys_.registry.resources}
            violations += sum(len(h) != 1 for h in homes.values())
            violations += len(sys_.check_partition())
    return violations == 0, f"{sequences} sequences x 100 ops, {violations} violations"


def criterion_4():
    mismatches = []
    for n in range(13):
        sys_ = build_layer_system(2, ["hw", "os"])
        names = [f"r{i:02d}" for i in range(n)]
        for rid in names:
            sys_.registry.make_resource(rid, 1)
            sys_.assign_resource(1, rid)
        brute = {tuple(names[i] for i in range(n) if mask >> i & 1) for mask in range(1 << n)}
        listed = sys_.enumerate_candidate_aggregations(1)
        count = sys_.count_candidate_aggregations(1)
        if not (count == len(listed) == len(brute) and set(listed) == brute):
            mismatches.append(n)
    return not mismatches, f"n=0..12, mismatches at {mismatches}"


def criterion_5():
    contradictions = []
    docs = [(name, parse_model((CORPUS / f"{name}.model").read_text()))
            for name in ("independent_pair", "hold_and_wait", "ring3")]
    rng = random.Random(7)
    for i in range(ORACLE_MODELS):
        text = contended_model(rng, SMALL) if i % 2 else random_model(rng, SMALL)
        docs.append((f"random{i}", parse_model(text)))
    reachable = engine_deadlocks = cut_off = 0
    for name, doc in docs:
        oracle = brute_force_reachability(doc)
        res = Engine(doc).run(2000)
        reachable += oracle.deadlock_reachable
        cut_off += not oracle.exhausted
        engine_deadlocks += res.reason is StopReason.DEADLOCK
        if res.reason is StopReason.DEADLOCK and not oracle.deadlock_reachable:
            contradictions.append(name)
        if not oracle.deadlock_reachable and res.reason not in (StopReason.COMPLETED, StopReason.MAX_STEPS):
            contradictions.append(name)
    expected = [n for n, d in docs[:3]]
    fixtures_ok = [brute_force_reachability(d).deadlock_reachable for _, d in docs[:3]] == [False, True, True]
    ok = not contradictions and fixtures_ok
    return ok, (
        f"{len(docs)} models ({', '.join(expected)} + {ORACLE_MODELS} random), "
        f"engine deadlocks {engine_deadlocks}, oracle reachable {reachable}, "
        f"searches cut off by depth {cut_off}, "
        f"contradictions {contradictions}"
    )


def _run_cli_trace(path: Path, out: Path) -> None:
    with contextlib.redirect_stdout(io.StringIO()), contextlib.redirect_stderr(io.StringIO()):
        cli_main(["run", str(path), "--trace", str(out)])


def criterion_6():
    differing = []
    with tempfile.TemporaryDirectory() as tmp:
        for path in CORPUS_FILES:
            a, b = Path(tmp, path.stem + ".a"), Path(tmp, path.stem + ".b")
            _run_cli_trace(path, a)
            _run_cli_trace(path, b)
            if a.read_bytes() != b.read_bytes() or not a.read_bytes():
                differing.append(path.name)
    return not differing, f"{len(CORPUS_FILES)} corpus files, differing {differing}"


def criterion_7():
    eng = Engine(parse_model((CORPUS / "nop100.model").read_text()))
    eng.admit_all()
    eng.step()  # SET mem 2 42
    snapshot = {rid: r.state for rid, r in eng.registry.resources.items()}
    mark = len(eng.events)
    for _ in range(100):
        eng.step()
    ops = [e.detail["opcode"] for e in eng.events[mark:] if e.kind is EventKind.INSTR]
    after = {rid: r.state for rid, r in eng.registry.resources.items()}
    ok = ops == ["NOP"] * 100 and after == snapshot
    return ok, f"{len(ops)} NOPs, state vectors unchanged: {after == snapshot}"


# pc sequences derived by hand from the fixture listings
PINGPONG_PCS = [0, 2, 3, 7, 8, 4, 5, 9, 10, 6, 1]
CALLRET_PCS = [0, 2, 4, 5, 3, 1]


def criterion_8():
    def pcs(name):
        events = run(parse_model((CORPUS / f"{name}.model").read_text()))
        return [e.detail["pc"] for e in events if e.kind is EventKind.INSTR]

    got_pp, got_cr = pcs("pingpong"), pcs("callret")
    ok = got_pp == PINGPONG_PCS and got_cr == CALLRET_PCS
    return ok, f"pingpong {got_pp}, callret {got_cr}"


def criterion_9():
    bad, stats, _ = fuzz_run()
    return not bad["zero_init"], f"{stats['reads']} reads checked, {len(bad['zero_init'])} violations"


def _mutate(rng: random.Random, data: bytes) -> bytes:
    buf = bytearray(data)
    for _ in range(rng.randint(1, 8)):
        choice = rng.random()
        pos = rng.randrange(len(buf) + 1)
        if choice < 0.4 and buf:
            buf[min(pos, len(buf) - 1)] = rng.randrange(256)
        elif choice < 0.7:
            buf[pos:pos] = bytes([rng.randrange(256)])
        elif choice < 0.9:
            del buf[pos:pos + rng.randint(1, 10)]
        else:
            buf[pos:pos] = rng.choice([b"\n", b"end\n", b"begin\n", b"#", b":", b",", b"\r\n"])
    return bytes(buf)


def criterion_10():
    round_trip_failures = []
    sources = []
    for path in CORPUS_FILES:
        raw = path.read_bytes()
        sources.append(raw)
        doc = parse_model(raw)
        if parse_model(serialize_model(doc)) != doc:
            round_trip_failures.append(path.name)
    rng = random.Random(99)
    crashes = []
    for i in range(BYTE_FUZZ):
        if i % 4 == 0:
            data = bytes(rng.randrange(256) for _ in range(rng.randint(0, 200)))
        else:
            data = _mutate(rng, rng.choice(sources))
        try:
            doc, errors = check_model(data)
            assert (doc is None) == bool(errors)
        except Exception as exc:  # any escape is a crash
            crashes.append((i, type(exc).__name__))
    ok = not round_trip_failures and not crashes
    return ok, (
        f"round-trip {len(CORPUS_FILES) - len(round_trip_failures)}/{len(CORPUS_FILES)}, "
        f"{BYTE_FUZZ} fuzz cases, {len(crashes)} crashes"
    )


CRITERIA = {
    1: ("state-formula fidelity", criterion_1),
    2: ("processor conservation", criterion_2),
    3: ("layer partition", criterion_3),
    4: ("power-set law", criterion_4),
    5: ("deadlock oracle equivalence", criterion_5),
    6: ("determinism", criterion_6),
    7: ("NOP neutrality", criterion_7),
    8: ("transfer and call-return semantics", criterion_8),
    9: ("zero-init on allocation", criterion_9),
    10: ("parser round-trip and fuzz", criterion_10),
}


def evaluate(n: int) -> tuple[bool, str]:
    title, check = CRITERIA[n]
    start = time.perf_counter()
    ok, detail = check()
    secs = time.perf_counter() - start
    line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail} [{secs:.1f}s]"
    return ok, line


@pytest.mark.parametrize("n", sorted(CRITERIA))
def test_criterion(n):
    ok, line = evaluate(n)
    ACCEPTANCE_LINES[n] = line
    print(line)
    assert ok, line


if __name__ == "__main__":
    results = [evaluate(n) for n in sorted(CRITERIA)]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
