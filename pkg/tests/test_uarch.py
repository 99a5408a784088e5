from collections import OrderedDict

import pytest
from hypothesis import given, strategies as st

from aslrmask.addr import ConfigError
from aslrmask.layout import coarse_layout
from aslrmask.memtable import Mode, build_page_table
from aslrmask.presets import TOY_REGION
from aslrmask.uarch import (BranchPred, CacheHierarchy, Geometry,
                            LatencyTable, SetAssoc, Tlb, Uarch,
                            deviation_counts, event_line, parse_trace)


class RefLru:
    """Per-set OrderedDict, oldest first."""

    def __init__(self, sets, ways):
        self.sets, self.ways = sets, ways
        self.d = {}

    def lookup(self, tag):
        od = self.d.get(tag % self.sets)
        if od is None or tag not in od:
            return False
        od.move_to_end(tag)
        return True

    def insert(self, tag):
        od = self.d.setdefault(tag % self.sets, OrderedDict())
        if tag in od:
            od.move_to_end(tag)
            return None
        victim = None
        if len(od) >= self.ways:
            victim, _ = od.popitem(last=False)
        od[tag] = True
        return victim

    def snapshot(self):
        return tuple((s, tuple(od)) for s, od in sorted(self.d.items()) if od)


ops = st.lists(st.tuples(st.sampled_from(["lookup", "insert"]),
                         st.integers(0, 40)), max_size=200)


@given(st.integers(1, 4), st.integers(1, 4), ops)
def test_lru_matches_reference(sets, ways, seq):
    sut, ref = SetAssoc(sets, ways), RefLru(sets, ways)
    for op, tag in seq:
        assert getattr(sut, op)(tag) == getattr(ref, op)(tag)
        assert sut.snapshot() == ref.snapshot()
    for s in range(sets):
        assert len(sut.set_contents(s)) <= ways


def test_lru_eviction_order():
    c = SetAssoc(1, 2)
    c.insert(1)
    c.insert(2)
    c.lookup(1)
    assert c.insert(3) == 2
    assert c.set_contents(0) == (1, 3)


def test_tlb_payload_follows_eviction():
    t = Tlb(entries=2, ways=2)
    t.fill(1, 10, 1, 3)
    t.fill(2, 20, 1, 0)
    t.fill(3, 30, 1, 0)
    assert t.access(1) is None
    assert t.access(3) == (30, 1, 0)
    # offset fields never appear in the observable snapshot
    assert t.snapshot() == ((0, ((2, 20, 1), (3, 30, 1))),)


def test_cache_latencies():
    lat = LatencyTable()
    c = CacheHierarchy(Geometry(), lat)
    assert c.touch(0x1000) == lat.dram
    assert c.touch(0x1008) == lat.l1_hit
    assert c.touch(0x1000, instruction=True) == lat.l2_hit
    assert c.touch(0x1000, instruction=True) == lat.l1_hit


def test_branch_predictor():
    bp = BranchPred(btb_entries=16)
    assert bp.predict(0x100) is None and not bp.predict_taken(0x100)
    bp.update(0x200, 0x100)
    assert bp.predict(0x100) == 0x200 and bp.predict_taken(0x100)
    # same slot, different source: full tags keep it from aliasing
    assert bp.predict(0x100 + 16 * 4) is None
    bp.update(0x104, 0x100)
    assert not bp.predict_taken(0x100)
    assert bp.predict(0x100) == 0x200


def test_bad_latency_and_geometry():
    with pytest.raises(ConfigError):
        LatencyTable(dram=0)
    with pytest.raises(ConfigError):
        LatencyTable(l2_hit=200)
    with pytest.raises(ConfigError):
        Geometry(tlb_entries=10, tlb_ways=4)
    with pytest.raises(ConfigError):
        Geometry(l1_bytes=1000)


def test_translate_miss_then_hit():
    L = coarse_layout(TOY_REGION, 0x1000, 1)
    pm = build_page_table(L, Mode.BASELINE)
    ua = Uarch()
    t, cyc = ua.translate(L.entry, pm)
    assert t[0] == L.pstart >> 12 and cyc == 4 * 20
    t2, cyc2 = ua.translate(L.entry + 8, pm)
    assert t2 == t and cyc2 == 1
    kinds = [s for _, s, _ in ua.log.events]
    assert kinds == ["TLB", "MMU", "Cache", "Cache", "Cache", "Cache", "TLB",
                     "TLB"]


def test_translate_unmapped_walks_without_fill():
    pm = build_page_table(coarse_layout(TOY_REGION, 0x1000, 1), Mode.BASELINE)
    ua = Uarch()
    t, _ = ua.translate(TOY_REGION.start, pm)
    assert t is None
    assert ua.tlb.snapshot() == ()


def test_trace_line_round_trip():
    e = (3, "TLB", ("lookup", 0xFFFF0000))
    line = event_line(e)
    assert line == ('{"step": 3, "structure": "TLB", '
                    '"input": ["lookup", "0xffff0000"]}')
    assert parse_trace(line + "\n") == [(3, "TLB", ("lookup", "0xffff0000"))]


def test_deviation_counts():
    a = {"TLB": [(1,), (2,), (3,)], "Cache": [(1,)], "BP": [], "MMU": []}
    assert deviation_counts(a, a) == {"TLB": 0, "Cache": 0, "BP": 0, "MMU": 0}
    b = dict(a, TLB=[(1,), (9,), (3,), (4,)])
    assert deviation_counts(a, b)["TLB"] == 2
    with pytest.raises(ConfigError):
        deviation_counts(a, {"TLB": []}, ["TLB", "Cache"])


def test_guard_rejects_unmasked_key():
    ua = Uarch()
    ua.guard_regions = (TOY_REGION,)
    ua.check_key(TOY_REGION.start + 0x40)
    with pytest.raises(AssertionError):
        ua.check_key(TOY_REGION.start + 0x8040)
