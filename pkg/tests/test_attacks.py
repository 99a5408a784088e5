import json

import pytest

from aslrmask.addr import ConfigError
from aslrmask.attacks import (ATTACKS, LEAK, NO_LEAK, AttackReport,
                              anc_slow_sets, get_attack, outliers,
                              protected_bits_seen, run_attack,
                              template_match, unique_extreme, verdict)
from aslrmask.machine import SystemConfig
from aslrmask.presets import KERNEL_REGION, TOY16_REGION, TOY_REGION
from aslrmask.uarch import Geometry, LatencyTable

FAST = ["prefetch", "entrybleed", "drk", "data_bounce", "jump_over_aslr",
        "blindside", "trace_inspection"]


def test_unique_extreme():
    assert unique_extreme([5, 3, 5]) == [1]
    assert unique_extreme([5, 3, 3]) == [0, 1, 2]
    assert unique_extreme([4, 4]) == [0, 1]
    assert unique_extreme([1, 9, 1], lowest=False) == [1]


def test_outliers_and_templates():
    assert outliers([(1, 2), (1, 2), (3, 4)]) == [2]
    assert outliers([1, 1, 1]) == [0, 1, 2]
    assert outliers([1, 2, 3]) == [0, 1, 2]
    assert template_match((1, 2), [(0,), (1, 2), (1, 2)]) == [1, 2]


def _report(cands, planted_index):
    return AttackReport("x", "baseline", planted_index,
                        planted_index * TOY_REGION.subregion_len, [], [],
                        cands)


@pytest.mark.parametrize("cands,planted,expect,mask,bits", [
    ([6], 6, LEAK, 0x38000, 0x30000),
    ([2, 6], 6, LEAK, 0x18000, 0x10000),     # bit 17 unresolved
    ([3], 6, NO_LEAK, 0x38000, 0x18000),     # wrong guess
    (list(range(8)), 6, NO_LEAK, 0, 0),      # no information
    ([], 6, NO_LEAK, 0, 0),
    ([0, 7], 6, NO_LEAK, 0, 0),              # candidates agree on nothing
])
def test_verdict_rule(cands, planted, expect, mask, bits):
    rep = verdict(_report(cands, planted), TOY_REGION)
    assert (rep.verdict, rep.recovered_mask, rep.recovered_bits) == \
        (expect, mask, bits)


def test_recovering_zero_bits_is_a_leak():
    # learning that bits 15-16 are clear is information too
    rep = verdict(_report([0, 4], 0), TOY_REGION)
    assert rep.recovered_mask == 0x18000 and rep.recovered_bits == 0
    assert rep.verdict == LEAK


@pytest.mark.parametrize("name", FAST)
@pytest.mark.parametrize("seed", [1, 3, 5])
def test_attack_leaks_only_in_baseline(name, seed):
    b = run_attack(name, "baseline", seed=seed)
    o = run_attack(name, "oreo", seed=seed)
    assert b.verdict == LEAK, b.summary()
    assert b.recovered_bits == b.planted_offset & b.recovered_mask
    assert o.verdict == NO_LEAK, o.summary()


def test_anc_leaks_only_in_baseline():
    b = run_attack("anc", "baseline", seed=2)
    o = run_attack("anc", "oreo", seed=2)
    assert b.leaked and not o.leaked
    assert anc_slow_sets(b) != anc_slow_sets(run_attack("anc", "baseline",
                                                        index=1))


def test_spectre_leaks_in_both_modes():
    for mode in ("baseline", "oreo"):
        r = run_attack("spectre", mode, seed=4)
        assert r.leaked
        assert r.recovered_bits == r.planted_offset


def test_prefetch_latency_flat_in_masked_mode():
    o = run_attack("prefetch", "oreo", seed=9)
    assert max(o.measurements) == min(o.measurements)
    b = run_attack("prefetch", "baseline", seed=9)
    assert b.measurements.index(min(b.measurements)) == b.planted_index


def test_prefetch_needs_a_mapping():
    r = run_attack("prefetch", "baseline", seed=3, mapped=False)
    assert r.verdict == NO_LEAK and r.planted_index == -1


def test_prefetch_full_kernel_region():
    r = run_attack("prefetch", "baseline", region=KERNEL_REGION, seed=11)
    assert len(r.probes) == 222 and r.leaked
    assert not run_attack("prefetch", "oreo", region=KERNEL_REGION,
                          seed=11).leaked


def test_entrybleed_needs_the_victim():
    r = run_attack("entrybleed", "baseline", seed=3, victim_runs=False)
    assert r.verdict == NO_LEAK


def test_jump_over_aslr_btb_reach():
    r = run_attack("jump_over_aslr", "baseline", seed=3)
    assert r.leaked and r.recovered_bits == r.planted_offset
    # a 4096-entry BTB only indexes bits 2-13: bit 14 aliases away
    small = SystemConfig(geo=Geometry(btb_entries=4096))
    r = run_attack("jump_over_aslr", "baseline", seed=3, sc=small)
    assert r.leaked and len(r.candidates) == 2
    assert r.recovered_mask == 0x3000


def test_blindside_deviations():
    b = run_attack("blindside", "baseline", seed=3)
    o = run_attack("blindside", "oreo", seed=3)
    assert all(b.deviations[s] >= 1 for s in ("TLB", "Cache", "BP", "MMU"))
    assert set(o.deviations.values()) == {0}


def test_trace_inspection_bits():
    b = run_attack("trace_inspection", "baseline", seed=3)
    o = run_attack("trace_inspection", "oreo", seed=3)
    assert protected_bits_seen(b) == [b.planted_offset]
    assert protected_bits_seen(o) == []


def test_bigger_region():
    r = run_attack("drk", "baseline", region=TOY16_REGION, seed=1)
    assert r.leaked and len(r.probes) == 16


def test_latency_override_still_leaks():
    sc = SystemConfig(lat=LatencyTable(dram=300, ptw_level=40))
    assert run_attack("prefetch", "baseline", seed=2, sc=sc).leaked
    assert not run_attack("prefetch", "oreo", seed=2, sc=sc).leaked


def test_registry():
    assert set(ATTACKS) >= {"prefetch", "drk", "data_bounce", "anc",
                            "jump_over_aslr", "entrybleed", "blindside",
                            "trace_inspection", "spectre"}
    with pytest.raises(ConfigError, match="available"):
        get_attack("rowhammer")


def test_report_serialization():
    r = run_attack("prefetch", "baseline", seed=3)
    d = json.loads(r.to_json())
    assert d["verdict"] == LEAK and d["planted"]["index"] == r.planted_index
    rows = r.to_csv().strip().splitlines()
    assert rows[0].startswith("probe,measurement")
    assert len(rows) == 1 + len(r.probes)


def test_same_seed_same_report():
    a = run_attack("data_bounce", "baseline", seed=8)
    b = run_attack("data_bounce", "baseline", seed=8)
    assert a.summary() == b.summary() and a.measurements == b.measurements
