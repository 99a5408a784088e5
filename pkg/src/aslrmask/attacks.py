"""Scripted attacker/victim scenarios against the randomized victim layout.

Every attack follows the same recipe: plant a victim layout, run attacker
and victim phases on a shared microarchitecture, turn the attacker's timer
readings (or the structure input traces) into a set of candidate subregion
indices, and compare what those candidates agree on with the planted
offset.  Scripts never look at the mode: the same programs run in both.
"""
from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .addr import PAGE_SIZE, ConfigError, RandRegion
from .isa import Program, assemble
from .layout import Layout, coarse_layout, sample_layout
from .machine import (ATTACKER_CODE_VA, ATTACKER_DATA_PA, System,
                      SystemConfig, attacker_data)
from .memtable import Mode
from .presets import KERNEL_REGION, TOY_BTB_REGION, TOY_REGION
from .uarch import REPORTED_STRUCTURES, STRUCTURES, deviation_counts

LEAK = "Leak"
NO_LEAK = "NoLeak"

VICTIM_LEN = PAGE_SIZE
SAFE_ADDR = attacker_data(0)


@dataclass
class AttackReport:
    attack: str
    mode: str
    planted_index: int
    planted_offset: int
    probes: List[int]
    measurements: List
    candidates: List[int]
    recovered_mask: int = 0
    recovered_bits: int = 0
    verdict: str = NO_LEAK
    deviations: Dict[str, int] = field(default_factory=dict)
    note: str = ""

    @property
    def leaked(self) -> bool:
        return self.verdict == LEAK

    def summary(self) -> dict:
        return {"attack": self.attack, "mode": self.mode,
                "verdict": self.verdict,
                "recovered": {"mask": hex(self.recovered_mask),
                              "bits": hex(self.recovered_bits)},
                "planted": {"index": self.planted_index,
                            "offset": hex(self.planted_offset)},
                "candidates": self.candidates,
                "deviations": self.deviations, "note": self.note}

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["probe", "measurement"] + list(REPORTED_STRUCTURES))
        dev = [self.deviations.get(s, "") for s in REPORTED_STRUCTURES]
        for p, m in zip(self.probes, self.measurements):
            if isinstance(m, (list, tuple)):
                m = " ".join(str(x) for x in m)
            w.writerow([hex(p), m] + dev)
        return buf.getvalue()


# -- decoding ---------------------------------------------------------------

def unique_extreme(values: Sequence, lowest: bool = True) -> List[int]:
    """Index of the unique minimum (or maximum); every index if not unique."""
    best = min(values) if lowest else max(values)
    hits = [i for i, v in enumerate(values) if v == best]
    if len(hits) == 1 and len(set(values)) > 1:
        return hits
    return list(range(len(values)))


def template_match(observed, templates: Sequence) -> List[int]:
    return [i for i, t in enumerate(templates) if t == observed]


def outliers(features: Sequence) -> List[int]:
    """Indices whose feature value is the rarest one, if it is unique."""
    counts = Counter(features)
    if len(counts) < 2:
        return list(range(len(features)))
    rare = min(counts.values())
    rare_vals = [v for v, c in counts.items() if c == rare]
    if len(rare_vals) != 1:
        return list(range(len(features)))
    return [i for i, f in enumerate(features) if f == rare_vals[0]]


def verdict(report: AttackReport, region: RandRegion) -> AttackReport:
    """Fill recovered bits and the Leak/NoLeak verdict from candidates."""
    cands = sorted(set(report.candidates))
    n = region.num_subregions
    report.candidates = cands
    if not cands or len(cands) >= n:
        report.recovered_mask = report.recovered_bits = 0
        report.verdict = NO_LEAK
        return report
    offs = [c * region.subregion_len for c in cands]
    differ = 0
    for o in offs:
        differ |= o ^ offs[0]
    agree = region.protected_mask & ~differ
    report.recovered_mask = agree
    report.recovered_bits = offs[0] & agree
    if agree and report.recovered_bits == report.planted_offset & agree:
        report.verdict = LEAK
    else:
        report.verdict = NO_LEAK
        report.note = "candidates inconsistent with the planted layout"
    return report


# -- scenario plumbing --------------------------------------------------------

def plant(region: RandRegion, seed: Optional[int] = None,
          index: Optional[int] = None, length: int = VICTIM_LEN) -> Layout:
    if index is not None:
        return coarse_layout(region, length, index)
    return sample_layout(region, length, 0 if seed is None else seed)


def _new_report(name, mode, layout: Optional[Layout], probes, meas, cands):
    idx = layout.index if layout is not None else -1
    off = layout.offset if layout is not None else 0
    return AttackReport(name, Mode(mode).value, idx, off, list(probes),
                        list(meas), list(cands))


def probe_addresses(region: RandRegion, stride: Optional[int] = None,
                    offset: int = 0) -> List[int]:
    stride = stride or region.subregion_len
    return list(range(region.start + offset, region.end, stride))


def _diff(timer_log: List[int], i: int = -2, j: int = -1) -> int:
    return timer_log[j] - timer_log[i]


IDLE_VICTIM = assemble("""
    nop
    nop
    halt
""")

PREFETCH_TWICE = assemble("""
    prefetch r1
    rdtsc r2
    prefetch r1
    rdtsc r3
    halt
""")

PREFETCH_ONCE = assemble("""
    rdtsc r2
    prefetch r1
    rdtsc r3
    halt
""")


def prefetch_attack(mode, region: RandRegion = TOY_REGION,
                    seed: Optional[int] = None, index: Optional[int] = None,
                    stride: Optional[int] = None, mapped: bool = True,
                    sc: Optional[SystemConfig] = None) -> AttackReport:
    """Prefetch each probe twice and time the second one."""
    layout = plant(region, seed, index) if mapped else None
    sys_ = System(mode, layout, IDLE_VICTIM if mapped else None, sc,
                  region=region)
    probes = probe_addresses(region, stride)
    lat = []
    for p in probes:
        sys_.reset_uarch()
        sys_.run_attacker(PREFETCH_TWICE, {1: SAFE_ADDR})
        t = sys_.run_attacker(None, {1: p})
        lat.append(_diff(t.timer_log))
    hits = unique_extreme(lat)
    if len(hits) == 1:
        cands = [region.subregion_index(probes[hits[0]])]
    else:
        cands = list(range(region.num_subregions))
    rep = _new_report("prefetch", mode, layout, probes, lat, cands)
    return verdict(rep, region)


def entrybleed_tlb(mode, region: RandRegion = TOY_REGION,
                   seed: Optional[int] = None, index: Optional[int] = None,
                   victim_runs: bool = True,
                   sc: Optional[SystemConfig] = None) -> AttackReport:
    """The victim's own fetch warms the TLB; the attacker times one prefetch."""
    layout = plant(region, seed, index)
    sys_ = System(mode, layout, IDLE_VICTIM, sc)
    probes = probe_addresses(region)
    lat = []
    for p in probes:
        sys_.reset_uarch()
        sys_.run_attacker(PREFETCH_ONCE, {1: SAFE_ADDR})
        if victim_runs:
            sys_.run_victim()
        t = sys_.run_attacker(None, {1: p})
        lat.append(_diff(t.timer_log))
    rep = _new_report("entrybleed", mode, layout, probes, lat,
                      unique_extreme(lat))
    return verdict(rep, region)


FAULTING_LOAD = assemble("""
    load r2, r1
    halt
""")


def drk_double_fault(mode, region: RandRegion = TOY_REGION,
                     seed: Optional[int] = None, index: Optional[int] = None,
                     sc: Optional[SystemConfig] = None) -> AttackReport:
    """Two faulting accesses per page; a mapped page faults faster twice."""
    layout = plant(region, seed, index)
    sys_ = System(mode, layout, IDLE_VICTIM, sc)
    probes = probe_addresses(region)
    deltas = []
    for p in probes:
        sys_.reset_uarch()
        sys_.run_attacker(FAULTING_LOAD, {1: SAFE_ADDR})
        first = sys_.run_attacker(None, {1: p})
        second = sys_.run_attacker(None, {1: p})
        deltas.append(first.cycles - second.cycles)
    rep = _new_report("drk", mode, layout, probes, deltas,
                      unique_extreme(deltas, lowest=False))
    return verdict(rep, region)


# r1 = 1 makes the branch architecturally taken; a fresh predictor says
# not-taken, so the store/load pair runs transiently
BOUNCE = assemble("""
    rdtsc r10
    bnz r1, done
    store r2, r3
    load r4, r2
    nop
    nop
    nop
    nop
    nop
done:
    rdtsc r11
    halt
""")


def data_bounce(mode, region: RandRegion = TOY_REGION,
                seed: Optional[int] = None, index: Optional[int] = None,
                sc: Optional[SystemConfig] = None) -> AttackReport:
    """Transient store then load to the guess; forwarding needs a mapping."""
    layout = plant(region, seed, index)
    sys_ = System(mode, layout, IDLE_VICTIM, sc)
    probes = probe_addresses(region)
    lat = []
    for p in probes:
        sys_.reset_uarch()
        # training run: branch not taken, harmless addresses
        sys_.run_attacker(BOUNCE, {1: 0, 2: SAFE_ADDR, 3: 7})
        t = sys_.run_attacker(None, {1: 1, 2: p, 3: 7})
        lat.append(_diff(t.timer_log))
    rep = _new_report("data_bounce", mode, layout, probes, lat,
                      unique_extreme(lat))
    return verdict(rep, region)


# -- BTB collisions ---------------------------------------------------------

BRANCH_VICTIM = assemble("""
    nop
    nop
    br over
    nop
over:
    halt
""")
VICTIM_BRANCH_AT = 8


def btb_index_span(sc: Optional[SystemConfig]) -> int:
    """Bytes of source address space the BTB slots cover before aliasing."""
    return (sc or SystemConfig()).geo.btb_entries * 4


def _btb_probe_program(alias: int) -> Program:
    # the indirect jump sits at an address congruent to the victim branch
    # modulo the BTB index span, but with a different full tag
    base = alias - VICTIM_BRANCH_AT
    return assemble(f"""
    .org {base:#x}
    rdtsc r2
    nop
    jmpr r1
    nop
target:
    rdtsc r3
    halt
    """)


def _btb_candidate_alias(region: RandRegion, c: int, sc) -> int:
    v = region.start + c * region.subregion_len + VICTIM_BRANCH_AT
    return v % btb_index_span(sc)


def _jump_over_measure(mode, region, layout, victim_runs, sc):
    sys_ = System(mode, layout, BRANCH_VICTIM, sc)
    out = []
    for c in range(region.num_subregions):
        alias = _btb_candidate_alias(region, c, sc)
        prog = _btb_probe_program(alias)
        entry = alias - VICTIM_BRANCH_AT
        target = ATTACKER_CODE_VA + entry + 16
        sys_.reset_uarch()
        sys_.run_attacker(prog, {1: target}, entry_offset=entry)
        if victim_runs:
            sys_.run_victim()
        t = sys_.run_attacker(None, {1: target}, entry_offset=entry)
        out.append(_diff(t.timer_log))
    return tuple(out)


@lru_cache(maxsize=None)
def _jump_over_templates(mode: str, region: RandRegion, sc) -> tuple:
    return tuple(_jump_over_measure(mode, region,
                                    coarse_layout(region, VICTIM_LEN, i),
                                    True, sc)
                 for i in range(region.num_subregions))


def jump_over_aslr(mode, region: RandRegion = TOY_BTB_REGION,
                   seed: Optional[int] = None, index: Optional[int] = None,
                   victim_runs: bool = True,
                   sc: Optional[SystemConfig] = None) -> AttackReport:
    """BTB Prime+Probe: which attacker branch slot did the victim evict?"""
    if region.subregion_len >= btb_index_span(sc):
        raise ConfigError("BTB collisions need subregions below the index span")
    layout = plant(region, seed, index)
    obs = _jump_over_measure(mode, region, layout, victim_runs, sc)
    tpl = _jump_over_templates(Mode(mode).value, region, sc)
    probes = [ATTACKER_CODE_VA + _btb_candidate_alias(region, c, sc)
              for c in range(region.num_subregions)]
    rep = _new_report("jump_over_aslr", mode, layout, probes, obs,
                      template_match(obs, tpl))
    return verdict(rep, region)


# -- AnC: cache Prime+Probe on page-table walks -------------------------------

EVICTION_PAGES = 16


def _eviction_lines(sc: SystemConfig) -> List[List[int]]:
    """For every L1D set, one attacker line per way, from 16 data pages."""
    geo = sc.geo
    sets = geo.l1_bytes // (geo.l1_ways * geo.line_bytes)
    per_page = PAGE_SIZE // geo.line_bytes
    colors = sets // per_page
    if EVICTION_PAGES < colors * geo.l1_ways:
        raise ConfigError("not enough attacker pages for eviction sets")
    base_color = (ATTACKER_DATA_PA >> 12) % colors
    out = []
    for s in range(sets):
        color, line = divmod(s, per_page)
        pages = [j for j in range(EVICTION_PAGES)
                 if (base_color + j) % colors == color][:geo.l1_ways]
        out.append([attacker_data(j, line * geo.line_bytes) for j in pages])
    return out


def _prime_program(lines: List[List[int]], passes: int = 2) -> Program:
    body = []
    for _ in range(passes):
        for ways in lines:
            for a in ways:
                body.append(f"movi r1, {a:#x}\nload r2, r1")
    body.append("halt")
    return assemble("\n".join(body))


def _probe_program(lines: List[List[int]]) -> Program:
    body = []
    for ways in lines:
        body.append("rdtsc r3")
        for a in ways:
            body.append(f"movi r1, {a:#x}\nload r2, r1")
    body.append("rdtsc r3\nhalt")
    return assemble("\n".join(body))


@lru_cache(maxsize=None)
def _anc_programs(sc: SystemConfig) -> Tuple[Program, Program]:
    lines = _eviction_lines(sc)
    return _prime_program(lines), _probe_program(lines)


def _anc_measure(mode, layout, victim_runs, sc) -> tuple:
    sc = sc or SystemConfig(record=False)
    prime, probe = _anc_programs(sc)
    sys_ = System(mode, layout, IDLE_VICTIM, sc)
    sys_.run_attacker(prime)
    if victim_runs:
        sys_.run_victim()
    t = sys_.run_attacker(probe)
    log = t.timer_log
    return tuple(b - a for a, b in zip(log, log[1:]))


@lru_cache(maxsize=None)
def _anc_templates(mode: str, region: RandRegion, sc) -> tuple:
    return tuple(_anc_measure(mode, coarse_layout(region, VICTIM_LEN, i),
                              True, sc)
                 for i in range(region.num_subregions))


def anc_ptw_probe(mode, region: RandRegion = TOY_REGION,
                  seed: Optional[int] = None, index: Optional[int] = None,
                  victim_runs: bool = True,
                  sc: Optional[SystemConfig] = None) -> AttackReport:
    """Prime L1D, let the victim walk its page table, probe every set."""
    layout = plant(region, seed, index)
    obs = _anc_measure(mode, layout, victim_runs, sc)
    tpl = _anc_templates(Mode(mode).value, region, sc)
    rep = _new_report("anc", mode, layout, list(range(len(obs))), obs,
                      template_match(obs, tpl))
    return verdict(rep, region)


def anc_slow_sets(rep: AttackReport) -> List[int]:
    """L1D sets whose probe took longer than the all-hit baseline."""
    fastest = min(rep.measurements)
    return [i for i, m in enumerate(rep.measurements) if m > fastest]


# -- trace-based experiments ------------------------------------------------

BLINDSIDE_VICTIM = assemble("""
    movi r9, 1
    bnz r9, out
    jmpr r2
    nop
out:
    halt
""")


def _blindside_trace(mode, layout, guess, sc):
    sys_ = System(mode, layout, BLINDSIDE_VICTIM, sc)
    return sys_.run_victim({2: guess}).structure_inputs()


def blindside_probe(mode, region: RandRegion = TOY_REGION,
                    seed: Optional[int] = None, index: Optional[int] = None,
                    guess: Optional[int] = None,
                    reference: Optional[int] = None,
                    sc: Optional[SystemConfig] = None) -> AttackReport:
    """Transient jump to a guessed pointer; diff per-structure input traces.

    ``deviations`` compares ``guess`` (default: the valid entry) against
    ``reference`` (default: the next subregion).  The verdict comes from a
    sweep over every subregion: a guess whose trace shape is the odd one
    out is taken as the mapped one.
    """
    layout = plant(region, seed, index)
    if guess is None:
        guess = layout.entry
    if reference is None:
        nxt = (layout.index + 1) % region.num_subregions
        reference = region.subregion_base(nxt)
    dev = deviation_counts(_blindside_trace(mode, layout, guess, sc),
                           _blindside_trace(mode, layout, reference, sc))
    probes = probe_addresses(region)
    feats = []
    for p in probes:
        tr = _blindside_trace(mode, layout, p, sc)
        feats.append(tuple(len(tr[s]) for s in REPORTED_STRUCTURES))
    rep = _new_report("blindside", mode, layout, probes, feats,
                      outliers(feats))
    rep.deviations = dev
    return verdict(rep, region)


SECRET_USER_VICTIM = assemble("""
    load r2, r1
    jmpr r3
    nop
    nop
target:
    halt
""")


def secret_pointer_addresses(trace_inputs: Dict[str, List[tuple]]
                             ) -> List[int]:
    """Every integer input presented to any structure during a run."""
    out = []
    for s in STRUCTURES:
        for inp in trace_inputs.get(s, []):
            out.extend(x for x in inp if isinstance(x, int))
    return out


def trace_inspection(mode, region: RandRegion = TOY_REGION,
                     seed: Optional[int] = None, index: Optional[int] = None,
                     sc: Optional[SystemConfig] = None) -> AttackReport:
    """Victim dereferences and jumps through secret pointers; look for
    protected bits in what the hardware structures were fed."""
    layout = plant(region, seed, index)
    sys_ = System(mode, layout, SECRET_USER_VICTIM, sc)
    target = SECRET_USER_VICTIM.label("target")
    t = sys_.run_victim({1: f"@valid+{0x800:#x}", 3: f"@valid+{target:#x}"})
    addrs = [a for a in secret_pointer_addresses(t.structure_inputs())
             if region.contains(a)]
    bits = sorted({a & region.protected_mask for a in addrs})
    leaked = [b for b in bits if b]
    cands = sorted({b // region.subregion_len for b in leaked})
    rep = _new_report("trace_inspection", mode, layout, addrs,
                      [a & region.protected_mask for a in addrs],
                      cands if cands else list(range(region.num_subregions)))
    return verdict(rep, region)


def protected_bits_seen(rep: AttackReport) -> List[int]:
    return sorted({m for m in rep.measurements if m})


# -- leakage path 3: pointer value as data ------------------------------------

PROBE_ARRAY_PAGE = 20


def _spectre_victim(region: RandRegion) -> Program:
    sel = region.num_subregions - 1
    return assemble(f"""
    movi r9, 1
    bnz r9, out
    shri r2, r1, {region.protected_lo}
    andi r2, r2, {sel:#x}
    shli r2, r2, 6
    add r2, r2, r8
    load r3, r2
out:
    halt
    """)


TIMED_LOAD = assemble("""
    rdtsc r2
    load r3, r1
    rdtsc r4
    halt
""")


def spectre_probing(mode, region: RandRegion = TOY_REGION,
                    seed: Optional[int] = None, index: Optional[int] = None,
                    sc: Optional[SystemConfig] = None) -> AttackReport:
    """A transient gadget turns a code pointer's bits into a cache line."""
    layout = plant(region, seed, index)
    sys_ = System(mode, layout, _spectre_victim(region), sc)
    sys_.run_victim({1: "@valid", 8: attacker_data(PROBE_ARRAY_PAGE)})
    n, line = region.num_subregions, sys_.sc.geo.line_bytes
    probes = [attacker_data(PROBE_ARRAY_PAGE, i * line) for i in range(n)]
    # warm code lines and the probe page's translation on an unused line
    sys_.run_attacker(TIMED_LOAD, {1: attacker_data(PROBE_ARRAY_PAGE, n * line)})
    lat = [_diff(sys_.run_attacker(None, {1: p}).timer_log) for p in probes]
    rep = _new_report("spectre", mode, layout, probes, lat,
                      unique_extreme(lat))
    return verdict(rep, region)


ATTACKS: Dict[str, Callable[..., AttackReport]] = {
    "prefetch": prefetch_attack,
    "entrybleed": entrybleed_tlb,
    "drk": drk_double_fault,
    "data_bounce": data_bounce,
    "jump_over_aslr": jump_over_aslr,
    "anc": anc_ptw_probe,
    "blindside": blindside_probe,
    "trace_inspection": trace_inspection,
    "spectre": spectre_probing,
}

DEFAULT_REGION = {
    "jump_over_aslr": TOY_BTB_REGION,
}


def get_attack(name: str) -> Callable[..., AttackReport]:
    try:
        return ATTACKS[name]
    except KeyError:
        raise ConfigError(
            f"unknown attack {name!r}; available: {sorted(ATTACKS)}") from None


def run_attack(name: str, mode, **kw) -> AttackReport:
    return get_attack(name)(mode, **kw)
