"""Executable equivalence relations and exhaustive non-interference sweeps.

Request traces are compared with three relations: functional equivalence
(same operation, and each address is either identical or maps to the same
physical location under the respective layouts), mask equivalence (same
operation and identical masked addresses) and, on machine states, public
equivalence (same program, same observation, same translations for every
masked program address).  ``check_noninterference`` runs a program under
every layout of a region and compares observation traces step by step.
"""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .addr import PAGE_SIZE, ConfigError, RandRegion, virt2mask
from .isa import Program, assemble
from .layout import Layout, LayoutSet, enumerate_layouts, query
from .machine import (KERNEL_DATA_PA, KERNEL_DATA_VA, Machine, Request,
                      RunTrace, Status, init)
from .memtable import (RW_KERNEL, BumpAllocator, Mode, StaticMapping,
                       build_page_table, default_allocator)
from .presets import TOY_REGION

ADDRESSED = ("fetch", "load", "store", "check")


@dataclass
class EquivalenceVerdict:
    holds: bool
    step: Optional[int] = None
    left: Optional[tuple] = None
    right: Optional[tuple] = None
    reason: str = ""

    def to_dict(self) -> dict:
        def hexify(x):
            if x is None:
                return None
            return [v if isinstance(v, str) else hex(v) for v in x]
        return {"holds": self.holds, "step": self.step,
                "left": hexify(self.left), "right": hexify(self.right),
                "reason": self.reason}


def _pairwise(reqA: Sequence[Request], reqB: Sequence[Request], same_addr
              ) -> EquivalenceVerdict:
    n = min(len(reqA), len(reqB))
    for k in range(n):
        a, b = reqA[k], reqB[k]
        if a.kind != b.kind:
            return EquivalenceVerdict(False, k, tuple(a), tuple(b),
                                      "operation kinds differ")
        if a.kind in ADDRESSED and not same_addr(a.v, b.v):
            return EquivalenceVerdict(False, k, tuple(a), tuple(b),
                                      "addresses differ")
        if a.kind == "fetch" and not same_addr(a.src, b.src):
            return EquivalenceVerdict(False, k, tuple(a), tuple(b),
                                      "branch sources differ")
    if len(reqA) != len(reqB):
        left = tuple(reqA[n]) if n < len(reqA) else None
        right = tuple(reqB[n]) if n < len(reqB) else None
        return EquivalenceVerdict(False, n, left, right,
                                  "trace lengths differ")
    return EquivalenceVerdict(True)


def func_equiv(reqA: Sequence[Request], reqB: Sequence[Request],
               LA: Layout, LB: Layout) -> EquivalenceVerdict:
    def same(v, w):
        if v == w:
            return True
        p = query(LA, v)
        return p is not None and p == query(LB, w)
    return _pairwise(reqA, reqB, same)


def mask_equiv(reqA: Sequence[Request], reqB: Sequence[Request],
               regions: Sequence[RandRegion]) -> EquivalenceVerdict:
    return _pairwise(reqA, reqB,
                     lambda v, w: virt2mask(v, regions) == virt2mask(w, regions))


def _program_pages(layout: Layout):
    start = layout.region.start
    return range(start, start + layout.mapped_len, PAGE_SIZE)


def pub_equiv(SA: Machine, SB: Machine, layout: Layout) -> EquivalenceVerdict:
    """``layout`` fixes the masked program range checked for translations."""
    if SA.pm.program != SB.pm.program:
        return EquivalenceVerdict(False, reason="programs differ")
    oa, ob = SA.ua.observe(), SB.ua.observe()
    if oa != ob:
        return EquivalenceVerdict(False, reason="observations differ")
    for w in _program_pages(layout):
        wa, wb = SA.pm.walk(w), SB.pm.walk(w)
        ta = None if wa[1] is None else wa[1].ppn
        tb = None if wb[1] is None else wb[1].ppn
        if ta != tb:
            return EquivalenceVerdict(False, left=(w, ta or 0),
                                      right=(w, tb or 0),
                                      reason="translations differ")
        if wa[0] != wb[0]:
            return EquivalenceVerdict(False, left=tuple(wa[0]),
                                      right=tuple(wb[0]),
                                      reason="page walks differ")
    return EquivalenceVerdict(True)


def compare_observations(ta: RunTrace, tb: RunTrace) -> EquivalenceVerdict:
    """Pointwise observation equality; crashes must happen at equal steps."""
    oa, ob = ta.observations, tb.observations
    n = min(len(oa), len(ob))
    for k in range(n):
        if oa[k] != ob[k]:
            return EquivalenceVerdict(False, k, reason="observations differ")
    if ta.status is Status.CRASHED or tb.status is Status.CRASHED:
        if (ta.status, ta.crash_step) != (tb.status, tb.crash_step):
            return EquivalenceVerdict(False, n, reason="crash steps differ")
    if len(oa) != len(ob):
        return EquivalenceVerdict(False, n, reason="trace lengths differ")
    return EquivalenceVerdict(True)


# -- probe suite ---------------------------------------------------------------

KERNEL_DATA = StaticMapping(KERNEL_DATA_VA, KERNEL_DATA_PA, 1, RW_KERNEL)


@dataclass(frozen=True)
class Probe:
    name: str
    source: str
    regs: Tuple[Tuple[int, str], ...] = ()

    @property
    def program(self) -> Program:
        return assemble(self.source)


def _pad(src: str, length: int) -> str:
    # a halt at the last word maps the whole extent and gives "end" a home
    return src + f"\n.org {length - 4:#x}\nend:\nhalt\n"


def probe_suite(length: int = 0x8000) -> List[Probe]:
    """Five programs, one per observed structure family plus speculation."""
    pages = length // PAGE_SIZE
    walk = []
    for p in range(pages):
        walk.append(f".org {p * PAGE_SIZE:#x}\np{p}:\nnop\nnop")
        walk.append(f"br p{p + 1}" if p < pages - 1 else "br end")

    sweep = ["movi r3, 0x1040"]
    sweep += ["load r2, r1\nadd r1, r1, r3"] * (pages - 1)
    sweep.append("store r4, r2\nload r5, r4\nbr end")

    ladder = """
        movi r1, 1
        movi r2, 0
        bnz r1, a
        nop
    a:  bnz r2, b
        br c
    b:  nop
    c:  jmpr r3
        nop
    d:  movi r4, 3
    loop:
        subi r4, r4, 1
        bnz r4, loop
        br far
    .org 0x1800
    far:
        jmpr r5
    .org 0x2000
        nop
        br end
    """

    strided = ["movi r3, 0x1000"]
    for k in range(pages - 1):
        strided.append(f"load r2, r1\nadd r1, r1, r3\naddi r1, r1, {0x40 * k:#x}")
    strided.append("load r6, r4\nstore r4, r6\nbr end")

    transient = """
        movi r9, 1
        bnz r9, out
        load r2, r1
        jmpr r3
        nop
    out:
        store r5, r9
        load r6, r1
        br end
    .org 0x3000
        nop
        halt
    """
    kd = f"{KERNEL_DATA_VA:#x}"
    return [
        Probe("linear_fetch_walk", _pad("\n".join(walk), length)),
        Probe("in_region_load_sweep", _pad("\n".join(sweep), length),
              ((1, "@valid+0x100"), (4, kd))),
        Probe("branch_ladder", _pad(ladder, length),
              ((3, "@valid+0x24"), (5, "@valid+0x2000"))),
        Probe("ptw_strided_loads", _pad("\n".join(strided), length),
              ((1, "@valid+0x0"), (4, kd))),
        Probe("transient_probe", _pad(transient, length),
              ((1, "@valid+0x2040"), (3, "@valid+0x3000"), (5, kd))),
    ]


def get_probe(name: str, length: int = 0x8000) -> Probe:
    for p in probe_suite(length):
        if p.name == name:
            return p
    raise ConfigError(f"unknown probe {name!r}; available: "
                      f"{[p.name for p in probe_suite(length)]}")


# -- sweeps -------------------------------------------------------------------

def run_layout(prog: Program, layout: Layout, mode, regs=None,
               budget: int = 20_000, static=(KERNEL_DATA,),
               allocator=None) -> RunTrace:
    m = init(prog, layout, mode, regs=regs, static=static,
             allocator=allocator)
    return m.run(budget)


def _run_job(args):
    prog, layout, mode, regs, budget = args
    return run_layout(prog, layout, mode, regs, budget)


@dataclass
class NonInterferenceReport:
    mode: str
    program: str
    n: int
    pairs_checked: int = 0
    counterexamples: List[dict] = field(default_factory=list)
    distinguishable: List[dict] = field(default_factory=list)
    precondition_violations: List[dict] = field(default_factory=list)
    mask_equiv_violations: List[dict] = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return not self.counterexamples and not self.mask_equiv_violations

    def to_dict(self) -> dict:
        d = asdict(self)
        d["holds"] = self.holds
        d["distinguishable_pairs"] = len(self.distinguishable)
        return d


def check_noninterference(prog: Program, region: RandRegion = TOY_REGION,
                          n: Optional[int] = None, mode=Mode.OREO,
                          budget: int = 20_000, regs=None,
                          name: str = "program", length: Optional[int] = None,
                          jobs: int = 1) -> NonInterferenceReport:
    """Run ``prog`` under each of the first ``n`` layouts and compare all
    pairs.  Pairs whose request traces are not functionally equivalent are
    reported as precondition violations and not compared further."""
    mode = Mode(mode)
    length = length or max(prog.length, 1)
    ls = enumerate_layouts(region, length)
    layouts = list(ls)[: (n or ls.n)]
    rep = NonInterferenceReport(mode.value, name, len(layouts))
    jobs_args = [(prog, L, mode, regs, budget) for L in layouts]
    if jobs > 1 and len(layouts) > 1:
        with ProcessPoolExecutor(jobs) as ex:
            traces = list(ex.map(_run_job, jobs_args))
    else:
        traces = [_run_job(a) for a in jobs_args]
    regions = (region,)
    for i in range(len(layouts)):
        for j in range(i + 1, len(layouts)):
            rep.pairs_checked += 1
            ta, tb = traces[i], traces[j]
            replay = {"program": name, "mode": mode.value,
                      "layouts": [i, j], "budget": budget}
            fe = func_equiv(ta.requests, tb.requests, layouts[i], layouts[j])
            if not fe.holds:
                rep.precondition_violations.append(
                    {"pair": [i, j], "detail": fe.to_dict(), "replay": replay})
                continue
            me = mask_equiv(ta.requests, tb.requests, regions)
            if not me.holds:
                rep.mask_equiv_violations.append(
                    {"pair": [i, j], "detail": me.to_dict(), "replay": replay})
            ob = compare_observations(ta, tb)
            if ob.holds:
                continue
            entry = {"pair": [i, j], "step": ob.step, "reason": ob.reason,
                     "replay": replay}
            if mode is Mode.OREO:
                rep.counterexamples.append(entry)
            else:
                rep.distinguishable.append(entry)
    return rep


def noninterference_sweep(region: RandRegion = TOY_REGION,
                          n: Optional[int] = None,
                          modes=(Mode.OREO, Mode.BASELINE), jobs: int = 1,
                          budget: int = 20_000
                          ) -> Dict[str, List[NonInterferenceReport]]:
    out: Dict[str, List[NonInterferenceReport]] = {}
    length = region.subregion_len
    for mode in modes:
        mode = Mode(mode)
        out[mode.value] = [
            check_noninterference(p.program, region, n, mode, budget,
                                  dict(p.regs), p.name, length, jobs)
            for p in probe_suite(length)]
    return out


@dataclass
class PageTableReport:
    n: int
    pages: int
    pairs_checked: int = 0
    counterexamples: List[dict] = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return not self.counterexamples

    def to_dict(self) -> dict:
        d = asdict(self)
        d["holds"] = self.holds
        return d


def check_page_tables(region: RandRegion = TOY_REGION,
                      n: Optional[int] = None,
                      program_len: Optional[int] = None,
                      allocator=default_allocator,
                      static=(KERNEL_DATA,)) -> PageTableReport:
    """Masked-mode page tables must translate and walk every masked program
    address identically under every layout."""
    length = program_len or region.subregion_len
    layouts = list(enumerate_layouts(region, length))[: (n or
                                                         region.num_subregions)]
    pts = [build_page_table(L, Mode.OREO, static, allocator=allocator)
           for L in layouts]
    pages = list(_program_pages(layouts[0])) if layouts else []
    rep = PageTableReport(len(layouts), len(pages))
    walks = [[pt.walk(w) for w in pages] for pt in pts]
    for i in range(len(layouts)):
        for j in range(i + 1, len(layouts)):
            rep.pairs_checked += 1
            for w, a, b in zip(pages, walks[i], walks[j]):
                ta = None if a[1] is None else a[1].ppn
                tb = None if b[1] is None else b[1].ppn
                if a[0] != b[0] or ta != tb:
                    rep.counterexamples.append(
                        {"pair": [i, j], "masked": hex(w),
                         "left": [hex(x) for x in a[0]],
                         "right": [hex(x) for x in b[0]]})
                    break
    return rep


# name used by the operation contract
check_lemma2 = check_page_tables


def check_mask_equivalence(region: RandRegion = TOY_REGION,
                           n: Optional[int] = None,
                           modes=(Mode.OREO, Mode.BASELINE),
                           budget: int = 20_000) -> List[dict]:
    """Every functionally equivalent pair from the probe sweep must also be
    mask equivalent.  Returns the violations, empty when none are found."""
    bad = []
    for mode in modes:
        for p in probe_suite(region.subregion_len):
            r = check_noninterference(p.program, region, n, mode, budget,
                                      dict(p.regs), p.name,
                                      region.subregion_len)
            bad.extend(r.mask_equiv_violations)
    return bad


def shifted_allocator(layout: Layout) -> BumpAllocator:
    """A deliberately broken allocator whose node placement leaks the layout."""
    return BumpAllocator(0x0800_0000 + layout.index * PAGE_SIZE * 16)


# -- commit-check experiments ------------------------------------------------

COMMIT_PROBE = """
    load r2, r1
    nop
    nop
    halt
"""


def commit_prefix_check(region: RandRegion = TOY_REGION, index: int = 2,
                        wrong_index: int = 5, mode=Mode.OREO,
                        store: bool = False) -> dict:
    """Access an address whose protected bits are wrong and compare the
    observation trace with the same access to the valid address."""
    prog = assemble(COMMIT_PROBE.replace("load r2, r1", "store r1, r2")
                    if store else COMMIT_PROBE)
    L = enumerate_layouts(region, PAGE_SIZE)[index]
    good = L.virt_of(0x40)
    bad = region.start + wrong_index * region.subregion_len + 0x40
    tg = run_layout(prog, L, mode, {1: good})
    tb = run_layout(prog, L, mode, {1: bad})
    c = tb.crash_step if tb.crash_step is not None else tb.steps
    return {"valid_status": tg.status.value, "wrong_status": tb.status.value,
            "crash_step": tb.crash_step,
            "fault": tb.fault.value if tb.fault else None,
            "prefix_equal": tg.observations[:c + 1] == tb.observations[:c + 1],
            "valid_fault": tg.fault.value if tg.fault else None}


def report_json(obj) -> str:
    if hasattr(obj, "to_dict"):
        obj = obj.to_dict()
    return json.dumps(obj, indent=2, sort_keys=True, default=str)
