"""Address-indexed microarchitecture: TLB, caches, branch predictor, LSQ.

Every structure holds metadata only.  Lists inside a set are kept in LRU
order (least recent first), which is also the order they are serialized
in, so observations carry replacement state.
"""
from __future__ import annotations

import difflib
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .addr import PAGE_SHIFT, ConfigError, RandRegion
from .memtable import Mode, PhysMem, decode_offset

STRUCTURES = ("BP", "TLB", "Cache", "MMU", "LSQ")
REPORTED_STRUCTURES = ("TLB", "Cache", "BP", "MMU")


@dataclass(frozen=True)
class LatencyTable:
    tlb_hit: int = 1
    ptw_level: int = 20
    l1_hit: int = 4
    l2_hit: int = 14
    dram: int = 120
    btb_miss: int = 12
    fault: int = 300
    forward: int = 2
    step: int = 1

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if v <= 0:
                raise ConfigError(f"latency {k} must be positive")
        if not self.dram > self.l2_hit > self.l1_hit:
            raise ConfigError("need dram > l2_hit > l1_hit")


@dataclass(frozen=True)
class Geometry:
    tlb_entries: int = 64
    tlb_ways: int = 4
    l1_bytes: int = 64 * 1024
    l1_ways: int = 8
    l2_bytes: int = 2 * 1024 * 1024
    l2_ways: int = 16
    line_bytes: int = 64
    btb_entries: int = 8192
    dir_entries: int = 8192

    def __post_init__(self):
        if self.tlb_entries % self.tlb_ways:
            raise ConfigError("tlb_entries must be a multiple of tlb_ways")
        for size, ways in ((self.l1_bytes, self.l1_ways),
                           (self.l2_bytes, self.l2_ways)):
            if size % (ways * self.line_bytes):
                raise ConfigError("cache size must be ways * line * sets")

    @property
    def line_shift(self) -> int:
        return self.line_bytes.bit_length() - 1


class SetAssoc:
    """True-LRU set-associative tag store."""

    __slots__ = ("sets", "ways", "table", "_snap")

    def __init__(self, sets: int, ways: int):
        self.sets = sets
        self.ways = ways
        self.table: Dict[int, List[int]] = {}
        self._snap = None

    def lookup(self, tag: int) -> bool:
        lst = self.table.get(tag % self.sets)
        if lst is None or tag not in lst:
            return False
        if lst[-1] != tag:
            lst.remove(tag)
            lst.append(tag)
            self._snap = None
        return True

    def insert(self, tag: int) -> Optional[int]:
        """Insert as MRU; returns the evicted tag, if any."""
        s = tag % self.sets
        lst = self.table.get(s)
        if lst is None:
            lst = self.table[s] = []
        self._snap = None
        if tag in lst:
            lst.remove(tag)
            lst.append(tag)
            return None
        victim = lst.pop(0) if len(lst) >= self.ways else None
        lst.append(tag)
        return victim

    def contains(self, tag: int) -> bool:
        lst = self.table.get(tag % self.sets)
        return lst is not None and tag in lst

    def set_contents(self, s: int) -> Tuple[int, ...]:
        return tuple(self.table.get(s, ()))

    def snapshot(self) -> tuple:
        if self._snap is None:
            self._snap = tuple((s, tuple(lst))
                               for s, lst in sorted(self.table.items()) if lst)
        return self._snap


class Tlb:
    """Tags are page numbers of the lookup key (virtual or masked)."""

    def __init__(self, entries: int = 64, ways: int = 4):
        self.tags = SetAssoc(entries // ways, ways)
        self.payload: Dict[int, Tuple[int, int, int]] = {}

    def access(self, vpn: int) -> Optional[Tuple[int, int, int]]:
        if self.tags.lookup(vpn):
            return self.payload[vpn]
        return None

    def fill(self, vpn: int, ppn: int, perms: int, offset_field: int) -> None:
        victim = self.tags.insert(vpn)
        if victim is not None:
            del self.payload[victim]
        self.payload[vpn] = (ppn, int(perms), offset_field)

    def snapshot(self) -> tuple:
        # offset fields are secret-bearing data, never part of the observation
        return tuple((s, tuple((t, self.payload[t][0], self.payload[t][1])
                               for t in tags))
                     for s, tags in self.tags.snapshot())


class CacheHierarchy:
    """Independent L1I, L1D and a shared L2 of line-address tags."""

    def __init__(self, geo: Geometry, lat: LatencyTable):
        sh = geo.line_shift
        self.shift = sh
        self.l1i = SetAssoc(geo.l1_bytes // (geo.l1_ways << sh), geo.l1_ways)
        self.l1d = SetAssoc(geo.l1_bytes // (geo.l1_ways << sh), geo.l1_ways)
        self.pt = SetAssoc(geo.l2_bytes // (geo.l2_ways << sh), geo.l2_ways)
        self.lat = lat

    def touch(self, paddr: int, instruction: bool = False) -> int:
        line = paddr >> self.shift
        l1 = self.l1i if instruction else self.l1d
        if l1.lookup(line):
            return self.lat.l1_hit
        if self.pt.lookup(line):
            l1.insert(line)
            return self.lat.l2_hit
        self.pt.insert(line)
        l1.insert(line)
        return self.lat.dram

    def l1d_set(self, paddr: int) -> int:
        return (paddr >> self.shift) % self.l1d.sets

    def snapshot(self) -> tuple:
        return (self.l1i.snapshot(), self.l1d.snapshot(), self.pt.snapshot())


class BranchPred:
    """Direct-mapped BTB with full source tags plus last-taken directions."""

    def __init__(self, btb_entries: int = 8192, dir_entries: int = 8192):
        self.btb_entries = btb_entries
        self.dir_entries = dir_entries
        self.btb: Dict[int, Tuple[int, int]] = {}
        self.dirs: Dict[int, bool] = {}
        self._snap = None

    def slot(self, src: int) -> int:
        return (src >> 2) % self.btb_entries

    def predict(self, src: int) -> Optional[int]:
        e = self.btb.get(self.slot(src))
        if e is not None and e[0] == src:
            return e[1]
        return None

    def predict_taken(self, src: int) -> bool:
        return self.dirs.get((src >> 2) % self.dir_entries, False)

    def update(self, target: int, src: int) -> None:
        taken = target != src + 4
        if taken:
            self.btb[self.slot(src)] = (src, target)
        self.dirs[(src >> 2) % self.dir_entries] = taken
        self._snap = None

    def snapshot(self) -> tuple:
        if self._snap is None:
            self._snap = (tuple(sorted(self.btb.items())),
                          tuple(sorted(self.dirs.items())))
        return self._snap


class LsqEntry:
    __slots__ = ("seq", "kind", "key", "ppn", "translated", "value",
                 "extracted_bits", "precheck_ok")

    def __init__(self, seq, kind, key, ppn, translated, value=0,
                 extracted_bits=0, precheck_ok=None):
        self.seq = seq
        self.kind = kind
        self.key = key
        self.ppn = ppn
        self.translated = translated
        self.value = value
        self.extracted_bits = extracted_bits
        self.precheck_ok = precheck_ok


class TraceLog:
    """Per-structure input trace as (step, structure, inputs) events."""

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.events: List[Tuple[int, str, tuple]] = []

    def emit(self, step: int, structure: str, inputs: tuple) -> None:
        if self.enabled:
            self.events.append((step, structure, inputs))

    def by_structure(self) -> Dict[str, List[tuple]]:
        out: Dict[str, List[tuple]] = {s: [] for s in STRUCTURES}
        for _, s, inp in self.events:
            out[s].append(inp)
        return out

    def to_jsonl(self) -> str:
        return "".join(event_line(e) + "\n" for e in self.events)


def _hex(x) -> str:
    return x if isinstance(x, str) else f"{x:#x}"


def event_line(e: Tuple[int, str, tuple]) -> str:
    step, s, inp = e
    return json.dumps({"step": step, "structure": s,
                       "input": [_hex(x) for x in inp]})


def parse_trace(text: str) -> List[Tuple[int, str, tuple]]:
    out = []
    for line in text.splitlines():
        if line.strip():
            d = json.loads(line)
            out.append((d["step"], d["structure"], tuple(d["input"])))
    return out


class Uarch:
    """The adversary-visible state mu = <BP, LSQ, Cache, TLB> plus trace log."""

    def __init__(self, geo: Geometry = Geometry(),
                 lat: LatencyTable = LatencyTable(), record: bool = True):
        self.geo = geo
        self.lat = lat
        self.tlb = Tlb(geo.tlb_entries, geo.tlb_ways)
        self.cache = CacheHierarchy(geo, lat)
        self.bp = BranchPred(geo.btb_entries, geo.dir_entries)
        self.lsq: List[LsqEntry] = []
        self.log = TraceLog(record)
        self.step = 0
        # masked mode asserts every key presented has protected bits clear
        self.guard_regions: Sequence[RandRegion] = ()

    def check_key(self, key: int) -> None:
        for r in self.guard_regions:
            if r.start <= key < r.end and key & r.protected_mask:
                raise AssertionError(
                    f"unmasked key {key:#x} presented to hardware")

    def translate(self, key: int, pm: PhysMem
                  ) -> Tuple[Optional[Tuple[int, int, int]], int]:
        """TLB lookup, walking the page table on a miss.

        Returns the (ppn, perms, offset_field) translation or None, and the
        cycles spent.  On a hit no PTE lines are touched; on a miss every
        walked PTE is touched through L1D/L2 and a valid leaf fills the TLB.
        """
        vpn = key >> PAGE_SHIFT
        self.log.emit(self.step, "TLB", ("lookup", vpn << PAGE_SHIFT))
        hit = self.tlb.access(vpn)
        if hit is not None:
            return hit, self.lat.tlb_hit
        seq, pte = pm.walk(key)
        self.log.emit(self.step, "MMU", tuple(seq))
        cycles = self.lat.ptw_level * max(len(seq), 1)
        touch = self.cache.touch
        for a in seq:
            self.log.emit(self.step, "Cache", (a,))
            touch(a)
        if pte is None:
            return None, cycles
        t = (pte.ppn, int(pte.perms), pte.offset_field)
        self.log.emit(self.step, "TLB", ("fill", vpn << PAGE_SHIFT, pte.ppn))
        self.tlb.fill(vpn, pte.ppn, pte.perms, pte.offset_field)
        return t, cycles

    def touch(self, paddr: int, instruction: bool = False) -> int:
        self.log.emit(self.step, "Cache", (paddr & ~(self.geo.line_bytes - 1),))
        return self.cache.touch(paddr, instruction)

    def bp_update(self, target: int, src: int) -> None:
        self.log.emit(self.step, "BP", (src, target))
        self.bp.update(target, src)

    def lsq_push(self, e: LsqEntry) -> None:
        self.log.emit(self.step, "LSQ", (e.kind, e.key))
        self.lsq.append(e)

    def observe(self) -> tuple:
        lsq = tuple((e.kind, e.key, e.ppn) for e in self.lsq)
        return (self.bp.snapshot(), lsq, self.cache.snapshot(),
                self.tlb.snapshot())


def offset_of(entry: Tuple[int, int, int], key: int, pm: PhysMem) -> int:
    """Decode the stored offset field for ``key``'s region (0 outside)."""
    if pm.mode is not Mode.OREO:
        return 0
    for r in pm.regions:
        if r.start <= key < r.end:
            return decode_offset(entry[2], r)
    return 0


def deviation_counts(a: Dict[str, List[tuple]], b: Dict[str, List[tuple]],
                     structures: Sequence[str] = REPORTED_STRUCTURES
                     ) -> Dict[str, int]:
    """Per-structure count of trace lines that differ between two runs."""
    out = {}
    for s in structures:
        if (s in a) != (s in b):
            raise ConfigError(f"structure {s} present in only one trace")
        xa, xb = a.get(s, []), b.get(s, [])
        sm = difflib.SequenceMatcher(None, xa, xb, autojunk=False)
        n = 0
        for op, i1, i2, j1, j2 in sm.get_opcodes():
            if op != "equal":
                n += max(i2 - i1, j2 - j1)
        out[s] = n
    return out
