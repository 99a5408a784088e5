"""Physical memory and radix page tables for baseline and masked modes."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

from .addr import (PAGE_SHIFT, PAGE_SIZE, ConfigError, PhysAddr, RandRegion,
                   classify, virt2mask)
from .layout import Layout

PTE_SIZE = 8
PT_BASE = 0x0800_0000
KERNEL_OFFSET_FIELD_BITS = 9
USER_OFFSET_FIELD_BITS = 5


class Mode(str, enum.Enum):
    BASELINE = "baseline"
    OREO = "oreo"


class Perm(enum.IntFlag):
    NONE = 0
    R = 1
    W = 2
    X = 4
    PRIV = 8


RX_KERNEL = Perm.R | Perm.X | Perm.PRIV
RW_KERNEL = Perm.R | Perm.W | Perm.PRIV
RX_USER = Perm.R | Perm.X
RW_USER = Perm.R | Perm.W
TABLE_PERMS = Perm.R | Perm.W | Perm.X


@dataclass(frozen=True)
class PtConfig:
    levels: int = 4
    index_bits: int = 9
    page_bits: int = PAGE_SHIFT

    @property
    def width(self) -> int:
        return self.levels * self.index_bits + self.page_bits

    def index(self, x: int, level: int) -> int:
        shift = self.page_bits + self.index_bits * (self.levels - 1 - level)
        return (x >> shift) & ((1 << self.index_bits) - 1)

    def canonical(self, x: int) -> bool:
        top = x >> (self.width - 1)
        return top == 0 or top == (1 << (64 - self.width + 1)) - 1


PT4 = PtConfig()
PT5 = PtConfig(levels=5)


@dataclass(frozen=True)
class Pte:
    valid: bool
    ppn: int
    perms: Perm
    offset_field: int = 0


@dataclass(frozen=True)
class StaticMapping:
    """A non-randomized mapping present under every layout and mode."""

    vaddr: int
    paddr: int
    pages: int = 1
    perms: Perm = RW_USER


def encode_offset(offset: int, region: RandRegion, width: int) -> int:
    value = offset >> region.protected_lo
    if value << region.protected_lo != offset or value >= 1 << width:
        raise ConfigError(
            f"offset {offset:#x} does not fit a {width}-bit PTE field")
    return value


def decode_offset(value: int, region: RandRegion) -> int:
    return value << region.protected_lo


class BumpAllocator:
    def __init__(self, base: int = PT_BASE):
        self.next = base

    def alloc(self) -> int:
        addr = self.next
        self.next += PAGE_SIZE
        return addr


def default_allocator(layout: Layout) -> BumpAllocator:
    return BumpAllocator()


@dataclass
class PhysMem:
    mode: Mode
    regions: Tuple[RandRegion, ...]
    cfg: PtConfig
    root: int
    nodes: Dict[int, Dict[int, Pte]]
    program: Dict[int, object] = field(default_factory=dict)
    data: Dict[int, int] = field(default_factory=dict)

    def walk(self, x: int) -> Tuple[List[int], Optional[Pte]]:
        """PTE addresses touched translating ``x`` and the leaf, if valid."""
        cfg = self.cfg
        if not cfg.canonical(x):
            return [], None
        seq = []
        node = self.root
        last = cfg.levels - 1
        for level in range(cfg.levels):
            idx = cfg.index(x, level)
            seq.append(node + idx * PTE_SIZE)
            pte = self.nodes.get(node, {}).get(idx)
            if pte is None or not pte.valid:
                return seq, None
            if level == last:
                return seq, pte
            node = pte.ppn << PAGE_SHIFT
        raise AssertionError("unreachable")

    def read(self, paddr: int) -> int:
        return self.data.get(paddr, 0)

    def write(self, paddr: int, value: int) -> None:
        self.data[paddr] = value & ((1 << 64) - 1)

    def dump(self) -> List[str]:
        """One line per PTE, byte-comparable across layouts."""
        lines = []
        for node in sorted(self.nodes):
            for idx in sorted(self.nodes[node]):
                p = self.nodes[node][idx]
                level = self._levels.get(node, -1)
                lines.append(
                    f"{level} {node:#014x} {idx:03d} {int(p.valid)} "
                    f"{p.ppn:#x} {int(p.perms):#04x} {p.offset_field:#x}")
        return lines

    _levels: Dict[int, int] = field(default_factory=dict, repr=False)


def trans(x: int, pt: PhysMem) -> Optional[PhysAddr]:
    _, pte = pt.walk(x)
    if pte is None:
        return None
    return PhysAddr((pte.ppn << PAGE_SHIFT) | (x & (PAGE_SIZE - 1)))


def ptw(x: int, pt: PhysMem) -> List[int]:
    return pt.walk(x)[0]


def offset_lookup(w: int, pt: PhysMem) -> Optional[int]:
    _, pte = pt.walk(w)
    if pte is None:
        return None
    region = classify(w, pt.regions)
    if region is None:
        return 0
    return decode_offset(pte.offset_field, region)


def _leaf_entries(layout: Optional[Layout], mode: Mode,
                  static: Sequence[StaticMapping],
                  program_perms: Perm,
                  regions: Sequence[RandRegion]) -> List[Tuple[int, Pte]]:
    entries: Dict[int, Pte] = {}

    def put(vpn, pte):
        if vpn in entries:
            raise ConfigError(f"page {vpn << PAGE_SHIFT:#x} mapped twice")
        entries[vpn] = pte

    if layout is not None:
        width = (KERNEL_OFFSET_FIELD_BITS if program_perms & Perm.PRIV
                 else USER_OFFSET_FIELD_BITS)
        for v, w, p, off in layout.pages():
            if mode is Mode.OREO:
                put(w >> PAGE_SHIFT, Pte(True, p >> PAGE_SHIFT, program_perms,
                                         encode_offset(off, layout.region,
                                                       width)))
            else:
                put(v >> PAGE_SHIFT, Pte(True, p >> PAGE_SHIFT, program_perms))
    for m in static:
        for i in range(m.pages):
            va = m.vaddr + i * PAGE_SIZE
            if classify(va, regions) is not None:
                raise ConfigError(
                    f"static mapping {va:#x} lies inside a randomization region")
            put(va >> PAGE_SHIFT,
                Pte(True, (m.paddr >> PAGE_SHIFT) + i, m.perms))
    return sorted(entries.items())


def build_page_table(layout: Optional[Layout], mode: Mode,
                     static: Sequence[StaticMapping] = (),
                     cfg: PtConfig = PT4,
                     program_perms: Perm = RX_KERNEL,
                     regions: Optional[Sequence[RandRegion]] = None,
                     allocator: Callable[[Layout], BumpAllocator]
                     = default_allocator) -> PhysMem:
    """Map the layout's program pages plus static mappings.

    Baseline keys leaves by virtual page; masked mode keys them by masked
    page and stores each page's secret offset in the leaf.  Nodes are bump
    allocated in sorted key order, so the tree's physical placement depends
    on the set of keys only.
    """
    mode = Mode(mode)
    if regions is None:
        regions = (layout.region,) if layout is not None else ()
    regions = tuple(regions)
    alloc = allocator(layout)
    root = alloc.alloc()
    nodes: Dict[int, Dict[int, Pte]] = {root: {}}
    levels = {root: 0}
    last = cfg.levels - 1
    for vpn, leaf in _leaf_entries(layout, mode, static, program_perms,
                                   regions):
        x = vpn << PAGE_SHIFT
        node = root
        for level in range(cfg.levels):
            idx = cfg.index(x, level)
            table = nodes[node]
            if level == last:
                table[idx] = leaf
                break
            pte = table.get(idx)
            if pte is None:
                child = alloc.alloc()
                nodes[child] = {}
                levels[child] = level + 1
                pte = Pte(True, child >> PAGE_SHIFT, TABLE_PERMS)
                table[idx] = pte
            node = pte.ppn << PAGE_SHIFT
    pm = PhysMem(mode, regions, cfg, root, nodes)
    pm._levels = levels
    return pm


def check_disjoint_ranges(pm: PhysMem) -> None:
    """Program, data and page-table pages must not overlap."""
    pt_pages = set(pm.nodes)
    prog_pages = {a & ~(PAGE_SIZE - 1) for a in pm.program}
    data_pages = {a & ~(PAGE_SIZE - 1) for a in pm.data}
    for a, b, what in ((pt_pages, prog_pages, "page table/program"),
                       (pt_pages, data_pages, "page table/data"),
                       (prog_pages, data_pages, "program/data")):
        if a & b:
            raise ConfigError(f"{what} ranges overlap")


def masked_key(v: int, pm: PhysMem) -> int:
    if pm.mode is Mode.OREO:
        return virt2mask(v, pm.regions)
    return v


def iter_program_pages(layout: Layout) -> Iterable[int]:
    for p in range(layout.num_pages):
        yield layout.region.start + p * PAGE_SIZE
