"""Address roles and the masking algebra.

Three address roles flow through the simulator: randomized virtual
addresses, masked addresses (virtual addresses with the protected bits of
their randomization region cleared) and physical addresses.  The roles are
``NewType`` wrappers over ``int`` so that mixing them up is a type error
while the hot paths stay plain integer arithmetic.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NewType, Optional, Sequence

VirtAddr = NewType("VirtAddr", int)
MaskedAddr = NewType("MaskedAddr", int)
PhysAddr = NewType("PhysAddr", int)

ADDR_BITS = 64
ADDR_MASK = (1 << ADDR_BITS) - 1
PAGE_SHIFT = 12
PAGE_SIZE = 1 << PAGE_SHIFT


class ConfigError(ValueError):
    """Raised for malformed regions, strategies or offsets."""


def is_pow2(x: int) -> bool:
    return x > 0 and x & (x - 1) == 0


def bit_range_mask(lo: int, hi: int) -> int:
    """Mask of bits ``[lo, hi]`` inclusive."""
    if not 0 <= lo <= hi < ADDR_BITS:
        raise ConfigError(f"bad bit range {lo}..{hi}")
    return ((1 << (hi - lo + 1)) - 1) << lo


def lowest_bit(mask: int) -> int:
    return (mask & -mask).bit_length() - 1


@dataclass(frozen=True)
class RandRegion:
    """A randomization region ``[start, end)`` split into equal subregions.

    ``protected_mask`` is derived: it covers the bits that select the
    subregion index, ``[log2(subregion_len), ceil(log2(end - start)))``.
    """

    region_id: int
    start: int
    end: int
    subregion_len: int
    protected_mask: int = field(init=False)

    def __post_init__(self):
        if not 0 <= self.start < self.end <= (1 << ADDR_BITS):
            raise ConfigError(
                f"region {self.region_id}: need start < end, got "
                f"{self.start:#x}..{self.end:#x}")
        if not is_pow2(self.subregion_len) or self.subregion_len < PAGE_SIZE:
            raise ConfigError(
                f"region {self.region_id}: subregion_len must be a power of "
                f"two >= {PAGE_SIZE}")
        size = self.end - self.start
        if size % self.subregion_len:
            raise ConfigError(
                f"region {self.region_id}: size {size:#x} is not a multiple "
                f"of subregion_len {self.subregion_len:#x}")
        lo = self.subregion_len.bit_length() - 1
        hi = math.ceil(math.log2(size)) if size > 1 else 0
        hi = max(hi, lo)
        mask = ((1 << hi) - 1) & ~((1 << lo) - 1)
        if self.start % self.subregion_len or self.start & mask:
            raise ConfigError(
                f"region {self.region_id}: start {self.start:#x} must be "
                f"aligned so its protected bits are zero")
        object.__setattr__(self, "protected_mask", mask)

    @property
    def num_subregions(self) -> int:
        return (self.end - self.start) // self.subregion_len

    @property
    def protected_lo(self) -> int:
        return lowest_bit(self.protected_mask)

    @property
    def protected_bits(self) -> int:
        return bin(self.protected_mask).count("1")

    def contains(self, v: int) -> bool:
        return self.start <= v < self.end

    def subregion_index(self, v: int) -> int:
        return (v - self.start) // self.subregion_len

    def subregion_base(self, i: int) -> VirtAddr:
        if not 0 <= i < self.num_subregions:
            raise ConfigError(f"subregion index {i} out of range")
        return VirtAddr(self.start + i * self.subregion_len)


def check_disjoint(regions: Sequence[RandRegion]) -> None:
    spans = sorted((r.start, r.end, r.region_id) for r in regions)
    for (s0, e0, a), (s1, e1, b) in zip(spans, spans[1:]):
        if s1 < e0:
            raise ConfigError(f"regions {a} and {b} overlap")


def classify(v: int, regions: Sequence[RandRegion]) -> Optional[RandRegion]:
    for r in regions:
        if r.start <= v < r.end:
            return r
    return None


def virt2mask(v: VirtAddr, regions: Sequence[RandRegion]) -> MaskedAddr:
    """Clear the protected bits of ``v``; identity outside every region."""
    for r in regions:
        if r.start <= v < r.end:
            return MaskedAddr(v & ~r.protected_mask)
    return MaskedAddr(v)


def virt2mask_formula(v: VirtAddr,
                      regions: Sequence[RandRegion]) -> MaskedAddr:
    # subtraction/modulo form; must agree with virt2mask
    r = classify(v, regions)
    if r is None:
        return MaskedAddr(v)
    return MaskedAddr((v - r.start) % r.subregion_len + r.start)


def mask2valid(w: MaskedAddr, offset: int,
               region: Optional[RandRegion] = None) -> VirtAddr:
    if region is not None:
        if offset & ~region.protected_mask:
            raise ConfigError(
                f"offset {offset:#x} has bits outside protected mask "
                f"{region.protected_mask:#x}")
        if w & region.protected_mask:
            raise ConfigError(f"{w:#x} is not a masked address")
    return VirtAddr((w + offset) & ADDR_MASK)


def extract_oblivious_bits(v: VirtAddr, region: RandRegion) -> int:
    if not region.contains(v):
        raise ConfigError(f"{v:#x} outside region {region.region_id}")
    return v & region.protected_mask


def is_canonical(v: int, width: int = 48,
                 regions: Sequence[RandRegion] = ()) -> bool:
    """Sign-extension check, ignoring bits protected by a containing region."""
    r = classify(v, regions)
    if r is not None:
        v &= ~r.protected_mask
    top = v >> (width - 1)
    return top == 0 or top == (1 << (ADDR_BITS - width + 1)) - 1


# -- bits-selection strategies and entropy ---------------------------------

class Strategy(str, enum.Enum):
    DEFAULT_BASELINE = "DefaultBaseline"
    NAIVE_OREO = "NaiveOreo"
    ENHANCED_BASELINE = "EnhancedBaseline"
    ENHANCED_OREO = "EnhancedOreo"


@dataclass(frozen=True)
class BitsStrategy:
    """``k`` unrandomized low bits, ``n`` default randomized bits, ``m``
    extra/protected bits.  ``protected_lo`` overrides the lowest protected
    bit when the preset leaves a gap (kernel text protects 31-38 over 21-29).
    """

    variant: Strategy
    k: int
    n: int
    m: int = 0
    protected_lo: Optional[int] = None
    valid_region_bits: int = 0

    def __post_init__(self):
        v = Strategy(self.variant)
        object.__setattr__(self, "variant", v)
        if self.k < 12:
            raise ConfigError("k must be >= 12 (page granularity)")
        if self.n < 0 or self.m < 0:
            raise ConfigError("n and m must be non-negative")
        if v is Strategy.DEFAULT_BASELINE and self.m:
            raise ConfigError("DefaultBaseline has no extra bits (m = 0)")
        if v is Strategy.NAIVE_OREO:
            if self.m > self.n:
                raise ConfigError("NaiveOreo needs m <= n")
            if self.k + self.n - self.m < self.valid_region_bits:
                raise ConfigError(
                    "NaiveOreo subregion 2^(k+n-m) smaller than valid region")
        if v is Strategy.ENHANCED_OREO and self.lowest_protected < self.k + self.n:
            raise ConfigError("EnhancedOreo must protect bits above k+n")

    @property
    def lowest_protected(self) -> int:
        if self.protected_lo is not None:
            return self.protected_lo
        if self.variant is Strategy.NAIVE_OREO:
            return self.k + self.n - self.m
        return self.k + self.n

    @property
    def protects(self) -> bool:
        return self.variant in (Strategy.NAIVE_OREO, Strategy.ENHANCED_OREO)

    @property
    def randomized_bits(self) -> int:
        if self.variant in (Strategy.ENHANCED_BASELINE, Strategy.ENHANCED_OREO):
            return self.n + self.m
        return self.n

    @property
    def protected_count(self) -> int:
        return self.m if self.protects else 0


@dataclass(frozen=True)
class EntropyReport:
    variant: Strategy
    original_code_reuse: int
    original_speculative: int
    remaining_code_reuse: int
    remaining_speculative: int
    nominal_protected_bits: int = 0
    # log2 of usable subregion positions when the region holds fewer than
    # 2^m subregions; None when no region geometry was supplied
    position_limited_bits: Optional[float] = None

    def row(self) -> tuple:
        return (self.original_code_reuse, self.original_speculative,
                self.remaining_code_reuse, self.remaining_speculative)


def entropy_report(strategy: BitsStrategy,
                   region: Optional[RandRegion] = None) -> EntropyReport:
    s = strategy
    randomized = s.randomized_bits
    protected = s.protected_count
    limited = None
    if region is not None and protected:
        limited = math.log2(min(region.num_subregions, 1 << protected))
    return EntropyReport(
        variant=s.variant,
        original_code_reuse=randomized,
        # protected bits need not be known to run a gadget speculatively
        original_speculative=randomized - protected,
        # only protected bits survive microarchitectural bypasses
        remaining_code_reuse=protected,
        remaining_speculative=0,
        nominal_protected_bits=protected,
        position_limited_bits=limited,
    )


# -- storage cost -----------------------------------------------------------

@dataclass(frozen=True)
class CoreSizing:
    tlb_entries: int = 584
    rob_entries: int = 128
    lsq_entries: int = 64
    num_regions: int = 2
    offset_bits: int = 8

    def __post_init__(self):
        for name in ("tlb_entries", "rob_entries", "lsq_entries",
                     "num_regions", "offset_bits"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")


@dataclass(frozen=True)
class CostReport:
    tlb_extra_bytes: float
    rob_lsq_extra_bytes: float
    region_metadata_bytes: float
    archpc_bytes: int
    total_in_core_bytes: float
    total_memory_system_bytes: float


REGION_BOUND_BITS = 128
REGION_MASK_BITS = 64
ARCHPC_BYTES = 8


def cost_report(cfg: CoreSizing) -> CostReport:
    tlb = cfg.tlb_entries * cfg.offset_bits / 8
    # ROB: correct offset per entry; LSQ: extracted offset + 1-bit precheck
    rob_lsq = (cfg.rob_entries * cfg.offset_bits
               + cfg.lsq_entries * (cfg.offset_bits + 1)) / 8
    meta = cfg.num_regions * (REGION_BOUND_BITS + REGION_MASK_BITS) / 8
    return CostReport(
        tlb_extra_bytes=tlb,
        rob_lsq_extra_bytes=rob_lsq,
        region_metadata_bytes=meta,
        archpc_bytes=ARCHPC_BYTES,
        total_in_core_bytes=rob_lsq + meta + ARCHPC_BYTES,
        total_memory_system_bytes=tlb,
    )
