"""Region and bits-selection presets.

``kernel_text``/``kernel_modules`` share the 444 GB kernel code region
(2 GB subregions, protected bits 31-38) and therefore one secret offset.
``user_space`` protects the non-canonical bits 48-52.  The ``toy`` regions
are small enough for exhaustive sweeps.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from .addr import BitsStrategy, ConfigError, RandRegion, Strategy

KERNEL_CODE_START = 0xFFFFFF8000000000
KERNEL_CODE_END = 0xFFFFFFEF00000000

KERNEL_REGION = RandRegion(0, KERNEL_CODE_START, KERNEL_CODE_END, 1 << 31)
USER_REGION = RandRegion(1, 0, 1 << 53, 1 << 48)

TOY_START = 0xFFFFFFFFC0000000
# 8 subregions of 32 KB: protected bits 15-17 select leaf-PTE cache lines
TOY_REGION = RandRegion(0, TOY_START, TOY_START + 8 * 0x8000, 0x8000)
# 8 subregions of 4 KB: protected bits 12-14 overlap the BTB index
TOY_BTB_REGION = RandRegion(0, TOY_START, TOY_START + 8 * 0x1000, 0x1000)
# 16 subregions of 4 KB, for the N=16 page-table sweeps
TOY16_REGION = RandRegion(0, TOY_START, TOY_START + 16 * 0x1000, 0x1000)


@dataclass(frozen=True)
class Preset:
    name: str
    region: RandRegion
    k: int
    n: int
    m: int
    randomized_range: Tuple[int, int]
    protected_range: Tuple[int, int]

    def strategy(self, variant) -> BitsStrategy:
        variant = Strategy(variant)
        m = 0 if variant is Strategy.DEFAULT_BASELINE else self.m
        lo = self.protected_range[0]
        if variant is Strategy.NAIVE_OREO:
            lo = None
        return BitsStrategy(variant, self.k, self.n, m, protected_lo=lo)


PRESETS: Dict[str, Preset] = {
    # bits 21-29 randomized at 2 MB alignment -> 9 bits
    "kernel_text": Preset("kernel_text", KERNEL_REGION, 21, 9, 8,
                          (21, 29), (31, 38)),
    # bits 12-29 randomized but only 1024 offsets are allowed -> 10 bits
    "kernel_modules": Preset("kernel_modules", KERNEL_REGION, 12, 10, 8,
                             (12, 29), (31, 38)),
    # 28-bit default user ASLR; bits 48-52 protected
    "user_space": Preset("user_space", USER_REGION, 12, 28, 5,
                         (12, 39), (48, 52)),
}

REGIONS: Dict[str, RandRegion] = {
    "kernel_text": KERNEL_REGION,
    "kernel_modules": KERNEL_REGION,
    "user_space": USER_REGION,
    "toy": TOY_REGION,
    "toy_btb": TOY_BTB_REGION,
    "toy16": TOY16_REGION,
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None


def get_region(name: str, region_id: Optional[int] = None) -> RandRegion:
    try:
        r = REGIONS[name]
    except KeyError:
        raise ConfigError(
            f"unknown region {name!r}; available: {sorted(REGIONS)}") from None
    if region_id is not None and region_id != r.region_id:
        r = RandRegion(region_id, r.start, r.end, r.subregion_len)
    return r
