"""Simulator for masked-address ASLR protection against microarchitectural
side channels, with baseline and masked execution modes."""

from .addr import (ConfigError, RandRegion, BitsStrategy, Strategy,
                   virt2mask, mask2valid, extract_oblivious_bits,
                   entropy_report, cost_report, CoreSizing)
from .layout import Layout, enumerate_layouts, sample_layout
from .memtable import Mode, build_page_table
from .isa import assemble
from .machine import Machine, System, init

__all__ = [
    "ConfigError", "RandRegion", "BitsStrategy", "Strategy", "virt2mask",
    "mask2valid", "extract_oblivious_bits", "entropy_report", "cost_report",
    "CoreSizing", "Layout", "enumerate_layouts", "sample_layout", "Mode",
    "build_page_table", "assemble", "Machine", "System", "init",
]
