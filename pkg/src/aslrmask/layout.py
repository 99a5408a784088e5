"""ASLR layouts: which subregion holds each page of a relocated program."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Dict, Iterator, Optional, Sequence, Tuple

import numpy as np

from .addr import (PAGE_SHIFT, PAGE_SIZE, ConfigError, MaskedAddr, PhysAddr,
                   RandRegion, VirtAddr)

DEFAULT_PSTART = 0x0100_0000


class Granularity(str, enum.Enum):
    COARSE = "coarse"
    PER_PAGE = "per_page"


def page_ceil(n: int) -> int:
    return -(-n // PAGE_SIZE) * PAGE_SIZE


@dataclass(frozen=True)
class Layout:
    """A partial map from virtual to physical addresses.

    Page ``p`` of the program (bytes ``[p*4K, (p+1)*4K)``) lives in
    subregion ``page_indices[p]`` at the same position inside the
    subregion, so distinct pages never share a masked page.
    """

    region: RandRegion
    program_len: int
    page_indices: Tuple[int, ...]
    granularity: Granularity = Granularity.COARSE
    pstart: int = DEFAULT_PSTART

    def __post_init__(self):
        if self.program_len <= 0:
            raise ConfigError("program_len must be positive")
        if page_ceil(self.program_len) > self.region.subregion_len:
            raise ConfigError(
                f"program of {self.program_len:#x} bytes does not fit a "
                f"{self.region.subregion_len:#x}-byte subregion")
        if len(self.page_indices) != self.num_pages:
            raise ConfigError("one subregion index per program page required")
        n = self.region.num_subregions
        if any(not 0 <= i < n for i in self.page_indices):
            raise ConfigError(f"subregion index out of range [0, {n})")
        if self.pstart % PAGE_SIZE:
            raise ConfigError("physical start must be page aligned")

    @property
    def num_pages(self) -> int:
        return page_ceil(self.program_len) // PAGE_SIZE

    @property
    def mapped_len(self) -> int:
        return self.num_pages * PAGE_SIZE

    @property
    def index(self) -> int:
        """Subregion index of the first page (the whole program if coarse)."""
        return self.page_indices[0]

    @property
    def offset(self) -> int:
        return self.index * self.region.subregion_len

    def page_offset(self, page: int) -> int:
        return self.page_indices[page] * self.region.subregion_len

    @property
    def entry(self) -> VirtAddr:
        return self.virt_of(0)

    def virt_of(self, rel: int) -> VirtAddr:
        """Virtual address of program byte ``rel`` under this layout."""
        if not 0 <= rel < self.mapped_len:
            raise ConfigError(f"program offset {rel:#x} out of range")
        return VirtAddr(self.region.start + self.page_offset(rel >> PAGE_SHIFT)
                        + rel)

    def masked_of(self, rel: int) -> MaskedAddr:
        return MaskedAddr(self.region.start + rel)

    def pages(self) -> Iterator[Tuple[VirtAddr, MaskedAddr, PhysAddr, int]]:
        """(virtual page, masked page, physical page, offset) per page."""
        for p in range(self.num_pages):
            rel = p * PAGE_SIZE
            yield (self.virt_of(rel), self.masked_of(rel),
                   PhysAddr(self.pstart + rel), self.page_offset(p))

    def masked_offsets(self) -> Dict[int, int]:
        return {w: off for _, w, _, off in self.pages()}


def query(layout: Layout, v: int) -> Optional[PhysAddr]:
    r = layout.region
    if not r.start <= v < r.end:
        return None
    rel = v - r.start
    sub, inner = divmod(rel, r.subregion_len)
    if inner >= layout.mapped_len:
        return None
    if layout.page_indices[inner >> PAGE_SHIFT] != sub:
        return None
    return PhysAddr(layout.pstart + inner)


def coarse_layout(region: RandRegion, program_len: int, index: int,
                  pstart: int = DEFAULT_PSTART) -> Layout:
    pages = page_ceil(program_len) // PAGE_SIZE
    return Layout(region, program_len, (index,) * pages, Granularity.COARSE,
                  pstart)


@dataclass(frozen=True)
class LayoutSet:
    region: RandRegion
    layouts: Tuple[Layout, ...]

    @property
    def n(self) -> int:
        return len(self.layouts)

    def __iter__(self):
        return iter(self.layouts)

    def __len__(self):
        return len(self.layouts)

    def __getitem__(self, i):
        return self.layouts[i]

    def pairs(self):
        for i in range(self.n):
            for j in range(i + 1, self.n):
                yield i, j


def enumerate_layouts(region: RandRegion, program_len: int,
                      pstart: int = DEFAULT_PSTART) -> LayoutSet:
    return LayoutSet(region, tuple(
        coarse_layout(region, program_len, i, pstart)
        for i in range(region.num_subregions)))


def rng_for(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed))


def sample_layout(region: RandRegion, program_len: int, seed: int,
                  pstart: int = DEFAULT_PSTART) -> Layout:
    if page_ceil(program_len) > region.subregion_len:
        raise ConfigError("program does not fit a subregion")
    index = int(rng_for(seed).integers(region.num_subregions))
    return coarse_layout(region, program_len, index, pstart)


def page_granularity_layout(region: RandRegion, pages: int,
                            seed: Optional[int] = None,
                            indices: Optional[Sequence[int]] = None,
                            pstart: int = DEFAULT_PSTART) -> Layout:
    if pages * PAGE_SIZE > region.subregion_len:
        raise ConfigError(
            f"{pages} pages exceed subregion capacity "
            f"{region.subregion_len // PAGE_SIZE}")
    if indices is None:
        if seed is None:
            raise ConfigError("need a seed or explicit indices")
        indices = rng_for(seed).integers(region.num_subregions, size=pages)
    indices = tuple(int(i) for i in indices)
    if len(indices) != pages:
        raise ConfigError("one index per page required")
    return Layout(region, pages * PAGE_SIZE, indices, Granularity.PER_PAGE,
                  pstart)
