import pytest
from hypothesis import given, strategies as st

from aslrmask.addr import ConfigError, RandRegion
from aslrmask.layout import coarse_layout, page_granularity_layout
from aslrmask.memtable import (KERNEL_OFFSET_FIELD_BITS, PT4, PT5, Mode,
                               RW_USER, RX_KERNEL, RX_USER, StaticMapping,
                               build_page_table, check_disjoint_ranges,
                               decode_offset, encode_offset, offset_lookup,
                               ptw, trans, USER_OFFSET_FIELD_BITS)
from aslrmask.presets import KERNEL_REGION, TOY_REGION, USER_REGION


@given(st.integers(0, KERNEL_REGION.num_subregions - 1))
def test_kernel_offset_field_round_trip(i):
    off = i * KERNEL_REGION.subregion_len
    v = encode_offset(off, KERNEL_REGION, KERNEL_OFFSET_FIELD_BITS)
    assert 0 <= v < 2 ** 9
    assert decode_offset(v, KERNEL_REGION) == off


@given(st.integers(0, 31))
def test_user_offset_field_round_trip(i):
    off = i << 48
    v = encode_offset(off, USER_REGION, USER_OFFSET_FIELD_BITS)
    assert v == i and v < 2 ** 5
    assert decode_offset(v, USER_REGION) == off


def test_offset_field_overflow():
    with pytest.raises(ConfigError):
        encode_offset(32 << 48, USER_REGION, USER_OFFSET_FIELD_BITS)
    with pytest.raises(ConfigError):
        encode_offset(0x1000, TOY_REGION, 9)   # not a subregion multiple


def test_user_layout_needs_narrow_field():
    # 64 subregions cannot be recorded in a 5-bit user field
    r = RandRegion(1, 0, 1 << 22, 1 << 16)
    L = coarse_layout(r, 0x1000, 40)
    with pytest.raises(ConfigError):
        build_page_table(L, Mode.OREO, program_perms=RX_USER)
    build_page_table(L, Mode.OREO, program_perms=RX_KERNEL)


def test_baseline_maps_virtual_pages():
    L = coarse_layout(TOY_REGION, 0x2000, 6)
    pm = build_page_table(L, Mode.BASELINE)
    assert trans(L.virt_of(0x1010), pm) == L.pstart + 0x1010
    assert trans(L.masked_of(0x1010), pm) is None
    assert len(ptw(L.virt_of(0), pm)) == 4


def test_oreo_maps_masked_pages_with_offsets():
    L = coarse_layout(TOY_REGION, 0x2000, 6)
    pm = build_page_table(L, Mode.OREO)
    assert trans(L.virt_of(0x1010), pm) is None
    assert trans(L.masked_of(0x1010), pm) == L.pstart + 0x1010
    assert offset_lookup(L.masked_of(0x1010), pm) == 6 * 0x8000
    assert offset_lookup(L.virt_of(0), pm) is None


def test_oreo_page_table_independent_of_layout():
    dumps = {tuple(build_page_table(coarse_layout(TOY_REGION, 0x3000, i),
                                    Mode.OREO).dump())
             for i in range(8)}
    # only the leaf offset fields differ
    stripped = {tuple(line.rsplit(" ", 1)[0] for line in d) for d in dumps}
    assert len(dumps) == 8 and len(stripped) == 1


def test_per_page_offsets_in_leaves():
    L = page_granularity_layout(TOY_REGION, 2, indices=[3, 5])
    pm = build_page_table(L, Mode.OREO)
    assert offset_lookup(L.masked_of(0), pm) == 3 * 0x8000
    assert offset_lookup(L.masked_of(0x1000), pm) == 5 * 0x8000


def test_static_mapping_and_collisions():
    s = StaticMapping(0x5000_0000, 0x300_0000, 2, RW_USER)
    pm = build_page_table(None, Mode.BASELINE, [s])
    assert trans(0x5000_1008, pm) == 0x300_1008
    with pytest.raises(ConfigError, match="twice"):
        build_page_table(None, Mode.BASELINE, [s, s])
    inside = StaticMapping(TOY_REGION.start, 0x300_0000)
    with pytest.raises(ConfigError, match="inside"):
        build_page_table(coarse_layout(TOY_REGION, 0x1000, 0), Mode.OREO,
                         [inside])


def test_five_level_walk():
    L = coarse_layout(TOY_REGION, 0x1000, 2)
    pm = build_page_table(L, Mode.BASELINE, cfg=PT5)
    assert len(ptw(L.entry, pm)) == 5
    assert trans(L.entry, pm) == L.pstart


def test_noncanonical_does_not_walk():
    pm = build_page_table(coarse_layout(TOY_REGION, 0x1000, 0), Mode.BASELINE)
    assert ptw(0x0000_8000_0000_0000, pm) == []


def test_disjoint_ranges():
    pm = build_page_table(coarse_layout(TOY_REGION, 0x1000, 0), Mode.BASELINE)
    check_disjoint_ranges(pm)
    pm.data[pm.root] = 1
    with pytest.raises(ConfigError):
        check_disjoint_ranges(pm)
