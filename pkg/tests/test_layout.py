import pytest
from hypothesis import given, strategies as st

from aslrmask.addr import ConfigError, virt2mask
from aslrmask.layout import (Granularity, coarse_layout, enumerate_layouts,
                             page_granularity_layout, query, sample_layout)
from aslrmask.presets import KERNEL_REGION, TOY16_REGION, TOY_REGION


def test_coarse_layout_addresses():
    L = coarse_layout(TOY_REGION, 0x2000, 3)
    assert L.offset == 3 * 0x8000
    assert L.entry == TOY_REGION.start + 0x18000
    assert L.virt_of(0x1004) == TOY_REGION.start + 0x19004
    assert L.masked_of(0x1004) == TOY_REGION.start + 0x1004
    assert query(L, L.virt_of(0x1004)) == L.pstart + 0x1004
    assert query(L, TOY_REGION.start + 0x1004) is None
    assert query(L, L.virt_of(0) + 0x2000) is None   # past the program
    assert query(L, 0x1234) is None


def test_enumerate_covers_every_subregion():
    ls = enumerate_layouts(TOY_REGION, 0x1000)
    assert len(ls) == 8
    assert [L.index for L in ls] == list(range(8))
    assert len(list(ls.pairs())) == 28


def test_sample_is_deterministic():
    a = [sample_layout(KERNEL_REGION, 0x1000, s).index for s in range(20)]
    b = [sample_layout(KERNEL_REGION, 0x1000, s).index for s in range(20)]
    assert a == b
    assert len(set(a)) > 1
    assert all(0 <= i < 222 for i in a)


def test_program_must_fit_subregion():
    with pytest.raises(ConfigError):
        coarse_layout(TOY_REGION, 0x9000, 0)
    with pytest.raises(ConfigError):
        sample_layout(TOY_REGION, 0x9000, 0)
    with pytest.raises(ConfigError):
        coarse_layout(TOY_REGION, 0x1000, 8)
    with pytest.raises(ConfigError):
        coarse_layout(TOY_REGION, 0, 0)


def test_per_page_layout():
    L = page_granularity_layout(TOY16_REGION, 1, indices=[9])
    assert L.granularity is Granularity.PER_PAGE
    L = page_granularity_layout(TOY_REGION, 3, indices=[5, 1, 7])
    assert L.virt_of(0x0) == TOY_REGION.start + 5 * 0x8000
    assert L.virt_of(0x1000) == TOY_REGION.start + 1 * 0x8000 + 0x1000
    assert L.virt_of(0x2000) == TOY_REGION.start + 7 * 0x8000 + 0x2000
    with pytest.raises(ConfigError):
        page_granularity_layout(TOY_REGION, 3, indices=[1, 2])
    with pytest.raises(ConfigError):
        page_granularity_layout(TOY_REGION, 9, seed=0)
    with pytest.raises(ConfigError):
        page_granularity_layout(TOY_REGION, 2)


@given(st.lists(st.integers(0, 7), min_size=1, max_size=8), st.data())
def test_per_page_masking_is_collision_free(indices, data):
    L = page_granularity_layout(TOY_REGION, len(indices), indices=indices)
    masked = [virt2mask(v, [TOY_REGION]) for v, *_ in L.pages()]
    assert masked == [w for _, w, _, _ in L.pages()]
    assert len(set(masked)) == len(masked)
    rel = data.draw(st.integers(0, L.mapped_len - 1))
    assert query(L, L.virt_of(rel)) == L.pstart + rel
