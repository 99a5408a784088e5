import pytest
from hypothesis import given, strategies as st

from aslrmask.addr import (ConfigError, CoreSizing, RandRegion, Strategy,
                           BitsStrategy, check_disjoint, classify,
                           cost_report, entropy_report,
                           extract_oblivious_bits, is_canonical, mask2valid,
                           virt2mask, virt2mask_formula)
from aslrmask.presets import (KERNEL_REGION, TOY_REGION, USER_REGION,
                              get_preset, get_region)

# protected bits 20-27: 256 subregions of 1 MB
EXAMPLE = RandRegion(0, 0xFF0000000, 0x1000000000, 1 << 20)


def test_worked_example():
    v = 0xFFAB12340
    assert EXAMPLE.protected_mask == 0xFF00000
    assert virt2mask(v, [EXAMPLE]) == 0xFF0012340
    assert extract_oblivious_bits(v, EXAMPLE) == 0xAB00000
    assert mask2valid(0xFF0012340, 0xAB00000, EXAMPLE) == v


def test_protected_mask_derivation():
    assert TOY_REGION.protected_mask == 0x38000
    assert TOY_REGION.num_subregions == 8
    assert KERNEL_REGION.protected_mask == 0xFF << 31
    assert KERNEL_REGION.num_subregions == 222
    assert USER_REGION.protected_mask == 0x1F << 48


@pytest.mark.parametrize("args", [
    (0, 0x2000, 0x1000, 0x1000),      # end before start
    (0, 0, 0x3000, 0x3000),           # not a power of two
    (0, 0, 0x800, 0x800),             # smaller than a page
    (0, 0, 0x3000, 0x2000),           # size not a multiple
    (0, 0x1000, 0x9000, 0x2000),      # misaligned start
])
def test_bad_regions(args):
    with pytest.raises(ConfigError):
        RandRegion(*args)


def test_overlap_rejected():
    a = RandRegion(0, 0, 0x8000, 0x1000)
    b = RandRegion(1, 0x4000, 0x6000, 0x1000)
    with pytest.raises(ConfigError):
        check_disjoint([a, b])
    check_disjoint([a, RandRegion(1, 0x8000, 0x10000, 0x1000)])


def test_identity_outside_regions():
    assert virt2mask(0x1234, [TOY_REGION]) == 0x1234
    assert classify(0x1234, [TOY_REGION]) is None
    with pytest.raises(ConfigError):
        extract_oblivious_bits(0x1234, TOY_REGION)


def test_mask2valid_rejects_bad_operands():
    with pytest.raises(ConfigError):
        mask2valid(TOY_REGION.start, 0x1, TOY_REGION)
    with pytest.raises(ConfigError):
        mask2valid(TOY_REGION.start + 0x8000, 0x8000, TOY_REGION)


def test_canonical_ignores_protected_bits():
    v = (0x15 << 48) | 0x1000
    assert not is_canonical(v)
    assert is_canonical(v, regions=[USER_REGION])


regions = st.sampled_from([TOY_REGION, KERNEL_REGION, USER_REGION, EXAMPLE])


@st.composite
def in_region(draw):
    r = draw(regions)
    return r, draw(st.integers(r.start, r.end - 1))


@given(in_region())
def test_mask_idempotent(rv):
    r, v = rv
    w = virt2mask(v, [r])
    assert virt2mask(w, [r]) == w


@given(in_region())
def test_mask_formula_agrees(rv):
    r, v = rv
    assert virt2mask(v, [r]) == virt2mask_formula(v, [r])


@given(in_region())
def test_reconstruction(rv):
    r, v = rv
    w = virt2mask(v, [r])
    assert mask2valid(w, extract_oblivious_bits(v, r), r) == v
    assert w & r.protected_mask == 0


@given(st.integers(0, (1 << 64) - 1))
def test_mask_is_identity_outside(v):
    if not TOY_REGION.contains(v):
        assert virt2mask(v, [TOY_REGION]) == v


@pytest.mark.parametrize("r", [TOY_REGION, EXAMPLE,
                               RandRegion(0, 0, 1 << 16, 1 << 12)])
def test_collision_cardinality(r):
    # every masked address has one preimage per protected-bit value
    m = r.protected_bits
    w = virt2mask(r.start + 0x123, [r])
    pre = [w + (i << r.protected_lo) for i in range(1 << m)]
    inside = [v for v in pre if r.contains(v)]
    assert len(inside) == 2 ** m == r.num_subregions
    assert {virt2mask(v, [r]) for v in inside} == {w}


@given(st.data())
def test_collision_cardinality_sampled(data):
    r = data.draw(st.sampled_from([TOY_REGION, EXAMPLE]))
    v = data.draw(st.integers(r.start, r.end - 1))
    w = virt2mask(v, [r])
    count = sum(1 for i in range(r.num_subregions)
                if virt2mask(r.subregion_base(i) + (w - r.start), [r]) == w)
    assert count == 2 ** r.protected_bits


# -- entropy: an independent oracle over explicit bit sets ----------------------

def oracle_row(variant, k, n, m):
    default = set(range(k, k + n))
    extra = set(range(k + n, k + n + m))
    if variant == "DefaultBaseline":
        rand, prot = default, set()
    elif variant == "NaiveOreo":
        rand, prot = default, set(range(k + n - m, k + n))
    elif variant == "EnhancedBaseline":
        rand, prot = default | extra, set()
    else:
        rand, prot = default | extra, extra
    return (len(rand), len(rand - prot), len(prot), 0)


@given(st.sampled_from(list(Strategy)), st.integers(12, 30),
       st.integers(1, 20), st.integers(0, 10))
def test_entropy_matches_oracle(variant, k, n, m):
    if variant is Strategy.DEFAULT_BASELINE:
        m = 0
    if variant is Strategy.NAIVE_OREO and m > n:
        return
    rep = entropy_report(BitsStrategy(variant, k, n, m))
    assert rep.row() == oracle_row(variant.value, k, n, m)


# frozen from oracle_row with the preset (k, n, m)
PRESET_ROWS = {
    ("kernel_text", "DefaultBaseline"): (9, 9, 0, 0),
    ("kernel_text", "NaiveOreo"): (9, 1, 8, 0),
    ("kernel_text", "EnhancedBaseline"): (17, 17, 0, 0),
    ("kernel_text", "EnhancedOreo"): (17, 9, 8, 0),
    ("kernel_modules", "DefaultBaseline"): (10, 10, 0, 0),
    ("kernel_modules", "EnhancedOreo"): (18, 10, 8, 0),
    ("user_space", "DefaultBaseline"): (28, 28, 0, 0),
    ("user_space", "EnhancedOreo"): (33, 28, 5, 0),
}


@pytest.mark.parametrize("key,row", PRESET_ROWS.items())
def test_preset_rows(key, row):
    name, variant = key
    p = get_preset(name)
    assert entropy_report(p.strategy(variant)).row() == row
    assert oracle_row(variant, p.k, p.n, p.m if variant != "DefaultBaseline"
                      else 0) == row


def test_kernel_protected_range_positions():
    st_ = get_preset("kernel_text").strategy("EnhancedOreo")
    assert st_.lowest_protected == 31
    rep = entropy_report(st_, KERNEL_REGION)
    assert rep.nominal_protected_bits == 8
    # only 222 of the 256 protected-bit values land inside the region
    assert rep.position_limited_bits == pytest.approx(7.794, abs=1e-3)


def test_strategy_errors():
    with pytest.raises(ConfigError):
        BitsStrategy("DefaultBaseline", 21, 9, 1)
    with pytest.raises(ConfigError):
        BitsStrategy("NaiveOreo", 21, 4, 5)
    with pytest.raises(ConfigError):
        BitsStrategy("EnhancedOreo", 21, 9, 8, protected_lo=25)
    with pytest.raises(ConfigError):
        BitsStrategy("EnhancedOreo", 8, 9, 8)
    with pytest.raises(ValueError):
        BitsStrategy("Bogus", 21, 9, 8)


def test_cost_mega_boom():
    r = cost_report(CoreSizing())
    assert r.tlb_extra_bytes == 584
    assert r.rob_lsq_extra_bytes == 200
    assert r.region_metadata_bytes == 48
    assert r.archpc_bytes == 8
    assert r.total_in_core_bytes == 256
    assert r.total_memory_system_bytes == 584


@given(st.integers(1, 4096), st.integers(1, 512), st.integers(1, 256),
       st.integers(1, 8), st.integers(1, 16))
def test_cost_scales_linearly(tlb, rob, lsq, nreg, bits):
    r = cost_report(CoreSizing(tlb, rob, lsq, nreg, bits))
    assert r.tlb_extra_bytes * 8 == tlb * bits
    assert r.rob_lsq_extra_bytes * 8 == rob * bits + lsq * (bits + 1)
    assert r.region_metadata_bytes == nreg * 24


def test_cost_rejects_nonpositive():
    with pytest.raises(ConfigError):
        CoreSizing(tlb_entries=0)


def test_get_region_unknown():
    with pytest.raises(ConfigError, match="available"):
        get_region("nowhere")
    with pytest.raises(ConfigError):
        get_preset("nowhere")
