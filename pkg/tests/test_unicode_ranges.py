import pytest
from hypothesis import given
from hypothesis import strategies as st

from tokensmooth.errors import RangeParseError
from tokensmooth.unicode_ranges import UnicodeRangeSet, parse_range_spec, target_char_stats

codepoints = st.integers(0, 0x10FFFF)
pairs = st.tuples(codepoints, codepoints).map(lambda p: (min(p), max(p)))


def test_cjk_spec_bounds(cjk):
    assert cjk.ranges == ((0x4E00, 0x9FFF),)
    assert cjk.contains(0x4E00) and cjk.contains(0x9FFF)
    assert not cjk.contains(0x4DFF) and not cjk.contains(0xA000)


@pytest.mark.parametrize("cp,expected", [(0x4E2D, True), (0x0041, False), (0x9FFF, True)])
def test_contains_examples(cjk, cp, expected):
    assert cjk.contains(cp) is expected


def test_empty_spec():
    s = parse_range_spec([])
    assert not s
    assert not any(s.contains(cp) for cp in (0, 0x41, 0x4E2D, 0x10FFFF))


def test_adjacent_and_overlapping_merge():
    s = parse_range_spec(["U+0041", "U+0042-U+0043", "U+0043-U+0045"])
    assert s.ranges == ((0x41, 0x45),)


def test_case_and_width():
    assert parse_range_spec(["u+4e00-u+9fff"]).ranges == ((0x4E00, 0x9FFF),)
    assert parse_range_spec(["U+20000-U+2A6DF"]).ranges == ((0x20000, 0x2A6DF),)


@pytest.mark.parametrize("bad", ["4E00-9FFF", "U+4E0", "U+4E00-", "U+1234567", "U+XYZW", "U+4E00 - U+9FFF", ""])
def test_malformed_names_entry(bad):
    with pytest.raises(RangeParseError) as ei:
        parse_range_spec(["U+0041", bad])
    assert repr(bad) in str(ei.value)


def test_reversed_bounds_rejected():
    with pytest.raises(RangeParseError):
        parse_range_spec(["U+9FFF-U+4E00"])


def test_to_specs_round_trip():
    s = parse_range_spec(["U+3007", "U+4E00-U+9FFF"])
    assert parse_range_spec(s.to_specs()) == s


@pytest.mark.parametrize("text,expected", [("中文 ok", (2, 4)), ("", (0, 0)), ("hello", (0, 5))])
def test_target_char_stats(cjk, text, expected):
    assert target_char_stats(cjk, text) == expected


@given(st.lists(pairs, max_size=8))
def test_normalization_idempotent(ps):
    s = UnicodeRangeSet.from_pairs(ps)
    assert s.normalized() == s
    for (lo1, hi1), (lo2, hi2) in zip(s.ranges, s.ranges[1:]):
        assert lo1 <= hi1 and hi1 + 1 < lo2


@given(st.lists(pairs, max_size=8), st.lists(codepoints, min_size=1, max_size=30))
def test_membership_matches_linear_scan(ps, cps):
    s = UnicodeRangeSet.from_pairs(ps)
    for cp in cps + [lo for lo, _ in ps] + [hi + 1 for _, hi in ps]:
        assert s.contains(cp) == any(lo <= cp <= hi for lo, hi in ps)


@given(st.text(), st.text())
def test_stats_additive(a, b):
    s = parse_range_spec(["U+4E00-U+9FFF", "U+0041-U+005A"])
    ta, ca = target_char_stats(s, a)
    tb, cb = target_char_stats(s, b)
    assert target_char_stats(s, a + b) == (ta + tb, ca + cb)
