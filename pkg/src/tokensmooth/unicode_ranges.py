"""Inclusive codepoint range sets describing the script to suppress."""

from __future__ import annotations

import bisect
import re
from dataclasses import dataclass
from typing import Iterable

from .errors import RangeParseError

MAX_CODEPOINT = 0x10FFFF
CJK_UNIFIED = "U+4E00-U+9FFF"

_SPEC_RE = re.compile(r"^U\+([0-9A-F]{4,6})(?:-U\+([0-9A-F]{4,6}))?$", re.IGNORECASE)


@dataclass(frozen=True)
class UnicodeRangeSet:
    """Sorted, merged, inclusive ``(lo, hi)`` pairs. Build with :meth:`from_pairs`."""

    ranges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        # cached starts for bisect; frozen dataclass needs object.__setattr__
        object.__setattr__(self, "_starts", tuple(lo for lo, _ in self.ranges))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]]) -> "UnicodeRangeSet":
        items = []
        for lo, hi in pairs:
            if lo > hi:
                raise RangeParseError(f"range lower bound U+{lo:04X} exceeds upper bound U+{hi:04X}")
            if lo < 0 or hi > MAX_CODEPOINT:
                raise RangeParseError(f"range U+{lo:04X}-U+{hi:04X} is outside the Unicode codespace")
            items.append((lo, hi))
        return cls(_normalize(items))

    def __contains__(self, cp: int) -> bool:
        return self.contains(cp)

    def __bool__(self) -> bool:
        return bool(self.ranges)

    def contains(self, cp: int) -> bool:
        i = bisect.bisect_right(self._starts, cp) - 1
        return i >= 0 and cp <= self.ranges[i][1]

    def contains_any(self, text: str) -> bool:
        return any(self.contains(ord(ch)) for ch in text)

    def normalized(self) -> "UnicodeRangeSet":
        return UnicodeRangeSet(_normalize(self.ranges))

    def to_specs(self) -> list[str]:
        return [f"U+{lo:04X}" if lo == hi else f"U+{lo:04X}-U+{hi:04X}" for lo, hi in self.ranges]


def _normalize(pairs) -> tuple[tuple[int, int], ...]:
    merged: list[list[int]] = []
    for lo, hi in sorted(pairs):
        # adjacent ranges merge too: [0x41,0x42] + [0x43,0x45] -> [0x41,0x45]
        if merged and lo <= merged[-1][1] + 1:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return tuple((lo, hi) for lo, hi in merged)


def parse_range_spec(specs: Iterable[str]) -> UnicodeRangeSet:
    """Parse strings like ``"U+4E00-U+9FFF"`` or ``"U+3007"`` into a normalized set."""
    pairs = []
    for entry in specs:
        m = _SPEC_RE.match(entry.strip()) if isinstance(entry, str) else None
        if m is None:
            raise RangeParseError(f"malformed range spec {entry!r}; expected U+XXXX or U+XXXX-U+YYYY")
        lo = int(m.group(1), 16)
        hi = int(m.group(2), 16) if m.group(2) else lo
        if lo > hi:
            raise RangeParseError(f"range spec {entry!r} has lower bound above upper bound")
        pairs.append((lo, hi))
    return UnicodeRangeSet.from_pairs(pairs)


def target_char_stats(ranges: UnicodeRangeSet, text: str) -> tuple[int, int]:
    """Return ``(target_count, considered_count)`` over the non-whitespace codepoints of ``text``."""
    target = considered = 0
    for ch in text:
        if ch.isspace():
            continue
        considered += 1
        if ranges.contains(ord(ch)):
            target += 1
    return target, considered
