"""Byte-level BPE vocabulary loading, surface decoding and token classification."""

from __future__ import annotations

import enum
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DecodeError, InputError, ValidationError
from .unicode_ranges import UnicodeRangeSet

REPLACEMENT_CHAR = "�"


def bytes_to_unicode() -> dict[int, str]:
    """The GPT-2 / Qwen byte alphabet: every byte value gets a printable codepoint."""
    printable = (
        list(range(0x21, 0x7E + 1)) + list(range(0xA1, 0xAC + 1)) + list(range(0xAE, 0xFF + 1))
    )
    mapping = {b: chr(b) for b in printable}
    n = 0
    for b in range(256):
        if b not in mapping:
            mapping[b] = chr(0x100 + n)
            n += 1
    return mapping


BYTE_TO_CHAR = bytes_to_unicode()
CHAR_TO_BYTE = {c: b for b, c in BYTE_TO_CHAR.items()}


class DecodeStatus(str, enum.Enum):
    VALID_UTF8 = "valid_utf8"
    INVALID_UTF8 = "invalid_utf8"


class TokenClass(str, enum.Enum):
    TARGET = "target"
    BROKEN = "broken"
    SAFE = "safe"
    SPECIAL = "special"


@dataclass(frozen=True)
class Vocabulary:
    """Surface -> id map. ``literal_ids`` are added tokens whose surface is plain text, not byte-encoded."""

    entries: dict[str, int]
    special_ids: frozenset[int] = frozenset()
    literal_ids: frozenset[int] = frozenset()

    @property
    def size(self) -> int:
        return len(self.entries)

    @property
    def max_id(self) -> int:
        return max(self.entries.values(), default=-1)


@dataclass(frozen=True)
class TokenRecord:
    id: int
    surface: str
    raw: bytes
    status: DecodeStatus
    cls: TokenClass

    @property
    def text(self) -> str:
        return self.raw.decode("utf-8", errors="replace")

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "surface": self.surface,
            "bytes": self.raw.hex(),
            "status": self.status.value,
            "class": self.cls.value,
        }


@dataclass
class ScanSummary:
    total: int = 0
    target_count: int = 0
    broken_count: int = 0
    safe_count: int = 0
    special_count: int = 0
    target_fraction: float = 0.0
    broken_fraction: float = 0.0
    ranges: list[str] = field(default_factory=list)

    @classmethod
    def from_records(cls, records: list[TokenRecord], ranges: UnicodeRangeSet) -> "ScanSummary":
        counts = {c: 0 for c in TokenClass}
        for r in records:
            counts[r.cls] += 1
        total = len(records)
        return cls(
            total=total,
            target_count=counts[TokenClass.TARGET],
            broken_count=counts[TokenClass.BROKEN],
            safe_count=counts[TokenClass.SAFE],
            special_count=counts[TokenClass.SPECIAL],
            target_fraction=counts[TokenClass.TARGET] / total if total else 0.0,
            broken_fraction=counts[TokenClass.BROKEN] / total if total else 0.0,
            ranges=ranges.to_specs(),
        )

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _read_json(path: Path):
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise InputError(f"{path} is not valid JSON: {e}") from e


def load_vocabulary(path, special_tokens_path=None) -> Vocabulary:
    """Load either a consolidated ``tokenizer.json`` or a plain ``{surface: id}`` map.

    For the plain form, ``special_tokens_path`` may name a sidecar JSON holding a list of
    special surfaces (or ``{"surface": id}``); those ids are marked special.
    """
    path = Path(path)
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: expected a JSON object at top level")

    literal: set[int] = set()
    specials: set[int] = set()
    if isinstance(doc.get("model"), dict) and "vocab" in doc["model"]:
        model = doc["model"]
        model_type = model.get("type", "BPE")
        if model_type != "BPE":
            raise ValidationError(f"{path}: tokenizer model type {model_type!r} is not byte-level BPE")
        if not isinstance(model["vocab"], dict):
            raise ValidationError(f"{path}: model.vocab must map surface -> id")
        vocab = dict(model["vocab"])
        _check_ids(vocab, path)
        by_id = {i: s for s, i in vocab.items()}
        for tok in doc.get("added_tokens") or []:
            tid, content = int(tok["id"]), tok["content"]
            if tid in by_id and by_id[tid] != content:
                # an added token may re-declare a vocab entry under its byte-level surface
                if not _same_token(by_id[tid], content):
                    raise ValidationError(f"{path}: id {tid} maps to both {by_id[tid]!r} and {content!r}")
            elif tid not in by_id:
                if content in vocab:
                    raise ValidationError(f"{path}: surface {content!r} has two ids")
                vocab[content] = tid
                by_id[tid] = content
                literal.add(tid)
            if tok.get("special", False):
                specials.add(tid)
    else:
        vocab = doc
        _check_ids(vocab, path)
        if special_tokens_path is not None:
            side = _read_json(Path(special_tokens_path))
            names = side.keys() if isinstance(side, dict) else side
            for name in names:
                if name not in vocab:
                    raise ValidationError(f"special token {name!r} is not in {path}")
                specials.add(vocab[name])

    return Vocabulary(vocab, frozenset(specials), frozenset(literal))


def _same_token(surface: str, content: str) -> bool:
    try:
        return decode_surface(surface)[0] == content.encode("utf-8")
    except DecodeError:
        return False


def _check_ids(vocab: dict, path: Path) -> None:
    seen: dict[int, str] = {}
    for surface, tid in vocab.items():
        if not isinstance(tid, int) or isinstance(tid, bool) or tid < 0:
            raise ValidationError(f"{path}: token {surface!r} has invalid id {tid!r}")
        if tid in seen:
            raise ValidationError(f"{path}: duplicate id {tid} for {seen[tid]!r} and {surface!r}")
        seen[tid] = surface


def decode_surface(surface: str) -> tuple[bytes, DecodeStatus]:
    try:
        raw = bytes(CHAR_TO_BYTE[ch] for ch in surface)
    except KeyError as e:
        ch = e.args[0]
        raise DecodeError(f"codepoint U+{ord(ch):04X} is not in the byte-level alphabet") from None
    return raw, utf8_status(raw)


def encode_surface(raw: bytes) -> str:
    return "".join(BYTE_TO_CHAR[b] for b in raw)


def utf8_status(raw: bytes) -> DecodeStatus:
    try:
        raw.decode("utf-8")
    except UnicodeDecodeError:
        return DecodeStatus.INVALID_UTF8
    return DecodeStatus.VALID_UTF8


def classify_token(token_id: int, raw: bytes, status: DecodeStatus,
                   ranges: UnicodeRangeSet, specials=frozenset()) -> TokenClass:
    if token_id in specials:
        return TokenClass.SPECIAL
    if status is DecodeStatus.INVALID_UTF8:
        return TokenClass.BROKEN
    text = raw.decode("utf-8")
    # tokens carrying a literal U+FFFD are residue of lossy decoding; they count as fragments
    if REPLACEMENT_CHAR in text:
        return TokenClass.BROKEN
    if ranges.contains_any(text):
        return TokenClass.TARGET
    return TokenClass.SAFE


def _scan_chunk(items, vocab: Vocabulary, ranges: UnicodeRangeSet) -> list[TokenRecord]:
    out = []
    for surface, tid in items:
        if tid in vocab.literal_ids:
            raw = surface.encode("utf-8")
            status = DecodeStatus.VALID_UTF8
        else:
            try:
                raw, status = decode_surface(surface)
            except DecodeError as e:
                raise DecodeError(f"token id {tid}: {e}") from None
        cls = classify_token(tid, raw, status, ranges, vocab.special_ids)
        out.append(TokenRecord(tid, surface, raw, status, cls))
    return out


def scan(vocab: Vocabulary, ranges: UnicodeRangeSet, workers: int = 1,
         chunk_size: int = 8192) -> tuple[list[TokenRecord], ScanSummary]:
    """Classify every vocabulary entry. Records come back sorted by id whatever ``workers`` is."""
    items = sorted(vocab.entries.items(), key=lambda kv: kv[1])
    chunks = [items[i:i + chunk_size] for i in range(0, len(items), chunk_size)]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _scan_chunk(c, vocab, ranges), chunks))
    else:
        parts = [_scan_chunk(c, vocab, ranges) for c in chunks]
    records = [r for part in parts for r in part]
    return records, ScanSummary.from_records(records, ranges)


def scan_report(summary: ScanSummary, records: list[TokenRecord] | None = None, config: dict | None = None) -> dict:
    doc = {"summary": summary.to_json()}
    if config is not None:
        doc["config"] = config
    if records is not None:
        doc["records"] = [r.to_json() for r in records]
    return doc
