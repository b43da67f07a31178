"""Target-script content metrics over generated text corpora."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .errors import InputError
from .unicode_ranges import UnicodeRangeSet, target_char_stats

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FlagRule:
    """``kind="any"`` flags a doc holding any target char; ``kind="ratio"`` flags ratio > threshold."""

    kind: str = "any"
    threshold: float = 0.0

    def flags(self, target_count: int, ratio: float) -> bool:
        if self.kind == "any":
            return target_count > 0
        return ratio > self.threshold

    def to_json(self) -> dict:
        if self.kind == "any":
            return {"rule": "any_target_char"}
        return {"rule": "ratio_above", "threshold": self.threshold}

    @classmethod
    def parse(cls, text: str) -> "FlagRule":
        if text in ("any", "any_target_char"):
            return cls()
        if text.startswith("ratio:"):
            return cls("ratio", float(text.split(":", 1)[1]))
        raise ValueError(f"unknown flag rule {text!r} (use 'any' or 'ratio:<threshold>')")


ANY_TARGET_CHAR = FlagRule()


def doc_metrics(text: str, ranges: UnicodeRangeSet, rule: FlagRule = ANY_TARGET_CHAR) -> tuple[float, bool]:
    target, considered = target_char_stats(ranges, text)
    ratio = target / considered if considered else 0.0
    return ratio, rule.flags(target, ratio)


@dataclass
class CorpusReport:
    n_docs: int
    docs: list[dict]
    suppression_rate: float
    flag_rule: dict
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return dict(self.__dict__)


def corpus_report(docs: Iterable, ranges: UnicodeRangeSet, rule: FlagRule = ANY_TARGET_CHAR) -> CorpusReport:
    """Aggregate per-doc metrics. ``docs`` yields strings or ``(id, text)`` pairs."""
    per_doc = []
    for i, doc in enumerate(docs):
        doc_id, text = doc if isinstance(doc, tuple) else (i, doc)
        ratio, flagged = doc_metrics(text, ranges, rule)
        per_doc.append({"id": doc_id, "ratio": ratio, "flagged": flagged})
    n = len(per_doc)
    warnings = []
    if n == 0:
        warnings.append("empty corpus: suppression_rate reported as 1.0")
        log.warning(warnings[-1])
        rate = 1.0
    else:
        rate = sum(not d["flagged"] for d in per_doc) / n
    return CorpusReport(n, per_doc, rate, rule.to_json(), warnings)


def read_ndjson(path, plain: bool = False) -> Iterator[tuple]:
    """Yield ``(id, text)`` from NDJSON ``{"id", "text"}`` lines, or one doc per line in plain mode."""
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise InputError(f"cannot open corpus {path}: {e}") from e
    with fh:
        idx = 0
        for lineno, line in enumerate(fh, 1):
            if plain:
                yield idx, line.rstrip("\n")
                idx += 1
                continue
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                text = obj["text"]
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise InputError(f"{path}: doc {idx} (line {lineno}) is not a {{id, text}} object: {e}") from e
            yield obj.get("id", idx), text
            idx += 1


def write_doc_csv(report: CorpusReport, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["id", "ratio", "flagged"])
    for d in report.docs:
        w.writerow([d["id"], repr(d["ratio"]), str(d["flagged"]).lower()])
