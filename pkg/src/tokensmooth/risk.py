"""Risk scores per token id: pinned for target/safe/special, n-gram sampled for broken fragments."""

from __future__ import annotations

import hashlib
import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .errors import ConfigError, InputError, ValidationError
from .unicode_ranges import UnicodeRangeSet
from .vocab import TokenClass, TokenRecord

DEFAULT_EXHAUSTIVE_CAP = 10**7
_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class SamplingConfig:
    n_values: tuple[int, ...] = (2, 3)
    samples_per_n: int = 100
    seed: int = 42
    partner_pool: Literal["broken_only", "broken_and_target"] = "broken_only"
    # "first" reproduces the token-first pairing (A+B, A+C); "all" averages over slots
    positions: Literal["all", "first"] = "all"

    def __post_init__(self):
        object.__setattr__(self, "n_values", tuple(int(n) for n in self.n_values))
        if not self.n_values:
            raise ConfigError("n_values must not be empty")
        if any(n < 2 for n in self.n_values):
            raise ConfigError(f"every n-gram size must be >= 2, got {list(self.n_values)}")
        if self.samples_per_n < 1:
            raise ConfigError("samples_per_n must be >= 1")
        if not 0 <= self.seed <= _SEED_MASK:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.partner_pool not in ("broken_only", "broken_and_target"):
            raise ConfigError(f"unknown partner_pool {self.partner_pool!r}")
        if self.positions not in ("all", "first"):
            raise ConfigError(f"unknown positions mode {self.positions!r}")

    def slots(self, n: int) -> range:
        return range(n) if self.positions == "all" else range(1)

    def to_json(self) -> dict:
        d = asdict(self)
        d["n_values"] = list(self.n_values)
        return d


@lru_cache(maxsize=1 << 18)
def _bytes_risky(joined: bytes, ranges: UnicodeRangeSet) -> bool:
    # errors="ignore" skips maximal invalid subparts and resynchronises on the next lead byte
    return ranges.contains_any(joined.decode("utf-8", errors="ignore"))


def combination_is_risky(byte_sequences: Sequence[bytes], ranges: UnicodeRangeSet) -> bool:
    return _bytes_risky(b"".join(bytes(s) for s in byte_sequences), ranges)


def _stream(seed: int, token_id: int, n: int, slot: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, token_id, n, slot]))


def _distinct(draws: np.ndarray, pool_size: int):
    """Distinct partner tuples with multiplicities, in lexicographic order."""
    width = draws.shape[1]
    if pool_size ** width < 2**62:
        # mixed-radix code per row; a 1-D unique is much cheaper than a row-wise one
        radix = pool_size ** np.arange(width - 1, -1, -1, dtype=np.int64)
        codes, counts = np.unique(draws @ radix, return_counts=True)
        combos = np.stack(np.unravel_index(codes, (pool_size,) * width), axis=1)
    else:
        combos, counts = np.unique(draws, axis=0, return_counts=True)
    return zip(combos.tolist(), counts.tolist())


def sample_broken_risk(token: TokenRecord, pool: Sequence[TokenRecord], config: SamplingConfig,
                       ranges: UnicodeRangeSet) -> float:
    """Monte Carlo estimate of how often the fragment completes a target codepoint.

    For each n and each slot, ``samples_per_n`` partner tuples are drawn with replacement
    from ``pool``. Per-n risk pools all slots; the result is the max over n.
    """
    if not pool:
        raise ConfigError(f"token {token.id}: partner pool is empty")
    pool_bytes = [p.raw for p in pool]
    best = 0.0
    for n in config.n_values:
        risky = total = 0
        for slot in config.slots(n):
            rng = _stream(config.seed, token.id, n, slot)
            draws = rng.integers(0, len(pool_bytes), size=(config.samples_per_n, n - 1))
            for combo, count in _distinct(draws, len(pool_bytes)):
                parts = [pool_bytes[i] for i in combo]
                parts.insert(slot, token.raw)
                if _bytes_risky(b"".join(parts), ranges):
                    risky += count
            total += config.samples_per_n
        best = max(best, risky / total)
    return min(max(best, 0.0), 1.0)


def exhaustive_broken_risk(token: TokenRecord, pool: Sequence[TokenRecord], n: int, ranges: UnicodeRangeSet,
                           cap: int = DEFAULT_EXHAUSTIVE_CAP, positions: str = "all") -> float:
    """Exact risky fraction over every partner assignment and every slot of the token."""
    if n < 2:
        raise ConfigError("n must be >= 2")
    if not pool:
        raise ConfigError(f"token {token.id}: partner pool is empty")
    slots = range(n) if positions == "all" else range(1)
    count = len(slots) * len(pool) ** (n - 1)
    if count > cap:
        raise ConfigError(f"exhaustive enumeration needs {count} combinations, cap is {cap}")
    pool_bytes = [p.raw for p in pool]
    risky = 0
    for slot in slots:
        for combo in itertools.product(pool_bytes, repeat=n - 1):
            parts = list(combo)
            parts.insert(slot, token.raw)
            risky += _bytes_risky(b"".join(parts), ranges)
    return risky / count


@dataclass
class RiskTable:
    scores: np.ndarray
    provenance: list[dict]
    classes: list[str] = field(default_factory=list)
    config: SamplingConfig | None = None

    def __len__(self):
        return len(self.scores)

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.scores, dtype="<f8").tobytes()).hexdigest()

    def to_json(self) -> dict:
        tokens = {}
        for i, (score, prov) in enumerate(zip(self.scores.tolist(), self.provenance)):
            entry = {"score": score, "provenance": prov}
            if self.classes:
                entry["class"] = self.classes[i]
            tokens[str(i)] = entry
        return {
            "sampling": self.config.to_json() if self.config else None,
            "digest": self.digest(),
            "tokens": tokens,
        }

    def save(self, json_path=None, binary_path=None) -> None:
        if json_path is not None:
            Path(json_path).write_text(json.dumps(self.to_json()), encoding="utf-8")
        if binary_path is not None:
            with open(binary_path, "wb") as f:
                np.save(f, np.ascontiguousarray(self.scores, dtype="<f8"))

    @classmethod
    def load(cls, path) -> "RiskTable":
        path = Path(path)
        try:
            if path.suffix == ".npy":
                scores = np.load(path)
                return cls(scores.astype(np.float64), [{"kind": "unknown"}] * len(scores))
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as e:
            raise InputError(f"cannot read risk table {path}: {e}") from e
        tokens = doc["tokens"]
        n = len(tokens)
        if sorted(int(k) for k in tokens) != list(range(n)):
            raise ValidationError(f"risk table {path} does not cover ids 0..{n - 1}")
        scores = np.array([tokens[str(i)]["score"] for i in range(n)], dtype=np.float64)
        provenance = [tokens[str(i)]["provenance"] for i in range(n)]
        classes = [tokens[str(i)].get("class", "") for i in range(n)]
        sampling = doc.get("sampling")
        config = SamplingConfig(**sampling) if sampling else None
        return cls(scores, provenance, classes if all(classes) else [], config)


def build_risk_table(records: Sequence[TokenRecord], config: SamplingConfig, ranges: UnicodeRangeSet,
                     workers: int = 1) -> RiskTable:
    """Score a complete vocabulary. Ids must be exactly ``0..len(records)-1``."""
    by_id = sorted(records, key=lambda r: r.id)
    if [r.id for r in by_id] != list(range(len(by_id))):
        raise ValidationError("records must cover token ids 0..N-1 without gaps")

    scores = np.zeros(len(by_id), dtype=np.float64)
    fixed = {"kind": "fixed"}
    provenance: list[dict] = [fixed] * len(by_id)
    pool_classes = {TokenClass.BROKEN}
    if config.partner_pool == "broken_and_target":
        pool_classes.add(TokenClass.TARGET)
    pool = [r for r in by_id if r.cls in pool_classes]
    broken = [r for r in by_id if r.cls is TokenClass.BROKEN]

    for r in by_id:
        if r.cls is TokenClass.TARGET:
            scores[r.id] = 1.0

    def score(r: TokenRecord) -> float:
        return sample_broken_risk(r, pool, config, ranges)

    if workers > 1 and len(broken) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(score, broken))
    else:
        results = [score(r) for r in broken]

    sampled = {
        "kind": "sampled",
        "n_values": list(config.n_values),
        "sample_count": config.samples_per_n * sum(len(config.slots(n)) for n in config.n_values),
        "seed": config.seed,
    }
    for r, s in zip(broken, results):
        scores[r.id] = s
        provenance[r.id] = sampled
    return RiskTable(scores, provenance, [r.cls.value for r in by_id], config)
