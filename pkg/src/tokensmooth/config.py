"""Run configuration: built-in defaults < JSON config file < environment < command-line flags."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError, InputError
from .risk import SamplingConfig
from .smoothing import SmoothingParams

ENV_SEED = "TOKENSMOOTH_SEED"
ENV_WORKERS = "TOKENSMOOTH_WORKERS"


@dataclass
class RunConfig:
    model_dir: str | None = None
    output_dir: str | None = None
    tokenizer: str | None = None
    special_tokens: str | None = None
    ranges: list[str] = field(default_factory=list)
    min_scale: float = 0.5
    smoothness: float = 10.0
    n_values: list[int] = field(default_factory=lambda: [2, 3])
    samples_per_n: int = 100
    seed: int = 42
    partner_pool: str = "broken_only"
    positions: str = "all"
    workers: int = 1
    dry_run: bool = False
    allow_untie: bool = False
    force: bool = False
    hardlink: bool = False
    report: str | None = None
    json_records: str | None = None
    risk_json: str | None = None
    risk_bin: str | None = None
    risk_table: str | None = None

    def sampling(self) -> SamplingConfig:
        return SamplingConfig(tuple(self.n_values), self.samples_per_n, self.seed, self.partner_pool, self.positions)

    def smoothing(self) -> SmoothingParams:
        return SmoothingParams(self.min_scale, self.smoothness)

    def to_json(self) -> dict:
        return asdict(self)


_KNOWN = {f.name for f in fields(RunConfig)}


def _flatten(doc: dict) -> dict:
    out = dict(doc)
    # accept a nested "sampling" block as well as flat keys
    sampling = out.pop("sampling", None)
    if isinstance(sampling, dict):
        out.update(sampling)
    return out


def load_config_file(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise InputError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    doc = _flatten(doc)
    unknown = sorted(set(doc) - _KNOWN)
    if unknown:
        raise ConfigError(f"config {path} has unknown keys: {unknown}")
    return doc


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    try:
        if environ.get(ENV_SEED):
            out["seed"] = int(environ[ENV_SEED])
        if environ.get(ENV_WORKERS):
            out["workers"] = int(environ[ENV_WORKERS])
    except ValueError as e:
        raise ConfigError(f"bad environment override: {e}") from e
    return out


def resolve_config(file_path=None, flags: dict | None = None, environ=None) -> RunConfig:
    merged: dict = {}
    if file_path:
        merged.update(load_config_file(file_path))
    merged.update(env_overrides(environ))
    merged.update({k: v for k, v in (flags or {}).items() if v is not None})
    cfg = RunConfig(**merged)
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    cfg.smoothing()  # validates hyperparameters
    return cfg
