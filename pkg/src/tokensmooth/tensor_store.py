"""safetensors container I/O, shard index handling and output-head lookup.

Layout: ``u64le header_len | JSON header | data``. The header maps each tensor name to
``{"dtype", "shape", "data_offsets": [begin, end]}`` relative to the data region, plus an
optional ``__metadata__`` string map.
"""

from __future__ import annotations

import json
import math
import os
import shutil
import struct
from dataclasses import dataclass, field
from pathlib import Path

from .dtypes import WIDTHS
from .errors import ContainerError, InputError, ResolutionError, ValidationError

SINGLE_FILE = "model.safetensors"
INDEX_FILE = "model.safetensors.index.json"
CONFIG_FILE = "config.json"
MAX_HEADER = 100 * 1024 * 1024

HEAD_NAMES = ("lm_head.weight", "model.lm_head.weight", "output.weight", "embed_out.weight")
EMBED_NAMES = (
    "model.embed_tokens.weight",
    "embed_tokens.weight",
    "transformer.wte.weight",
    "tok_embeddings.weight",
    "transformer.word_embeddings.weight",
    "model.embed.weight",
)


@dataclass
class NamedTensor:
    name: str
    dtype: str
    shape: tuple[int, ...]
    data: bytes

    def __post_init__(self):
        self.shape = tuple(int(d) for d in self.shape)
        if self.dtype not in WIDTHS:
            raise ContainerError("unknown_dtype", f"tensor {self.name!r}: unknown dtype {self.dtype!r}")
        if any(d < 0 for d in self.shape):
            raise ValidationError(f"tensor {self.name!r}: negative dimension in {self.shape}")
        if len(self.data) != self.nbytes:
            raise ValidationError(
                f"tensor {self.name!r}: buffer is {len(self.data)} bytes, shape {list(self.shape)} "
                f"x {self.dtype} needs {self.nbytes}"
            )

    @property
    def nbytes(self) -> int:
        return math.prod(self.shape) * WIDTHS[self.dtype]

    @property
    def row_bytes(self) -> int:
        return math.prod(self.shape[1:]) * WIDTHS[self.dtype]


@dataclass
class TensorEntry:
    """Header entry: where a tensor lives inside a container file."""

    name: str
    dtype: str
    shape: tuple[int, ...]
    begin: int
    end: int


@dataclass
class ContainerHeader:
    entries: dict[str, TensorEntry]
    metadata: dict[str, str] | None
    data_start: int


def read_header(path) -> ContainerHeader:
    path = Path(path)
    try:
        size = path.stat().st_size
        with open(path, "rb") as f:
            prefix = f.read(8)
            if len(prefix) < 8:
                raise ContainerError("truncated", f"{path}: file shorter than the 8-byte header length")
            (hlen,) = struct.unpack("<Q", prefix)
            if hlen > size - 8:
                raise ContainerError("header_overrun", f"{path}: header overruns file ({hlen} > {size - 8} bytes)")
            if hlen > MAX_HEADER:
                raise ContainerError("header_too_large", f"{path}: header of {hlen} bytes is too large")
            raw = f.read(hlen)
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from e
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerError("bad_header", f"{path}: header is not valid UTF-8 JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ContainerError("bad_header", f"{path}: header must be a JSON object")

    metadata = doc.pop("__metadata__", None)
    data_len = size - 8 - hlen
    entries = {}
    for name, info in doc.items():
        try:
            dtype, shape, (begin, end) = info["dtype"], tuple(info["shape"]), info["data_offsets"]
        except (KeyError, TypeError, ValueError) as e:
            raise ContainerError("bad_header", f"{path}: malformed entry for {name!r}") from e
        if dtype not in WIDTHS:
            raise ContainerError("unknown_dtype", f"{path}: tensor {name!r} has unknown dtype {dtype!r}")
        if not (0 <= begin <= end):
            raise ContainerError("bad_offsets", f"{path}: tensor {name!r} has offsets [{begin}, {end}]")
        if end > data_len:
            raise ContainerError("out_of_bounds", f"{path}: tensor {name!r} ends at {end}, data region is {data_len} bytes")
        if end - begin != math.prod(shape) * WIDTHS[dtype]:
            raise ContainerError("size_mismatch", f"{path}: tensor {name!r} span does not match shape {list(shape)}")
        entries[name] = TensorEntry(name, dtype, shape, begin, end)

    prev_end, prev_name = 0, None
    for e in sorted(entries.values(), key=lambda e: (e.begin, e.end)):
        if e.begin < prev_end:
            raise ContainerError("overlap", f"{path}: tensors {prev_name!r} and {e.name!r} overlap")
        if e.end > e.begin:
            prev_end, prev_name = e.end, e.name
    return ContainerHeader(entries, metadata, 8 + hlen)


def read_container(path) -> tuple[list[NamedTensor], dict[str, str] | None]:
    """Return tensors in data-offset order plus the ``__metadata__`` map (or None)."""
    header = read_header(path)
    tensors = []
    with open(path, "rb") as f:
        for e in sorted(header.entries.values(), key=lambda e: (e.begin, e.name)):
            f.seek(header.data_start + e.begin)
            tensors.append(NamedTensor(e.name, e.dtype, e.shape, f.read(e.end - e.begin)))
    return tensors, header.metadata


def read_tensor(path, name: str) -> NamedTensor:
    header = read_header(path)
    if name not in header.entries:
        raise ResolutionError(f"{path}: no tensor named {name!r}")
    e = header.entries[name]
    with open(path, "rb") as f:
        f.seek(header.data_start + e.begin)
        return NamedTensor(e.name, e.dtype, e.shape, f.read(e.end - e.begin))


def write_container(path, tensors: list[NamedTensor], metadata: dict[str, str] | None = None) -> None:
    names = [t.name for t in tensors]
    if len(set(names)) != len(names):
        dup = next(n for n in names if names.count(n) > 1)
        raise ValidationError(f"duplicate tensor name {dup!r}")
    header: dict = {}
    if metadata is not None:
        header["__metadata__"] = {str(k): str(v) for k, v in metadata.items()}
    offset = 0
    for t in tensors:
        if t.name == "__metadata__":
            raise ValidationError("'__metadata__' is reserved")
        if len(t.data) != t.nbytes:
            raise ValidationError(f"tensor {t.name!r}: buffer length does not match shape")
        header[t.name] = {"dtype": t.dtype, "shape": list(t.shape), "data_offsets": [offset, offset + len(t.data)]}
        offset += len(t.data)
    raw = json.dumps(header, separators=(",", ":")).encode("utf-8")
    raw += b" " * (-len(raw) % 8)
    try:
        with open(path, "wb") as f:
            f.write(struct.pack("<Q", len(raw)))
            f.write(raw)
            for t in tensors:
                f.write(t.data)
    except OSError as e:
        raise InputError(f"cannot write {path}: {e}") from e


def _unique_keys(pairs):
    seen = {}
    for k, v in pairs:
        if k in seen and seen[k] != v:
            raise ValidationError(f"shard index maps {k!r} to both {seen[k]!r} and {v!r}")
        seen[k] = v
    return seen


@dataclass
class ShardIndex:
    weight_map: dict[str, str]
    metadata: dict = field(default_factory=dict)

    @property
    def shard_files(self) -> list[str]:
        return sorted(set(self.weight_map.values()))

    @classmethod
    def load(cls, path) -> "ShardIndex":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"), object_pairs_hook=_unique_keys)
        except (OSError, json.JSONDecodeError) as e:
            raise InputError(f"cannot read shard index {path}: {e}") from e
        wm = doc.get("weight_map") if isinstance(doc, dict) else None
        if not isinstance(wm, dict):
            raise ValidationError(f"{path}: missing 'weight_map' object")
        return cls(dict(wm), doc.get("metadata", {}))

    def save(self, path) -> None:
        doc = {"metadata": self.metadata, "weight_map": dict(sorted(self.weight_map.items()))}
        Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def weight_files(model_dir) -> dict[str, str]:
    """Map every tensor name in the checkpoint to its container file name."""
    model_dir = Path(model_dir)
    if (model_dir / INDEX_FILE).exists():
        index = ShardIndex.load(model_dir / INDEX_FILE)
        for shard in index.shard_files:
            if not (model_dir / shard).exists():
                raise InputError(f"shard {shard} listed in the index is missing from {model_dir}")
        return index.weight_map
    if (model_dir / SINGLE_FILE).exists():
        return {name: SINGLE_FILE for name in read_header(model_dir / SINGLE_FILE).entries}
    singles = sorted(p.name for p in model_dir.glob("*.safetensors")) if model_dir.is_dir() else []
    if len(singles) == 1:
        return {name: singles[0] for name in read_header(model_dir / singles[0]).entries}
    raise ResolutionError(f"{model_dir}: no safetensors checkpoint (looked for {SINGLE_FILE}, {INDEX_FILE})")


def read_checkpoint(model_dir) -> dict[str, NamedTensor]:
    model_dir = Path(model_dir)
    out = {}
    for name, shard in weight_files(model_dir).items():
        out[name] = read_tensor(model_dir / shard, name)
    return out


def load_model_config(model_dir) -> dict:
    path = Path(model_dir) / CONFIG_FILE
    if not path.exists():
        return {}
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read {path}: {e}") from e


def resolve_head_tensor(model_dir, model_config: dict | None = None) -> tuple[str, str, bool]:
    """Return ``(tensor name, shard file, tied)`` for the output projection."""
    model_dir = Path(model_dir)
    if model_config is None:
        model_config = load_model_config(model_dir)
    files = weight_files(model_dir)
    tie_flag = model_config.get("tie_word_embeddings")
    # config nesting used by some multimodal checkpoints
    if tie_flag is None and isinstance(model_config.get("text_config"), dict):
        tie_flag = model_config["text_config"].get("tie_word_embeddings")

    head = next((n for n in HEAD_NAMES if n in files), None)
    if head is not None:
        return head, files[head], bool(tie_flag)
    embed = next((n for n in EMBED_NAMES if n in files), None)
    if embed is not None and tie_flag is not False:
        return embed, files[embed], True
    raise ResolutionError(
        f"{model_dir}: no output head found; searched {list(HEAD_NAMES)}"
        + (f" and tied embeddings {list(EMBED_NAMES)}" if tie_flag is not False else "")
    )


def config_vocab_size(model_config: dict) -> int | None:
    v = model_config.get("vocab_size")
    if v is None and isinstance(model_config.get("text_config"), dict):
        v = model_config["text_config"].get("vocab_size")
    return int(v) if v is not None else None


def link_or_copy(src: Path, dst: Path, hardlink: bool = False) -> None:
    if hardlink:
        try:
            os.link(src, dst)
            return
        except OSError:
            pass
    shutil.copyfile(src, dst)
