"""Small synthetic tokenizers and checkpoints for tests, demos and the fixture script."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .dtypes import narrow
from .tensor_store import CONFIG_FILE, INDEX_FILE, SINGLE_FILE, NamedTensor, ShardIndex, write_container
from .vocab import encode_surface

# 64 tokens: 20 ascii, 16 target, 12 broken, 14 other safe, 2 special
FIXTURE_TOKENS: list[bytes] = (
    [s.encode() for s in ["a", "b", "c", "the", " the", "ing", " hello", " world", "0", "1",
                          "!", ",", ".", " ", "\n", "ok", "er", " and", "(", ")"]]
    + [s.encode() for s in ["中", "文", "你好", "世界", "我", "的", "是", "人",
                        "大", "国", "日本", "中a", "一", "二", " 三", "四"]]
    + [bytes.fromhex(h) for h in ["e4", "e4b8", "b8ad", "ad", "e5", "a5bd", "e4bd", "a0",
                                  "e795", "8c", "f09f", "9880"]]
    + [s.encode() for s in ["한국어", " 가", "é", "ñ", "ü", "ß", "αβ", "Ж", "→", "€",
                            "★", "ok!", "2", "3"]]
)
FIXTURE_SPECIALS = ["<|endoftext|>", "<|中文|>"]
FIXTURE_VOCAB_SIZE = len(FIXTURE_TOKENS) + len(FIXTURE_SPECIALS)


def write_tokenizer_json(path, tokens: list[bytes], specials: list[str] = ()) -> dict[str, int]:
    """Consolidated tokenizer file: byte-level surfaces in model.vocab, specials as added tokens."""
    vocab = {encode_surface(raw): i for i, raw in enumerate(tokens)}
    added = [
        {"id": len(tokens) + k, "content": s, "special": True, "single_word": False,
         "lstrip": False, "rstrip": False, "normalized": False}
        for k, s in enumerate(specials)
    ]
    doc = {"version": "1.0", "added_tokens": added, "model": {"type": "BPE", "vocab": vocab, "merges": []}}
    Path(path).write_text(json.dumps(doc, ensure_ascii=False), encoding="utf-8")
    return vocab


def fixture_tensors(dtype: str = "F32", vocab_size: int = FIXTURE_VOCAB_SIZE, hidden: int = 8,
                    seed: int = 0, explicit_head: bool = True) -> list[NamedTensor]:
    rng = np.random.default_rng(seed)

    def t(name, shape, scale=1.0):
        values = rng.standard_normal(shape) * scale
        return NamedTensor(name, dtype, shape, narrow(values.ravel(), dtype))

    tensors = [
        t("model.embed_tokens.weight", (vocab_size, hidden)),
        t("model.layers.0.mlp.weight", (hidden, hidden), 0.1),
        t("model.norm.weight", (hidden,)),
    ]
    if explicit_head:
        tensors.append(t("lm_head.weight", (vocab_size, hidden)))
    return tensors


def make_checkpoint(model_dir, dtype: str = "F32", *, shards: int = 1, tied: bool = False,
                    hidden: int = 8, seed: int = 0, with_tokenizer: bool = True) -> Path:
    """Write a tiny checkpoint (config, tokenizer, one or two safetensors files)."""
    model_dir = Path(model_dir)
    model_dir.mkdir(parents=True, exist_ok=True)
    tensors = fixture_tensors(dtype, hidden=hidden, seed=seed, explicit_head=not tied)
    if shards == 1:
        write_container(model_dir / SINGLE_FILE, tensors, {"format": "pt"})
    else:
        files = [f"model-{k + 1:05d}-of-{shards:05d}.safetensors" for k in range(shards)]
        groups: list[list[NamedTensor]] = [[] for _ in files]
        for i, tensor in enumerate(tensors):
            groups[min(i * shards // len(tensors), shards - 1)].append(tensor)
        weight_map = {}
        for fname, group in zip(files, groups):
            write_container(model_dir / fname, group, {"format": "pt"})
            weight_map.update({tensor.name: fname for tensor in group})
        total = sum(len(tensor.data) for tensor in tensors)
        ShardIndex(weight_map, {"total_size": total}).save(model_dir / INDEX_FILE)
    config = {
        "architectures": ["FixtureForCausalLM"],
        "vocab_size": FIXTURE_VOCAB_SIZE,
        "hidden_size": hidden,
        "tie_word_embeddings": tied,
        "torch_dtype": {"F32": "float32", "F16": "float16", "BF16": "bfloat16"}[dtype],
    }
    (model_dir / CONFIG_FILE).write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    if with_tokenizer:
        write_tokenizer_json(model_dir / "tokenizer.json", FIXTURE_TOKENS, FIXTURE_SPECIALS)
    return model_dir
