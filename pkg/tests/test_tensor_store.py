import json
import struct

import numpy as np
import pytest

from tokensmooth.errors import ContainerError, InputError, ResolutionError, ValidationError
from tokensmooth.tensor_store import (
    INDEX_FILE,
    SINGLE_FILE,
    NamedTensor,
    ShardIndex,
    read_checkpoint,
    read_container,
    read_header,
    resolve_head_tensor,
    weight_files,
    write_container,
)
from tokensmooth.testing import fixture_tensors, make_checkpoint


def f32_2x2():
    return NamedTensor("w", "F32", (2, 2), np.array([[1, 2], [3, 4]], dtype="<f4").tobytes())


def raw_container(path, header: dict, data: bytes, hlen_override=None):
    raw = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(raw) if hlen_override is None else hlen_override))
        f.write(raw)
        f.write(data)


def test_single_tensor_bit_exact(tmp_path):
    write_container(tmp_path / "a.safetensors", [f32_2x2()])
    tensors, meta = read_container(tmp_path / "a.safetensors")
    assert meta is None
    assert len(tensors) == 1
    t = tensors[0]
    assert (t.name, t.dtype, t.shape) == ("w", "F32", (2, 2))
    assert np.frombuffer(t.data, "<f4").tolist() == [1, 2, 3, 4]


def test_readable_by_reference_library(tmp_path):
    from safetensors.numpy import load_file

    write_container(tmp_path / "a.safetensors", [f32_2x2()] + fixture_tensors("F16"), {"format": "pt"})
    loaded = load_file(str(tmp_path / "a.safetensors"))
    assert loaded["w"].tolist() == [[1, 2], [3, 4]]
    mine = {t.name: t for t in read_container(tmp_path / "a.safetensors")[0]}
    for name, arr in loaded.items():
        assert arr.astype(arr.dtype.newbyteorder("<")).tobytes() == mine[name].data


def test_reads_reference_library_output(tmp_path):
    from safetensors.numpy import save_file

    arrays = {"x": np.arange(6, dtype=np.float32).reshape(2, 3), "y": np.ones(4, dtype=np.float16),
              "z": np.arange(3, dtype=np.int64)}
    save_file(arrays, str(tmp_path / "ref.safetensors"), metadata={"k": "v"})
    tensors, meta = read_container(tmp_path / "ref.safetensors")
    assert meta == {"k": "v"}
    got = {t.name: t for t in tensors}
    for name, arr in arrays.items():
        assert got[name].data == arr.tobytes()
        assert got[name].shape == arr.shape


@pytest.mark.parametrize("dtype", ["F32", "F16", "BF16"])
def test_round_trip_bytes(tmp_path, dtype):
    src = tmp_path / "src.safetensors"
    write_container(src, fixture_tensors(dtype), {"format": "pt"})
    tensors, meta = read_container(src)
    dst = tmp_path / "dst.safetensors"
    write_container(dst, tensors, meta)
    assert src.read_bytes() == dst.read_bytes()
    h1, h2 = read_header(src), read_header(dst)
    assert h1.entries == h2.entries and h1.metadata == h2.metadata


def test_offsets_contiguous(tmp_path):
    write_container(tmp_path / "a.safetensors", fixture_tensors("BF16"))
    h = read_header(tmp_path / "a.safetensors")
    spans = sorted((e.begin, e.end) for e in h.entries.values())
    assert spans[0][0] == 0
    for (_, end), (begin, _) in zip(spans, spans[1:]):
        assert end == begin
    size = (tmp_path / "a.safetensors").stat().st_size
    assert spans[-1][1] == size - h.data_start
    assert h.data_start % 8 == 0


def test_empty_container(tmp_path):
    write_container(tmp_path / "e.safetensors", [])
    assert read_container(tmp_path / "e.safetensors") == ([], None)


def test_shape_mismatch_rejected():
    with pytest.raises(ValidationError):
        NamedTensor("w", "F32", (2, 3), b"\0" * 8)


def test_duplicate_names_rejected(tmp_path):
    with pytest.raises(ValidationError, match="duplicate"):
        write_container(tmp_path / "d.safetensors", [f32_2x2(), f32_2x2()])


def test_header_overrun(tmp_path):
    p = tmp_path / "bad.safetensors"
    raw_container(p, {}, b"", hlen_override=10_000)
    with pytest.raises(ContainerError, match="header overruns file") as ei:
        read_header(p)
    assert ei.value.kind == "header_overrun"


def test_truncated_prefix(tmp_path):
    p = tmp_path / "bad.safetensors"
    p.write_bytes(b"\x01\x02")
    with pytest.raises(ContainerError) as ei:
        read_header(p)
    assert ei.value.kind == "truncated"


def test_truncated_data(tmp_path):
    p = tmp_path / "bad.safetensors"
    raw_container(p, {"w": {"dtype": "F32", "shape": [4], "data_offsets": [0, 16]}}, b"\0" * 8)
    with pytest.raises(ContainerError) as ei:
        read_header(p)
    assert ei.value.kind == "out_of_bounds"


def test_overlapping_offsets(tmp_path):
    p = tmp_path / "bad.safetensors"
    header = {"a": {"dtype": "F32", "shape": [2], "data_offsets": [0, 8]},
              "b": {"dtype": "F32", "shape": [2], "data_offsets": [4, 12]}}
    raw_container(p, header, b"\0" * 12)
    with pytest.raises(ContainerError) as ei:
        read_header(p)
    assert ei.value.kind == "overlap"


def test_unknown_dtype(tmp_path):
    p = tmp_path / "bad.safetensors"
    raw_container(p, {"a": {"dtype": "Q4_K", "shape": [2], "data_offsets": [0, 2]}}, b"\0" * 2)
    with pytest.raises(ContainerError) as ei:
        read_header(p)
    assert ei.value.kind == "unknown_dtype"


def test_bad_json_header(tmp_path):
    p = tmp_path / "bad.safetensors"
    p.write_bytes(struct.pack("<Q", 4) + b"{{{{")
    with pytest.raises(ContainerError) as ei:
        read_header(p)
    assert ei.value.kind == "bad_header"


def test_missing_file(tmp_path):
    with pytest.raises(InputError):
        read_header(tmp_path / "nope.safetensors")


def test_sharded_equals_single(tmp_path):
    single = make_checkpoint(tmp_path / "one", "BF16")
    sharded = make_checkpoint(tmp_path / "two", "BF16", shards=2)
    index = ShardIndex.load(sharded / INDEX_FILE)
    assert len(index.shard_files) == 2
    via_index = read_checkpoint(sharded)
    direct = {}
    for shard in index.shard_files:
        for t in read_container(sharded / shard)[0]:
            direct[t.name] = t
    assert via_index == direct
    assert via_index == read_checkpoint(single)


def test_shard_round_trip(tmp_path):
    sharded = make_checkpoint(tmp_path / "two", "F16", shards=2)
    for shard in ShardIndex.load(sharded / INDEX_FILE).shard_files:
        tensors, meta = read_container(sharded / shard)
        write_container(tmp_path / "copy.safetensors", tensors, meta)
        assert (tmp_path / "copy.safetensors").read_bytes() == (sharded / shard).read_bytes()


def test_index_conflicting_entries(tmp_path):
    p = tmp_path / INDEX_FILE
    p.write_text('{"weight_map": {"a": "x.safetensors", "a": "y.safetensors"}}')
    with pytest.raises(ValidationError, match="both"):
        ShardIndex.load(p)


def test_index_missing_shard(tmp_path):
    ShardIndex({"a": "gone.safetensors"}).save(tmp_path / INDEX_FILE)
    with pytest.raises(InputError, match="gone.safetensors"):
        weight_files(tmp_path)


def test_resolve_explicit_head(tmp_path):
    d = make_checkpoint(tmp_path / "m", "F32")
    assert resolve_head_tensor(d) == ("lm_head.weight", SINGLE_FILE, False)


def test_resolve_tied(tmp_path):
    d = make_checkpoint(tmp_path / "m", "F32", tied=True)
    assert resolve_head_tensor(d) == ("model.embed_tokens.weight", SINGLE_FILE, True)


def test_resolve_sharded(tmp_path):
    d = make_checkpoint(tmp_path / "m", "F32", shards=2)
    name, shard, tied = resolve_head_tensor(d)
    assert name == "lm_head.weight" and shard.endswith("00002.safetensors") and not tied


def test_resolve_empty_dir(tmp_path):
    with pytest.raises(ResolutionError):
        resolve_head_tensor(tmp_path)


def test_resolve_untied_without_head(tmp_path):
    write_container(tmp_path / SINGLE_FILE, [t for t in fixture_tensors("F32") if t.name != "lm_head.weight"])
    (tmp_path / "config.json").write_text('{"tie_word_embeddings": false}')
    with pytest.raises(ResolutionError, match="lm_head.weight"):
        resolve_head_tensor(tmp_path)
