import json
import os

import numpy as np
import pytest

from tokensmooth.dtypes import widen
from tokensmooth.editor import (
    PROVENANCE_FILE,
    apply_edit,
    export_weight_slice,
    plan_edit,
)
from tokensmooth.errors import RefusalError, ShapeError, ValidationError
from tokensmooth.risk import RiskTable, SamplingConfig, build_risk_table
from tokensmooth.smoothing import SmoothingParams, scale_factor
from tokensmooth.tensor_store import (
    INDEX_FILE,
    SINGLE_FILE,
    NamedTensor,
    ShardIndex,
    read_checkpoint,
    read_tensor,
    resolve_head_tensor,
    write_container,
)
from tokensmooth.testing import make_checkpoint
from tokensmooth.vocab import TokenClass, load_vocabulary, scan

DEFAULT_PARAMS = SmoothingParams(0.5, 10.0)


def table_from(scores):
    scores = np.asarray(scores, dtype=np.float64)
    return RiskTable(scores, [{"kind": "fixed"}] * len(scores))


def fixture_plan(model_dir, cjk, params=DEFAULT_PARAMS, dry_run=False):
    vocab = load_vocabulary(model_dir / "tokenizer.json")
    records, summary = scan(vocab, cjk)
    table = build_risk_table(records, SamplingConfig(seed=42), cjk)
    name, shard, _ = resolve_head_tensor(model_dir)
    shape = read_tensor(model_dir / shard, name).shape
    return records, table, plan_edit(table, params, shape, vocab.special_ids, name, dry_run=dry_run)


def head_rows(model_dir):
    name, shard, _ = resolve_head_tensor(model_dir)
    t = read_tensor(model_dir / shard, name)
    return t, widen(t.data, t.dtype).reshape(t.shape)


def test_plan_all_safe():
    plan = plan_edit(table_from([0.0] * 10), DEFAULT_PARAMS, (10, 4))
    assert plan.rows == [] and plan.untouched_row_count == 10


def test_plan_single_broken():
    plan = plan_edit(table_from([0.0, 0.12, 0.0]), DEFAULT_PARAMS, (3, 4))
    assert len(plan.rows) == 1
    tid, risk, S = plan.rows[0]
    assert (tid, risk) == (1, 0.12)
    assert S == pytest.approx(0.8409683325186192, abs=1e-12)


def test_plan_excludes_specials_and_invariants():
    plan = plan_edit(table_from([1.0, 0.3, 1.0, 0.0]), DEFAULT_PARAMS, (6, 4), specials={2})
    assert [r[0] for r in plan.rows] == [0, 1]
    assert all(DEFAULT_PARAMS.min_scale <= S < 1.0 for _, _, S in plan.rows)


def test_plan_min_scale_one_is_empty():
    assert plan_edit(table_from([1.0, 0.5]), SmoothingParams(1.0, 10), (2, 4)).rows == []


def test_plan_shape_errors():
    with pytest.raises(ShapeError):
        plan_edit(table_from([0.0] * 10), DEFAULT_PARAMS, (9, 4))
    with pytest.raises(ValidationError):
        plan_edit(table_from([0.0] * 5), DEFAULT_PARAMS, (10, 4), vocab_size=10)
    with pytest.raises(ValidationError):
        plan_edit(table_from([0.0, 1.5]), DEFAULT_PARAMS, (10, 4))


def test_exact_halving(tmp_path):
    d = tmp_path / "m"
    d.mkdir()
    head = np.array([[1.0, -2.0, 0.5], [3.0, 3.0, 3.0]], dtype="<f4")
    write_container(d / SINGLE_FILE, [NamedTensor("lm_head.weight", "F32", (2, 3), head.tobytes())])
    plan = plan_edit(table_from([1.0, 0.0]), DEFAULT_PARAMS, (2, 3))
    apply_edit(d, tmp_path / "out", plan)
    out = np.frombuffer(read_tensor(tmp_path / "out" / SINGLE_FILE, "lm_head.weight").data, "<f4")
    assert out.tolist() == [0.5, -1.0, 0.25, 3.0, 3.0, 3.0]


def test_scaling_law_and_selectivity(checkpoint, tmp_path, cjk):
    records, table, plan = fixture_plan(checkpoint, cjk)
    out = tmp_path / "out"
    report = apply_edit(checkpoint, out, plan)
    t_in, before = head_rows(checkpoint)
    t_out, after = head_rows(out)
    assert (t_in.dtype, t_in.shape) == (t_out.dtype, t_out.shape)
    planned = {tid: S for tid, _, S in plan.rows}
    rb = t_in.row_bytes
    from tokensmooth.dtypes import ulp

    for tid in range(t_in.shape[0]):
        raw_in = t_in.data[tid * rb:(tid + 1) * rb]
        raw_out = t_out.data[tid * rb:(tid + 1) * rb]
        if tid in planned:
            exact = before[tid] * planned[tid]
            assert np.all(np.abs(after[tid] - exact) <= ulp(exact, t_in.dtype))
        else:
            assert raw_in == raw_out
    # never zeroed
    for tid, _, S in plan.rows:
        assert np.count_nonzero(after[tid]) == np.count_nonzero(before[tid])
    src, dst = read_checkpoint(checkpoint), read_checkpoint(out)
    for name in src:
        if name != "lm_head.weight":
            assert src[name].data == dst[name].data
    assert report.scaled_row_count == len(plan.rows) == 28
    assert report.input_digest != report.output_digest
    assert sum(report.scale_histogram["counts"]) == 28


def test_target_rows_at_min_scale(checkpoint, cjk):
    records, table, plan = fixture_plan(checkpoint, cjk)
    targets = [r.id for r in records if r.cls is TokenClass.TARGET]
    planned = {tid: S for tid, _, S in plan.rows}
    assert all(planned[t] == 0.5 for t in targets)


def test_dry_run_writes_nothing(checkpoint, tmp_path, cjk):
    *_, plan = fixture_plan(checkpoint, cjk, dry_run=True)
    out = tmp_path / "out"
    report = apply_edit(checkpoint, out, plan)
    assert not out.exists()
    assert report.dry_run and report.scaled_row_count == 28 and report.output_digest is None
    assert report.abs_change["max"] > 0
    assert apply_edit(checkpoint, None, plan).scaled_row_count == 28


def test_double_application_refused(checkpoint, tmp_path, cjk):
    *_, plan = fixture_plan(checkpoint, cjk)
    apply_edit(checkpoint, tmp_path / "once", plan)
    sidecar = json.loads((tmp_path / "once" / PROVENANCE_FILE).read_text())
    assert sidecar["params"] == {"min_scale": 0.5, "smoothness": 10.0}
    with pytest.raises(RefusalError, match="S\\^2"):
        apply_edit(tmp_path / "once", tmp_path / "twice", plan)
    assert not (tmp_path / "twice").exists()
    apply_edit(tmp_path / "once", tmp_path / "twice", plan, force=True)
    again = json.loads((tmp_path / "twice" / PROVENANCE_FILE).read_text())
    assert again["previous"]["output_digest"] == sidecar["output_digest"]


def test_refuses_same_dir_and_nonempty_out(checkpoint, tmp_path, cjk):
    *_, plan = fixture_plan(checkpoint, cjk)
    with pytest.raises(RefusalError):
        apply_edit(checkpoint, checkpoint, plan)
    busy = tmp_path / "busy"
    busy.mkdir()
    (busy / "x").write_text("x")
    with pytest.raises(RefusalError, match="not empty"):
        apply_edit(checkpoint, busy, plan)


def test_deterministic_output(checkpoint, tmp_path, cjk):
    *_, plan = fixture_plan(checkpoint, cjk)
    apply_edit(checkpoint, tmp_path / "a", plan)
    apply_edit(checkpoint, tmp_path / "b", plan, workers=4)
    for f in sorted(os.listdir(tmp_path / "a")):
        if f != PROVENANCE_FILE:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_sharded_only_head_shard_changes(tmp_path, cjk):
    src = make_checkpoint(tmp_path / "m", "BF16", shards=2)
    *_, plan = fixture_plan(src, cjk)
    out = tmp_path / "out"
    apply_edit(src, out, plan, hardlink=True)
    index = ShardIndex.load(src / INDEX_FILE)
    head_shard = index.weight_map["lm_head.weight"]
    for shard in index.shard_files:
        same = (src / shard).read_bytes() == (out / shard).read_bytes()
        assert same == (shard != head_shard)
    assert (out / INDEX_FILE).read_bytes() == (src / INDEX_FILE).read_bytes()


def test_tied_refused_without_consent(tmp_path, cjk):
    src = make_checkpoint(tmp_path / "m", "F16", tied=True)
    *_, plan = fixture_plan(src, cjk)
    with pytest.raises(RefusalError, match="tied"):
        apply_edit(src, tmp_path / "out", plan)


@pytest.mark.parametrize("shards", [1, 2])
def test_tied_untie_with_consent(tmp_path, cjk, shards):
    src = make_checkpoint(tmp_path / "m", "F16", tied=True, shards=shards)
    *_, plan = fixture_plan(src, cjk)
    out = tmp_path / "out"
    report = apply_edit(src, out, plan, allow_untie=True)
    assert report.untied
    config = json.loads((out / "config.json").read_text())
    assert config["tie_word_embeddings"] is False
    assert resolve_head_tensor(out)[0] == "lm_head.weight"
    before, after = read_checkpoint(src), read_checkpoint(out)
    assert after["model.embed_tokens.weight"].data == before["model.embed_tokens.weight"].data
    emb = widen(before["model.embed_tokens.weight"].data, "F16").reshape(-1, 8)
    head = widen(after["lm_head.weight"].data, "F16").reshape(-1, 8)
    planned = {tid for tid, _, _ in plan.rows}
    for tid in range(emb.shape[0]):
        if tid in planned:
            assert not np.array_equal(head[tid], emb[tid]) or not emb[tid].any()
        else:
            assert np.array_equal(head[tid], emb[tid])


def test_vocab_size_mismatch(checkpoint, tmp_path, cjk):
    *_, plan = fixture_plan(checkpoint, cjk)
    cfg = json.loads((checkpoint / "config.json").read_text())
    cfg["vocab_size"] = 8
    (checkpoint / "config.json").write_text(json.dumps(cfg))
    with pytest.raises(ShapeError, match="orientation"):
        apply_edit(checkpoint, tmp_path / "out", plan)


def test_slice_norms(checkpoint, tmp_path, cjk):
    records, table, plan = fixture_plan(checkpoint, cjk)
    out = tmp_path / "out"
    apply_edit(checkpoint, out, plan)
    classes = [r.cls.value for r in records]
    rows = export_weight_slice(checkpoint, 0, 64, "row_norm", out, classes, table.scores, DEFAULT_PARAMS)
    assert len(rows) == 64
    tol = {"F32": 1e-6, "F16": 2e-3, "BF16": 1e-2}[read_tensor(checkpoint / SINGLE_FILE, "lm_head.weight").dtype]
    for tid, cls, risk, scale, before, after in rows:
        if cls in ("safe", "special"):
            assert before == after
        else:
            assert after == pytest.approx(scale * before, rel=tol)
            assert scale == scale_factor(risk, DEFAULT_PARAMS)
        assert (after != before) == (tid in {r[0] for r in plan.rows})


def test_slice_raw_and_bounds(checkpoint, tmp_path):
    rows = export_weight_slice(checkpoint, 20, 22, "raw")
    assert len(rows) == 16 and rows[0][4] == 0 and rows[0][6] == ""
    with pytest.raises(ValidationError):
        export_weight_slice(checkpoint, 60, 65)
    with pytest.raises(ValidationError):
        export_weight_slice(checkpoint, 5, 5)
