"""Plan and apply per-row output-head scaling, and export weight slices for comparison."""

from __future__ import annotations

import hashlib
import json
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dtypes import SCALABLE, narrow, widen
from .errors import IntegrityError, RefusalError, ShapeError, ValidationError
from .risk import RiskTable
from .smoothing import SmoothingParams, scale_factor
from .tensor_store import (
    CONFIG_FILE,
    INDEX_FILE,
    NamedTensor,
    ShardIndex,
    config_vocab_size,
    link_or_copy,
    load_model_config,
    read_container,
    read_header,
    read_tensor,
    resolve_head_tensor,
    weight_files,
    write_container,
)

PROVENANCE_FILE = "tokensmooth_provenance.json"
UNTIED_HEAD_NAME = "lm_head.weight"


@dataclass
class EditPlan:
    head_name: str
    rows: list[tuple[int, float, float]]
    untouched_row_count: int
    params: SmoothingParams
    dry_run: bool = False

    def to_json(self) -> dict:
        return {
            "head_name": self.head_name,
            "rows_to_scale": len(self.rows),
            "untouched_row_count": self.untouched_row_count,
            "params": self.params.__dict__,
            "dry_run": self.dry_run,
        }


@dataclass
class EditReport:
    head_name: str
    head_dtype: str
    scaled_row_count: int
    class_counts: dict[str, int]
    scale_histogram: dict
    abs_change: dict[str, float]
    input_digest: str
    output_digest: str | None
    dry_run: bool
    untied: bool = False
    params: dict = field(default_factory=dict)
    risk_table_digest: str | None = None

    def to_json(self) -> dict:
        return dict(self.__dict__)


def plan_edit(risk_table: RiskTable, params: SmoothingParams, head_shape, specials=frozenset(),
              head_name: str = UNTIED_HEAD_NAME, dry_run: bool = False, vocab_size: int | None = None) -> EditPlan:
    """Select every non-special id with risk > 0 and attach its scale factor.

    Rows whose factor rounds to exactly 1.0 are dropped; scaling them is a no-op.
    """
    scores = np.asarray(risk_table.scores, dtype=np.float64)
    if vocab_size is not None and len(scores) < vocab_size:
        raise ValidationError(f"risk table covers {len(scores)} ids, vocabulary has {vocab_size}")
    if np.any(~np.isfinite(scores)) or np.any((scores < 0) | (scores > 1)):
        raise ValidationError("risk table holds scores outside [0, 1]")
    if len(head_shape) != 2:
        raise ShapeError(f"output head must be 2-D, got shape {list(head_shape)}")
    if head_shape[0] < len(scores):
        raise ShapeError(f"output head has {head_shape[0]} rows but the risk table covers {len(scores)} ids")

    rows = []
    for tid in np.flatnonzero(scores > 0).tolist():
        if tid in specials:
            continue
        r = float(scores[tid])
        S = scale_factor(r, params)
        if S < 1.0:
            rows.append((tid, r, S))
    return EditPlan(head_name, rows, int(head_shape[0]) - len(rows), params, dry_run)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 22), b""):
            h.update(chunk)
    return h.hexdigest()


def checkpoint_digest(model_dir) -> str:
    """Digest over every weight container (and the shard index, when present)."""
    model_dir = Path(model_dir)
    names = sorted(set(weight_files(model_dir).values()))
    if (model_dir / INDEX_FILE).exists():
        names.append(INDEX_FILE)
    h = hashlib.sha256()
    for name in names:
        h.update(name.encode("utf-8") + b"\0" + file_sha256(model_dir / name).encode("ascii"))
    return h.hexdigest()


def _scaled_rows(head: NamedTensor, plan: EditPlan, workers: int = 1) -> tuple[np.ndarray, np.ndarray, bytes]:
    """Return (ids, S values, new bytes for those rows, concatenated in id order)."""
    ids = np.array([r[0] for r in plan.rows], dtype=np.int64)
    scales = np.array([r[2] for r in plan.rows], dtype=np.float64)
    if len(ids) == 0:
        return ids, scales, b""
    mat = np.frombuffer(head.data, dtype=np.uint8).reshape(head.shape[0], head.row_bytes)

    def work(sl: slice) -> bytes:
        block = mat[ids[sl]]
        values = widen(block.tobytes(), head.dtype).reshape(len(block), -1)
        return narrow(values * scales[sl, None], head.dtype)

    step = max(1, -(-len(ids) // max(workers, 1)))
    slices = [slice(i, i + step) for i in range(0, len(ids), step)]
    if workers > 1 and len(slices) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(work, slices))
    else:
        parts = [work(s) for s in slices]
    return ids, scales, b"".join(parts)


def _histogram(scales: np.ndarray, params: SmoothingParams, bins: int = 10) -> dict:
    lo = params.min_scale
    hi = 1.0 if lo < 1.0 else lo + 1e-9
    counts, edges = np.histogram(scales, bins=bins, range=(lo, hi))
    return {"edges": edges.tolist(), "counts": counts.tolist()}


def apply_edit(model_dir, out_dir, plan: EditPlan, *, allow_untie: bool = False, force: bool = False,
               hardlink: bool = False, class_counts: dict | None = None, risk_digest: str | None = None,
               workers: int = 1) -> EditReport:
    """Write ``out_dir`` as a copy of ``model_dir`` with the planned head rows scaled.

    Only the container holding the head is rewritten; other files are copied (or
    hard-linked) and verified by digest. With ``plan.dry_run`` nothing is written.
    """
    model_dir = Path(model_dir)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is None and not plan.dry_run:
        raise ValidationError("an output directory is required unless dry_run is set")
    if out_dir is not None and out_dir.resolve() == model_dir.resolve():
        raise RefusalError("output directory must differ from the model directory")
    if (model_dir / PROVENANCE_FILE).exists() and not force:
        raise RefusalError(
            f"{model_dir} already carries {PROVENANCE_FILE}; a second edit would scale rows by S^2 "
            "(pass force to override)"
        )

    config = load_model_config(model_dir)
    head_name, shard, tied = resolve_head_tensor(model_dir, config)
    if tied and not allow_untie:
        raise RefusalError(
            f"{head_name} is tied to the input embeddings; scaling it would also change input "
            "representations. Re-run with untie consent to write a separate head tensor."
        )
    if plan.head_name != head_name:
        raise ValidationError(f"plan targets {plan.head_name!r} but the checkpoint head is {head_name!r}")

    head = read_tensor(model_dir / shard, head_name)
    if head.dtype not in SCALABLE:
        raise ValidationError(f"head dtype {head.dtype} is not one of {SCALABLE}")
    if len(head.shape) != 2:
        raise ShapeError(f"output head must be 2-D, got {list(head.shape)}")
    vsize = config_vocab_size(config)
    if vsize is not None and vsize != head.shape[0]:
        raise ShapeError(
            f"head {head_name} has {head.shape[0]} rows but config vocab_size is {vsize}; "
            "expected [vocab_size, hidden] orientation"
        )
    if plan.rows and max(r[0] for r in plan.rows) >= head.shape[0]:
        raise ShapeError("plan references rows beyond the head matrix")

    ids, scales, new_bytes = _scaled_rows(head, plan, workers)
    rb = head.row_bytes
    if len(ids):
        old = widen(np.frombuffer(head.data, np.uint8).reshape(head.shape[0], rb)[ids].tobytes(), head.dtype)
        delta = np.abs(widen(new_bytes, head.dtype) - old)
        abs_change = {"min": float(delta.min()), "max": float(delta.max()), "mean": float(delta.mean())}
    else:
        abs_change = {"min": 0.0, "max": 0.0, "mean": 0.0}

    report = EditReport(
        head_name=head_name if not tied else UNTIED_HEAD_NAME,
        head_dtype=head.dtype,
        scaled_row_count=len(plan.rows),
        class_counts=dict(class_counts or {}),
        scale_histogram=_histogram(scales, plan.params),
        abs_change=abs_change,
        input_digest=checkpoint_digest(model_dir),
        output_digest=None,
        dry_run=plan.dry_run,
        untied=tied,
        params=dict(plan.params.__dict__),
        risk_table_digest=risk_digest,
    )
    if plan.dry_run:
        return report

    if out_dir.exists() and any(out_dir.iterdir()):
        raise RefusalError(f"output directory {out_dir} is not empty")
    out_dir.mkdir(parents=True, exist_ok=True)

    for src in sorted(model_dir.iterdir()):
        if src.name in (shard, PROVENANCE_FILE):
            continue
        dst = out_dir / src.name
        if src.is_dir():
            shutil.copytree(src, dst)
            continue
        if tied and src.name in (CONFIG_FILE, INDEX_FILE):
            continue
        link_or_copy(src, dst, hardlink)
        if src.name.endswith(".safetensors") and file_sha256(src) != file_sha256(dst):
            raise IntegrityError(f"copied shard {src.name} does not match its source")

    if not tied:
        dst = out_dir / shard
        shutil.copyfile(model_dir / shard, dst)
        header = read_header(dst)
        base = header.data_start + header.entries[head_name].begin
        with open(dst, "r+b") as f:
            for k, tid in enumerate(ids.tolist()):
                f.seek(base + tid * rb)
                f.write(new_bytes[k * rb:(k + 1) * rb])
    else:
        _write_untied(model_dir, out_dir, shard, head, head_name, ids, new_bytes, config)

    report.output_digest = checkpoint_digest(out_dir)
    sidecar = {
        "tool": "tokensmooth",
        "version": __version__,
        "params": dict(plan.params.__dict__),
        "risk_table_digest": risk_digest,
        "head_name": report.head_name,
        "scaled_row_count": report.scaled_row_count,
        "input_digest": report.input_digest,
        "output_digest": report.output_digest,
        "untied": tied,
    }
    if (model_dir / PROVENANCE_FILE).exists():
        sidecar["previous"] = json.loads((model_dir / PROVENANCE_FILE).read_text(encoding="utf-8"))
    (out_dir / PROVENANCE_FILE).write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")
    return report


def _write_untied(model_dir: Path, out_dir: Path, shard: str, head: NamedTensor, head_name: str,
                  ids: np.ndarray, new_bytes: bytes, config: dict) -> None:
    rb = head.row_bytes
    data = bytearray(head.data)
    for k, tid in enumerate(ids.tolist()):
        data[tid * rb:(tid + 1) * rb] = new_bytes[k * rb:(k + 1) * rb]
    tensors, metadata = read_container(model_dir / shard)
    if head_name == UNTIED_HEAD_NAME:
        # explicit head already present but the config ties it: scale in place
        tensors = [NamedTensor(t.name, t.dtype, t.shape, bytes(data)) if t.name == head_name else t for t in tensors]
    else:
        tensors.append(NamedTensor(UNTIED_HEAD_NAME, head.dtype, head.shape, bytes(data)))
    write_container(out_dir / shard, tensors, metadata)

    if (model_dir / INDEX_FILE).exists():
        index = ShardIndex.load(model_dir / INDEX_FILE)
        index.weight_map[UNTIED_HEAD_NAME] = shard
        if "total_size" in index.metadata and head_name != UNTIED_HEAD_NAME:
            index.metadata["total_size"] = int(index.metadata["total_size"]) + len(data)
        index.save(out_dir / INDEX_FILE)

    new_config = dict(config)
    new_config["tie_word_embeddings"] = False
    if isinstance(new_config.get("text_config"), dict):
        new_config["text_config"] = dict(new_config["text_config"], tie_word_embeddings=False)
    (out_dir / CONFIG_FILE).write_text(json.dumps(new_config, indent=2) + "\n", encoding="utf-8")


def _head_matrix(model_dir) -> tuple[NamedTensor, np.ndarray]:
    name, shard, tied = resolve_head_tensor(model_dir)
    head = read_tensor(Path(model_dir) / shard, name)
    if head.dtype not in SCALABLE or len(head.shape) != 2:
        raise ValidationError(f"head {name} ({head.dtype}, {list(head.shape)}) cannot be sliced")
    return head, widen(head.data, head.dtype).reshape(head.shape)


SLICE_HEADER = ["token_id", "class", "risk", "scale", "stat_before", "stat_after"]
RAW_SLICE_HEADER = ["token_id", "class", "risk", "scale", "dim", "value_before", "value_after"]


def export_weight_slice(model_dir, start: int, stop: int, reduction: str = "row_norm", edited_dir=None,
                        classes=None, risks=None, params: SmoothingParams | None = None) -> list[list]:
    """Rows for the before/after comparison CSV over token ids ``[start, stop)``.

    ``reduction="row_norm"`` gives one line per token (L2 norm of the row);
    ``reduction="raw"`` gives one line per element. Columns without data are left empty.
    """
    if reduction not in ("row_norm", "raw"):
        raise ValidationError(f"unknown reduction {reduction!r}")
    _, before = _head_matrix(model_dir)
    after = _head_matrix(edited_dir)[1] if edited_dir is not None else None
    if after is not None and after.shape != before.shape:
        raise ShapeError(f"head shapes differ: {before.shape} vs {after.shape}")
    if not (0 <= start < stop <= before.shape[0]):
        raise ValidationError(f"token range [{start}, {stop}) is outside head rows [0, {before.shape[0]})")

    out = []
    for tid in range(start, stop):
        cls = classes[tid] if classes is not None and tid < len(classes) else ""
        risk = float(risks[tid]) if risks is not None and tid < len(risks) else None
        scale = scale_factor(risk, params) if (risk is not None and params is not None) else None
        if cls == "special":
            scale = 1.0
        lead = [tid, cls, "" if risk is None else risk, "" if scale is None else scale]
        if reduction == "row_norm":
            a = float(np.linalg.norm(before[tid]))
            b = float(np.linalg.norm(after[tid])) if after is not None else ""
            out.append(lead + [a, b])
        else:
            for d in range(before.shape[1]):
                b = float(after[tid, d]) if after is not None else ""
                out.append(lead + [d, float(before[tid, d]), b])
    return out
