"""Command-line entry point.

Exit codes: 0 success, 2 configuration/usage error, 3 I/O error, 4 validation error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig, resolve_config
from .editor import (
    RAW_SLICE_HEADER,
    SLICE_HEADER,
    apply_edit,
    export_weight_slice,
    plan_edit,
)
from .errors import ConfigError, InputError, TokenSmoothError
from .metrics import FlagRule, corpus_report, read_ndjson, write_doc_csv
from .risk import RiskTable, build_risk_table
from .smoothing import emit_curve, write_curve_csv
from .tensor_store import read_header, resolve_head_tensor
from .unicode_ranges import parse_range_spec
from .vocab import load_vocabulary, scan, scan_report

log = logging.getLogger("tokensmooth")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_VALIDATION = 0, 2, 3, 4


def _emit(doc: dict, path: str | None) -> None:
    text = json.dumps(doc, indent=2, ensure_ascii=False)
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _tokenizer_path(cfg: RunConfig) -> Path:
    if cfg.tokenizer:
        return Path(cfg.tokenizer)
    if not cfg.model_dir:
        raise ConfigError("give --model or --tokenizer")
    for name in ("tokenizer.json", "vocab.json"):
        p = Path(cfg.model_dir) / name
        if p.exists():
            return p
    raise InputError(f"{cfg.model_dir}: no tokenizer.json or vocab.json")


def _require_ranges(cfg: RunConfig):
    if not cfg.ranges:
        raise ConfigError("no target ranges: pass --ranges (e.g. U+4E00-U+9FFF) or set 'ranges' in --config")
    return parse_range_spec(cfg.ranges)


def _scan(cfg: RunConfig):
    ranges = _require_ranges(cfg)
    vocab = load_vocabulary(_tokenizer_path(cfg), cfg.special_tokens)
    records, summary = scan(vocab, ranges, workers=cfg.workers)
    return vocab, ranges, records, summary


def cmd_scan(cfg: RunConfig) -> int:
    _, _, records, summary = _scan(cfg)
    if cfg.json_records:
        _emit(scan_report(summary, records, cfg.to_json()), cfg.json_records)
    _emit(scan_report(summary, config=cfg.to_json()), cfg.report)
    return EXIT_OK


def _score(cfg: RunConfig):
    vocab, ranges, records, summary = _scan(cfg)
    table = build_risk_table(records, cfg.sampling(), ranges, workers=cfg.workers)
    table.save(cfg.risk_json, cfg.risk_bin)
    return vocab, records, summary, table


def cmd_score(cfg: RunConfig) -> int:
    _, records, summary, table = _score(cfg)
    broken = [table.scores[r.id] for r in records if r.cls.value == "broken"]
    _emit({
        "config": cfg.to_json(),
        "summary": summary.to_json(),
        "risk_table_digest": table.digest(),
        "broken_risk": {
            "count": len(broken),
            "nonzero": int(sum(1 for s in broken if s > 0)),
            "mean": float(sum(broken) / len(broken)) if broken else 0.0,
            "max": float(max(broken, default=0.0)),
        },
    }, cfg.report)
    return EXIT_OK


def cmd_smooth(cfg: RunConfig) -> int:
    if not cfg.model_dir:
        raise ConfigError("smooth needs --model")
    if not cfg.output_dir and not cfg.dry_run:
        raise ConfigError("smooth needs --output (or --dry-run)")
    if cfg.risk_table:
        vocab, ranges, records, summary = _scan(cfg)
        table = RiskTable.load(cfg.risk_table)
    else:
        vocab, records, summary, table = _score(cfg)
    head_name, shard, tied = resolve_head_tensor(cfg.model_dir)
    head_shape = read_header(Path(cfg.model_dir) / shard).entries[head_name].shape
    plan = plan_edit(table, cfg.smoothing(), head_shape, vocab.special_ids, head_name,
                     dry_run=cfg.dry_run, vocab_size=vocab.max_id + 1)
    counts = {k: v for k, v in summary.to_json().items() if k.endswith("_count")}
    report = apply_edit(cfg.model_dir, cfg.output_dir, plan,
                        allow_untie=cfg.allow_untie, force=cfg.force, hardlink=cfg.hardlink,
                        class_counts=counts, risk_digest=table.digest(), workers=cfg.workers)
    _emit({"config": cfg.to_json(), "plan": plan.to_json(), "report": report.to_json()}, cfg.report)
    return EXIT_OK


def cmd_curve(cfg: RunConfig, steps: int, out: str | None) -> int:
    rows = emit_curve(cfg.smoothing(), steps)
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            write_curve_csv(rows, fh)
    else:
        write_curve_csv(rows, sys.stdout)
    return EXIT_OK


def cmd_slice(cfg: RunConfig, edited: str | None, start: int, stop: int, reduction: str, out: str | None) -> int:
    if not cfg.model_dir:
        raise ConfigError("slice needs --model")
    classes = risks = None
    if cfg.risk_table:
        table = RiskTable.load(cfg.risk_table)
        risks = table.scores
        classes = table.classes or None
    rows = export_weight_slice(cfg.model_dir, start, stop, reduction, edited, classes, risks, cfg.smoothing())
    header = SLICE_HEADER if reduction == "row_norm" else RAW_SLICE_HEADER
    fh = open(out, "w", encoding="utf-8", newline="") if out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if out:
            fh.close()
    return EXIT_OK


def cmd_metrics(cfg: RunConfig, input_path: str, plain: bool, rule: str, csv_path: str | None) -> int:
    ranges = _require_ranges(cfg)
    try:
        flag_rule = FlagRule.parse(rule)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    report = corpus_report(read_ndjson(input_path, plain), ranges, flag_rule)
    if csv_path:
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            write_doc_csv(report, fh)
    doc = {"config": cfg.to_json(), **report.to_json()}
    _emit(doc, cfg.report)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tokensmooth", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    # flags default to None so config-file values survive unless overridden
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--report", help="write the JSON report here instead of stdout")
    common.add_argument("--workers", type=int, help="thread count (env TOKENSMOOTH_WORKERS)")
    common.add_argument("-v", "--verbose", action="store_true")

    vocab = argparse.ArgumentParser(add_help=False)
    vocab.add_argument("--model", dest="model_dir", help="checkpoint directory")
    vocab.add_argument("--tokenizer", help="tokenizer.json or plain vocab map (default: from --model)")
    vocab.add_argument("--special-tokens", help="sidecar list of special surfaces for a plain vocab map")
    vocab.add_argument("--ranges", nargs="+", help="target ranges, e.g. U+4E00-U+9FFF")

    sampling = argparse.ArgumentParser(add_help=False)
    sampling.add_argument("--n-values", type=int, nargs="+")
    sampling.add_argument("--samples-per-n", type=int)
    sampling.add_argument("--seed", type=int, help="64-bit seed (env TOKENSMOOTH_SEED)")
    sampling.add_argument("--partner-pool", choices=["broken_only", "broken_and_target"])
    sampling.add_argument("--positions", choices=["all", "first"])
    sampling.add_argument("--risk-json", help="write the risk table as JSON")
    sampling.add_argument("--risk-bin", help="write the risk table as an id-ordered float64 .npy")

    smooth_params = argparse.ArgumentParser(add_help=False)
    smooth_params.add_argument("--min-scale", type=float)
    smooth_params.add_argument("--smoothness", type=float)

    s = sub.add_parser("scan", parents=[common, vocab], help="classify the vocabulary")
    s.add_argument("--json-records", help="write every token record to this JSON file")

    sub.add_parser("score", parents=[common, vocab, sampling], help="build the risk table")

    s = sub.add_parser("smooth", parents=[common, vocab, sampling, smooth_params],
                       help="scan, score, plan and write the edited checkpoint")
    s.add_argument("--output", dest="output_dir")
    s.add_argument("--risk-table", help="reuse a saved risk table instead of scoring")
    s.add_argument("--dry-run", action="store_true", default=None)
    s.add_argument("--allow-untie", action="store_true", default=None,
                   help="materialize a separate head when embeddings are tied")
    s.add_argument("--force", action="store_true", default=None, help="edit a checkpoint that was already edited")
    s.add_argument("--hardlink", action="store_true", default=None, help="hard-link untouched files")

    s = sub.add_parser("curve", parents=[common, smooth_params], help="risk -> scale curve as CSV")
    s.add_argument("--steps", type=int, default=101)
    s.add_argument("--out")

    s = sub.add_parser("slice", parents=[common, smooth_params], help="before/after head-row comparison CSV")
    s.add_argument("--model", dest="model_dir")
    s.add_argument("--edited", help="edited checkpoint directory")
    s.add_argument("--start", type=int, required=True)
    s.add_argument("--stop", type=int, required=True)
    s.add_argument("--reduction", choices=["row_norm", "raw"], default="row_norm")
    s.add_argument("--risk-table")
    s.add_argument("--out")

    s = sub.add_parser("metrics", parents=[common], help="target-script content of a generated corpus")
    s.add_argument("--input", required=True, help="NDJSON with {id, text} per line")
    s.add_argument("--plain", action="store_true", help="treat input as one document per line")
    s.add_argument("--ranges", nargs="+")
    s.add_argument("--rule", default="any", help="'any' or 'ratio:<threshold>'")
    s.add_argument("--csv", dest="csv_path", help="per-doc CSV output")
    return p


_CONFIG_KEYS = set(RunConfig.__dataclass_fields__)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k in _CONFIG_KEYS}
    try:
        cfg = resolve_config(args.config, flags)
        if args.command == "scan":
            return cmd_scan(cfg)
        if args.command == "score":
            return cmd_score(cfg)
        if args.command == "smooth":
            return cmd_smooth(cfg)
        if args.command == "curve":
            return cmd_curve(cfg, args.steps, args.out)
        if args.command == "slice":
            return cmd_slice(cfg, args.edited, args.start, args.stop, args.reduction, args.out)
        if args.command == "metrics":
            return cmd_metrics(cfg, args.input, args.plain, args.rule, args.csv_path)
    except TokenSmoothError as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        if isinstance(e, ConfigError):
            parser.print_usage(sys.stderr)
        return e.exit_code
    except OSError as e:
        print(json.dumps({"error": "OSError", "message": str(e)}), file=sys.stderr)
        return EXIT_IO
    except TypeError as e:
        # unknown/ill-typed config values surface here from the dataclass constructor
        print(json.dumps({"error": "ConfigError", "message": str(e)}), file=sys.stderr)
        return EXIT_CONFIG
    parser.error(f"unknown command {args.command}")
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
