"""Command-line entry point.

Exit codes: 0 success (``detect``: genuine), 1 internal error, 2 bad
arguments or unreadable input, 3 phishing, 4 unknown brand, 5 invalid
sample, 6 detection error, 7 configuration error, 8 corrupt fixture file.
Errors are printed to stderr as one JSON line.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .config import ConfigError, RunConfig, TransportKind, config_from_mapping, load_config
from .evaluation import AliasTable, build_report, load_labels, token_stats_by_group, write_csv_tables
from .gateway import FixtureCorrupt, UnknownModelFormula, estimate_image_tokens, load_fixtures
from .html_extractor import extract_key_info, truncate_for_budget
from .pipeline import Outcome, Verifier, detect, detect_batch, read_results
from .prompts import InputMode
from .snapshot_store import SnapshotError, load_snapshot, scan_dataset
from .validity_filter import CHECKS, InsufficientExamples, Status, calibrate_thresholds, classify_validity

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2
EXIT_CONFIG = 7
EXIT_FIXTURE = 8

VERDICT_EXIT = {
    Outcome.GENUINE: 0,
    Outcome.PHISHING: 3,
    Outcome.UNKNOWN: 4,
    Outcome.INVALID: 5,
    Outcome.ERROR: 6,
}


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int):
        super().__init__(message)
        self.kind = kind
        self.code = code


def _fail(kind: str, message: str, code: int):
    raise CliError(kind, message, code)


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, ensure_ascii=False, indent=2) + "\n")


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config)
    overrides = {}
    for name in ("verifier", "transport", "max_in_flight"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "fixtures", None):
        overrides["fixture_path"] = args.fixtures
    if getattr(args, "mode", None):
        overrides["modes"] = args.mode
    if getattr(args, "model", None):
        overrides["models"] = args.model
    if getattr(args, "thresholds", None):
        overrides["filter_thresholds"] = json.loads(Path(args.thresholds).read_text(encoding="utf-8"))
    return config_from_mapping(overrides, cfg)


# --- subcommands ------------------------------------------------------------------


def cmd_scan(args) -> int:
    try:
        snapshots, report = scan_dataset(args.root)
    except (FileNotFoundError, NotADirectoryError, PermissionError) as exc:
        _fail("unreadable_root", str(exc), EXIT_INPUT)
    out = open(args.manifest, "w", encoding="utf-8") if args.manifest else sys.stdout
    try:
        for snap in snapshots:
            entry = {
                "sample_id": snap.sample_id,
                "url": snap.url,
                "http_status": snap.http_status,
                "has_screenshot": snap.has_screenshot,
                "label": None if snap.label is None else snap.label.truth.value,
            }
            out.write(json.dumps(entry, ensure_ascii=False) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    if args.dedup_report:
        Path(args.dedup_report).write_text(report.to_jsonl(), encoding="utf-8")
    for sample_id, message in report.errors:
        print(json.dumps({"load_error": sample_id, "message": message}), file=sys.stderr)
    print(
        f"{len(snapshots)} retained, {len(report.dropped)} duplicates dropped, {len(report.errors)} unreadable",
        file=sys.stderr,
    )
    return EXIT_OK


def _calibration_set(path: Path):
    listing = json.loads(path.read_text(encoding="utf-8"))
    examples = []
    for key, is_blank in (("blank", True), ("non_blank", False)):
        for rel in listing.get(key, []):
            examples.append((load_snapshot(path.parent / rel), is_blank))
    return examples


def cmd_filter(args) -> int:
    cfg = _run_config(args)
    thresholds = cfg.thresholds
    if args.calibrate:
        try:
            thresholds = calibrate_thresholds(_calibration_set(Path(args.calibrate)))
        except (OSError, ValueError, SnapshotError, InsufficientExamples) as exc:
            _fail("calibration_failed", str(exc), EXIT_INPUT)
        for note in thresholds.warnings:
            print(f"calibration warning: {note}", file=sys.stderr)
        if args.thresholds_out:
            Path(args.thresholds_out).write_text(
                json.dumps({"filter_thresholds": thresholds.to_dict()}, indent=2) + "\n", encoding="utf-8"
            )
    try:
        snapshots, _ = scan_dataset(args.root)
    except (FileNotFoundError, NotADirectoryError, PermissionError) as exc:
        _fail("unreadable_root", str(exc), EXIT_INPUT)
    if not thresholds.calibrated:
        print("warning: filter thresholds are not fully calibrated", file=sys.stderr)

    fails = Counter()
    out = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    try:
        for snap in snapshots:
            report = classify_validity(snap, thresholds, keywords=cfg.pipeline_config().verification_keywords)
            out.write(report.to_json() + "\n")
            for name, outcome in report.outcomes.items():
                if outcome.status is Status.FAIL:
                    fails[name] += 1
    finally:
        if out is not sys.stdout:
            out.close()
    print(" ".join(f"{name}={fails[name]}" for name in CHECKS) + f" total={len(snapshots)}", file=sys.stderr)
    return EXIT_OK


def cmd_extract(args) -> int:
    try:
        snap = load_snapshot(args.sample)
    except SnapshotError as exc:
        _fail(type(exc).__name__, str(exc), EXIT_INPUT)
    info = extract_key_info(snap.html)
    if args.max_chars is not None:
        try:
            info = truncate_for_budget(info, args.max_chars)
        except ValueError as exc:
            _fail("bad_argument", str(exc), EXIT_INPUT)
    sys.stdout.write(info.to_json() + "\n")
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _run_config(args)
    if len(cfg.models) != 1 or len(cfg.modes) != 1:
        _fail("bad_argument", "detect takes exactly one --mode and one --model", EXIT_INPUT)
    try:
        snap = load_snapshot(args.sample)
    except SnapshotError as exc:
        _fail(type(exc).__name__, str(exc), EXIT_INPUT)
    gateway = cfg.build_gateway()
    verdict = detect(snap, cfg.modes[0], gateway, cfg.models[0], cfg.pipeline_config())
    _emit(verdict.to_dict())
    return VERDICT_EXIT[verdict.outcome]


def cmd_batch(args) -> int:
    cfg = _run_config(args)
    if not cfg.models:
        _fail("bad_argument", "at least one --model is required", EXIT_INPUT)
    if not Path(args.root).is_dir():
        _fail("unreadable_root", f"dataset root not found: {args.root}", EXIT_INPUT)
    gateway = cfg.build_gateway()
    summary = detect_batch(
        args.root,
        cfg.modes,
        cfg.models,
        gateway,
        args.output,
        cfg.pipeline_config(),
        max_in_flight=cfg.max_in_flight,
        resume=args.resume,
    )
    print(
        json.dumps(
            {
                "written": summary.written,
                "skipped": summary.skipped,
                "duplicates": summary.duplicates,
                "load_errors": summary.load_errors,
                "gateway_calls": gateway.attempts,
                "usage": summary.usage.to_dict(),
            }
        ),
        file=sys.stderr,
    )
    return EXIT_OK


def _load_results(path: str):
    try:
        return read_results(path) if Path(path).is_file() else _fail("unreadable_results", f"not found: {path}", EXIT_INPUT)
    except (ValueError, KeyError) as exc:
        _fail("bad_results", f"{path}: {exc}", EXIT_INPUT)


def cmd_eval(args) -> int:
    verdicts = _load_results(args.results)
    if not Path(args.labels).exists():
        _fail("unreadable_labels", f"not found: {args.labels}", EXIT_INPUT)
    try:
        labels = load_labels(args.labels)
    except (ValueError, KeyError) as exc:
        _fail("bad_labels", str(exc), EXIT_INPUT)
    aliases = None
    if args.aliases:
        aliases = AliasTable.from_mapping(json.loads(Path(args.aliases).read_text(encoding="utf-8")))
    report = build_report(verdicts, labels, aliases)
    if args.csv_dir:
        write_csv_tables(report, args.csv_dir)
    if args.output:
        Path(args.output).write_text(json.dumps(report, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    else:
        _emit(report)
    return EXIT_OK


def cmd_cost(args) -> int:
    out = {}
    if args.results:
        verdicts = _load_results(args.results)
        out["token_stats"] = {
            f"{model}|{mode.value}": stats.to_dict() for (model, mode), stats in token_stats_by_group(verdicts).items()
        }
    if args.estimate_image:
        cfg = load_config(args.config)
        try:
            width, height = (int(x) for x in args.estimate_image.lower().split("x"))
        except ValueError:
            _fail("bad_argument", "--estimate-image expects WIDTHxHEIGHT", EXIT_INPUT)
        models = args.model or sorted(cfg.image_token_formulas)
        try:
            out["image_tokens"] = {
                m: estimate_image_tokens(width, height, m, cfg.image_token_formulas) for m in models
            }
        except UnknownModelFormula as exc:
            _fail("unknown_model_formula", f"no image token formula for {exc.args[0]}", EXIT_CONFIG)
    if not out:
        _fail("bad_argument", "give --results and/or --estimate-image", EXIT_INPUT)
    _emit(out)
    return EXIT_OK


def cmd_fixtures(args) -> int:
    try:
        records = load_fixtures(args.path)
    except FileNotFoundError:
        _fail("unreadable_fixtures", f"not found: {args.path}", EXIT_INPUT)
    except FixtureCorrupt as exc:
        _fail("fixture_corrupt", str(exc), EXIT_FIXTURE)
    flat = [r for rs in records.values() for r in rs]
    errors = Counter(r.error.kind.value for r in flat if r.error is not None)
    _emit(
        {
            "records": len(flat),
            "distinct_requests": len(records),
            "errors": dict(sorted(errors.items())),
            "input_tokens": sum(r.usage.input_tokens for r in flat),
            "output_tokens": sum(r.usage.output_tokens for r in flat),
        }
    )
    return EXIT_OK


# --- parser -----------------------------------------------------------------------


def _add_run_flags(p: argparse.ArgumentParser, batch: bool) -> None:
    p.add_argument("--config", help="TOML or JSON config file overriding run defaults")
    p.add_argument(
        "--mode",
        action="append",
        type=InputMode,
        metavar="{screenshot_only,html_only,both}",
        help="input mode for phase 1" + (" (repeatable)" if batch else ""),
    )
    p.add_argument("--model", action="append", help="model id as provider/model" + (" (repeatable)" if batch else ""))
    p.add_argument("--verifier", type=Verifier, metavar="{llm,baseline}", help="phase-2 verifier (default llm)")
    p.add_argument(
        "--transport", type=TransportKind, metavar="{live,record,replay}", help="LLM transport (default replay)"
    )
    p.add_argument("--fixtures", help="fixture JSONL file for the record/replay transports")
    p.add_argument("--thresholds", help="JSON file with a filter_thresholds block")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="brandlens", description="Two-phase LLM phishing page detection.")
    parser.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan", help="list samples and report duplicates")
    p.add_argument("root", help="dataset root directory")
    p.add_argument("--manifest", help="write the manifest JSONL here instead of stdout")
    p.add_argument("--dedup-report", help="write dropped duplicates as JSONL to this file")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("filter", help="run the invalid-sample filters")
    p.add_argument("root", help="dataset root directory")
    p.add_argument("--config", help="TOML or JSON config file overriding run defaults")
    p.add_argument("--thresholds", help="JSON file with a filter_thresholds block")
    p.add_argument("--calibrate", help="JSON file listing blank and non_blank sample directories")
    p.add_argument("--thresholds-out", help="save calibrated thresholds to this JSON file")
    p.add_argument("--output", help="write ValidityReport JSONL here instead of stdout")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("extract", help="print a sample's HTML key information")
    p.add_argument("sample", help="sample directory")
    p.add_argument("--max-chars", type=int, help="apply the character budget (>= 64)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("detect", help="classify one sample; exit code encodes the outcome")
    p.add_argument("sample", help="sample directory")
    _add_run_flags(p, batch=False)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("batch", help="classify a dataset into a results JSONL file")
    p.add_argument("root", help="dataset root directory")
    _add_run_flags(p, batch=True)
    p.add_argument("--output", required=True, help="results JSONL path")
    p.add_argument("--resume", action="store_true", help="skip triples already present in --output")
    p.add_argument("--max-in-flight", type=int, help="concurrent workers (default 4)")
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("eval", help="compute metrics from results and labels")
    p.add_argument("--results", required=True, help="results JSONL from batch")
    p.add_argument("--labels", required=True, help="dataset root or JSON label map")
    p.add_argument("--aliases", help="JSON map of brand -> equivalent names")
    p.add_argument("--csv-dir", help="also write one CSV table per figure here")
    p.add_argument("--output", help="write the report JSON here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cost", help="token statistics per (model, mode)")
    p.add_argument("--results", help="results JSONL from batch")
    p.add_argument("--estimate-image", metavar="WxH", help="estimate image tokens for this screenshot size")
    p.add_argument("--model", action="append", help="restrict --estimate-image to these models")
    p.add_argument("--config", help="config file holding providers.*.image_tokens formulas")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("fixtures", help="validate and summarise a fixture file")
    p.add_argument("path", help="fixture JSONL file")
    p.set_defaults(func=cmd_fixtures)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(json.dumps({"error": exc.kind, "message": str(exc)}), file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return EXIT_CONFIG
    except FixtureCorrupt as exc:
        print(json.dumps({"error": "fixture_corrupt", "message": str(exc)}), file=sys.stderr)
        return EXIT_FIXTURE
    except KeyboardInterrupt:
        print(json.dumps({"error": "interrupted", "message": "completed records were flushed"}), file=sys.stderr)
        return 130
    except Exception as exc:  # last resort so scripts always get one parseable line
        print(json.dumps({"error": "internal", "message": f"{type(exc).__name__}: {exc}"}), file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
