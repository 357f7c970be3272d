#!/usr/bin/env python3
"""Live smoke test against a real provider (not part of CI).

Point it at a directory of five locally captured benign homepages whose
metadata.json carries a label with the expected brand. Each sample costs
at most two calls (identification, then domain verification), each capped
at 1024 output tokens.

    BRANDLENS_API_KEY_OPENAI=... python3 scripts/live_smoke.py captures/ --model openai/gpt-4-turbo
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path

from brandlens.evaluation import brand_match
from brandlens.gateway import Gateway, HttpProviderTransport, missing_credentials
from brandlens.pipeline import PipelineConfig, detect, Outcome
from brandlens.prompts import InputMode
from brandlens.snapshot_store import scan_dataset

__all__ = ["SmokeResult", "missing_credentials", "run"]


@dataclass
class SmokeResult:
    samples: int = 0
    matches: int = 0
    parse_failures: int = 0
    calls: int = 0
    rows: list[tuple[str, str | None, str | None, str]] = field(default_factory=list)


def run(dataset: Path, model: str, mode: InputMode = InputMode.BOTH) -> SmokeResult:
    snapshots, _ = scan_dataset(dataset)
    gateway = Gateway(HttpProviderTransport(), max_attempts=2)
    config = PipelineConfig(max_output_tokens=1024)
    result = SmokeResult()
    for snap in snapshots[:5]:
        verdict = detect(snap, mode, gateway, model, config)
        expected = snap.label.brand if snap.label else None
        result.samples += 1
        if verdict.outcome is Outcome.ERROR:
            result.parse_failures += 1
        if verdict.identified_brand and expected and brand_match(verdict.identified_brand, expected):
            result.matches += 1
        result.rows.append((snap.sample_id, expected, verdict.identified_brand, verdict.outcome.value))
    result.calls = gateway.attempts
    return result


def main() -> int:
    ap = argparse.ArgumentParser(description="live brand identification smoke test")
    ap.add_argument("dataset", type=Path)
    ap.add_argument("--model", default="openai/gpt-4-turbo")
    args = ap.parse_args()
    missing = missing_credentials([args.model])
    if missing:
        print(f"missing credentials: {', '.join(missing)}", file=sys.stderr)
        return 7
    res = run(args.dataset, args.model)
    for sid, expected, got, outcome in res.rows:
        print(f"{sid:30} expected={expected!s:20} got={got!s:20} {outcome}")
    print(f"{res.matches}/{res.samples} brands matched, {res.parse_failures} errors, {res.calls} calls")
    return 0 if res.matches >= 4 and res.parse_failures == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
