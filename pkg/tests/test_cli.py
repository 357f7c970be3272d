from __future__ import annotations

import argparse
import json
import re
import shutil
from pathlib import Path

import pytest

from brandlens.cli import VERDICT_EXIT, build_parser, main
from brandlens.config import ConfigError, RunConfig, TransportKind, config_from_mapping, load_config
from brandlens.pipeline import Outcome

from conftest import ALIASES, CORPUS, CORPUS_TRANSCRIPTS, FIXTURES, MODELS, THRESHOLDS

README = Path(__file__).resolve().parent.parent / "README.md"
REPLAY = ["--transport", "replay", "--fixtures", str(CORPUS_TRANSCRIPTS), "--thresholds", str(THRESHOLDS)]


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def _error_line(err: str) -> dict:
    lines = [ln for ln in err.splitlines() if ln.startswith("{")]
    assert len(lines) == 1, err
    return json.loads(lines[0])


# --- detect ---------------------------------------------------------------------------------


@pytest.mark.parametrize(
    "sample, model, outcome",
    [
        ("whatsapp-polert", "openai/gpt-4-turbo", Outcome.PHISHING),
        ("paypal-genuine", "openai/gpt-4-turbo", Outcome.GENUINE),
        ("brandless-phish", "openai/gpt-4-turbo", Outcome.UNKNOWN),
        ("blank-page", "openai/gpt-4-turbo", Outcome.INVALID),
        ("netflix-safety", "google/gemini-pro-vision", Outcome.ERROR),
    ],
)
def test_detect_exit_codes(capsys, sample, model, outcome):
    code, out, _ = _run(capsys, "detect", CORPUS / sample, "--mode", "both", "--model", model, *REPLAY)
    assert code == VERDICT_EXIT[outcome]
    assert json.loads(out)["outcome"] == outcome.value


def test_detect_worked_example(capsys):
    code, out, _ = _run(capsys, "detect", CORPUS / "whatsapp-polert", "--mode", "both", "--model", "openai/gpt-4-turbo", *REPLAY)
    verdict = json.loads(out)
    assert code == 3
    assert verdict["genuine_url"] == "https://www.whatsapp.com"
    assert verdict["identified_brand"] == "WhatsApp"


def test_detect_is_byte_deterministic(capsys):
    args = ["detect", CORPUS / "paypal-genuine", "--mode", "html_only", "--model", "anthropic/claude-3-opus", *REPLAY]
    assert _run(capsys, *args)[1] == _run(capsys, *args)[1]


def test_detect_baseline_verifier(capsys):
    code, out, _ = _run(
        capsys, "detect", CORPUS / "whatsapp-polert", "--mode", "both", "--model", "openai/gpt-4-turbo",
        "--verifier", "baseline", *REPLAY,
    )
    assert code == 3
    assert json.loads(out)["phase2_evidence"].startswith("string-match")


def test_detect_missing_sample(capsys, tmp_path):
    code, _, err = _run(capsys, "detect", tmp_path / "nope", "--model", "openai/gpt-4-turbo", *REPLAY)
    assert code == 2
    assert _error_line(err)["error"] == "MissingFile"


def test_detect_replay_without_fixtures(capsys):
    code, _, err = _run(capsys, "detect", CORPUS / "paypal-genuine", "--model", "openai/gpt-4-turbo", "--transport", "replay")
    assert code == 7
    assert _error_line(err)["error"] == "config"


def test_live_transport_names_missing_credentials(capsys, monkeypatch):
    monkeypatch.delenv("BRANDLENS_API_KEY_OPENAI", raising=False)
    code, _, err = _run(capsys, "detect", CORPUS / "paypal-genuine", "--model", "openai/gpt-4-turbo", "--transport", "live")
    assert code == 7
    assert "BRANDLENS_API_KEY_OPENAI" in _error_line(err)["message"]


def test_corrupt_fixture_exit_code(capsys, tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"hash": "x"}\n')
    code, _, err = _run(
        capsys, "detect", CORPUS / "paypal-genuine", "--model", "openai/gpt-4-turbo", "--transport", "replay",
        "--fixtures", bad,
    )
    assert code == 8
    assert _error_line(err)["error"] == "fixture_corrupt"


# --- scan / filter / extract ----------------------------------------------------------------


def test_scan(capsys, tmp_path):
    report = tmp_path / "dups.jsonl"
    code, out, err = _run(capsys, "scan", CORPUS, "--dedup-report", report)
    assert code == 0
    ids = [json.loads(ln)["sample_id"] for ln in out.splitlines()]
    assert "paypal-genuine-mirror" not in ids and "paypal-genuine" in ids
    assert json.loads(report.read_text()) == {"retained": "paypal-genuine", "dropped": "paypal-genuine-mirror"}
    assert "1 duplicates dropped" in err


def test_scan_unreadable_root(capsys, tmp_path):
    code, _, err = _run(capsys, "scan", tmp_path / "missing")
    assert code == 2
    assert _error_line(err)["error"] == "unreadable_root"


def test_filter_blank_fixture(capsys, tmp_path):
    root = tmp_path / "ds"
    shutil.copytree(CORPUS / "blank-page", root / "blank-page")
    code, out, err = _run(capsys, "filter", root, "--thresholds", THRESHOLDS)
    assert code == 0
    report = json.loads(out.splitlines()[0])
    assert report["outcomes"]["pixel_stddev"]["status"] == "fail"
    assert "pixel_stddev=1" in err


def test_filter_warns_when_uncalibrated(capsys):
    code, out, err = _run(capsys, "filter", CORPUS)
    assert code == 0
    assert "not fully calibrated" in err


def test_filter_calibrate_writes_thresholds(capsys, tmp_path):
    out_path = tmp_path / "t.json"
    code, _, err = _run(
        capsys, "filter", FIXTURES / "calibration", "--calibrate", FIXTURES / "calibration" / "labeled.json",
        "--thresholds-out", out_path, "--output", tmp_path / "reports.jsonl",
    )
    assert code == 0
    saved = json.loads(out_path.read_text())["filter_thresholds"]
    committed = json.loads(THRESHOLDS.read_text())["filter_thresholds"]
    # pixel metrics match the committed calibration; OCR needs a backend the CLI does not ship
    assert saved["min_gray_stddev"] == committed["min_gray_stddev"]
    assert saved["min_edge_count"] == committed["min_edge_count"]
    assert saved["min_ocr_chars"] == 20 and saved["calibrated"] is False
    assert "min_ocr_chars: no ocr provider" in err
    assert (tmp_path / "reports.jsonl").read_text().count("\n") == 6


def test_extract(capsys):
    code, out, _ = _run(capsys, "extract", CORPUS / "whatsapp-polert", "--max-chars", 200)
    info = json.loads(out)
    assert code == 0
    assert info["title"] == "WhatsApp"
    assert sum(len(v) if isinstance(v, str) else sum(map(len, v)) for v in info.values()) <= 200


def test_extract_budget_too_small(capsys):
    code, _, err = _run(capsys, "extract", CORPUS / "whatsapp-polert", "--max-chars", 10)
    assert code == 2
    assert _error_line(err)["error"] == "bad_argument"


# --- batch / eval / cost / fixtures ------------------------------------------------------------


def _batch(capsys, root, out, *extra):
    models = [a for m in MODELS for a in ("--model", m)]
    return _run(capsys, "batch", root, "--output", out, *models, "--mode", "both", "--mode", "html_only", *REPLAY, *extra)


def test_batch_resume_makes_no_calls(capsys, tmp_path):
    out = tmp_path / "r.jsonl"
    code, _, err = _batch(capsys, CORPUS, out)
    first = json.loads(err.strip().splitlines()[-1])
    assert code == 0 and first["written"] == 10 * 2 * 3 and first["gateway_calls"] > 0
    before = out.read_bytes()

    code, _, err = _batch(capsys, CORPUS, out, "--resume")
    second = json.loads(err.strip().splitlines()[-1])
    assert code == 0
    assert second["gateway_calls"] == 0 and second["written"] == 0 and second["skipped"] == 60
    assert out.read_bytes() == before


def test_batch_then_eval_and_cost(capsys, tmp_path):
    out = tmp_path / "r.jsonl"
    _batch(capsys, CORPUS, out)
    code, stdout, _ = _run(capsys, "eval", "--results", out, "--labels", CORPUS, "--csv-dir", tmp_path / "csv")
    report = json.loads(stdout)
    assert code == 0
    assert "openai/gpt-4-turbo|both" in report["metrics"]
    assert (tmp_path / "csv" / "metrics.csv").exists()

    code, stdout, _ = _run(capsys, "cost", "--results", out)
    assert code == 0
    assert set(json.loads(stdout)["token_stats"]) == {f"{m}|{mode}" for m in MODELS for mode in ("both", "html_only")}


def test_eval_with_aliases(capsys, tmp_path):
    out = tmp_path / "r.jsonl"
    models = ["--model", "openai/gpt-4-turbo"]
    _run(
        capsys, "batch", ALIASES, "--output", out, *models, "--mode", "both", "--transport", "replay",
        "--fixtures", FIXTURES / "alias_transcripts.jsonl", "--thresholds", THRESHOLDS,
    )
    report_path = tmp_path / "report.json"
    code, _, _ = _run(
        capsys, "eval", "--results", out, "--labels", ALIASES, "--aliases", FIXTURES / "alias_table.json",
        "--output", report_path,
    )
    assert code == 0
    assert json.loads(report_path.read_text())["metrics"]["openai/gpt-4-turbo|both"]["f1"] is not None


def test_eval_missing_results(capsys, tmp_path):
    code, _, err = _run(capsys, "eval", "--results", tmp_path / "x.jsonl", "--labels", CORPUS)
    assert code == 2
    assert _error_line(err)["error"] == "unreadable_results"


def test_cost_image_estimate(capsys, tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[providers.openai.image_tokens."gpt-4-turbo"]\nbase = 85\nper_tile = 170\ntile = 512\n')
    code, out, _ = _run(capsys, "cost", "--estimate-image", "1024x1024", "--config", cfg)
    assert code == 0
    assert json.loads(out)["image_tokens"] == {"openai/gpt-4-turbo": 765}

    code, _, err = _run(capsys, "cost", "--estimate-image", "512x512", "--config", cfg, "--model", "acme/v1")
    assert code == 7
    assert _error_line(err)["error"] == "unknown_model_formula"


def test_cost_needs_an_input(capsys):
    assert _run(capsys, "cost")[0] == 2


def test_fixtures_summary(capsys):
    code, out, _ = _run(capsys, "fixtures", CORPUS_TRANSCRIPTS)
    summary = json.loads(out)
    assert code == 0
    assert summary["records"] == len(CORPUS_TRANSCRIPTS.read_text().splitlines())
    assert summary["errors"] == {"safety_filter": 2}


# --- config -----------------------------------------------------------------------------------


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(
        'modes = ["html_only", "both"]\nmodels = ["openai/gpt-4-turbo"]\nverifier = "baseline"\n'
        "max_in_flight = 2\n[filter_thresholds]\nmin_gray_stddev = 7.5\n"
    )
    cfg = load_config(path)
    assert cfg.modes[0].value == "html_only" and cfg.max_in_flight == 2
    assert cfg.thresholds.min_gray_stddev == 7.5
    assert cfg.pipeline_config().verifier.value == "baseline"
    assert config_from_mapping({"transport": "live"}, cfg).transport is TransportKind.LIVE


@pytest.mark.parametrize("data", [{"nonsense": 1}, {"verifier": "magic"}, {"max_in_flight": 0}, {"modes": ["all"]}])
def test_bad_config(data):
    with pytest.raises(ConfigError):
        config_from_mapping(data)


def test_defaults():
    cfg = RunConfig()
    assert cfg.max_in_flight == 4 and cfg.transport is TransportKind.REPLAY and cfg.temperature == 0.0


# --- documentation parity ---------------------------------------------------------------------


def _all_flags(parser: argparse.ArgumentParser) -> set[str]:
    flags = set()
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                flags |= _all_flags(sub)
        else:
            flags |= {s for s in action.option_strings if s.startswith("--") and s != "--help"}
    return flags


def test_every_flag_is_documented():
    readme = README.read_text(encoding="utf-8")
    documented = set(re.findall(r"--[a-z][a-z-]*", readme))
    assert _all_flags(build_parser()) - documented == set()


def test_every_subcommand_is_documented():
    readme = README.read_text(encoding="utf-8")
    sub = next(a for a in build_parser()._actions if isinstance(a, argparse._SubParsersAction))
    for name in sub.choices:
        assert f"brandlens {name}" in readme


def test_every_flag_has_help():
    def walk(parser):
        for action in parser._actions:
            if isinstance(action, argparse._SubParsersAction):
                for sub in action.choices.values():
                    yield from walk(sub)
            elif action.option_strings:
                yield action

    assert all(a.help for a in walk(build_parser()))
