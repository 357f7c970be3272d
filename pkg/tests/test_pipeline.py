from __future__ import annotations

import json
import pkgutil
import shutil
from functools import lru_cache

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brandlens.gateway import ErrorKind, Gateway, ReplayTransport, TokenUsage
from brandlens.pipeline import (
    BASELINE_EVIDENCE_PREFIX,
    InvalidUrl,
    Outcome,
    PhishingVerdict,
    PipelineConfig,
    Verifier,
    detect,
    detect_batch,
    identify_brand,
    read_results,
    registrable_domain,
    verify_domain_baseline,
)
from brandlens.prompts import BrandIdentification, Classification, InputMode, MissingBrand, ModeInputMismatch
from brandlens.snapshot_store import WebpageSnapshot, load_snapshot

from conftest import CORPUS, CORPUS_TRANSCRIPTS, MODELS

GPT = "openai/gpt-4-turbo"
GEMINI = "google/gemini-pro-vision"


def _ident(brand):
    return BrandIdentification(brand, 9.0, "evidence", InputMode.BOTH)


# --- independent public-suffix oracle --------------------------------------------------


@lru_cache(maxsize=1)
def _icann_rules() -> frozenset[str]:
    text = pkgutil.get_data("tldextract", ".tld_set_snapshot").decode("utf-8")
    text = text.split("// ===BEGIN PRIVATE DOMAINS===")[0]
    return frozenset(ln.split()[0] for ln in text.splitlines() if ln.strip() and not ln.startswith("//"))


def psl_oracle(host: str) -> str:
    """Textbook public-suffix matching: longest rule wins, exceptions beat wildcards."""
    labels = host.lower().split(".")
    rules = _icann_rules()
    suffix_len = 1  # implicit "*" rule
    for i in range(len(labels)):
        candidate = ".".join(labels[i:])
        if "!" + candidate in rules:
            suffix_len = len(labels) - i - 1
            break
        wildcard = ".".join(["*"] + labels[i + 1 :])
        if candidate in rules or (i + 1 < len(labels) and wildcard in rules):
            suffix_len = max(suffix_len, len(labels) - i)
    if suffix_len >= len(labels):
        return host
    return ".".join(labels[-suffix_len - 1 :])


@pytest.mark.parametrize(
    "url, expected",
    [
        ("https://polert.xyz/52Lp/whatsapp.html", "polert.xyz"),
        ("https://www.whatsapp.com", "whatsapp.com"),
        ("https://a.b.example.co.uk/x", "example.co.uk"),
        ("http://192.168.0.1/login", "192.168.0.1"),
        ("http://[2001:db8::1]/", "2001:db8::1"),
        ("https://WWW.PayPal.COM/", "paypal.com"),
    ],
)
def test_registrable_domain(url, expected):
    assert registrable_domain(url) == expected


@pytest.mark.parametrize(
    "host",
    ["a.b.example.co.uk", "www.city.kawasaki.jp", "foo.bar.ck", "www.ck", "x.y.appspot.com", "shop.example.com.au"],
)
def test_registrable_domain_matches_oracle(host):
    assert registrable_domain(f"https://{host}/") == psl_oracle(host)


@settings(max_examples=100)
@given(
    st.lists(st.from_regex(r"[a-z][a-z0-9]{0,8}", fullmatch=True), min_size=1, max_size=3),
    st.sampled_from(["com", "co.uk", "com.au", "jp", "xyz", "github.io", "kawasaki.jp", "net.br"]),
)
def test_registrable_domain_property(labels, suffix):
    host = ".".join(labels) + "." + suffix
    assert registrable_domain(f"https://{host}/p") == psl_oracle(host)


@pytest.mark.parametrize("url", ["/relative", "not a url", "https://", "mailto:x@example.com"])
def test_invalid_url(url):
    with pytest.raises(InvalidUrl):
        registrable_domain(url)


# --- baseline --------------------------------------------------------------------------


@pytest.mark.parametrize(
    "url, brand, cls",
    [
        ("https://paypal.com/login", "PayPal", Classification.GENUINE),
        ("https://www.paypal.com/signin", "Pay Pal", Classification.GENUINE),
        ("https://polert.xyz/52Lp/whatsapp.html", "WhatsApp", Classification.PHISHING),
        ("https://meta.com", "Facebook", Classification.PHISHING),
        ("https://paypal.com.evil.xyz/", "PayPal", Classification.PHISHING),
        ("https://www.credit-agricole.fr/", "Crédit Agricole", Classification.PHISHING),
    ],
)
def test_baseline(url, brand, cls):
    verdict = verify_domain_baseline(url, _ident(brand))
    assert verdict.classification is cls
    assert verdict.evidence == f"{BASELINE_EVIDENCE_PREFIX}: {brand} vs {registrable_domain(url)}"
    assert verdict.genuine_url is None


def test_baseline_needs_brand():
    with pytest.raises(MissingBrand):
        verify_domain_baseline("https://x.example/", _ident(None))


# --- single-sample detection -------------------------------------------------------------


def _gateway():
    return Gateway(ReplayTransport(CORPUS_TRANSCRIPTS))


def _detect(sample, mode=InputMode.BOTH, model=GPT, calibrated=None, **cfg):
    gw = _gateway()
    config = PipelineConfig(thresholds=calibrated, **cfg) if calibrated else PipelineConfig(**cfg)
    return detect(load_snapshot(CORPUS / sample), mode, gw, model, config), gw


def test_genuine_page(calibrated):
    verdict, gw = _detect("paypal-genuine", calibrated=calibrated)
    assert verdict.outcome is Outcome.GENUINE
    assert verdict.identified_brand == "PayPal"
    assert gw.attempts == 2
    assert verdict.usage == gw.total_usage


def test_na_brand_is_unknown_without_phase2(calibrated):
    verdict, gw = _detect("brandless-phish", calibrated=calibrated)
    assert verdict.outcome is Outcome.UNKNOWN
    assert verdict.identified_brand is None
    assert gw.attempts == 1
    assert verdict.phase2_evidence is None


def test_baseline_makes_no_phase2_call(calibrated):
    verdict, gw = _detect("whatsapp-polert", calibrated=calibrated, verifier=Verifier.BASELINE)
    assert verdict.outcome is Outcome.PHISHING
    assert verdict.phase2_evidence == f"{BASELINE_EVIDENCE_PREFIX}: WhatsApp vs polert.xyz"
    assert gw.attempts == 1
    assert verdict.usage == gw.usage_log[0][1]


@pytest.mark.parametrize("sample", ["blank-page", "http-404", "cloudflare-check"])
def test_invalid_pages_never_reach_the_model(sample, calibrated):
    verdict, gw = _detect(sample, calibrated=calibrated)
    assert verdict.outcome is Outcome.INVALID
    assert gw.attempts == 0
    assert verdict.usage == TokenUsage()
    assert verdict.validity is not None and not verdict.validity.valid


def test_safety_block_becomes_error(calibrated):
    verdict, gw = _detect("netflix-safety", model=GEMINI, calibrated=calibrated)
    assert verdict.outcome is Outcome.ERROR
    assert verdict.error.kind is ErrorKind.SAFETY_FILTER
    assert gw.attempts == 1  # no retry on safety blocks


def test_typo_brand_is_corrected_by_verifier(calibrated):
    verdict, _ = _detect("credit-agricole-phish", model=GEMINI, calibrated=calibrated)
    assert verdict.identified_brand == "Credit Agricoole"
    assert verdict.outcome is Outcome.PHISHING
    assert verdict.genuine_url and "credit-agricole" in verdict.genuine_url


def test_alias_hook_rewrites_brand(calibrated):
    snap = load_snapshot(CORPUS / "microsoft-phish")
    config = PipelineConfig(thresholds=calibrated, brand_aliases={"outlook": "Microsoft"})
    ident = identify_brand(snap, InputMode.HTML_ONLY, _gateway(), "anthropic/claude-3-opus", config)
    assert ident.brand == "Microsoft"
    assert any("alias" in w for w in ident.warnings)


def test_identify_needs_screenshot():
    snap = load_snapshot(CORPUS / "whatsapp-polert")
    bare = WebpageSnapshot(snap.sample_id, snap.url, snap.html, None)
    with pytest.raises(ModeInputMismatch):
        identify_brand(bare, InputMode.BOTH, _gateway(), GPT)


def test_fixture_miss_is_an_error_outcome(calibrated, tmp_path):
    empty = tmp_path / "none.jsonl"
    empty.write_text("")
    verdict = detect(
        load_snapshot(CORPUS / "paypal-genuine"), InputMode.BOTH, Gateway(ReplayTransport(empty)), GPT,
        PipelineConfig(thresholds=calibrated),
    )
    assert verdict.outcome is Outcome.ERROR
    assert "FixtureMiss" in verdict.error.detail


def test_verdict_json_round_trip(calibrated):
    verdict, _ = _detect("whatsapp-polert", calibrated=calibrated)
    data = json.loads(verdict.to_json())
    assert set(data) == {
        "sample_id", "url", "mode", "model", "outcome", "identified_brand", "confidence",
        "phase1_evidence", "phase2_evidence", "genuine_url", "usage", "error",
    }
    assert PhishingVerdict.from_dict(data) == verdict


# --- batch ---------------------------------------------------------------------------------


def _subset(tmp_path, names):
    root = tmp_path / "ds"
    for name in names:
        shutil.copytree(CORPUS / name, root / name)
    return root


def test_batch_cardinality_and_order(tmp_path, calibrated):
    root = _subset(tmp_path, ["whatsapp-polert", "paypal-genuine", "brandless-phish"])
    out = tmp_path / "r.jsonl"
    modes = [InputMode.HTML_ONLY, InputMode.BOTH]
    summary = detect_batch(root, modes, [GPT], _gateway(), out, PipelineConfig(thresholds=calibrated))
    results = read_results(out)
    assert summary.written == len(results) == 6
    assert [v.key for v in results] == sorted(v.key for v in results)


def test_batch_drops_duplicates(tmp_path, calibrated):
    root = _subset(tmp_path, ["paypal-genuine", "paypal-genuine-mirror"])
    out = tmp_path / "r.jsonl"
    summary = detect_batch(root, [InputMode.BOTH], [GPT], _gateway(), out, PipelineConfig(thresholds=calibrated))
    assert summary.duplicates == 1
    assert {v.sample_id for v in read_results(out)} == {"paypal-genuine"}


def test_batch_resume_after_interruption(tmp_path, calibrated):
    config = PipelineConfig(thresholds=calibrated)
    full = tmp_path / "full.jsonl"
    detect_batch(CORPUS, list(InputMode), list(MODELS), _gateway(), full, config)
    lines = full.read_bytes().splitlines(keepends=True)

    partial = tmp_path / "partial.jsonl"
    partial.write_bytes(b"".join(lines[:20]) + lines[20][:15])  # torn record at the tail
    gw = _gateway()
    summary = detect_batch(CORPUS, list(InputMode), list(MODELS), gw, partial, config, resume=True)
    assert summary.skipped == 20
    assert summary.written == len(lines) - 20
    assert partial.read_bytes() == full.read_bytes()

    gw = _gateway()
    summary = detect_batch(CORPUS, list(InputMode), list(MODELS), gw, partial, config, resume=True)
    assert summary.written == 0 and gw.attempts == 0
    assert partial.read_bytes() == full.read_bytes()


@pytest.mark.parametrize("workers", [1, 8])
def test_batch_output_independent_of_parallelism(tmp_path, calibrated, workers):
    config = PipelineConfig(thresholds=calibrated)
    ref = tmp_path / "ref.jsonl"
    out = tmp_path / "out.jsonl"
    detect_batch(CORPUS, [InputMode.BOTH], list(MODELS), _gateway(), ref, config, max_in_flight=4)
    detect_batch(CORPUS, [InputMode.BOTH], list(MODELS), _gateway(), out, config, max_in_flight=workers)
    assert out.read_bytes() == ref.read_bytes()


def test_every_path_ends_in_one_outcome(tmp_path, calibrated):
    out = tmp_path / "r.jsonl"
    gw = _gateway()
    summary = detect_batch(CORPUS, list(InputMode), list(MODELS), gw, out, PipelineConfig(thresholds=calibrated))
    results = read_results(out)
    assert {v.outcome for v in results} == set(Outcome)
    for v in results:
        if v.outcome in (Outcome.PHISHING, Outcome.GENUINE):
            assert v.identified_brand and v.phase2_evidence
        assert (v.outcome is Outcome.UNKNOWN) == (v.identified_brand is None and v.outcome not in (Outcome.INVALID, Outcome.ERROR))
    assert summary.usage == gw.total_usage
