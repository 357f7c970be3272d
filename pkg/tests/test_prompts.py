from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brandlens.html_extractor import HtmlKeyInfo
from brandlens.prompts import (
    BrandIdentification,
    Classification,
    DomainVerdict,
    InputMode,
    MissingBrand,
    ModeInputMismatch,
    ParseError,
    build_phase1_prompt,
    build_phase2_prompt,
    parse_phase1_response,
    parse_phase2_response,
    render_phase1_response,
    render_phase2_response,
    template,
)
from brandlens.snapshot_store import Raster

from strategies import brand_identifications

SHOT = Raster.from_array(np.zeros((4, 4, 3), dtype=np.uint8))
INFO = HtmlKeyInfo(title="WhatsApp", meta_description="WhatsApp")
COMMON_RULES_TAIL = template("common_rules").splitlines()[-1]

# Worked example: identification block and verifier output for polert.xyz
WHATSAPP_BLOCK = """**Brand**: WhatsApp
**Has Credentials**: Yes
**Has Call-To-Actions**: Yes
**List of Credentials fields**: Phone number
**List of Call-To-Actions**: INSTALL UPDATE
**Confidence Score**: 9.50
**Supporting Evidence**: The screenshot prominently displays the WhatsApp logo.
"""
POLERT_OUTPUT = """- Genuine/Phishing: Phishing
- Evidence: The URL uses the domain "polert.xyz" instead of the official domain "whatsapp.com".
- Genuine URL: https://www.whatsapp.com
"""
# The comma-terminated variant with a stray quote in a field name
ALIBABA_BLOCK = """Brand: Alibaba,
Has Credentials'': Yes,
Has Call To Actions: Yes,
List of Credentials fields: Email address or member ID, Password,
List of Call-To-Actions: Sign In button, Create account link, Forgot password? link,
Confidence Score: 10.00,
Supporting Evidence: The screenshot prominently displays the Alibaba.com logo.
"""


# --- building -------------------------------------------------------------------------


@pytest.mark.parametrize(
    "mode, info, shot",
    [
        (InputMode.SCREENSHOT_ONLY, None, SHOT),
        (InputMode.HTML_ONLY, INFO, None),
        (InputMode.BOTH, INFO, SHOT),
    ],
)
def test_bundle_shape(mode, info, shot):
    bundle = build_phase1_prompt(mode, info, shot)
    assert (bundle.image_attachment is not None) == mode.uses_screenshot
    assert ("KEY INFORMATION:" in bundle.user_text) == mode.uses_html
    assert bundle.system_text.endswith(COMMON_RULES_TAIL)
    assert "I want you to act as a webpage brand identifier" in bundle.system_text
    if info is not None:
        payload = bundle.user_text.split("KEY INFORMATION:\n", 1)[1]
        assert HtmlKeyInfo.from_dict(json.loads(payload)) == info


def test_html_only_format_has_three_fields():
    text = build_phase1_prompt(InputMode.HTML_ONLY, INFO).system_text
    assert "Has Credentials" not in text
    assert "Brand" in text and "Confidence Score" in text and "Supporting Evidence" in text


def test_full_format_has_seven_numbered_fields():
    text = build_phase1_prompt(InputMode.SCREENSHOT_ONLY, None, SHOT).system_text
    for n in range(1, 8):
        assert f"\n{n}. " in text


def test_chain_of_thought_is_opt_in():
    plain = build_phase1_prompt(InputMode.BOTH, INFO, SHOT).system_text
    cot = build_phase1_prompt(InputMode.BOTH, INFO, SHOT, chain_of_thought=True).system_text
    assert template("chain_of_thought") not in plain
    assert template("chain_of_thought") in cot
    assert cot.endswith(COMMON_RULES_TAIL)


@pytest.mark.parametrize(
    "mode, info, shot",
    [
        (InputMode.BOTH, INFO, None),
        (InputMode.BOTH, None, SHOT),
        (InputMode.HTML_ONLY, INFO, SHOT),
        (InputMode.SCREENSHOT_ONLY, INFO, SHOT),
        (InputMode.SCREENSHOT_ONLY, None, None),
    ],
)
def test_mode_input_mismatch(mode, info, shot):
    with pytest.raises(ModeInputMismatch):
        build_phase1_prompt(mode, info, shot)


def test_phase2_prompt_lines():
    ident = BrandIdentification("WhatsApp", 9.5, "green logo", InputMode.BOTH)
    bundle = build_phase2_prompt("https://polert.xyz/52Lp/whatsapp.html", ident)
    lines = bundle.user_text.splitlines()
    assert "- URL: https://polert.xyz/52Lp/whatsapp.html" in lines
    assert "- Identified Brand: WhatsApp" in lines
    assert "- Confidence Score: 9.50" in lines
    assert "- Supporting Evidence: green logo" in lines
    assert bundle.image_attachment is None
    assert "Do not visit the URL" in bundle.system_text


def test_phase2_prompt_omits_empty_evidence():
    bundle = build_phase2_prompt("https://x.example/", BrandIdentification("X", 1.0, "", InputMode.HTML_ONLY))
    assert "Supporting Evidence" not in bundle.user_text


def test_phase2_needs_a_brand():
    with pytest.raises(MissingBrand):
        build_phase2_prompt("https://x.example/", BrandIdentification(None, 0.0))


# --- phase-1 parsing ---------------------------------------------------------------------


def test_parse_worked_example_block():
    ident = parse_phase1_response(WHATSAPP_BLOCK, InputMode.BOTH)
    assert ident.brand == "WhatsApp"
    assert ident.has_credentials and ident.has_call_to_action
    assert ident.credential_fields == ("Phone number",)
    assert ident.call_to_action_fields == ("INSTALL UPDATE",)
    assert ident.confidence == 9.5
    assert ident.warnings == ()


def test_parse_comma_terminated_block():
    ident = parse_phase1_response(ALIBABA_BLOCK, InputMode.BOTH)
    assert ident.brand == "Alibaba"
    assert ident.confidence == 10.0
    assert ident.credential_fields == ("Email address or member ID", "Password")
    assert ident.call_to_action_fields == ("Sign In button", "Create account link", "Forgot password? link")


def test_parse_na_brand():
    text = "1. Brand: NA\n2. Confidence_Score: 2.00\n3. Supporting_Evidence: none found"
    ident = parse_phase1_response(text, InputMode.HTML_ONLY)
    assert ident.brand is None
    assert ident.confidence == 2.0
    assert ident.supporting_evidence == "none found"


@pytest.mark.parametrize("word", ["NA", "n/a", "Unknown", "UNKNOWN", "[NA]"])
def test_absent_brand_spellings(word):
    assert parse_phase1_response(f"Brand: {word}\nConfidence: 1", InputMode.HTML_ONLY).brand is None


def test_reordered_and_underscored_fields():
    text = (
        "Confidence_Score: 7.25\n"
        "List_of_credentials: Email, Password\n"
        "Has_Credentials: yes\n"
        "brand: Chase\n"
        "Has_Call_To_Action: No\n"
    )
    ident = parse_phase1_response(text, InputMode.SCREENSHOT_ONLY)
    assert (ident.brand, ident.confidence) == ("Chase", 7.25)
    assert ident.credential_fields == ("Email", "Password")
    assert not ident.has_call_to_action


def test_newline_separated_list():
    text = "Brand: DHL\nHas Credentials: Yes\nList of credentials:\n- Tracking number\n- Card number\nConfidence Score: 8"
    assert parse_phase1_response(text, InputMode.BOTH).credential_fields == ("Tracking number", "Card number")


@pytest.mark.parametrize(
    "text, missing",
    [
        ("This page looks like a login form for some bank.", {"Brand", "Confidence"}),
        ("Brand: PayPal", {"Confidence"}),
        ("Confidence Score: 8.00", {"Brand"}),
        ("Brand: PayPal\nConfidence Score: high", {"Confidence"}),
    ],
)
def test_parse_errors_name_missing_fields(text, missing):
    with pytest.raises(ParseError) as err:
        parse_phase1_response(text, InputMode.BOTH)
    assert err.value.missing_fields == missing
    assert err.value.raw_text == text


@pytest.mark.parametrize("raw, expected", [("12.5", 10.0), ("-3", 0.0), ("10.00", 10.0), ("0", 0.0)])
def test_confidence_clamping(raw, expected):
    ident = parse_phase1_response(f"Brand: X\nConfidence Score: {raw}\nSupporting Evidence: e", InputMode.HTML_ONLY)
    assert ident.confidence == expected
    assert any("clamped" in w for w in ident.warnings) == (raw in ("12.5", "-3"))


def test_long_lists_are_truncated_with_warning():
    items = ", ".join(f"field{i}" for i in range(14))
    ident = parse_phase1_response(f"Brand: X\nHas Credentials: Yes\nList of credentials: {items}\nConfidence: 5", InputMode.BOTH)
    assert ident.credential_fields == tuple(f"field{i}" for i in range(10))
    assert any("truncated" in w for w in ident.warnings)


def test_long_evidence_kept_with_warning():
    evidence = " ".join(["word"] * 400)
    ident = parse_phase1_response(f"Brand: X\nConfidence: 5\nSupporting Evidence: {evidence}", InputMode.HTML_ONLY)
    assert ident.supporting_evidence == evidence
    assert any("300 words" in w for w in ident.warnings)


def test_listed_fields_force_flag():
    ident = parse_phase1_response("Brand: X\nHas Credentials: No\nList of credentials: Password\nConfidence: 5", InputMode.BOTH)
    assert ident.has_credentials and ident.credential_fields == ("Password",)
    assert ident.warnings


def test_identification_invariants():
    with pytest.raises(ValueError):
        BrandIdentification("X", 10.01)
    with pytest.raises(ValueError):
        BrandIdentification("X", 1.0, credential_fields=("a",))
    with pytest.raises(ValueError):
        BrandIdentification("X", 1.0, mode=InputMode.HTML_ONLY, has_credentials=True)


@settings(max_examples=300)
@given(brand_identifications())
def test_render_parse_round_trip(ident):
    assert parse_phase1_response(render_phase1_response(ident), ident.mode) == ident


@settings(max_examples=300)
@given(st.text(), st.sampled_from(InputMode))
def test_parser_only_raises_parse_error(text, mode):
    try:
        ident = parse_phase1_response(text, mode)
    except ParseError:
        return
    assert 0.0 <= ident.confidence <= 10.0


# --- phase-2 parsing ------------------------------------------------------------------------


def test_parse_verifier_output_block():
    verdict = parse_phase2_response(POLERT_OUTPUT)
    assert verdict.classification is Classification.PHISHING
    assert verdict.evidence.startswith("The URL uses the domain")
    assert verdict.genuine_url == "https://www.whatsapp.com"


def test_parse_minimal_genuine():
    verdict = parse_phase2_response("- Genuine/Phishing: Genuine\n- Evidence: domain matches brand")
    assert verdict == DomainVerdict(Classification.GENUINE, "domain matches brand")


@pytest.mark.parametrize(
    "text",
    [
        "**Genuine/Phishing**: **PHISHING**\n**Evidence**: typo domain",
        "genuine/phishing: phishing\nevidence: typo domain",
        "After checking the domain I conclude:\nPhishing\n",
    ],
)
def test_verifier_leniency(text):
    verdict = parse_phase2_response(text)
    assert verdict.classification is Classification.PHISHING
    assert verdict.evidence


def test_non_url_genuine_url_is_dropped():
    verdict = parse_phase2_response("Genuine/Phishing: Phishing\nEvidence: e\nGenuine URL: NA")
    assert verdict.genuine_url is None


@pytest.mark.parametrize("text", ["I cannot determine this.", "", "Genuine/Phishing: maybe"])
def test_verifier_parse_error(text):
    with pytest.raises(ParseError):
        parse_phase2_response(text)


@pytest.mark.parametrize("cls", list(Classification))
def test_phase2_round_trip(cls):
    verdict = DomainVerdict(cls, "some evidence here", "https://www.example.com/")
    assert parse_phase2_response(render_phase2_response(verdict)) == verdict
