"""Phase-1 and phase-2 prompt construction and response parsing.

Phase-1 templates live in ``templates/`` as plain text so they can be
diffed against their source. The phase-2 verifier prompt is our own
wording; only its input/output shape is fixed.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from urllib.parse import urlsplit

from .html_extractor import HtmlKeyInfo
from .snapshot_store import Raster

MAX_LIST_ITEMS = 10
MAX_EVIDENCE_WORDS = 300
ABSENT_BRAND = {"na", "n/a", "unknown"}
EMPTY_LIST = {"", "na", "n/a", "none"}


class InputMode(str, enum.Enum):
    SCREENSHOT_ONLY = "screenshot_only"
    HTML_ONLY = "html_only"
    BOTH = "both"

    @property
    def uses_screenshot(self) -> bool:
        return self is not InputMode.HTML_ONLY

    @property
    def uses_html(self) -> bool:
        return self is not InputMode.SCREENSHOT_ONLY


class Classification(str, enum.Enum):
    GENUINE = "genuine"
    PHISHING = "phishing"


class PromptError(ValueError):
    pass


class ModeInputMismatch(PromptError):
    pass


class MissingBrand(PromptError):
    pass


class ParseError(ValueError):
    """Raised when a response lacks fields we cannot do without.

    ``raw_text`` is filled in by callers that want the offending response
    kept for auditing.
    """

    def __init__(self, missing_fields, message: str = "", raw_text: str | None = None):
        self.missing_fields = frozenset(missing_fields)
        self.raw_text = raw_text
        super().__init__(message or "missing fields: " + ", ".join(sorted(self.missing_fields)))


@lru_cache(maxsize=None)
def template(name: str) -> str:
    return resources.files("brandlens").joinpath(f"templates/{name}.txt").read_text(encoding="utf-8").rstrip("\n")


_INTRO = {
    InputMode.SCREENSHOT_ONLY: "phase1_screenshot",
    InputMode.HTML_ONLY: "phase1_html",
    InputMode.BOTH: "phase1_both",
}


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str
    image_attachment: Raster | None = None


@dataclass(frozen=True)
class BrandIdentification:
    brand: str | None
    confidence: float
    supporting_evidence: str = ""
    mode: InputMode = InputMode.BOTH
    has_credentials: bool = False
    has_call_to_action: bool = False
    credential_fields: tuple[str, ...] = ()
    call_to_action_fields: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 10.0:
            raise ValueError(f"confidence out of range: {self.confidence}")
        if self.credential_fields and not self.has_credentials:
            raise ValueError("credential fields listed but has_credentials is false")
        if self.call_to_action_fields and not self.has_call_to_action:
            raise ValueError("call-to-action fields listed but has_call_to_action is false")
        if self.mode is InputMode.HTML_ONLY and (
            self.has_credentials or self.has_call_to_action or self.credential_fields or self.call_to_action_fields
        ):
            raise ValueError("html-only identifications carry no credential/call-to-action data")


@dataclass(frozen=True)
class DomainVerdict:
    classification: Classification
    evidence: str
    genuine_url: str | None = None

    def __post_init__(self):
        if not self.evidence:
            raise ValueError("evidence must be non-empty")
        if self.genuine_url is not None and not _is_absolute_url(self.genuine_url):
            raise ValueError(f"genuine_url is not absolute: {self.genuine_url!r}")


def _is_absolute_url(url: str) -> bool:
    try:
        parts = urlsplit(url)
        return bool(parts.scheme) and bool(parts.hostname)
    except ValueError:
        return False


def system_prompt(mode: InputMode, chain_of_thought: bool = False) -> str:
    fmt = template("format_html" if mode is InputMode.HTML_ONLY else "format_full")
    blocks = [template(_INTRO[mode]), fmt]
    if chain_of_thought:
        blocks.append(template("chain_of_thought"))
    blocks.append(template("common_rules"))
    return "\n\n".join(blocks)


def build_phase1_prompt(
    mode: InputMode,
    key_info: HtmlKeyInfo | None = None,
    screenshot: Raster | None = None,
    chain_of_thought: bool = False,
) -> PromptBundle:
    if mode.uses_html != (key_info is not None):
        raise ModeInputMismatch(f"mode {mode.value} {'needs' if mode.uses_html else 'takes no'} HTML key information")
    if mode.uses_screenshot != (screenshot is not None):
        raise ModeInputMismatch(f"mode {mode.value} {'needs' if mode.uses_screenshot else 'takes no'} screenshot")

    if mode.uses_html:
        user = "KEY INFORMATION:\n" + key_info.to_json()
        if mode.uses_screenshot:
            user = "The screenshot of the webpage is attached.\n\n" + user
    else:
        user = "The screenshot of the webpage is attached."
    return PromptBundle(system_prompt(mode, chain_of_thought), user, screenshot)


def build_phase2_prompt(url: str, identified: BrandIdentification) -> PromptBundle:
    if not identified.brand:
        raise MissingBrand("phase 2 needs an identified brand")
    lines = [
        f"- URL: {url}",
        f"- Identified Brand: {identified.brand}",
        f"- Confidence Score: {identified.confidence:.2f}",
    ]
    if identified.supporting_evidence:
        lines.append(f"- Supporting Evidence: {identified.supporting_evidence}")
    return PromptBundle(template("phase2_verifier"), "\n".join(lines))


# --- rendering (canonical numbered form) ---------------------------------


def _yes_no(flag: bool) -> str:
    return "Yes" if flag else "No"


def render_phase1_response(ident: BrandIdentification) -> str:
    brand = ident.brand if ident.brand else "NA"
    conf = f"{ident.confidence:.2f}"
    if ident.mode is InputMode.HTML_ONLY:
        lines = [
            f"1. Brand: {brand}",
            f"2. Confidence Score: {conf}",
            f"3. Supporting Evidence: {ident.supporting_evidence}",
        ]
    else:
        lines = [
            f"1. Brand: {brand}",
            f"2. Has Credentials: {_yes_no(ident.has_credentials)}",
            f"3. Has Call_To_Action: {_yes_no(ident.has_call_to_action)}",
            f"4. List of credentials: {', '.join(ident.credential_fields) or 'NA'}",
            f"5. List of call_to_action: {', '.join(ident.call_to_action_fields) or 'NA'}",
            f"6. Confidence Score: {conf}",
            f"7. Supporting Evidence: {ident.supporting_evidence}",
        ]
    return "\n".join(lines) + "\n"


def render_phase2_response(verdict: DomainVerdict) -> str:
    lines = [
        f"- Genuine/Phishing: {verdict.classification.value.capitalize()}",
        f"- Evidence: {verdict.evidence}",
        f"- Genuine URL: {verdict.genuine_url or 'NA'}",
    ]
    return "\n".join(lines) + "\n"


# --- parsing --------------------------------------------------------------

_LINE_PREFIX = re.compile(r"^[\s\-*•>#]*(?:\(?\d{1,2}[.)]\s*)?[\s*_`]*")
_NAME_JUNK = re.compile(r"[*`#\"'“”‘’]")
_NUMBER = re.compile(r"[-+]?\d+(?:\.\d+)?")
_ITEM_PREFIX = re.compile(r"^\s*(?:[-*•]+|\d{1,2}[.)])\s*")
_SURROUND = [("[", "]"), ("<", ">"), ('"', '"'), ("'", "'"), ("“", "”")]


def _field_name(raw: str) -> str:
    name = _NAME_JUNK.sub("", raw).replace("_", " ").replace("-", " ")
    return " ".join(name.split()).lower()


def _phase1_field(name: str) -> str | None:
    if name in ("brand", "brand name", "identified brand", "target brand"):
        return "brand"
    if name.startswith("has credential"):
        return "has_credentials"
    if name.startswith("has call to action"):
        return "has_call_to_action"
    if name.startswith("list of credential") or name.startswith("credential field"):
        return "credential_fields"
    if name.startswith("list of call to action") or name.startswith("call to action field"):
        return "call_to_action_fields"
    if name.startswith("confidence"):
        return "confidence"
    if name in ("supporting evidence", "evidence"):
        return "supporting_evidence"
    return None


def _phase2_field(name: str) -> str | None:
    if name in ("genuine/phishing", "phishing/genuine", "classification", "verdict", "result"):
        return "classification"
    if name in ("evidence", "supporting evidence", "reason", "explanation"):
        return "evidence"
    if name in ("genuine url", "official url", "legitimate url"):
        return "genuine_url"
    return None


def _split_fields(text: str, classify) -> tuple[dict[str, str], list[str]]:
    """Group lines under recognised ``Name: value`` headers.

    Returns the first value seen for each field and the lines that came
    before any header. Unrecognised lines continue the current field.
    """
    fields: dict[str, list[str]] = {}
    preamble: list[str] = []
    current: list[str] | None = None
    for line in text.splitlines():
        stripped = _LINE_PREFIX.sub("", line, count=1)
        name, sep, value = stripped.partition(":")
        key = classify(_field_name(name)) if sep and len(name) <= 60 else None
        if key is not None:
            if key in fields:
                current = []  # duplicate field: swallow it, keep the first
            else:
                current = fields[key] = [value]
            continue
        if current is None:
            preamble.append(line)
        else:
            current.append(line)
    return {k: "\n".join(v) for k, v in fields.items()}, preamble


def _clean_scalar(value: str) -> str:
    value = value.strip().strip("*").strip()
    value = value.rstrip(",").strip()
    for left, right in _SURROUND:
        if len(value) >= 2 and value.startswith(left) and value.endswith(right):
            value = value[1:-1].strip()
    return value


def _clean_block(value: str) -> str:
    return value.strip().strip("*").strip()


def _parse_bool(value: str) -> bool | None:
    word = _clean_scalar(value).lower()
    if word.startswith(("yes", "true")):
        return True
    if word.startswith(("no", "false")):
        return False
    return None


def _parse_list(value: str) -> list[str]:
    items = []
    for chunk in re.split(r"[,\n]", value):
        item = _ITEM_PREFIX.sub("", chunk).strip().strip("*").strip()
        if item.lower() not in EMPTY_LIST:
            items.append(item)
    return items


def parse_phase1_response(text: str, mode: InputMode) -> BrandIdentification:
    fields, _ = _split_fields(text, _phase1_field)
    warnings = []

    missing = {name for name in ("brand", "confidence") if name not in fields}
    confidence = None
    if "confidence" in fields:
        match = _NUMBER.search(fields["confidence"])
        if match is None:
            missing.add("confidence")
        else:
            confidence = float(match.group())
    if missing:
        raise ParseError({"Brand" if m == "brand" else "Confidence" for m in missing}, raw_text=text)

    brand_lines = [ln for ln in fields["brand"].splitlines() if ln.strip()]
    brand = _clean_scalar(brand_lines[0]) if brand_lines else ""
    if brand.lower() in ABSENT_BRAND:
        brand = None
    elif not brand:
        warnings.append("empty brand treated as NA")
        brand = None

    if not 0.0 <= confidence <= 10.0:
        clamped = min(max(confidence, 0.0), 10.0)
        warnings.append(f"confidence {fields['confidence'].strip()} clamped to {clamped:.2f}")
        confidence = clamped
    confidence = round(confidence, 2)

    evidence = _clean_block(fields.get("supporting_evidence", ""))
    if not evidence:
        warnings.append("no supporting evidence")
    elif len(evidence.split()) > MAX_EVIDENCE_WORDS:
        warnings.append(f"supporting evidence exceeds {MAX_EVIDENCE_WORDS} words")

    if mode is InputMode.HTML_ONLY:
        return BrandIdentification(brand, confidence, evidence, mode, warnings=tuple(warnings))

    flags = {}
    lists = {}
    for flag_name, list_name, label in (
        ("has_credentials", "credential_fields", "credentials"),
        ("has_call_to_action", "call_to_action_fields", "call-to-actions"),
    ):
        items = _parse_list(fields.get(list_name, ""))
        if len(items) > MAX_LIST_ITEMS:
            warnings.append(f"{label} list truncated from {len(items)} to {MAX_LIST_ITEMS} entries")
            items = items[:MAX_LIST_ITEMS]
        flag = _parse_bool(fields.get(flag_name, ""))
        if flag is None:
            warnings.append(f"has {label} missing or unreadable")
            flag = bool(items)
        elif items and not flag:
            warnings.append(f"{label} listed although flagged No")
            flag = True
        flags[flag_name] = flag
        lists[list_name] = tuple(items)

    return BrandIdentification(
        brand, confidence, evidence, mode, warnings=tuple(warnings), **flags, **lists
    )


_VERDICT_WORD = re.compile(r"\b(genuine|phishing)\b", re.IGNORECASE)


def parse_phase2_response(text: str) -> DomainVerdict:
    fields, preamble = _split_fields(text, _phase2_field)

    classification = None
    if "classification" in fields:
        match = _VERDICT_WORD.search(fields["classification"])
        if match:
            classification = Classification(match.group(1).lower())
    if classification is None:
        # a line that is nothing but the verdict word
        for line in text.splitlines():
            word = _clean_scalar(_LINE_PREFIX.sub("", line, count=1)).lower()
            if word in ("genuine", "phishing"):
                classification = Classification(word)
                break
    if classification is None:
        raise ParseError({"Genuine/Phishing"}, "no Genuine/Phishing classification found", raw_text=text)

    evidence = _clean_block(fields.get("evidence", ""))
    if not evidence:
        evidence = _clean_block("\n".join(preamble)) or _clean_block(text)

    genuine_url = None
    if "genuine_url" in fields:
        words = fields["genuine_url"].split()
        candidate = _clean_scalar(words[0]).rstrip(".,;)") if words else ""
        if _is_absolute_url(candidate):
            genuine_url = candidate
    return DomainVerdict(classification, evidence, genuine_url)
