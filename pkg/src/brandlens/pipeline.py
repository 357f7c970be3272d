"""Two-phase detection: validity filter, brand identification, domain verification."""
from __future__ import annotations

import enum
import ipaddress
import json
import logging
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from urllib.parse import urlsplit

import tldextract

from .gateway import ErrorKind, FixtureError, Gateway, GatewayError, ImageData, LlmRequest, TokenUsage
from .html_extractor import DEFAULT_MAX_CHARS, extract_key_info, truncate_for_budget
from .prompts import (
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
)
from .snapshot_store import WebpageSnapshot, scan_dataset
from .validity_filter import VERIFICATION_KEYWORDS, FilterThresholds, OcrProvider, ValidityReport, classify_validity

log = logging.getLogger(__name__)

BASELINE_EVIDENCE_PREFIX = "string-match"


class InvalidUrl(ValueError):
    pass


class Outcome(str, enum.Enum):
    PHISHING = "phishing"
    GENUINE = "genuine"
    UNKNOWN = "unknown"
    INVALID = "invalid"
    ERROR = "error"


class Verifier(str, enum.Enum):
    LLM = "llm"
    BASELINE = "baseline"


@dataclass(frozen=True)
class PipelineConfig:
    verifier: Verifier = Verifier.LLM
    thresholds: FilterThresholds = field(default_factory=FilterThresholds)
    max_chars: int = DEFAULT_MAX_CHARS
    max_output_tokens: int = 1024
    temperature: float = 0.0
    chain_of_thought: bool = False
    verification_keywords: tuple[str, ...] = VERIFICATION_KEYWORDS
    # phase-1 product/alias -> brand rewrites, e.g. {"outlook": "Microsoft"}; empty by default
    brand_aliases: Mapping[str, str] = field(default_factory=dict)
    ocr: OcrProvider | None = None


@dataclass(frozen=True)
class PhishingVerdict:
    sample_id: str
    url: str
    mode: InputMode
    model: str
    outcome: Outcome
    identified_brand: str | None = None
    confidence: float | None = None
    phase1_evidence: str | None = None
    phase2_evidence: str | None = None
    genuine_url: str | None = None
    usage: TokenUsage = TokenUsage()
    error: GatewayError | None = None
    validity: ValidityReport | None = field(default=None, compare=False, repr=False)

    @property
    def key(self) -> tuple[str, str, str]:
        return self.sample_id, self.mode.value, self.model

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "url": self.url,
            "mode": self.mode.value,
            "model": self.model,
            "outcome": self.outcome.value,
            "identified_brand": self.identified_brand,
            "confidence": self.confidence,
            "phase1_evidence": self.phase1_evidence,
            "phase2_evidence": self.phase2_evidence,
            "genuine_url": self.genuine_url,
            "usage": self.usage.to_dict(),
            "error": None if self.error is None else self.error.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)

    @classmethod
    def from_dict(cls, data: Mapping) -> PhishingVerdict:
        return cls(
            sample_id=data["sample_id"],
            url=data["url"],
            mode=InputMode(data["mode"]),
            model=data["model"],
            outcome=Outcome(data["outcome"]),
            identified_brand=data.get("identified_brand"),
            confidence=data.get("confidence"),
            phase1_evidence=data.get("phase1_evidence"),
            phase2_evidence=data.get("phase2_evidence"),
            genuine_url=data.get("genuine_url"),
            usage=TokenUsage.from_dict(data.get("usage") or {"input_tokens": 0, "output_tokens": 0}),
            error=GatewayError.from_dict(data["error"]) if data.get("error") else None,
        )


# --- domains ----------------------------------------------------------------------


@lru_cache(maxsize=1)
def _extractor() -> tldextract.TLDExtract:
    # bundled snapshot only: no network fetch, no cache directory
    return tldextract.TLDExtract(suffix_list_urls=(), cache_dir=None)


def public_suffix_version() -> str:
    return f"tldextract {tldextract.__version__} bundled snapshot"


def _host(url: str) -> str:
    try:
        parts = urlsplit(url)
        host = parts.hostname
    except ValueError as exc:
        raise InvalidUrl(f"{url!r}: {exc}") from None
    if not parts.scheme or not host:
        raise InvalidUrl(f"not an absolute URL with a host: {url!r}")
    return host


def _is_ip(host: str) -> bool:
    try:
        ipaddress.ip_address(host)
        return True
    except ValueError:
        return False


def registrable_domain(url: str) -> str:
    """eTLD+1 of the URL's host; IP literals come back unchanged."""
    host = _host(url)
    if _is_ip(host):
        return host
    parts = _extractor()(host)
    if not parts.suffix or not parts.domain:
        return host
    return f"{parts.domain}.{parts.suffix}"


def _domain_label(url: str) -> str:
    host = _host(url)
    if _is_ip(host):
        return host
    parts = _extractor()(host)
    return parts.domain or host


def normalize_brand(text: str) -> str:
    return re.sub(r"[\W_]+", "", text.lower())


def verify_domain_baseline(url: str, identified: BrandIdentification) -> DomainVerdict:
    """Phase-2 stand-in: is the brand a substring of the domain label?"""
    if not identified.brand:
        raise MissingBrand("baseline verification needs an identified brand")
    domain = registrable_domain(url)
    brand = normalize_brand(identified.brand)
    label = normalize_brand(_domain_label(url))
    evidence = f"{BASELINE_EVIDENCE_PREFIX}: {identified.brand} vs {domain}"
    if brand and brand in label:
        return DomainVerdict(Classification.GENUINE, evidence)
    return DomainVerdict(Classification.PHISHING, evidence)


# --- phases -----------------------------------------------------------------------


def _apply_aliases(ident: BrandIdentification, aliases: Mapping[str, str]) -> BrandIdentification:
    if not aliases or not ident.brand:
        return ident
    table = {normalize_brand(k): v for k, v in aliases.items()}
    target = table.get(normalize_brand(ident.brand))
    if target is None:
        return ident
    return replace(ident, brand=target, warnings=ident.warnings + (f"brand alias {ident.brand!r} -> {target!r}",))


def _request(model: str, bundle, config: PipelineConfig) -> LlmRequest:
    image = None
    if bundle.image_attachment is not None:
        image = ImageData(bundle.image_attachment.png, "image/png")
    return LlmRequest(
        model_id=model,
        system_text=bundle.system_text,
        user_text=bundle.user_text,
        image=image,
        max_output_tokens=config.max_output_tokens,
        temperature=config.temperature,
    )


def _identify(snapshot, mode, gateway, model, config) -> tuple[BrandIdentification, TokenUsage]:
    key_info = None
    if mode.uses_html:
        key_info = truncate_for_budget(extract_key_info(snapshot.html), config.max_chars)
    screenshot = snapshot.screenshot if mode.uses_screenshot else None
    if mode.uses_screenshot and screenshot is None:
        raise ModeInputMismatch(f"{snapshot.sample_id}: mode {mode.value} needs a screenshot")
    bundle = build_phase1_prompt(mode, key_info, screenshot, config.chain_of_thought)
    text, usage = gateway.complete(_request(model, bundle, config))
    try:
        ident = parse_phase1_response(text, mode)
    except ParseError as exc:
        exc.raw_text = text
        exc.usage = usage
        raise
    return _apply_aliases(ident, config.brand_aliases), usage


def identify_brand(
    snapshot: WebpageSnapshot,
    mode: InputMode,
    gateway: Gateway,
    model: str,
    config: PipelineConfig = PipelineConfig(),
) -> BrandIdentification:
    return _identify(snapshot, mode, gateway, model, config)[0]


def verify_domain_llm(
    url: str, identified: BrandIdentification, gateway: Gateway, model: str, config: PipelineConfig = PipelineConfig()
) -> tuple[DomainVerdict, TokenUsage]:
    bundle = build_phase2_prompt(url, identified)
    text, usage = gateway.complete(_request(model, bundle, config))
    try:
        return parse_phase2_response(text), usage
    except ParseError as exc:
        exc.raw_text = text
        exc.usage = usage
        raise


def _as_gateway_error(exc: Exception) -> GatewayError:
    if isinstance(exc, GatewayError):
        return exc
    if isinstance(exc, FixtureError):
        return GatewayError(ErrorKind.TRANSPORT, f"{type(exc).__name__}: {exc}")
    return GatewayError(ErrorKind.MALFORMED, f"{type(exc).__name__}: {exc}")


def detect(
    snapshot: WebpageSnapshot,
    mode: InputMode,
    gateway: Gateway,
    model: str,
    config: PipelineConfig = PipelineConfig(),
) -> PhishingVerdict:
    """Run one sample through the whole pipeline. Never raises for per-sample failures."""
    base = PhishingVerdict(snapshot.sample_id, snapshot.url, mode, model, Outcome.ERROR)

    report = classify_validity(snapshot, config.thresholds, config.ocr, config.verification_keywords)
    if not report.valid:
        return replace(base, outcome=Outcome.INVALID, validity=report)

    usage = TokenUsage()
    try:
        ident, phase1_usage = _identify(snapshot, mode, gateway, model, config)
    except (GatewayError, FixtureError, ParseError, ModeInputMismatch) as exc:
        usage += getattr(exc, "usage", TokenUsage())
        return replace(base, usage=usage, error=_as_gateway_error(exc), validity=report)
    usage += phase1_usage
    base = replace(
        base,
        identified_brand=ident.brand,
        confidence=ident.confidence,
        phase1_evidence=ident.supporting_evidence,
        usage=usage,
        validity=report,
    )
    if ident.brand is None:
        return replace(base, outcome=Outcome.UNKNOWN)

    try:
        if config.verifier is Verifier.BASELINE:
            verdict = verify_domain_baseline(snapshot.url, ident)
        else:
            verdict, phase2_usage = verify_domain_llm(snapshot.url, ident, gateway, model, config)
            usage += phase2_usage
    except (GatewayError, FixtureError, ParseError, InvalidUrl) as exc:
        usage += getattr(exc, "usage", TokenUsage())
        return replace(base, usage=usage, error=_as_gateway_error(exc))

    outcome = Outcome.GENUINE if verdict.classification is Classification.GENUINE else Outcome.PHISHING
    return replace(
        base,
        outcome=outcome,
        phase2_evidence=verdict.evidence,
        genuine_url=verdict.genuine_url,
        usage=usage,
    )


# --- batch ------------------------------------------------------------------------


def read_results(path: str | Path) -> list[PhishingVerdict]:
    path = Path(path)
    if not path.exists():
        return []
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(PhishingVerdict.from_dict(json.loads(line)))
    return out


def _completed_keys(path: Path) -> set[tuple[str, str, str]]:
    keys = set()
    if not path.exists():
        return keys
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            try:
                rec = json.loads(line)
                keys.add((rec["sample_id"], rec["mode"], rec["model"]))
            except (ValueError, KeyError):
                # a torn final line from an interrupted run; it gets redone
                continue
    return keys


def _trim_torn_tail(path: Path) -> None:
    if not path.exists():
        return
    data = path.read_bytes()
    if data and not data.endswith(b"\n"):
        path.write_bytes(data[: data.rfind(b"\n") + 1])


@dataclass
class BatchSummary:
    written: int = 0
    skipped: int = 0
    duplicates: int = 0
    load_errors: int = 0
    usage: TokenUsage = TokenUsage()


def detect_batch(
    dataset_root: str | Path,
    modes: Sequence[InputMode],
    models: Sequence[str],
    gateway: Gateway,
    output_path: str | Path,
    config: PipelineConfig = PipelineConfig(),
    max_in_flight: int = 4,
    resume: bool = False,
) -> BatchSummary:
    """Run every (sample, mode, model) triple and write one JSON line per verdict.

    Records are written in (sample_id, mode, model) order as soon as they
    and all their predecessors finish, so an interrupted run leaves a clean
    prefix. With ``resume`` the existing file is kept and finished triples
    are skipped.
    """
    if max_in_flight < 1:
        raise ValueError("max_in_flight must be >= 1")
    output_path = Path(output_path)
    snapshots, report = scan_dataset(dataset_root)
    summary = BatchSummary(duplicates=len(report.dropped), load_errors=len(report.errors))

    if resume:
        _trim_torn_tail(output_path)
        done = _completed_keys(output_path)
    else:
        done = set()
        output_path.parent.mkdir(parents=True, exist_ok=True)
        output_path.write_text("", encoding="utf-8")

    jobs = []
    for snap in snapshots:
        for mode in sorted(set(modes), key=lambda m: m.value):
            for model in sorted(set(models)):
                if (snap.sample_id, mode.value, model) in done:
                    summary.skipped += 1
                    continue
                jobs.append((snap, mode, model))

    lock = threading.Lock()
    with open(output_path, "a", encoding="utf-8") as out, ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        try:
            for verdict in pool.map(lambda job: detect(job[0], job[1], gateway, job[2], config), jobs):
                with lock:
                    out.write(verdict.to_json() + "\n")
                    out.flush()
                summary.written += 1
                summary.usage += verdict.usage
        except KeyboardInterrupt:
            log.warning("interrupted after %d records; completed records are flushed", summary.written)
            pool.shutdown(wait=False, cancel_futures=True)
            raise
    return summary
