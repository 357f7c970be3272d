"""Invalid-sample filters: completeness, status, blank pages, verification walls."""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol, Sequence

import cv2
import numpy as np

from .html_extractor import extract_key_info, parse_html, visible_text, normalize_ws
from .snapshot_store import Raster, WebpageSnapshot

CHECKS = (
    "completeness",
    "http_status",
    "semantic_blank",
    "pixel_stddev",
    "edge_count",
    "ocr_length",
    "verification_page",
)

VERIFICATION_KEYWORDS = (
    "verify you are human",
    "checking your browser",
    "captcha",
    "cloudflare",
    "attention required",
)

CANNY_LOW = 50
CANNY_HIGH = 150
BLUR_SIGMA = 1.4
BLUR_KSIZE = (5, 5)
MIN_VISIBLE_CHARS = 10


class Status(str, enum.Enum):
    PASS = "pass"
    FAIL = "fail"
    SKIPPED = "skipped"


@dataclass(frozen=True)
class Outcome:
    status: Status
    reason: str = ""

    @classmethod
    def ok(cls) -> Outcome:
        return cls(Status.PASS)

    @classmethod
    def fail(cls, reason: str) -> Outcome:
        return cls(Status.FAIL, reason)

    @classmethod
    def skip(cls, reason: str) -> Outcome:
        return cls(Status.SKIPPED, reason)

    def to_dict(self) -> dict:
        out = {"status": self.status.value}
        if self.reason:
            out["reason"] = self.reason
        return out


@dataclass(frozen=True)
class FilterThresholds:
    """Cut-offs for the screenshot filters.

    The defaults are placeholders with no empirical backing. Run
    ``calibrate_thresholds`` on labelled blank/non-blank examples before
    trusting filter results; ``calibrated`` stays False until then.
    """

    min_gray_stddev: float = 5.0
    min_edge_count: int = 500
    min_ocr_chars: int = 20
    calibrated: bool = False
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        if self.min_gray_stddev < 0 or self.min_edge_count < 0 or self.min_ocr_chars < 0:
            raise ValueError("thresholds must be non-negative")

    def to_dict(self) -> dict:
        return {
            "min_gray_stddev": self.min_gray_stddev,
            "min_edge_count": self.min_edge_count,
            "min_ocr_chars": self.min_ocr_chars,
            "calibrated": self.calibrated,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data: dict) -> FilterThresholds:
        block = data.get("filter_thresholds", data)
        return cls(
            min_gray_stddev=float(block.get("min_gray_stddev", 5.0)),
            min_edge_count=int(block.get("min_edge_count", 500)),
            min_ocr_chars=int(block.get("min_ocr_chars", 20)),
            calibrated=bool(block.get("calibrated", False)),
            warnings=tuple(block.get("warnings", ())),
        )


@dataclass(frozen=True)
class ValidityReport:
    sample_id: str
    outcomes: dict[str, Outcome]
    calibrated: bool = False

    @property
    def valid(self) -> bool:
        return all(o.status is not Status.FAIL for o in self.outcomes.values())

    def failures(self) -> list[str]:
        return [name for name, o in self.outcomes.items() if o.status is Status.FAIL]

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "valid": self.valid,
            "calibrated": self.calibrated,
            "outcomes": {name: self.outcomes[name].to_dict() for name in CHECKS},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)


class OcrBackendError(Exception):
    pass


class OcrProvider(Protocol):
    def __call__(self, image: Raster) -> str: ...


class InsufficientExamples(ValueError):
    pass


def check_http_status(snapshot: WebpageSnapshot) -> Outcome:
    if snapshot.http_status == 200:
        return Outcome.ok()
    return Outcome.fail(f"status {snapshot.http_status}")


def check_completeness(snapshot: WebpageSnapshot) -> Outcome:
    missing = []
    if not snapshot.url:
        missing.append("url")
    if not snapshot.html:
        missing.append("html")
    if snapshot.screenshot is None:
        missing.append("screenshot")
    if missing:
        return Outcome.fail("missing " + ", ".join(missing))
    return Outcome.ok()


def _luma_milli(image: Raster) -> np.ndarray:
    # luma * 1000 as exact integers (BT.601 weights)
    rgb = image.array.astype(np.int64)
    return 299 * rgb[:, :, 0] + 587 * rgb[:, :, 1] + 114 * rgb[:, :, 2]


def grayscale_stddev(image: Raster) -> float:
    """Population standard deviation of BT.601 luma, on the 0-255 scale."""
    values = _luma_milli(image).ravel()
    n = int(values.size)
    s1 = int(values.sum())
    s2 = int((values * values).sum())
    # n^2 * variance, exact in integers so a flat image gives exactly 0
    scaled_var = n * s2 - s1 * s1
    return math.sqrt(scaled_var) / n / 1000.0


def _gray_u8(image: Raster) -> np.ndarray:
    return cv2.cvtColor(np.ascontiguousarray(image.array), cv2.COLOR_RGB2GRAY)


def edge_count(image: Raster) -> int:
    """Edge pixels from Canny (50/150) after a 5x5, sigma 1.4 Gaussian blur."""
    if image.width < 2 or image.height < 2:
        raise ValueError("edge_count needs an image of at least 2x2")
    blurred = cv2.GaussianBlur(_gray_u8(image), BLUR_KSIZE, BLUR_SIGMA)
    edges = cv2.Canny(blurred, CANNY_LOW, CANNY_HIGH)
    return int(np.count_nonzero(edges))


def ocr_text(image: Raster, ocr: OcrProvider | None) -> str | None:
    """Recognised text, whitespace-collapsed. None when no provider is set."""
    if ocr is None:
        return None
    return normalize_ws(ocr(image))


def ocr_text_length(image: Raster, ocr: OcrProvider) -> int:
    return len(ocr_text(image, ocr))


def check_ocr_length(image: Raster | None, ocr: OcrProvider | None, min_chars: int) -> tuple[Outcome, str | None]:
    if ocr is None:
        return Outcome.skip("no ocr"), None
    if image is None:
        return Outcome.skip("no screenshot"), None
    try:
        text = ocr_text(image, ocr)
    except OcrBackendError as exc:
        return Outcome.skip(f"ocr backend error: {exc}"), None
    if len(text) < min_chars:
        return Outcome.fail(f"ocr text length {len(text)} < {min_chars}"), text
    return Outcome.ok(), text


def check_semantic_blank(html: str) -> Outcome:
    soup = parse_html(html)
    text = visible_text(soup)
    if extract_key_info(html).is_empty() and len(text) < MIN_VISIBLE_CHARS:
        return Outcome.fail(f"no key information and {len(text)} visible characters")
    return Outcome.ok()


def check_verification_page(
    html: str,
    screenshot_ocr_text: str | None = None,
    keywords: Sequence[str] = VERIFICATION_KEYWORDS,
) -> Outcome:
    sources = [("html", visible_text(html).lower())]
    if screenshot_ocr_text:
        sources.append(("ocr", normalize_ws(screenshot_ocr_text).lower()))
    for where, text in sources:
        for kw in keywords:
            if kw.lower() in text:
                return Outcome.fail(f"{where} text matches {kw!r}")
    return Outcome.ok()


def classify_validity(
    snapshot: WebpageSnapshot,
    thresholds: FilterThresholds = FilterThresholds(),
    ocr: OcrProvider | None = None,
    keywords: Sequence[str] = VERIFICATION_KEYWORDS,
) -> ValidityReport:
    shot = snapshot.screenshot
    outcomes = {
        "completeness": check_completeness(snapshot),
        "http_status": check_http_status(snapshot),
        "semantic_blank": check_semantic_blank(snapshot.html),
    }

    if shot is None:
        outcomes["pixel_stddev"] = Outcome.skip("no screenshot")
        outcomes["edge_count"] = Outcome.skip("no screenshot")
    else:
        sd = grayscale_stddev(shot)
        outcomes["pixel_stddev"] = (
            Outcome.fail(f"gray stddev {sd:.3f} < {thresholds.min_gray_stddev}")
            if sd < thresholds.min_gray_stddev
            else Outcome.ok()
        )
        if shot.width < 2 or shot.height < 2:
            outcomes["edge_count"] = Outcome.skip("screenshot smaller than 2x2")
        else:
            edges = edge_count(shot)
            outcomes["edge_count"] = (
                Outcome.fail(f"edge count {edges} < {thresholds.min_edge_count}")
                if edges < thresholds.min_edge_count
                else Outcome.ok()
            )

    outcomes["ocr_length"], recognised = check_ocr_length(shot, ocr, thresholds.min_ocr_chars)
    outcomes["verification_page"] = check_verification_page(snapshot.html, recognised, keywords)

    return ValidityReport(
        snapshot.sample_id,
        {name: outcomes[name] for name in CHECKS},
        calibrated=thresholds.calibrated,
    )


def _midpoint(blank: list[float], non_blank: list[float]) -> float | None:
    hi, lo = max(blank), min(non_blank)
    if hi < lo:
        return (hi + lo) / 2
    return None


def calibrate_thresholds(
    labeled_examples: Iterable[tuple[WebpageSnapshot, bool]],
    ocr: OcrProvider | None = None,
    defaults: FilterThresholds = FilterThresholds(),
) -> FilterThresholds:
    """Place each threshold halfway between the blank and non-blank classes.

    A metric whose classes overlap keeps its default, and the result is
    marked uncalibrated with a warning naming the metric.
    """
    blanks, rich = [], []
    for snap, is_blank in labeled_examples:
        if snap.screenshot is None:
            continue
        (blanks if is_blank else rich).append(snap.screenshot)
    if len(blanks) < 2 or len(rich) < 2:
        raise InsufficientExamples(
            f"need >= 2 blank and >= 2 non-blank screenshots, got {len(blanks)} and {len(rich)}"
        )

    metrics: dict[str, Callable[[Raster], float]] = {
        "min_gray_stddev": grayscale_stddev,
        "min_edge_count": edge_count,
    }
    if ocr is not None:
        metrics["min_ocr_chars"] = lambda img: ocr_text_length(img, ocr)

    values = {
        "min_gray_stddev": defaults.min_gray_stddev,
        "min_edge_count": defaults.min_edge_count,
        "min_ocr_chars": defaults.min_ocr_chars,
    }
    notes = []
    if ocr is None:
        notes.append("min_ocr_chars: no ocr provider, default kept")
    for name, metric in metrics.items():
        mid = _midpoint([metric(i) for i in blanks], [metric(i) for i in rich])
        if mid is None:
            notes.append(f"{name}: classes not separable, default kept")
            continue
        # integer metrics fail on value < threshold, so round up
        values[name] = float(mid) if name == "min_gray_stddev" else math.ceil(mid)
    return FilterThresholds(**values, calibrated=not notes, warnings=tuple(notes))
