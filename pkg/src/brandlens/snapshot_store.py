"""On-disk webpage snapshots: loading, writing, deduplication and capture profiles.

A dataset is a directory of samples, one subdirectory per sample::

    <root>/<sample_id>/metadata.json
    <root>/<sample_id>/page.html
    <root>/<sample_id>/screenshot.png   (optional)
"""
from __future__ import annotations

import enum
import hashlib
import io
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterator
from urllib.parse import urlsplit

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

METADATA_FILE = "metadata.json"
HTML_FILE = "page.html"
SCREENSHOT_FILE = "screenshot.png"

DEFAULT_USER_AGENT = (
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 "
    "(KHTML, like Gecko) Chrome/116.0.0.0 Safari/537.36"
)


class SnapshotError(Exception):
    """Base class for snapshot loading failures."""


class MissingFile(SnapshotError):
    def __init__(self, filename: str):
        super().__init__(filename)
        self.filename = filename


class MalformedMetadata(SnapshotError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


class NonUtf8Html(SnapshotError):
    pass


@dataclass(frozen=True)
class Raster:
    """An RGB image. Equality compares pixels; ``png`` keeps the encoded bytes."""

    width: int
    height: int
    pixels: bytes = field(repr=False)
    png: bytes = field(repr=False, compare=False)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"raster must be at least 1x1, got {self.width}x{self.height}")
        if len(self.pixels) != self.width * self.height * 3:
            raise ValueError("pixel buffer does not match dimensions")

    @classmethod
    def from_array(cls, array: np.ndarray) -> Raster:
        array = np.ascontiguousarray(array, dtype=np.uint8)
        if array.ndim == 2:
            array = np.repeat(array[:, :, None], 3, axis=2)
        if array.ndim != 3 or array.shape[2] != 3:
            raise ValueError(f"expected HxWx3 array, got shape {array.shape}")
        buf = io.BytesIO()
        Image.fromarray(array, "RGB").save(buf, format="PNG")
        return cls(array.shape[1], array.shape[0], array.tobytes(), buf.getvalue())

    @classmethod
    def from_png(cls, data: bytes) -> Raster:
        with Image.open(io.BytesIO(data)) as img:
            rgb = img.convert("RGB")
            return cls(rgb.width, rgb.height, rgb.tobytes(), data)

    @property
    def array(self) -> np.ndarray:
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(self.height, self.width, 3)


class Truth(str, enum.Enum):
    BENIGN = "benign"
    PHISHING = "phishing"


@dataclass(frozen=True)
class Label:
    truth: Truth
    brand: str | None = None

    def __post_init__(self):
        if self.truth is Truth.PHISHING and not (self.brand or "").strip():
            raise ValueError("phishing labels need a brand")


@dataclass(frozen=True)
class WebpageSnapshot:
    sample_id: str
    url: str
    html: str
    screenshot: Raster | None
    http_status: int = 200
    captured_at: datetime | None = None
    user_agent: str = ""
    referrer: str = ""
    label: Label | None = None

    @property
    def has_screenshot(self) -> bool:
        return self.screenshot is not None


class ReferrerKind(str, enum.Enum):
    SELF_REFERENTIAL = "self_referential"
    FIXED = "fixed"
    EMPTY = "empty"


@dataclass(frozen=True)
class ReferrerPolicy:
    kind: ReferrerKind = ReferrerKind.SELF_REFERENTIAL
    value: str = ""

    def referrer_for(self, url: str) -> str:
        if self.kind is ReferrerKind.FIXED:
            return self.value
        if self.kind is ReferrerKind.EMPTY:
            return ""
        parts = urlsplit(url)
        return f"{parts.scheme}://{parts.netloc}/"


@dataclass(frozen=True)
class CaptureProfile:
    """Browser settings that minimised cloaking during capture.

    Only recorded here; this package never drives a browser.
    """

    user_agent: str = DEFAULT_USER_AGENT
    referrer_policy: ReferrerPolicy = field(default_factory=ReferrerPolicy)
    mouse_movement: bool = True


@dataclass(frozen=True)
class DedupKey:
    url_digest: bytes
    html_digest: bytes

    def hex(self) -> tuple[str, str]:
        return self.url_digest.hex(), self.html_digest.hex()


def dedup_key(snapshot: WebpageSnapshot) -> DedupKey:
    # exact bytes, no URL normalisation
    return DedupKey(
        hashlib.sha256(snapshot.url.encode("utf-8")).digest(),
        hashlib.sha256(snapshot.html.encode("utf-8")).digest(),
    )


def _is_absolute_url(url: str) -> bool:
    parts = urlsplit(url)
    return bool(parts.scheme) and bool(parts.hostname)


def _parse_metadata(raw: dict) -> dict:
    if not isinstance(raw, dict):
        raise MalformedMetadata("metadata", "top level must be a JSON object")
    out = {}

    url = raw.get("url")
    if not isinstance(url, str):
        raise MalformedMetadata("url", "missing or not a string")
    if not _is_absolute_url(url):
        raise MalformedMetadata("url", f"not an absolute URL with a host: {url!r}")
    out["url"] = url

    status = raw.get("http_status")
    # bool is an int subclass; reject it explicitly
    if not isinstance(status, int) or isinstance(status, bool):
        raise MalformedMetadata("http_status", f"expected integer, got {status!r}")
    if not 100 <= status <= 599:
        raise MalformedMetadata("http_status", f"out of range: {status}")
    out["http_status"] = status

    captured = raw.get("captured_at")
    if captured is not None:
        if not isinstance(captured, str):
            raise MalformedMetadata("captured_at", "expected ISO 8601 string")
        try:
            out["captured_at"] = datetime.fromisoformat(captured.replace("Z", "+00:00"))
        except ValueError as exc:
            raise MalformedMetadata("captured_at", str(exc)) from None

    for key in ("user_agent", "referrer"):
        value = raw.get(key, "")
        if not isinstance(value, str):
            raise MalformedMetadata(key, "expected string")
        out[key] = value

    label = raw.get("label")
    if label is not None:
        if not isinstance(label, dict):
            raise MalformedMetadata("label", "expected object")
        try:
            truth = Truth(label.get("class"))
        except ValueError:
            raise MalformedMetadata("label.class", f"expected 'benign' or 'phishing', got {label.get('class')!r}") from None
        brand = label.get("brand")
        if brand is not None and not isinstance(brand, str):
            raise MalformedMetadata("label.brand", "expected string")
        if truth is Truth.PHISHING and not (brand or "").strip():
            raise MalformedMetadata("label.brand", "phishing samples need a non-empty brand")
        out["label"] = Label(truth, brand or None)
    return out


def load_snapshot(path: str | Path) -> WebpageSnapshot:
    path = Path(path)
    meta_path = path / METADATA_FILE
    html_path = path / HTML_FILE
    if not meta_path.is_file():
        raise MissingFile(METADATA_FILE)
    if not html_path.is_file():
        raise MissingFile(HTML_FILE)

    try:
        raw = json.loads(meta_path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedMetadata("metadata", f"invalid JSON: {exc}") from None
    meta = _parse_metadata(raw)

    try:
        html = html_path.read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise NonUtf8Html(f"{html_path}: {exc}") from None

    screenshot = None
    shot_path = path / SCREENSHOT_FILE
    if shot_path.is_file():
        data = shot_path.read_bytes()
        if data:
            try:
                screenshot = Raster.from_png(data)
            except Exception as exc:  # PIL raises a zoo of types
                raise MalformedMetadata("screenshot", f"unreadable PNG: {exc}") from None

    return WebpageSnapshot(sample_id=path.name, html=html, screenshot=screenshot, **meta)


def snapshot_metadata(snapshot: WebpageSnapshot) -> dict:
    meta = {
        "url": snapshot.url,
        "http_status": snapshot.http_status,
        "user_agent": snapshot.user_agent,
        "referrer": snapshot.referrer,
    }
    if snapshot.captured_at is not None:
        meta["captured_at"] = snapshot.captured_at.isoformat()
    if snapshot.label is not None:
        meta["label"] = {"class": snapshot.label.truth.value}
        if snapshot.label.brand is not None:
            meta["label"]["brand"] = snapshot.label.brand
    return meta


def write_snapshot(snapshot: WebpageSnapshot, root: str | Path) -> Path:
    """Write ``snapshot`` to ``root/<sample_id>`` and return that directory."""
    out = Path(root) / snapshot.sample_id
    out.mkdir(parents=True, exist_ok=True)
    (out / METADATA_FILE).write_text(
        json.dumps(snapshot_metadata(snapshot), indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    (out / HTML_FILE).write_bytes(snapshot.html.encode("utf-8"))
    shot = out / SCREENSHOT_FILE
    if snapshot.screenshot is not None:
        shot.write_bytes(snapshot.screenshot.png)
    elif shot.exists():
        shot.unlink()
    return out


@dataclass
class DedupReport:
    dropped: list[tuple[str, str]] = field(default_factory=list)  # (retained, dropped)
    errors: list[tuple[str, str]] = field(default_factory=list)  # (sample_id, message)

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps({"retained": kept, "dropped": gone}) + "\n" for kept, gone in self.dropped
        )


def iter_sample_dirs(root: Path) -> Iterator[Path]:
    yield from sorted((p for p in root.iterdir() if p.is_dir()), key=lambda p: p.name)


def scan_dataset(root: str | Path) -> tuple[list[WebpageSnapshot], DedupReport]:
    """Load every sample under ``root`` in sample_id order, dropping duplicates.

    The first sample with a given (url, html) digest pair is kept. Load
    failures are recorded in the report rather than raised.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root not found: {root}")
    report = DedupReport()
    seen: dict[DedupKey, str] = {}
    kept = []
    for sample_dir in iter_sample_dirs(root):
        try:
            snap = load_snapshot(sample_dir)
        except SnapshotError as exc:
            log.warning("skipping %s: %s", sample_dir.name, exc)
            report.errors.append((sample_dir.name, f"{type(exc).__name__}: {exc}"))
            continue
        key = dedup_key(snap)
        if key in seen:
            report.dropped.append((seen[key], snap.sample_id))
            continue
        seen[key] = snap.sample_id
        kept.append(snap)
    return kept, report
