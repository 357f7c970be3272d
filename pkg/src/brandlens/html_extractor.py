"""Extraction of the brand-bearing parts of a page's HTML."""
from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass

from bs4 import BeautifulSoup, Comment, MarkupResemblesLocatorWarning, Tag
from bs4.element import NavigableString, PreformattedString

DEFAULT_MAX_CHARS = 4096
MAX_SEQUENCE_ENTRIES = 50
FAVICON_RELS = {"icon", "shortcut icon", "apple-touch-icon"}
# never rendered as page text
INVISIBLE_TAGS = {"script", "style", "noscript", "template"}

# highest priority first; truncation walks this backwards
FIELD_PRIORITY = (
    "title",
    "meta_description",
    "favicon_path",
    "logo_alt_texts",
    "header_text",
    "footer_text",
    "nav_bar_content",
    "paragraph_texts",
    "span_texts",
)


@dataclass(frozen=True)
class HtmlKeyInfo:
    title: str = ""
    meta_description: str = ""
    favicon_path: str = ""
    logo_alt_texts: tuple[str, ...] = ()
    header_text: str = ""
    footer_text: str = ""
    nav_bar_content: str = ""
    paragraph_texts: tuple[str, ...] = ()
    span_texts: tuple[str, ...] = ()

    def total_chars(self) -> int:
        total = 0
        for name in FIELD_PRIORITY:
            value = getattr(self, name)
            total += len(value) if isinstance(value, str) else sum(map(len, value))
        return total

    def is_empty(self) -> bool:
        return all(not getattr(self, name) for name in FIELD_PRIORITY)

    def to_dict(self) -> dict:
        return {name: (v if isinstance(v, str) else list(v)) for name, v in dataclasses.asdict(self).items()}

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, ensure_ascii=False)

    @classmethod
    def from_dict(cls, data: dict) -> HtmlKeyInfo:
        kwargs = {}
        for name in FIELD_PRIORITY:
            value = data.get(name, "")
            kwargs[name] = tuple(value) if isinstance(value, list) else value
        return cls(**kwargs)


def normalize_ws(text: str) -> str:
    return " ".join(text.split())


def parse_html(html: str) -> BeautifulSoup:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MarkupResemblesLocatorWarning)
        soup = BeautifulSoup(html, "lxml")
    for node in soup.find_all(INVISIBLE_TAGS):
        node.decompose()
    for comment in soup.find_all(string=lambda s: isinstance(s, Comment)):
        comment.extract()
    return soup


def _text_of(node: Tag) -> str:
    # PreformattedString covers comments, doctypes, CDATA and processing instructions
    parts = [
        s for s in node.descendants if isinstance(s, NavigableString) and not isinstance(s, PreformattedString)
    ]
    return normalize_ws(" ".join(parts))


def visible_text(html: str | BeautifulSoup) -> str:
    """All text outside script/style-like elements, whitespace-normalized."""
    soup = parse_html(html) if isinstance(html, str) else html
    return _text_of(soup)


def _class_tokens(tag: Tag) -> list[str]:
    value = tag.get("class") or []
    return [value] if isinstance(value, str) else list(value)


def _attr_str(tag: Tag, name: str) -> str:
    value = tag.get(name)
    if value is None:
        return ""
    if isinstance(value, list):
        return " ".join(value)
    return str(value)


def _outermost(tags: list[Tag]) -> list[Tag]:
    chosen = set()
    out = []
    for tag in tags:
        if any(id(parent) in chosen for parent in tag.parents):
            continue
        chosen.add(id(tag))
        out.append(tag)
    return out


def _region_text(soup: BeautifulSoup, name: str) -> str:
    matches = [
        tag
        for tag in soup.find_all(True)
        if tag.name == name or _attr_str(tag, "id").lower() == name or name in (c.lower() for c in _class_tokens(tag))
    ]
    return normalize_ws(" ".join(_text_of(tag) for tag in _outermost(matches)))


def _texts(soup: BeautifulSoup, name: str) -> tuple[str, ...]:
    out = []
    for tag in soup.find_all(name):
        text = _text_of(tag)
        if text:
            out.append(text)
            if len(out) == MAX_SEQUENCE_ENTRIES:
                break
    return tuple(out)


def extract_key_info(html: str) -> HtmlKeyInfo:
    soup = parse_html(html)

    title_tag = soup.find("title")
    title = _text_of(title_tag) if title_tag else ""

    meta_description = ""
    for meta in soup.find_all("meta"):
        if _attr_str(meta, "name").strip().lower() == "description":
            meta_description = normalize_ws(_attr_str(meta, "content"))
            break

    favicon_path = ""
    for link in soup.find_all("link"):
        rel = normalize_ws(_attr_str(link, "rel")).lower()
        if rel in FAVICON_RELS and link.get("href"):
            favicon_path = normalize_ws(_attr_str(link, "href"))
            break

    logo_alts = []
    for img in soup.find_all("img"):
        haystack = " ".join(_attr_str(img, a) for a in ("src", "alt", "id", "class")).lower()
        alt = normalize_ws(_attr_str(img, "alt"))
        if "logo" in haystack and alt:
            logo_alts.append(alt)
            if len(logo_alts) == MAX_SEQUENCE_ENTRIES:
                break

    nav = normalize_ws(" ".join(_text_of(tag) for tag in _outermost(soup.find_all("nav"))))

    return HtmlKeyInfo(
        title=title,
        meta_description=meta_description,
        favicon_path=favicon_path,
        logo_alt_texts=tuple(logo_alts),
        header_text=_region_text(soup, "header"),
        footer_text=_region_text(soup, "footer"),
        nav_bar_content=nav,
        paragraph_texts=_texts(soup, "p"),
        span_texts=_texts(soup, "span"),
    )


def _cut(text: str, keep: int) -> str:
    """Shorten ``text`` to at most ``keep`` chars, preferring a word boundary."""
    if keep <= 0:
        return ""
    if keep >= len(text):
        return text
    head = text[:keep]
    if not text[keep].isspace():
        window_start = max(0, keep - 20)
        for i in range(keep - 1, window_start - 1, -1):
            if head[i].isspace():
                head = head[:i]
                break
    return head.rstrip()


def truncate_for_budget(info: HtmlKeyInfo, max_chars: int = DEFAULT_MAX_CHARS) -> HtmlKeyInfo:
    """Drop or shorten low-priority fields until the total fits ``max_chars``."""
    if max_chars < 64:
        raise ValueError(f"max_chars must be >= 64, got {max_chars}")
    excess = info.total_chars() - max_chars
    if excess <= 0:
        return info

    changes = {}
    for name in reversed(FIELD_PRIORITY):
        if excess <= 0:
            break
        value = getattr(info, name)
        if isinstance(value, str):
            shortened = _cut(value, len(value) - excess)
            excess -= len(value) - len(shortened)
            changes[name] = shortened
            continue
        entries = list(value)
        while entries and excess > 0:
            last = entries.pop()
            if len(last) > excess:
                shortened = _cut(last, len(last) - excess)
                excess -= len(last) - len(shortened)
                if shortened:
                    entries.append(shortened)
            else:
                excess -= len(last)
        changes[name] = tuple(entries)
    return dataclasses.replace(info, **changes)
