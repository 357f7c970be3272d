#!/usr/bin/env python3
"""Regenerate the committed fixture corpus under tests/fixtures/.

Everything is deterministic: screenshots are drawn with PIL from fixed
specs and LLM transcripts come from a canned responder wrapped in
RecordingTransport, so they are keyed by the same request hashes the
pipeline produces at replay time.

    python3 scripts/build_fixtures.py [--out tests/fixtures]
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import shutil
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from brandlens.gateway import Gateway, LlmRequest, RecordingTransport, TokenUsage, GatewayError, ErrorKind
from brandlens.pipeline import PipelineConfig, detect
from brandlens.prompts import InputMode
from brandlens.snapshot_store import Label, Raster, Truth, WebpageSnapshot, load_snapshot, write_snapshot
from brandlens.validity_filter import calibrate_thresholds

MODELS = ("anthropic/claude-3-opus", "google/gemini-pro-vision", "openai/gpt-4-turbo")
ALIAS_MODEL = "openai/gpt-4-turbo"
CAPTURED_AT = datetime(2024, 3, 1, 12, 0, tzinfo=timezone.utc)
WIDTH, HEIGHT = 640, 400

# Image token formula used only to give fixture usage realistic magnitudes.
IMG_BASE, IMG_PER_TILE, IMG_TILE = 85, 170, 512


# --- pages --------------------------------------------------------------------------


@dataclass
class Page:
    sample_id: str
    url: str
    title: str
    truth: Truth | None
    brand: str | None
    color: tuple[int, int, int] = (40, 90, 160)
    heading: str = ""
    body: tuple[str, ...] = ()
    fields: tuple[str, ...] = ()
    button: str = ""
    footer: str = ""
    status: int = 200
    html: str | None = None  # overrides the generated markup
    screenshot: str = "rich"  # rich | white | none | faint | offwhite
    # canned phase-1 replies: key (model or "*", mode or "*") -> text
    phase1: dict = field(default_factory=dict)
    # canned phase-2 replies: model or "*" -> text
    phase2: dict = field(default_factory=dict)
    # (model, mode) pairs whose phase-1 call is blocked by a safety filter
    blocked: tuple[tuple[str, str], ...] = ()


def page_html(p: Page) -> str:
    if p.html is not None:
        return p.html
    inputs = "\n".join(
        f'      <label>{f}</label><input name="{f.lower().replace(" ", "_")}" type="text">' for f in p.fields
    )
    paras = "\n".join(f"    <p>{line}</p>" for line in p.body)
    slug = p.sample_id.replace("-", "_")
    button = f'      <button><span>{p.button}</span></button>' if p.button else ""
    return f"""<!DOCTYPE html>
<html lang="en">
<head>
  <meta charset="utf-8">
  <title>{p.title}</title>
  <meta name="description" content="{p.heading or p.title}">
  <link rel="icon" href="/static/{slug}/favicon.ico">
  <style>body {{ font-family: sans-serif; }}</style>
  <script>window.__page = "{slug}";</script>
</head>
<body>
  <header><img class="logo" src="/static/{slug}/logo.png" alt="{p.heading or p.title}"> {p.heading}</header>
  <nav><a href="#">Home</a> <a href="#">Help</a></nav>
  <main>
{paras}
    <form>
{inputs}
{button}
    </form>
  </main>
  <footer>{p.footer}</footer>
</body>
</html>
"""


def _font(size: int):
    return ImageFont.load_default(size=size)


def draw_screenshot(p: Page) -> Raster | None:
    if p.screenshot == "none":
        return None
    if p.screenshot == "white":
        return Raster.from_array(np.full((HEIGHT, WIDTH, 3), 255, dtype=np.uint8))
    if p.screenshot == "offwhite":
        return Raster.from_array(np.full((HEIGHT, WIDTH, 3), 248, dtype=np.uint8))
    if p.screenshot == "faint":
        arr = np.full((HEIGHT, WIDTH, 3), 255, dtype=np.uint8)
        arr[HEIGHT // 2, WIDTH // 3 : 2 * WIDTH // 3] = 236  # a barely visible loading bar
        return Raster.from_array(arr)

    img = Image.new("RGB", (WIDTH, HEIGHT), (250, 250, 250))
    d = ImageDraw.Draw(img)
    d.rectangle([0, 0, WIDTH, 64], fill=p.color)
    d.ellipse([16, 8, 64, 56], fill=(255, 255, 255))
    d.text((28, 18), (p.heading or p.title)[:1], fill=p.color, font=_font(24))
    d.text((80, 16), p.heading or p.title, fill=(255, 255, 255), font=_font(28))
    y = 88
    for line in p.body:
        d.text((40, y), line, fill=(30, 30, 30), font=_font(16))
        y += 26
    for name in p.fields:
        d.text((40, y), name, fill=(60, 60, 60), font=_font(14))
        d.rectangle([40, y + 18, 360, y + 46], outline=(150, 150, 150), width=2)
        y += 58
    if p.button:
        d.rounded_rectangle([40, y, 260, y + 40], radius=8, fill=p.color)
        d.text((56, y + 10), p.button, fill=(255, 255, 255), font=_font(16))
    d.text((40, HEIGHT - 30), p.footer, fill=(110, 110, 110), font=_font(12))
    return Raster.from_array(np.asarray(img))


def snapshot_of(p: Page) -> WebpageSnapshot:
    label = None if p.truth is None else Label(p.truth, p.brand)
    return WebpageSnapshot(
        sample_id=p.sample_id,
        url=p.url,
        html=page_html(p),
        screenshot=draw_screenshot(p),
        http_status=p.status,
        captured_at=CAPTURED_AT,
        referrer=p.url,
        label=label,
    )


# --- canned LLM -----------------------------------------------------------------------


def p1_full(brand, creds, ctas, conf, evidence):
    """Seven-field phase-1 reply laid out as models tend to print it."""
    return (
        f"1. Brand: {brand}\n"
        f"2. Has_Credentials: {'Yes' if creds else 'No'}\n"
        f"3. Has_Call_To_Actions: {'Yes' if ctas else 'No'}\n"
        f"4. List_of_credentials: {', '.join(creds) or 'NA'}\n"
        f"5. List_of_call_to_action: {', '.join(ctas) or 'NA'}\n"
        f"6. Confidence_Score: {conf}\n"
        f"7. Supporting_Evidence: {evidence}\n"
    )


def p1_html(brand, conf, evidence):
    return f"1. Brand: {brand}\n2. Confidence_Score: {conf}\n3. Supporting_Evidence: {evidence}\n"


def p2(cls, evidence, genuine_url):
    return f"- Genuine/Phishing: {cls}\n- Evidence: {evidence}\n- Genuine URL: {genuine_url}\n"


def _tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


class CannedLlm:
    """Transport answering from Page specs; identifies the page from the request."""

    def __init__(self, pages: list[Page]):
        self.by_url = {p.url: p for p in pages}
        self.by_image = {}
        self.by_title = {}
        for p in pages:
            shot = draw_screenshot(p)
            if shot is not None:
                self.by_image[hashlib.sha256(shot.png).hexdigest()] = p
            self.by_title[p.title] = p

    def _page_for_phase1(self, req: LlmRequest) -> Page:
        if req.image is not None:
            return self.by_image[req.image.sha256]
        for title, page in self.by_title.items():
            if f'"title": {json.dumps(title, ensure_ascii=False)}' in req.user_text:
                return page
        raise LookupError("no page matches request")

    @staticmethod
    def _pick(table: dict, *keys):
        for k in keys:
            if k in table:
                return table[k]
        raise LookupError(f"no canned reply for {keys}")

    def send(self, req: LlmRequest) -> tuple[str, TokenUsage]:
        prompt_tokens = _tokens(req.system_text + req.user_text)
        if req.image is not None:
            shot = Raster.from_png(req.image.data)
            tiles = math.ceil(shot.width / IMG_TILE) * math.ceil(shot.height / IMG_TILE)
            prompt_tokens += IMG_BASE + IMG_PER_TILE * tiles
        if "Identified Brand:" in req.user_text:
            url = req.user_text.split("- URL: ", 1)[1].split("\n", 1)[0]
            page = self.by_url[url]
            text = self._pick(page.phase2, req.model_id, "*")
        else:
            page = self._page_for_phase1(req)
            if req.image is None:
                mode = InputMode.HTML_ONLY
            elif "KEY INFORMATION:" in req.user_text:
                mode = InputMode.BOTH
            else:
                mode = InputMode.SCREENSHOT_ONLY
            if (req.model_id, mode.value) in page.blocked:
                raise GatewayError(ErrorKind.SAFETY_FILTER, "response blocked by safety filter: HARM_CATEGORY_SEXUALLY_EXPLICIT")
            text = self._pick(
                page.phase1,
                (req.model_id, mode.value),
                (req.model_id, "*"),
                ("*", mode.value),
                ("*", "*"),
            )
        return text, TokenUsage(prompt_tokens, _tokens(text))


# --- corpora ---------------------------------------------------------------------------


def _replies(brand, creds, ctas, conf, evidence, html_conf=None, html_evidence=None):
    return {
        ("*", "html_only"): p1_html(brand, html_conf or conf, html_evidence or evidence),
        ("*", "*"): p1_full(brand, creds, ctas, conf, evidence),
    }


WHATSAPP_P1 = (
    "**Brand**: WhatsApp\n"
    "**Has Credentials**: Yes\n"
    "**Has Call-To-Actions**: Yes\n"
    "**List of Credentials fields**: Phone number\n"
    "**List of Call-To-Actions**: INSTALL UPDATE\n"
    "**Confidence Score**: 9.50\n"
    "**Supporting Evidence**: The screenshot prominently displays the WhatsApp logo along with a "
    "characteristic green color scheme, which is strongly associated with the brand. "
    'The title in the HTML information, "WhatsApp," the meta description, and headers text '
    'also merely state "WhatsApp," reaffirming the identity of the webpage as belonging to WhatsApp.\n'
)
WHATSAPP_P2 = p2(
    "Phishing",
    'The URL uses the domain "polert.xyz" instead of the official domain "whatsapp.com", which suggests '
    "it is not associated with the official WhatsApp brand and may be suspicious or malicious.",
    "https://www.whatsapp.com",
)


def whatsapp_page(sample_id: str) -> Page:
    return Page(
        sample_id,
        "https://polert.xyz/52Lp/whatsapp.html",
        "WhatsApp",
        Truth.PHISHING,
        "WhatsApp",
        color=(37, 211, 102),
        heading="WhatsApp",
        body=("Your WhatsApp version has expired.", "Verify your phone number to continue."),
        fields=("Phone number",),
        button="INSTALL UPDATE",
        footer="WhatsApp LLC",
        phase1={
            ("*", "html_only"): p1_html(
                "WhatsApp", "9.00", 'The title, meta description and header all read "WhatsApp".'
            ),
            ("*", "*"): WHATSAPP_P1,
        },
        phase2={"*": WHATSAPP_P2},
    )


def corpus_pages() -> list[Page]:
    paypal = Page(
        "paypal-genuine",
        "https://www.paypal.com/signin",
        "Log in to your PayPal account",
        Truth.BENIGN,
        "PayPal",
        color=(0, 48, 135),
        heading="PayPal",
        body=("Log in to your account",),
        fields=("Email or mobile number", "Password"),
        button="Log In",
        footer="© 1999-2024 PayPal, Inc. All rights reserved.",
        phase1=_replies(
            "PayPal", ["Email or mobile number", "Password"], ["Log In"], "9.80",
            "The PayPal wordmark in the header and the footer copyright name PayPal, Inc.",
        ),
        phase2={"*": p2("Genuine", "The domain paypal.com is the official PayPal domain.", "https://www.paypal.com")},
    )
    pages = [
        whatsapp_page("whatsapp-polert"),
        paypal,
        Page(
            "paypal-genuine-mirror",  # byte-identical url+html: dropped by dedup
            paypal.url,
            paypal.title,
            Truth.BENIGN,
            "PayPal",
            color=(10, 60, 150),
            heading="PayPal",
            body=paypal.body,
            fields=paypal.fields,
            button=paypal.button,
            footer=paypal.footer,
            html=page_html(paypal),
            phase1=paypal.phase1,
            phase2=paypal.phase2,
        ),
        Page(
            "credit-agricole-phish",
            "https://ca-secure-update.top/particuliers/login",
            "Espace client",
            Truth.PHISHING,
            "Credit Agricole",
            color=(0, 114, 117),
            heading="Credit Agricole",
            body=("Mettez a jour vos informations de securite.",),
            fields=("Identifiant", "Code personnel"),
            button="Valider",
            footer="Credit Agricole S.A.",
            phase1={
                ("google/gemini-pro-vision", "html_only"): p1_html(
                    "Credit Agricoole", "6.80", "The header text names the bank."
                ),
                ("google/gemini-pro-vision", "*"): p1_full(
                    "Credit Agricoole", ["Identifiant", "Code personnel"], ["Valider"], "8.20",
                    "The header shows the bank name and the green teal palette.",
                ),
                ("*", "html_only"): p1_html(
                    "Credit Agricole", "7.50", "The header text and the footer name Credit Agricole S.A."
                ),
                ("*", "*"): p1_full(
                    "Credit Agricole", ["Identifiant", "Code personnel"], ["Valider"], "9.10",
                    "The Credit Agricole name appears in the header and the footer.",
                ),
            },
            phase2={
                "*": p2(
                    "Phishing",
                    "The identified brand is most likely Credit Agricole (the input spelling looks like a "
                    "recognition typo). The domain ca-secure-update.top is not owned by Credit Agricole.",
                    "https://www.credit-agricole.fr",
                )
            },
        ),
        Page(
            "brandless-phish",
            "https://a8k2.parcel-notice.net/verify",
            "Verify your account",
            Truth.PHISHING,
            "Unbranded",
            color=(90, 90, 90),
            heading="Account verification",
            body=("Please confirm your details to continue.",),
            fields=("Email", "Password"),
            button="Continue",
            footer="All rights reserved.",
            phase1={
                ("*", "html_only"): p1_html("NA", "1.50", "No brand names appear in the extracted fields."),
                ("*", "*"): p1_full(
                    "NA", ["Email", "Password"], ["Continue"], "2.00",
                    "A generic login form with no logo or brand text.",
                ),
            },
        ),
        Page(
            "microsoft-phish",
            "https://login-microsoftonline.com.secure-auth.info/common/oauth2",
            "Sign in to your account",
            Truth.PHISHING,
            "Microsoft",
            color=(242, 80, 34),
            heading="Microsoft",
            body=("Sign in", "to continue to Outlook"),
            fields=("Email, phone, or Skype",),
            button="Next",
            footer="Terms of use  Privacy & cookies",
            phase1={
                ("anthropic/claude-3-opus", "html_only"): p1_html(
                    "Outlook", "6.00", "The paragraph text mentions continuing to Outlook."
                ),
                ("*", "html_only"): p1_html("Microsoft", "8.00", "The header text reads Microsoft."),
                ("*", "*"): p1_full(
                    "Microsoft", ["Email, phone, or Skype"], ["Next"], "9.40",
                    "The four-square Microsoft logo and the standard Microsoft sign-in layout.",
                ),
            },
            phase2={
                "*": p2(
                    "Phishing",
                    "The registrable domain is secure-auth.info; login-microsoftonline.com is only a "
                    "subdomain prefix meant to imitate Microsoft.",
                    "https://login.microsoftonline.com",
                )
            },
        ),
        Page(
            "wikipedia-genuine",
            "https://en.wikipedia.org/wiki/Main_Page",
            "Wikipedia, the free encyclopedia",
            Truth.BENIGN,
            "Wikipedia",
            color=(60, 60, 60),
            heading="Wikipedia",
            body=("Welcome to Wikipedia,", "the free encyclopedia that anyone can edit.", "From today's featured article"),
            footer="Text is available under the Creative Commons Attribution-ShareAlike License.",
            phase1={
                ("google/gemini-pro-vision", "screenshot_only"): p1_full(
                    "NA", [], [], "3.00", "A plain text page with a dark header band."
                ),
                ("*", "html_only"): p1_html("Wikipedia", "9.60", "The title reads Wikipedia, the free encyclopedia."),
                ("*", "*"): p1_full("Wikipedia", [], [], "9.70", "The Wikipedia name and the welcome text."),
            },
            phase2={"*": p2("Genuine", "wikipedia.org is the official Wikipedia domain.", "https://www.wikipedia.org")},
        ),
        Page(
            "netflix-safety",
            "https://netflix-billing.help/account/update",
            "Netflix",
            Truth.PHISHING,
            "Netflix",
            color=(229, 9, 20),
            heading="NETFLIX",
            body=("Your membership is on hold.", "Update your payment details."),
            fields=("Card number", "Expiry", "CVV"),
            button="Update payment",
            footer="Netflix, Inc.",
            phase1=_replies(
                "Netflix", ["Card number", "Expiry", "CVV"], ["Update payment"], "9.30",
                "The red NETFLIX wordmark and the membership text.",
            ),
            phase2={"*": p2("Phishing", "netflix-billing.help is not a Netflix domain.", "https://www.netflix.com")},
            blocked=(("google/gemini-pro-vision", "screenshot_only"), ("google/gemini-pro-vision", "both")),
        ),
        Page(
            "blank-page",
            "https://loading.example-cdn.net/",
            "",
            Truth.BENIGN,
            None,
            html="<html><head></head><body></body></html>\n",
            screenshot="white",
        ),
        Page(
            "cloudflare-check",
            "https://shop.example-store.com/",
            "Just a moment...",
            Truth.BENIGN,
            None,
            color=(243, 128, 32),
            heading="Just a moment...",
            body=("Checking your browser before accessing shop.example-store.com.", "This process is automatic."),
            footer="Performance & security by Cloudflare",
        ),
        Page(
            "http-404",
            "https://www.example-news.org/missing",
            "Page not found",
            Truth.BENIGN,
            None,
            heading="404",
            body=("The page you requested could not be found.",),
            footer="Example News",
            status=404,
        ),
    ]
    return pages


def alias_pages() -> list[Page]:
    """Twelve pages where brand aliases and lookalike domains separate the verifiers."""

    def page(sid, url, brand, truth, color, verdict, evidence, genuine, creds=("Email", "Password"), cta="Log in"):
        return Page(
            sid,
            url,
            f"{brand} - Log in",
            truth,
            brand,
            color=color,
            heading=brand,
            body=(f"Log in to {brand}",),
            fields=creds,
            button=cta,
            footer=f"© 2024 {brand}",
            phase1=_replies(brand, list(creds), [cta], "9.20", f"The {brand} logo and name in the header."),
            phase2={"*": p2(verdict, evidence, genuine)},
        )

    B, P = Truth.BENIGN, Truth.PHISHING
    return [
        page("a01-facebook-meta", "https://www.meta.com/login", "Facebook", B, (24, 119, 242), "Genuine",
             "Facebook is owned by Meta Platforms and meta.com is Meta's official domain.", "https://www.facebook.com"),
        page("a02-x-twitter", "https://twitter.com/i/flow/login", "X", B, (15, 15, 15), "Genuine",
             "X is the current name of Twitter and twitter.com is its long-standing official domain.", "https://x.com"),
        page("a03-outlook-live", "https://outlook.live.com/owa/", "Outlook", B, (0, 114, 198), "Genuine",
             "Outlook is a Microsoft product and live.com is a Microsoft domain.", "https://outlook.live.com"),
        page("a04-paypal", "https://www.paypal.com/signin", "PayPal", B, (0, 48, 135), "Genuine",
             "paypal.com is the official PayPal domain.", "https://www.paypal.com"),
        page("a05-google", "https://accounts.google.com/signin", "Google", B, (66, 133, 244), "Genuine",
             "accounts.google.com belongs to Google.", "https://accounts.google.com"),
        page("a06-amazon", "https://www.amazon.co.uk/ap/signin", "Amazon", B, (35, 47, 62), "Genuine",
             "amazon.co.uk is Amazon's official UK domain.", "https://www.amazon.co.uk"),
        page("p01-paypal-lookalike", "https://paypal-account-verify.com/signin", "PayPal", P, (0, 48, 135),
             "Phishing", "paypal-account-verify.com contains the brand name but is not owned by PayPal.",
             "https://www.paypal.com"),
        page("p02-whatsapp-polert", "https://polert.xyz/52Lp/whatsapp.html", "WhatsApp", P, (37, 211, 102),
             "Phishing", "polert.xyz is unrelated to WhatsApp.", "https://www.whatsapp.com",
             creds=("Phone number",), cta="INSTALL UPDATE"),
        page("p03-apple-support", "https://appleid-support.icu/verify", "Apple", P, (60, 60, 60), "Phishing",
             "appleid-support.icu is not an Apple domain; Apple ID is managed at appleid.apple.com.",
             "https://appleid.apple.com"),
        page("p04-dhl-redelivery", "https://parcel-redelivery.info/track", "DHL", P, (255, 204, 0), "Phishing",
             "parcel-redelivery.info has no relation to DHL.", "https://www.dhl.com",
             creds=("Tracking number", "Card number"), cta="Pay fee"),
        page("p05-netflix-typo", "https://netf1ix-billing.com/account", "Netflix", P, (229, 9, 20), "Phishing",
             "netf1ix-billing.com imitates Netflix with a digit substitution.", "https://www.netflix.com"),
        page("p06-chase-alerts", "https://secure-banking-alerts.net/chase", "Chase", P, (17, 122, 196),
             "Phishing", "secure-banking-alerts.net is not a Chase domain.", "https://www.chase.com"),
    ]


def calibration_pages() -> list[tuple[Page, bool, str]]:
    """(page, is_blank, ocr text) triples."""
    rich = [
        Page("rich-news", "https://news.example.org/", "Example News", None, None, color=(120, 20, 20),
             heading="Example News", body=("Markets rally as rates hold steady.", "Weather: sunny, 21C"),
             footer="Example News Group"),
        Page("rich-login", "https://login.example.com/", "Example Login", None, None, color=(20, 120, 60),
             heading="Example", body=("Sign in to continue",), fields=("Username", "Password"), button="Sign in",
             footer="Example Corp"),
        Page("rich-shop", "https://shop.example.net/", "Example Shop", None, None, color=(200, 120, 0),
             heading="Example Shop", body=("Spring sale: up to 40% off", "Free delivery over 30 EUR"),
             button="Shop now", footer="Example Retail Ltd"),
    ]
    blank = [
        Page("blank-white", "https://blank1.example.com/", "", None, None, screenshot="white"),
        Page("blank-offwhite", "https://blank2.example.com/", "", None, None, screenshot="offwhite"),
        Page("blank-faint", "https://blank3.example.com/", "", None, None, screenshot="faint"),
    ]
    out = [(p, False, " ".join((p.heading, *p.body, *p.fields, p.button, p.footer))) for p in rich]
    out += [(p, True, "") for p in blank]
    return out


# --- driver ------------------------------------------------------------------------------


def write_pages(pages: list[Page], root: Path) -> None:
    for p in pages:
        write_snapshot(snapshot_of(p), root)


def record(pages: list[Page], root: Path, transcript: Path, modes, models, config: PipelineConfig) -> int:
    transport = RecordingTransport(CannedLlm(pages), transcript)
    gateway = Gateway(transport, sleep=lambda _s: None)
    from brandlens.snapshot_store import scan_dataset

    snapshots, _ = scan_dataset(root)
    for snap in snapshots:
        for mode in modes:
            for model in models:
                detect(snap, mode, gateway, model, config)
    return transport.recorded


class FixtureOcr:
    """OCR stand-in that returns the text drawn into each calibration screenshot."""

    def __init__(self, table: dict[str, str]):
        self.table = table

    def __call__(self, image: Raster) -> str:
        return self.table[hashlib.sha256(image.pixels).hexdigest()]


def build(out: Path) -> None:
    if out.exists():
        shutil.rmtree(out)
    out.mkdir(parents=True)

    # calibration first: the corpus runs use the calibrated thresholds
    cal_root = out / "calibration"
    ocr_table, labeled = {}, {"blank": [], "non_blank": []}
    for page, is_blank, text in calibration_pages():
        write_snapshot(snapshot_of(page), cal_root)
        shot = draw_screenshot(page)
        ocr_table[hashlib.sha256(shot.pixels).hexdigest()] = text
        labeled["blank" if is_blank else "non_blank"].append(page.sample_id)
    (cal_root / "labeled.json").write_text(json.dumps(labeled, indent=2) + "\n", encoding="utf-8")
    (cal_root / "ocr.json").write_text(json.dumps(ocr_table, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    examples = [(load_snapshot(cal_root / sid), key == "blank") for key in labeled for sid in labeled[key]]
    thresholds = calibrate_thresholds(examples, FixtureOcr(ocr_table))
    (out / "thresholds.json").write_text(
        json.dumps({"filter_thresholds": thresholds.to_dict()}, indent=2) + "\n", encoding="utf-8"
    )
    config = PipelineConfig(thresholds=thresholds)

    corpus = corpus_pages()
    write_pages(corpus, out / "corpus")
    n = record(corpus, out / "corpus", out / "corpus_transcripts.jsonl", list(InputMode), MODELS, config)
    print(f"corpus: {len(corpus)} samples, {n} transcript records")

    aliases = alias_pages()
    write_pages(aliases, out / "aliases")
    n = record(aliases, out / "aliases", out / "alias_transcripts.jsonl", [InputMode.BOTH], [ALIAS_MODEL], config)
    (out / "alias_table.json").write_text(json.dumps({"Facebook": ["Meta"], "X": ["Twitter"]}, indent=2) + "\n")
    print(f"aliases: {len(aliases)} samples, {n} transcript records")
    print(f"thresholds: {thresholds.to_dict()}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "tests" / "fixtures")
    build(ap.parse_args().out)


if __name__ == "__main__":
    main()
