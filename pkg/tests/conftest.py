from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from brandlens.validity_filter import FilterThresholds

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"
CORPUS = FIXTURES / "corpus"
CORPUS_TRANSCRIPTS = FIXTURES / "corpus_transcripts.jsonl"
ALIASES = FIXTURES / "aliases"
ALIAS_TRANSCRIPTS = FIXTURES / "alias_transcripts.jsonl"
THRESHOLDS = FIXTURES / "thresholds.json"
MODELS = ("anthropic/claude-3-opus", "google/gemini-pro-vision", "openai/gpt-4-turbo")

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def calibrated() -> FilterThresholds:
    import json

    return FilterThresholds.from_dict(json.loads(THRESHOLDS.read_text()))


# --- acceptance summary -------------------------------------------------------------

_criteria: dict[str, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion this test verifies")


def pytest_runtest_logreport(report):
    label = dict(report.user_properties).get("criterion")
    if label is None:
        return
    outcomes = _criteria.setdefault(label, [])
    if report.when == "call":
        outcomes.append(report.outcome)
    elif report.outcome in ("failed", "skipped"):  # setup/teardown problems
        outcomes.append(report.outcome)


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            item.user_properties.append(("criterion", marker.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_criteria, key=lambda s: int(s.split()[0][2:])):
        results = _criteria[label]
        if "failed" in results:
            verdict = "FAIL"
        elif results and all(r == "skipped" for r in results):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        terminalreporter.write_line(f"{verdict}  {label}")
