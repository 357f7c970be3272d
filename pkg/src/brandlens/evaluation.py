"""Analytics over detection results: metrics, exclusive wins, input effects, token use.

Unknown, Invalid and Error predictions count as "not phishing". That
makes them misses for recall; they never enter precision's denominator.
"""
from __future__ import annotations

import csv
import enum
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .gateway import TokenUsage
from .pipeline import Outcome, PhishingVerdict, normalize_brand
from .prompts import InputMode
from .snapshot_store import Label, SnapshotError, Truth, load_snapshot

log = logging.getLogger(__name__)

NO_BRAND_OUTCOMES = {Outcome.INVALID, Outcome.ERROR}


class EmptyInput(ValueError):
    pass


class KeyMismatch(ValueError):
    pass


class EffectCategory(str, enum.Enum):
    NEGATIVE_SS = "negative_ss"
    NEGATIVE_HTML = "negative_html"
    RELYING_ON_SS = "relying_on_ss"
    RELYING_ON_HTML = "relying_on_html"
    CONFLICT = "conflict"
    SYNERGY = "synergy"
    ALL_CORRECT = "all_correct"
    ALL_WRONG = "all_wrong"


# (screenshot-only correct, html-only correct, both correct)
_EFFECTS = {
    (False, True, False): EffectCategory.NEGATIVE_SS,
    (True, False, False): EffectCategory.NEGATIVE_HTML,
    (True, False, True): EffectCategory.RELYING_ON_SS,
    (False, True, True): EffectCategory.RELYING_ON_HTML,
    (True, True, False): EffectCategory.CONFLICT,
    (False, False, True): EffectCategory.SYNERGY,
    (True, True, True): EffectCategory.ALL_CORRECT,
    (False, False, False): EffectCategory.ALL_WRONG,
}


def categorize_input_effect(ss_correct: bool, html_correct: bool, both_correct: bool) -> EffectCategory:
    return _EFFECTS[(bool(ss_correct), bool(html_correct), bool(both_correct))]


class AliasTable:
    """Groups of brand names the evaluator treats as the same brand."""

    def __init__(self, groups: Iterable[Iterable[str]] = ()):
        self._group: dict[str, int] = {}
        for i, names in enumerate(groups):
            for name in names:
                self._group[normalize_brand(name)] = i

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Sequence[str] | str]) -> AliasTable:
        groups = []
        for name, others in mapping.items():
            others = [others] if isinstance(others, str) else list(others)
            groups.append([name, *others])
        # merge groups sharing a name
        merged: list[set[str]] = []
        for group in groups:
            names = {normalize_brand(n) for n in group}
            overlapping = [g for g in merged if g & names]
            for g in overlapping:
                names |= g
                merged.remove(g)
            merged.append(names)
        return cls(merged)

    def same(self, a: str, b: str) -> bool:
        ga, gb = self._group.get(a), self._group.get(b)
        return ga is not None and ga == gb


def brand_match(identified: str, truth_brand: str, aliases: AliasTable | None = None) -> bool:
    a, b = normalize_brand(identified), normalize_brand(truth_brand)
    if a == b:
        return True
    return aliases is not None and aliases.same(a, b)


@dataclass(frozen=True)
class EvalRecord:
    sample_id: str
    truth: Truth
    truth_brand: str | None
    model: str
    mode: InputMode
    predicted: Outcome
    brand_correct: bool | None

    def __post_init__(self):
        if (self.brand_correct is None) != (self.predicted in NO_BRAND_OUTCOMES):
            raise ValueError("brand_correct must be set exactly when a brand prediction exists")


def _brand_correct(verdict: PhishingVerdict, label: Label, aliases: AliasTable | None) -> bool | None:
    if verdict.outcome in NO_BRAND_OUTCOMES:
        return None
    if verdict.identified_brand is None or label.brand is None:
        return verdict.identified_brand is None and label.brand is None
    return brand_match(verdict.identified_brand, label.brand, aliases)


def make_records(
    verdicts: Iterable[PhishingVerdict], labels: Mapping[str, Label], aliases: AliasTable | None = None
) -> list[EvalRecord]:
    records = []
    for v in verdicts:
        label = labels.get(v.sample_id)
        if label is None:
            log.warning("no label for %s; skipped", v.sample_id)
            continue
        records.append(
            EvalRecord(v.sample_id, label.truth, label.brand, v.model, v.mode, v.outcome, _brand_correct(v, label, aliases))
        )
    return records


def load_labels(path: str | Path) -> dict[str, Label]:
    """Labels from a dataset directory (metadata.json) or a JSON map file.

    The file form is ``{"<sample_id>": {"class": "phishing", "brand": "..."}}``.
    """
    path = Path(path)
    labels = {}
    if path.is_dir():
        for sample_dir in sorted(p for p in path.iterdir() if p.is_dir()):
            try:
                snap = load_snapshot(sample_dir)
            except SnapshotError as exc:
                log.warning("no label for %s: %s", sample_dir.name, exc)
                continue
            if snap.label is not None:
                labels[snap.sample_id] = snap.label
        return labels
    raw = json.loads(path.read_text(encoding="utf-8"))
    for sample_id, entry in raw.items():
        labels[sample_id] = Label(Truth(entry["class"]), entry.get("brand"))
    return labels


# --- confusion metrics ------------------------------------------------------------


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def precision(self) -> Fraction | None:
        denom = self.tp + self.fp
        return Fraction(self.tp, denom) if denom else None

    @property
    def recall(self) -> Fraction | None:
        denom = self.tp + self.fn
        return Fraction(self.tp, denom) if denom else None

    @property
    def f1(self) -> Fraction | None:
        p, r = self.precision, self.recall
        if p is None or r is None or p + r == 0:
            return None
        return 2 * p * r / (p + r)

    def to_dict(self) -> dict:
        def num(x):
            return None if x is None else float(x)

        return {
            "precision": num(self.precision),
            "recall": num(self.recall),
            "f1": num(self.f1),
            "counts": {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn},
        }


def confusion_metrics(records: Sequence[EvalRecord], positive: Truth = Truth.PHISHING) -> Metrics:
    if not records:
        raise EmptyInput("no records")
    predicted_positive = Outcome(positive.value)
    tp = fp = fn = tn = 0
    for r in records:
        flagged = r.predicted is predicted_positive
        actual = r.truth is positive
        if flagged and actual:
            tp += 1
        elif flagged:
            fp += 1
        elif actual:
            fn += 1
        else:
            tn += 1
    return Metrics(tp, fp, fn, tn)


def metrics_by_group(records: Sequence[EvalRecord]) -> dict[tuple[str, InputMode], Metrics]:
    groups: dict[tuple[str, InputMode], list[EvalRecord]] = defaultdict(list)
    for r in records:
        groups[(r.model, r.mode)].append(r)
    return {key: confusion_metrics(rs) for key, rs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1].value))}


# --- exclusive wins ---------------------------------------------------------------


def exclusive_wins(records: Sequence[EvalRecord]) -> dict[InputMode, dict[Truth, dict[str, Fraction]]]:
    """Percentage of keys each model alone identifies correctly.

    Keys are (sample, mode); results are split by mode and by truth class.
    """
    by_model: dict[str, dict[tuple[str, InputMode], EvalRecord]] = defaultdict(dict)
    for r in records:
        by_model[r.model][(r.sample_id, r.mode)] = r
    if len(by_model) < 2:
        raise ValueError("exclusive wins need at least two models")
    models = sorted(by_model)
    keys = set(by_model[models[0]])
    for m in models[1:]:
        if set(by_model[m]) != keys:
            raise KeyMismatch(f"models {models[0]} and {m} cover different (sample, mode) keys")

    totals: Counter = Counter()
    wins: Counter = Counter()
    for key in keys:
        truth = by_model[models[0]][key].truth
        group = (key[1], truth)
        totals[group] += 1
        correct = [m for m in models if by_model[m][key].brand_correct]
        if len(correct) == 1:
            wins[group + (correct[0],)] += 1

    out: dict[InputMode, dict[Truth, dict[str, Fraction]]] = {}
    for mode, truth in sorted(totals, key=lambda g: (g[0].value, g[1].value)):
        n = totals[(mode, truth)]
        out.setdefault(mode, {})[truth] = {m: Fraction(100 * wins[(mode, truth, m)], n) for m in models}
    return out


# --- input effects ----------------------------------------------------------------


def input_effects(records: Sequence[EvalRecord]) -> dict[str, Counter]:
    """Effect category counts per model over samples seen in all three modes."""
    seen: dict[tuple[str, str], dict[InputMode, bool]] = defaultdict(dict)
    for r in records:
        seen[(r.model, r.sample_id)][r.mode] = bool(r.brand_correct)
    out: dict[str, Counter] = defaultdict(Counter)
    for (model, _), by_mode in sorted(seen.items()):
        if len(by_mode) != len(InputMode):
            continue
        cat = categorize_input_effect(
            by_mode[InputMode.SCREENSHOT_ONLY], by_mode[InputMode.HTML_ONLY], by_mode[InputMode.BOTH]
        )
        out[model][cat] += 1
    return dict(out)


# --- token statistics -------------------------------------------------------------


@dataclass(frozen=True)
class TokenStats:
    count: int
    min: int
    q1: Fraction
    median: Fraction
    q3: Fraction
    max: int
    mean: Fraction
    outliers: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "min": self.min,
            "q1": float(self.q1),
            "median": float(self.median),
            "q3": float(self.q3),
            "max": self.max,
            "mean": float(self.mean),
            "outliers": list(self.outliers),
        }


def _quantile(ordered: Sequence[int], p: Fraction) -> Fraction:
    # linear interpolation between closest ranks
    h = (len(ordered) - 1) * p
    lo = math.floor(h)
    hi = min(lo + 1, len(ordered) - 1)
    return ordered[lo] + (h - lo) * (ordered[hi] - ordered[lo])


def token_stats(usages: Sequence[TokenUsage | int]) -> TokenStats:
    totals = sorted(u.total if isinstance(u, TokenUsage) else int(u) for u in usages)
    if not totals:
        raise EmptyInput("no usages")
    q1 = _quantile(totals, Fraction(1, 4))
    median = _quantile(totals, Fraction(1, 2))
    q3 = _quantile(totals, Fraction(3, 4))
    fence = q3 + Fraction(3, 2) * (q3 - q1)
    return TokenStats(
        count=len(totals),
        min=totals[0],
        q1=Fraction(q1),
        median=Fraction(median),
        q3=Fraction(q3),
        max=totals[-1],
        mean=Fraction(sum(totals), len(totals)),
        outliers=tuple(t for t in totals if t > fence),
    )


def token_stats_by_group(verdicts: Iterable[PhishingVerdict]) -> dict[tuple[str, InputMode], TokenStats]:
    groups: dict[tuple[str, InputMode], list[TokenUsage]] = defaultdict(list)
    for v in verdicts:
        if v.outcome is Outcome.INVALID:
            continue  # never reached a model
        groups[(v.model, v.mode)].append(v.usage)
    return {k: token_stats(u) for k, u in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1].value))}


# --- report -----------------------------------------------------------------------


def _group_key(model: str, mode: InputMode) -> str:
    return f"{model}|{mode.value}"


def build_report(
    verdicts: Sequence[PhishingVerdict], labels: Mapping[str, Label], aliases: AliasTable | None = None
) -> dict:
    records = make_records(verdicts, labels, aliases)
    report = {
        "metrics": {_group_key(*k): m.to_dict() for k, m in metrics_by_group(records).items()} if records else {},
        "exclusive_wins": None,
        "effect_categories": {
            model: {c.value: counts.get(c, 0) for c in EffectCategory} for model, counts in input_effects(records).items()
        },
        "token_stats": {_group_key(*k): s.to_dict() for k, s in token_stats_by_group(verdicts).items()},
        "notes": ["unknown, invalid and error predictions count as non-phishing predictions"],
    }
    if len({r.model for r in records}) >= 2:
        try:
            wins = exclusive_wins(records)
            report["exclusive_wins"] = {
                mode.value: {truth.value: {m: float(p) for m, p in per.items()} for truth, per in by_truth.items()}
                for mode, by_truth in wins.items()
            }
        except KeyMismatch as exc:
            report["notes"].append(f"exclusive wins skipped: {exc}")
    return report


def write_csv_tables(report: dict, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def table(name, header, rows):
        path = out_dir / f"{name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        written.append(path)

    table(
        "metrics",
        ["model", "mode", "precision", "recall", "f1", "tp", "fp", "fn", "tn"],
        [
            [*key.split("|"), m["precision"], m["recall"], m["f1"], *m["counts"].values()]
            for key, m in report["metrics"].items()
        ],
    )
    if report.get("exclusive_wins"):
        table(
            "exclusive_wins",
            ["mode", "truth", "model", "percent"],
            [
                [mode, truth, model, pct]
                for mode, by_truth in report["exclusive_wins"].items()
                for truth, per in by_truth.items()
                for model, pct in per.items()
            ],
        )
    table(
        "effect_categories",
        ["model", *[c.value for c in EffectCategory]],
        [[model, *counts.values()] for model, counts in report["effect_categories"].items()],
    )
    table(
        "token_stats",
        ["model", "mode", "count", "min", "q1", "median", "q3", "max", "mean", "outliers"],
        [
            [*key.split("|"), s["count"], s["min"], s["q1"], s["median"], s["q3"], s["max"], s["mean"], len(s["outliers"])]
            for key, s in report["token_stats"].items()
        ],
    )
    return written
