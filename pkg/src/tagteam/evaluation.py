"""Tag-sequence repair, exact-match scoring, and error taxonomy.

A predicted entity counts only when its (start, end) span equals a gold
span exactly; precision, recall and F1 are micro-aggregated over the
whole split (counts summed before ratios). Repair rewrites every
maximal run of non-O tags that is not exactly "S" or "B I* E" to O: a
drop-only policy, so repair can remove predictions but never invent
them.

The false-positive taxonomy is a deterministic approximation of a
manual error audit and is labeled as such in reports.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import IO, Sequence

Span = tuple[int, int]

_VALID_RUN = re.compile(r"S|BI*E")


@dataclass
class EvalReport:
    correct: int = 0     # exact span matches
    predicted: int = 0
    gold: int = 0
    taxonomy: dict[str, int] = field(
        default_factory=lambda: {"bio_entity": 0, "span": 0, "other": 0, "false_negatives": 0}
    )

    @property
    def precision(self) -> float:
        return self.correct / self.predicted if self.predicted else 0.0

    @property
    def recall(self) -> float:
        return self.correct / self.gold if self.gold else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def lines(self) -> list[str]:
        out = [
            f"correct={self.correct}",
            f"predicted={self.predicted}",
            f"gold={self.gold}",
            f"precision={self.precision:.4f}",
            f"recall={self.recall:.4f}",
            f"f1={self.f1:.4f}",
        ]
        out += [f"fp_{k}={v}" for k, v in self.taxonomy.items() if k != "false_negatives"]
        out.append(f"false_negatives={self.taxonomy['false_negatives']}")
        return out

    def write(self, stream: IO[str]) -> None:
        for line in self.lines():
            stream.write(line + "\n")


def repair_bioes(tags: Sequence[str]) -> list[str]:
    """Idempotent cleanup: each maximal non-O run either matches the
    single-entity pattern exactly or is dropped wholesale."""
    out = list(tags)
    run_start = None
    for i in range(len(out) + 1):
        at_end = i == len(out)
        if not at_end and out[i] != "O":
            if run_start is None:
                run_start = i
            continue
        if run_start is not None:
            run = "".join(out[run_start:i])
            if _VALID_RUN.fullmatch(run) is None:
                out[run_start:i] = ["O"] * (i - run_start)
            run_start = None
    return out


def exact_match_score(
    pred_spans: Sequence[Sequence[Span]], gold_spans: Sequence[Sequence[Span]]
) -> EvalReport:
    """Micro-aggregated exact-match counts over per-sentence span lists."""
    if len(pred_spans) != len(gold_spans):
        raise ValueError(
            f"exact_match_score: {len(pred_spans)} predicted sentences vs {len(gold_spans)} gold"
        )
    report = EvalReport()
    for pred, gold in zip(pred_spans, gold_spans):
        pred_set, gold_set = set(pred), set(gold)
        report.correct += len(pred_set & gold_set)
        report.predicted += len(pred_set)
        report.gold += len(gold_set)
    return report


def _overlaps(a: Span, b: Span) -> bool:
    return a[0] <= b[1] and b[0] <= a[1]


def classify_errors(
    pred_spans: Sequence[Sequence[Span]],
    gold_spans: Sequence[Sequence[Span]],
    other_type_spans: Sequence[Sequence[Span]],
) -> dict[str, int]:
    """Bucket each false positive by the first matching rule:

    1. bio_entity - matches or overlaps a span of another entity type;
    2. span - overlaps a same-type gold span with different boundaries;
    3. other - neither.

    False negatives are counted separately, not bucketed.
    """
    if not (len(pred_spans) == len(gold_spans) == len(other_type_spans)):
        raise ValueError(
            f"classify_errors: sentence counts differ "
            f"({len(pred_spans)}/{len(gold_spans)}/{len(other_type_spans)})"
        )
    counts = {"bio_entity": 0, "span": 0, "other": 0, "false_negatives": 0}
    for pred, gold, others in zip(pred_spans, gold_spans, other_type_spans):
        gold_set = set(gold)
        for span in set(pred):
            if span in gold_set:
                continue
            if any(_overlaps(span, o) for o in others):
                counts["bio_entity"] += 1
            elif any(_overlaps(span, g) for g in gold_set):
                counts["span"] += 1
            else:
                counts["other"] += 1
        counts["false_negatives"] += len(gold_set - set(pred))
    return counts


def score_with_taxonomy(
    pred_spans: Sequence[Sequence[Span]],
    gold_spans: Sequence[Sequence[Span]],
    other_type_spans: Sequence[Sequence[Span]] | None = None,
) -> EvalReport:
    report = exact_match_score(pred_spans, gold_spans)
    if other_type_spans is None:
        other_type_spans = [[] for _ in pred_spans]
    report.taxonomy = classify_errors(pred_spans, gold_spans, other_type_spans)
    return report
