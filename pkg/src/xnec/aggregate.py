"""Aggregation of per-annotator necessity annotations into one clip label.

Five annotators each record one (moment, score, explanation) per clip. The
clip's generalized score is the truncated mean (drop one max, one min); the
explanation interval spans the annotated moments; the stored message is the
text of the annotator whose score sits closest to the aggregate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ValidationError

# User-study ratings arrive on a 1-10 Likert scale; dataset scores live in
# [0, 1]. Affine map (x - 1) / 9.
LIKERT_MIN, LIKERT_MAX = 1.0, 10.0


@dataclass(frozen=True)
class AnnotationEvent:
    """One annotator's recorded explanation moment for one clip."""

    vid: str
    annotator_id: str
    moment: float
    score: float
    explanation: str

    def validate(self, clip_duration: float | None = None) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"{self.vid}/{self.annotator_id}: score {self.score} outside [0, 1]")
        if self.moment < 0.0:
            raise ValidationError(f"{self.vid}/{self.annotator_id}: negative moment {self.moment}")
        if clip_duration is not None and self.moment > clip_duration + 1e-9:
            raise ValidationError(
                f"{self.vid}/{self.annotator_id}: moment {self.moment} beyond clip end {clip_duration}"
            )
        if not self.explanation.strip():
            raise ValidationError(f"{self.vid}/{self.annotator_id}: empty explanation")


@dataclass(frozen=True)
class AggregatedLabel:
    """Clip-level label derived from >=3 annotation events."""

    necessity_score: float
    interval: tuple[float, float]
    contributing_ids: tuple[str, ...]
    message: str


def likert_to_unit(rating: float) -> float:
    """Map a 1-10 Likert rating onto [0, 1]."""
    if not LIKERT_MIN <= rating <= LIKERT_MAX:
        raise ValidationError(f"Likert rating {rating} outside [{LIKERT_MIN}, {LIKERT_MAX}]")
    return (rating - LIKERT_MIN) / (LIKERT_MAX - LIKERT_MIN)


def truncated_mean(scores: Sequence[float]) -> float:
    """Mean after discarding exactly one highest and one lowest score.

    Requires at least 3 scores; with more than 5 we still drop exactly one
    from each tail.
    """
    if len(scores) < 3:
        raise ValidationError(f"truncated mean needs >= 3 scores, got {len(scores)}")
    ordered = sorted(scores)
    trimmed = ordered[1:-1]
    return sum(trimmed) / len(trimmed)


def build_interval(events: Sequence[AnnotationEvent]) -> tuple[float, float]:
    """Span of the annotated moments: (min, max). Single event degenerates to
    a zero-width interval."""
    if not events:
        raise ValidationError("cannot build an interval from zero events")
    vids = {e.vid for e in events}
    if len(vids) > 1:
        raise ValidationError(f"events span multiple vids: {sorted(vids)}")
    moments = [e.moment for e in events]
    return (min(moments), max(moments))


def aggregate_clip(events: Sequence[AnnotationEvent]) -> AggregatedLabel:
    """Collapse one clip's annotation events into an AggregatedLabel.

    Raises:
        ValidationError: fewer than 3 events, mixed vids, or duplicate
            annotators.
    """
    if len(events) < 3:
        raise ValidationError(f"aggregation needs >= 3 events, got {len(events)}")
    interval = build_interval(events)  # also enforces the single-vid rule
    annotators = [e.annotator_id for e in events]
    if len(set(annotators)) != len(annotators):
        raise ValidationError("duplicate annotator in event set")
    for event in events:
        event.validate()

    score = truncated_mean([e.score for e in events])
    # Canonical message: annotator whose score is nearest the aggregate,
    # ties broken toward the lexicographically smallest annotator_id.
    chosen = min(events, key=lambda e: (abs(e.score - score), e.annotator_id))
    return AggregatedLabel(
        necessity_score=score,
        interval=interval,
        contributing_ids=tuple(sorted(annotators)),
        message=chosen.explanation,
    )


def group_events(events: Iterable[AnnotationEvent]) -> dict[str, list[AnnotationEvent]]:
    grouped: dict[str, list[AnnotationEvent]] = {}
    for event in events:
        grouped.setdefault(event.vid, []).append(event)
    return grouped


def load_annotations(path: str | Path) -> list[AnnotationEvent]:
    """Read the annotation export CSV: vid,annotator_id,moment,score,explanation."""
    events: list[AnnotationEvent] = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        required = {"vid", "annotator_id", "moment", "score", "explanation"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValidationError(f"{path}: annotation header must contain {sorted(required)}")
        for row in reader:
            events.append(
                AnnotationEvent(
                    vid=row["vid"],
                    annotator_id=row["annotator_id"],
                    moment=float(row["moment"]),
                    score=float(row["score"]),
                    explanation=row["explanation"],
                )
            )
    return events


def save_annotations(events: Sequence[AnnotationEvent], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["vid", "annotator_id", "moment", "score", "explanation"])
        for e in events:
            writer.writerow([e.vid, e.annotator_id, repr(e.moment), repr(e.score), e.explanation])
