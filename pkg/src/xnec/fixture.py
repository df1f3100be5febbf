"""Synthetic corpus generator.

Builds procedurally rendered "driving" clips with a planted necessity
signal so the whole pipeline is testable without the original dataset:
a bright disc (the event) appears off-center while the gaze map snaps onto
it; visually identical distractor discs appear at un-gazed positions in all
clips, which is exactly what makes gaze gating pay off. Low-necessity clips
carry distractors but no event. Speed telemetry dips around the event.

Two entry points: ``generate_raw_fixture`` emits pre-ingest inputs (raw fps
video, telemetry CSVs, annotator CSV, assumption flags, study responses)
for end-to-end runs, and ``generate_labeled_manifest`` emits 10 Hz media
plus a labeled manifest directly for model and trainer tests.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .aggregate import AnnotationEvent, save_annotations
from .corpus import FRAME_RATE_HZ, ClipRecord, save_manifest, write_media

EVENT_INTENSITY = 230
BACKGROUND_LEVEL = 60
DISC_RADIUS_FRAC = 0.14  # of frame side

MESSAGE_TEMPLATES = (
    "i will slow down because the traffic light {} ahead",
    "i am braking because a pedestrian {} the crosswalk",
    "i will stop because the car in front {} suddenly",
    "i am changing lanes because a truck {} on the right",
    "i will yield because a cyclist {} from the side street",
    "i am slowing down because the road {} under construction",
    "i will turn left because the route {} faster",
    "i am stopping because the stop sign {} visible ahead",
    "i will speed up because the highway {} clear",
    "i am merging because my lane {} soon",
    "i will wait because the intersection {} blocked",
    "i am reversing because the parking spot {} open",
    "i will honk because the car beside {} drifting",
    "i am pulling over because the siren {} behind us",
    "i will keep distance because the bus {} often",
)
MESSAGE_FILLERS = ("is", "looks", "seems", "got", "stays")


@dataclass(frozen=True)
class ClipPlan:
    """Ground truth for one synthetic clip."""

    vid: str
    target_score: float
    event_time: float | None  # None: no visual event (low-necessity clip)
    annotated_moment: float  # what annotators point at
    event_pos: tuple[float, float]  # fractional (x, y)
    message: str
    flagged: str | None = None  # violation code for clips meant to be filtered


def _disc(frame: np.ndarray, cx: float, cy: float, radius: float, value: int) -> None:
    h, w = frame.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    mask = (xx - cx * w) ** 2 + (yy - cy * h) ** 2 <= (radius * w) ** 2
    frame[mask] = value


def _gaussian_map(size: int, cx: float, cy: float, sigma_frac: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    sigma = sigma_frac * size
    d2 = (xx - cx * size) ** 2 + (yy - cy * size) ** 2
    g = np.exp(-d2 / (2 * sigma * sigma))
    return (g / g.max() * 255).astype(np.uint8)


# shared off-center position pool for events AND distractors: without the
# gaze map the two are visually indistinguishable, which is the planted
# reason foveal gating beats the plain backbone
_SPOT_POOL = (
    (0.2, 0.25), (0.78, 0.25), (0.22, 0.75), (0.76, 0.72),
    (0.5, 0.15), (0.15, 0.5), (0.85, 0.55), (0.5, 0.85),
)


def render_clip(
    plan: ClipPlan,
    duration_s: float,
    fps: float,
    size: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Render (video frames, gaze frames) for one plan at the given fps."""
    n = int(round(duration_s * fps))
    frames = np.zeros((n, size, size, 3), dtype=np.uint8)
    gaze = np.zeros((n, size, size), dtype=np.uint8)

    n_distractors = int(rng.integers(3, 6))
    candidates = [s for s in _SPOT_POOL if s != plan.event_pos]
    distractors = []
    for _ in range(n_distractors):
        spot = candidates[int(rng.integers(0, len(candidates)))]
        start = float(rng.uniform(0.5, duration_s - 1.5))
        distractors.append((spot, start, start + float(rng.uniform(0.8, 1.6))))

    event_window = None
    if plan.event_time is not None:
        event_window = (plan.event_time - 0.2, plan.event_time + 1.0)

    for i in range(n):
        t = i / fps
        frame = np.full((size, size, 3), BACKGROUND_LEVEL, dtype=np.uint8)
        # moving road stripes
        stripe = (np.arange(size) + int(t * fps)) % 8 < 2
        frame[stripe, :, :] = BACKGROUND_LEVEL + 25
        noise = rng.integers(0, 12, size=(size, size, 1), dtype=np.uint8)
        frame = np.clip(frame.astype(np.int16) + noise, 0, 255).astype(np.uint8)

        for (sx, sy), t0, t1 in distractors:
            if t0 <= t <= t1:
                _disc(frame, sx, sy, DISC_RADIUS_FRAC, EVENT_INTENSITY)
        if event_window and event_window[0] <= t <= event_window[1]:
            _disc(frame, plan.event_pos[0], plan.event_pos[1], DISC_RADIUS_FRAC, EVENT_INTENSITY)
            gaze[i] = _gaussian_map(size, plan.event_pos[0], plan.event_pos[1], 0.09)
        else:
            gaze[i] = _gaussian_map(size, 0.5, 0.5, 0.09)
        frames[i] = frame
    return frames, gaze


def _telemetry_rows(plan: ClipPlan, duration_s: float) -> list[tuple[float, float, float]]:
    # every clip is a braking event (the dip alone must not separate the
    # classes; only the gazed visual event does)
    rows = []
    t = 0.0
    heading = 90.0
    while t <= duration_s + 1e-9:
        speed = 8.0
        if t >= plan.annotated_moment:
            speed = max(2.0, 8.0 - 3.0 * (t - plan.annotated_moment))
        heading += 0.4 * math.sin(t / 2.0)
        rows.append((round(t, 3), round(speed, 4), round(heading, 4)))
        t += 0.5
    return rows


def _plan_clips(
    n_high: int, n_low: int, n_flagged: int, duration_s: float, rng: np.random.Generator
) -> list[ClipPlan]:
    plans: list[ClipPlan] = []
    high_targets = np.linspace(0.55, 0.93, n_high)
    low_targets = np.linspace(0.08, 0.45, n_low)
    total = n_high + n_low + n_flagged
    for i in range(total):
        vid = f"clip{i:03d}"
        template = MESSAGE_TEMPLATES[i % len(MESSAGE_TEMPLATES)]
        message = template.format(MESSAGE_FILLERS[i % len(MESSAGE_FILLERS)])
        moment = float(rng.uniform(4.5, min(8.0, duration_s - 1.5)))
        spot = _SPOT_POOL[int(rng.integers(0, len(_SPOT_POOL)))]
        if i < n_high:
            plans.append(ClipPlan(vid, float(high_targets[i]), moment, moment, spot, message))
        elif i < n_high + n_low:
            j = i - n_high
            plans.append(ClipPlan(vid, float(low_targets[j]), None, moment, spot, message))
        else:
            code = ("traffic-law-violation", "unsafe-action")[(i - n_high - n_low) % 2]
            plans.append(ClipPlan(vid, 0.5, moment, moment, spot, message, flagged=code))
    return plans


def _annotation_events(plans: list[ClipPlan], rng: np.random.Generator) -> list[AnnotationEvent]:
    events: list[AnnotationEvent] = []
    prefixes = ("", "", "i think ", "clearly ", "")
    for plan in plans:
        for a in range(5):
            moment = float(np.clip(plan.annotated_moment + rng.uniform(-0.25, 0.25), 0.3, 9.7))
            score = float(np.clip(plan.target_score + rng.uniform(-0.02, 0.02), 0.0, 1.0))
            events.append(
                AnnotationEvent(
                    vid=plan.vid,
                    annotator_id=f"annotator{a + 1}",
                    moment=round(moment, 3),
                    score=round(score, 4),
                    explanation=prefixes[a] + plan.message,
                )
            )
    return events


# ---------------------------------------------------------------------------
# study responses
# ---------------------------------------------------------------------------

_SEATS = ("A", "B", "C", "D")


def write_study_responses(
    out_dir: Path, plans: list[ClipPlan], n_participants: int, rng: np.random.Generator
) -> None:
    """ratings.csv + participants.csv consistent with the documented schema."""
    out_dir.mkdir(parents=True, exist_ok=True)
    participants = [f"p{i + 1:02d}" for i in range(n_participants)]
    aggressive = {p: bool(rng.random() < 0.4) for p in participants}

    with open(out_dir / "ratings.csv", "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            [
                "participant_id", "vid", "necessity", "attention",
                "rank_action_reason_first", "rank_action_reason_third",
                "rank_action_first", "rank_action_third",
                "flag_near_crash", "flag_slow_down",
            ]
        )
        for pid in participants:
            offset = -1.5 if aggressive[pid] else 1.0
            for plan in plans:
                if plan.flagged:
                    continue
                base = 1 + 9 * plan.target_score
                necessity = float(np.clip(base + offset + rng.normal(0, 0.8), 1, 10))
                attention = float(np.clip(necessity * 0.4 + 3 + rng.normal(0, 1.2), 1, 10))
                if plan.target_score > 0.7:
                    ranking = [1, 2, 3, 4]  # strong shared preference: Friedman rejects
                else:
                    ranking = list(rng.permutation([1, 2, 3, 4]))
                writer.writerow(
                    [
                        pid, plan.vid, round(necessity, 2), round(attention, 2),
                        *ranking,
                        int(plan.event_time is not None),
                        int(plan.target_score > 0.3),
                    ]
                )

    with open(out_dir / "participants.csv", "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            [
                "participant_id", "speed_mph", "self_aggressive", "frequent_lane_change",
                "motion_sickness", "seat_ordinary", "seat_av", "seat_av_explained",
                "reason_ordinary_to_av", "reason_av_to_av_explained",
                "reason_ordinary_to_av_explained",
            ]
        )
        for pid in participants:
            speed = float(rng.uniform(36, 45)) if aggressive[pid] else float(rng.uniform(25, 35))
            seat_ord = _SEATS[int(rng.integers(0, 4))]
            if aggressive[pid]:
                seat_av, reason1 = "A", "control"
            else:
                seat_av = _SEATS[int(rng.integers(0, 4))]
                reason1 = "safety" if seat_av in ("B", "D") else ""
            seat_exp = "B" if rng.random() < 0.5 else seat_av
            reason2 = "comfort" if seat_exp != seat_av and seat_exp in ("B", "D") else ""
            reason3 = ""
            if seat_exp != seat_ord:
                reason3 = reason2 or reason1 or "comfort"
            writer.writerow(
                [
                    pid, round(speed, 1), int(aggressive[pid]), int(rng.random() < 0.3),
                    int(rng.random() < 0.2), seat_ord, seat_av, seat_exp,
                    reason1 if seat_av != seat_ord else "",
                    reason2 if seat_exp != seat_av else "",
                    reason3,
                ]
            )


# ---------------------------------------------------------------------------
# fixture entry points
# ---------------------------------------------------------------------------


def generate_raw_fixture(
    out_dir: str | Path,
    n_high: int = 7,
    n_low: int = 5,
    n_flagged: int = 2,
    duration_s: float = 10.0,
    size: int = 32,
    raw_fps: float = 20.0,
    n_participants: int = 18,
    seed: int = 0,
) -> dict:
    """Pre-ingest fixture tree; returns a layout dict (also saved as
    fixture.json) mapping vids to raw media/telemetry paths and ground truth."""
    out_dir = Path(out_dir).resolve()
    rng = np.random.default_rng(seed)
    plans = _plan_clips(n_high, n_low, n_flagged, duration_s, rng)

    raw_dir = out_dir / "raw"
    telemetry_dir = out_dir / "telemetry"
    raw_dir.mkdir(parents=True, exist_ok=True)
    telemetry_dir.mkdir(parents=True, exist_ok=True)

    layout: dict = {"clips": [], "seed": seed, "duration_s": duration_s}
    for plan in plans:
        frames, gaze = render_clip(plan, duration_s, raw_fps, size, rng)
        video_path = raw_dir / f"{plan.vid}.mp4"
        gaze_path = raw_dir / f"{plan.vid}_gaze.mp4"
        write_media(video_path, frames, fps=raw_fps)
        write_media(gaze_path, gaze, fps=raw_fps)
        telemetry_path = telemetry_dir / f"{plan.vid}.csv"
        with open(telemetry_path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["timestamp", "speed", "course"])
            writer.writerows(_telemetry_rows(plan, duration_s))
        layout["clips"].append(
            {
                "vid": plan.vid,
                "video": str(video_path),
                "gaze": str(gaze_path),
                "telemetry": str(telemetry_path),
                "target_score": plan.target_score,
                "event_time": plan.event_time,
                "annotated_moment": plan.annotated_moment,
                "flagged": plan.flagged,
            }
        )

    save_annotations(_annotation_events(plans, rng), out_dir / "annotations.csv")
    with open(out_dir / "ingest.csv", "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["vid", "video", "gaze", "telemetry"])
        for entry in layout["clips"]:
            writer.writerow([entry["vid"], entry["video"], entry["gaze"], entry["telemetry"]])
    with open(out_dir / "flags.csv", "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["vid", "violation"])
        for plan in plans:
            if plan.flagged:
                writer.writerow([plan.vid, plan.flagged])
    write_study_responses(out_dir / "responses", plans, n_participants, rng)
    with open(out_dir / "fixture.json", "w", encoding="utf-8") as handle:
        json.dump(layout, handle, indent=1)
    return layout


def generate_labeled_manifest(
    out_dir: str | Path,
    n_high: int = 14,
    n_low: int = 10,
    duration_s: float = 10.0,
    size: int = 32,
    interval_width: float = 0.8,
    seed: int = 0,
    media_format: str = "mp4",
) -> Path:
    """10 Hz media plus a labeled manifest, bypassing ingest/aggregation.

    Scores equal the plan targets exactly; the explanation interval is
    [event_time, event_time + interval_width]. Returns the manifest path.
    """
    out_dir = Path(out_dir).resolve()
    media_dir = out_dir / "media"
    rng = np.random.default_rng(seed)
    plans = _plan_clips(n_high, n_low, 0, duration_s, rng)

    clips: list[ClipRecord] = []
    for plan in plans:
        frames, gaze = render_clip(plan, duration_s, FRAME_RATE_HZ, size, rng)
        video_path = media_dir / f"{plan.vid}.{media_format}"
        gaze_path = media_dir / f"{plan.vid}_gaze.{media_format}"
        write_media(video_path, frames, fps=FRAME_RATE_HZ)
        write_media(gaze_path, gaze, fps=FRAME_RATE_HZ)
        n_frames = frames.shape[0]
        telemetry = _telemetry_rows(plan, duration_s)
        grid = np.arange(n_frames) / FRAME_RATE_HZ
        ts = [r[0] for r in telemetry]
        speed = np.interp(grid, ts, [r[1] for r in telemetry])
        course = np.interp(grid, ts, [r[2] for r in telemetry])
        t0 = plan.annotated_moment
        clips.append(
            ClipRecord(
                vid=plan.vid,
                video_path=str(video_path),
                gazemap_path=str(gaze_path),
                speed=tuple(float(v) for v in speed),
                course=tuple(float(v) for v in course),
                message=plan.message,
                necessity_score=plan.target_score,
                explanation_interval=(t0, min(t0 + interval_width, duration_s)),
            )
        )
    manifest_path = out_dir / "manifest.json"
    save_manifest(clips, manifest_path)
    return manifest_path


def synthetic_messages(n: int, seed: int = 0) -> dict[str, str]:
    """vid -> explanation text map for clustering tests (no media)."""
    rng = np.random.default_rng(seed)
    messages = {}
    for i in range(n):
        template = MESSAGE_TEMPLATES[i % len(MESSAGE_TEMPLATES)]
        filler = MESSAGE_FILLERS[int(rng.integers(0, len(MESSAGE_FILLERS)))]
        suffix = " today" if rng.random() < 0.3 else ""
        messages[f"clip{i:03d}"] = template.format(filler) + suffix
    return messages
