"""Sliding-window extraction: labeled clips to fixed 40-frame training units.

Frame convention used throughout: frames are numbered 1..n on the 10 Hz
grid and frame ``e`` ends at ``e / 10`` seconds, so a window ending at frame
``e`` spans frames ``e-39..e`` (four seconds of video) and is valid for
``40 <= e <= n``. A window is positive when the clip's score clears the
label threshold p0 and the window's end time falls inside the explanation
interval (closed endpoints); negative windows are sampled uniformly from
below-threshold clips.
"""

from __future__ import annotations

import csv
import math
import warnings
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import FRAME_RATE_HZ, ClipRecord
from .errors import ValidationError

WINDOW_FRAMES = 40
WINDOW_SECONDS = WINDOW_FRAMES / FRAME_RATE_HZ


@dataclass(frozen=True)
class LabelingPolicy:
    """Binarization policy: label threshold, negative count, and RNG seed."""

    p0: float
    negatives_per_clip: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.p0 <= 1.0:
            raise ValidationError(f"p0 {self.p0} outside [0, 1]")
        if self.negatives_per_clip < 1:
            raise ValidationError("negatives_per_clip must be >= 1")


@dataclass(frozen=True)
class FrameWindow:
    """One 40-frame training window referencing clip media lazily."""

    vid: str
    end_frame: int  # 1-based; window covers frames end_frame-39 .. end_frame
    video_path: str
    gazemap_path: str
    accel: float  # m/s^2 at the terminal frame
    label: int
    necessity_score: float

    @property
    def start_frame(self) -> int:
        return self.end_frame - WINDOW_FRAMES + 1

    @property
    def end_time(self) -> float:
        return self.end_frame / FRAME_RATE_HZ


def _terminal_accel(clip: ClipRecord, end_frame: int) -> float:
    """Finite-difference acceleration at the window's last frame."""
    speed = clip.speed
    if end_frame < 2:
        return 0.0
    return (speed[end_frame - 1] - speed[end_frame - 2]) * FRAME_RATE_HZ


def _window(clip: ClipRecord, end_frame: int, label: int) -> FrameWindow:
    if end_frame < WINDOW_FRAMES or end_frame > clip.frame_count:
        raise ValidationError(
            f"{clip.vid}: end frame {end_frame} outside [{WINDOW_FRAMES}, {clip.frame_count}]"
        )
    return FrameWindow(
        vid=clip.vid,
        end_frame=end_frame,
        video_path=clip.video_path,
        gazemap_path=clip.gazemap_path,
        accel=_terminal_accel(clip, end_frame),
        label=label,
        necessity_score=clip.necessity_score if clip.necessity_score is not None else 0.0,
    )


def positive_windows(clip: ClipRecord, policy: LabelingPolicy) -> list[FrameWindow]:
    """All label-1 windows of a clip: one per frame whose end time lies in
    the explanation interval. Empty when the clip scores below p0 or the
    interval leaves no room for 40 frames of history (warned, not an error).
    """
    if not clip.labeled:
        raise ValidationError(f"{clip.vid}: clip is unlabeled")
    if clip.necessity_score < policy.p0:
        return []
    t_start, t_end = clip.explanation_interval
    e_first = max(WINDOW_FRAMES, math.ceil(t_start * FRAME_RATE_HZ - 1e-9))
    e_last = min(clip.frame_count, math.floor(t_end * FRAME_RATE_HZ + 1e-9))
    if e_first > e_last:
        warnings.warn(
            f"{clip.vid}: explanation interval ({t_start}, {t_end}) leaves no valid "
            f"window end (needs end time >= {WINDOW_SECONDS}s); zero positives",
            stacklevel=2,
        )
        return []
    return [_window(clip, e, 1) for e in range(e_first, e_last + 1)]


def _clip_rng(policy: LabelingPolicy, vid: str) -> np.random.Generator:
    # per-clip stream keyed by (seed, vid) so parallel extraction order
    # cannot change outputs
    return np.random.default_rng([policy.seed, zlib.crc32(vid.encode("utf-8"))])


def negative_windows(clip: ClipRecord, policy: LabelingPolicy) -> list[FrameWindow]:
    """Uniformly random label-0 windows (policy.negatives_per_clip of them),
    deterministic under (policy.seed, vid)."""
    if clip.frame_count < WINDOW_FRAMES:
        raise ValidationError(
            f"{clip.vid}: clip has {clip.frame_count} frames, {WINDOW_FRAMES} required"
        )
    rng = _clip_rng(policy, clip.vid)
    ends = rng.integers(WINDOW_FRAMES, clip.frame_count + 1, size=policy.negatives_per_clip)
    return [_window(clip, int(e), 0) for e in ends]


def negative_window(clip: ClipRecord, policy: LabelingPolicy) -> FrameWindow:
    return negative_windows(clip, policy)[0]


def build_windows(clips: Sequence[ClipRecord], policy: LabelingPolicy) -> list[FrameWindow]:
    """Window set for a labeled corpus: positives from clips at or above p0,
    negatives sampled from the below-threshold clips."""
    out: list[FrameWindow] = []
    for clip in clips:
        if not clip.labeled:
            raise ValidationError(f"{clip.vid}: cannot window an unlabeled clip")
        if clip.necessity_score >= policy.p0:
            out.extend(positive_windows(clip, policy))
        else:
            out.extend(negative_windows(clip, policy))
    return out


def class_weights(windows: Sequence[FrameWindow]) -> np.ndarray:
    """Per-window sampling weights proportional to inverse class frequency,
    normalized to sum to 1; a weighted draw is class-balanced in expectation."""
    labels = np.asarray([w.label for w in windows], dtype=np.int64)
    n_pos = int(labels.sum())
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("class weights need both classes present")
    raw = np.where(labels == 1, 1.0 / n_pos, 1.0 / n_neg)
    return raw / raw.sum()


def verify_windows(
    windows: Sequence[FrameWindow], clips: Sequence[ClipRecord], policy: LabelingPolicy
) -> None:
    """Re-check label consistency from the manifest alone; raises on any
    window violating the 40-frame bound or the positive-label conditions."""
    by_vid = {c.vid: c for c in clips}
    for w in windows:
        clip = by_vid.get(w.vid)
        if clip is None:
            raise ValidationError(f"window references unknown vid {w.vid!r}")
        if w.start_frame < 1 or w.end_frame > clip.frame_count:
            raise ValidationError(f"{w.vid}: window [{w.start_frame}, {w.end_frame}] out of bounds")
        if w.end_frame - w.start_frame + 1 != WINDOW_FRAMES:
            raise ValidationError(f"{w.vid}: window is not {WINDOW_FRAMES} frames")
        if w.label == 1:
            t_start, t_end = clip.explanation_interval
            if not (t_start - 1e-9 <= w.end_time <= t_end + 1e-9):
                raise ValidationError(
                    f"{w.vid}: positive window end {w.end_time}s outside ({t_start}, {t_end})"
                )
            if clip.necessity_score < policy.p0:
                raise ValidationError(
                    f"{w.vid}: positive window from below-threshold clip "
                    f"({clip.necessity_score} < {policy.p0})"
                )


def save_window_index(
    windows: Sequence[FrameWindow], weights: np.ndarray | None, path: str | Path
) -> None:
    """Write the window index CSV: vid,end_frame,label,weight,score."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if weights is None:
        weights = np.full(len(windows), 1.0 / max(len(windows), 1))
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["vid", "end_frame", "label", "weight", "score"])
        for w, weight in zip(windows, weights):
            writer.writerow([w.vid, w.end_frame, w.label, repr(float(weight)), repr(w.necessity_score)])


def load_window_index(path: str | Path, clips: Sequence[ClipRecord]) -> tuple[list[FrameWindow], np.ndarray]:
    """Rehydrate windows from the index CSV against a corpus manifest."""
    by_vid = {c.vid: c for c in clips}
    windows: list[FrameWindow] = []
    weights: list[float] = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        required = {"vid", "end_frame", "label", "weight", "score"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValidationError(f"{path}: window index header must contain {sorted(required)}")
        for row in reader:
            clip = by_vid.get(row["vid"])
            if clip is None:
                raise ValidationError(f"{path}: unknown vid {row['vid']!r}")
            windows.append(_window(clip, int(row["end_frame"]), int(row["label"])))
            weights.append(float(row["weight"]))
    return windows, np.asarray(weights, dtype=np.float64)
