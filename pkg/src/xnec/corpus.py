"""Clip corpus: media ingest, validation, assumption filtering, and manifest
persistence.

A clip is ~10 seconds of dashcam video plus a frame-aligned gaze-density
video and per-frame telemetry. Ingest normalizes everything to a 10 Hz frame
grid so every downstream index is frame-based. Media is referenced by path
(mp4 decoded through OpenCV, or an .npz archive with ``frames`` and
``timestamps`` arrays for lossless round trips); pixel data is never stored
in the manifest.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import cv2
import numpy as np

from .errors import CorruptVideoError, ManifestVersionError, TelemetryError, ValidationError

FRAME_RATE_HZ = 10.0
MANIFEST_SCHEMA = "xnec-corpus/1"

# Largest tolerated gap between consecutive source-frame timestamps. Anything
# beyond this means dropped frames and the clip cannot be resampled honestly.
MAX_FRAME_GAP_S = 0.5

ASSUMPTION_CODES = (
    "traffic-law-violation",
    "unsafe-action",
    "no-explanation-moment",
    "corrupt-video",
)


@dataclass(frozen=True)
class ClipRecord:
    """One driving clip with telemetry and (optionally) its necessity label.

    ``speed`` and ``course`` are per-frame series on the 10 Hz grid; their
    length is the clip's frame count. Label fields (``message``,
    ``necessity_score``, ``explanation_interval``) stay ``None`` until the
    clip is aggregated from annotations.
    """

    vid: str
    video_path: str
    gazemap_path: str
    speed: tuple[float, ...]
    course: tuple[float, ...]
    message: str | None = None
    necessity_score: float | None = None
    explanation_interval: tuple[float, float] | None = None

    @property
    def frame_count(self) -> int:
        return len(self.speed)

    @property
    def duration(self) -> float:
        """Clip duration in seconds on the 10 Hz grid."""
        return self.frame_count / FRAME_RATE_HZ

    @property
    def labeled(self) -> bool:
        return self.necessity_score is not None

    def validate(self) -> None:
        """Check the record's own invariants; raises ValidationError."""
        if not self.vid:
            raise ValidationError("vid must be non-empty")
        if len(self.speed) != len(self.course):
            raise ValidationError(
                f"{self.vid}: speed ({len(self.speed)}) and course ({len(self.course)}) "
                "series lengths differ"
            )
        if self.frame_count == 0:
            raise ValidationError(f"{self.vid}: empty frame series")
        if self.necessity_score is not None:
            if not 0.0 <= self.necessity_score <= 1.0:
                raise ValidationError(
                    f"{self.vid}: necessity_score {self.necessity_score} outside [0, 1]"
                )
            if self.explanation_interval is None:
                raise ValidationError(
                    f"{self.vid}: labeled clip is missing explanation_interval"
                )
            if self.message is None:
                raise ValidationError(f"{self.vid}: labeled clip is missing message")
        if self.explanation_interval is not None:
            t_start, t_end = self.explanation_interval
            if not 0.0 <= t_start <= t_end <= self.duration + 1e-9:
                raise ValidationError(
                    f"{self.vid}: explanation_interval ({t_start}, {t_end}) outside "
                    f"[0, {self.duration}]"
                )

    def with_label(
        self, message: str, necessity_score: float, interval: tuple[float, float]
    ) -> "ClipRecord":
        rec = replace(
            self,
            message=message,
            necessity_score=necessity_score,
            explanation_interval=(float(interval[0]), float(interval[1])),
        )
        rec.validate()
        return rec


@dataclass(frozen=True)
class AssumptionReport:
    """Outcome of the human assumption review for one clip."""

    vid: str
    passed: bool
    violated_assumptions: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.passed != (len(self.violated_assumptions) == 0):
            raise ValidationError(
                f"{self.vid}: passed flag inconsistent with violation list"
            )


# ---------------------------------------------------------------------------
# media access
# ---------------------------------------------------------------------------


def read_media(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Decode a media reference into frames plus per-frame timestamps.

    Returns ``(frames, timestamps)`` where frames is ``[n, H, W, C]`` (or
    ``[n, H, W]`` for single-channel archives) uint8 and timestamps is a
    float array in seconds.

    Raises:
        CorruptVideoError: missing file, undecodable stream, or zero frames.
    """
    path = Path(path)
    if not path.exists():
        raise CorruptVideoError(f"media not found: {path}")
    if path.suffix == ".npz":
        with np.load(path) as archive:
            if "frames" not in archive or "timestamps" not in archive:
                raise CorruptVideoError(f"{path}: npz media needs 'frames' and 'timestamps'")
            frames = archive["frames"]
            timestamps = archive["timestamps"].astype(np.float64)
    else:
        cap = cv2.VideoCapture(str(path))
        if not cap.isOpened():
            raise CorruptVideoError(f"undecodable video: {path}")
        decoded = []
        stamps = []
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            stamps.append(cap.get(cv2.CAP_PROP_POS_MSEC) / 1000.0)
            decoded.append(frame)
        cap.release()
        if not decoded:
            raise CorruptVideoError(f"undecodable video (no frames): {path}")
        frames = np.stack(decoded)
        timestamps = np.asarray(stamps, dtype=np.float64)
    if frames.shape[0] == 0:
        raise CorruptVideoError(f"empty media: {path}")
    if frames.shape[0] != timestamps.shape[0]:
        raise CorruptVideoError(f"{path}: frame/timestamp count mismatch")
    return frames, timestamps


def write_media(path: str | Path, frames: np.ndarray, fps: float = FRAME_RATE_HZ) -> None:
    """Write frames to ``path`` (.npz for lossless, anything else via OpenCV)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    timestamps = np.arange(frames.shape[0], dtype=np.float64) / fps
    if path.suffix == ".npz":
        np.savez_compressed(path, frames=frames, timestamps=timestamps)
        return
    if frames.ndim == 3:  # single channel -> replicate for the codec
        frames = np.repeat(frames[..., None], 3, axis=-1)
    h, w = frames.shape[1:3]
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"mp4v"), fps, (w, h))
    if not writer.isOpened():
        raise CorruptVideoError(f"cannot open video writer for {path}")
    for frame in frames:
        writer.write(np.ascontiguousarray(frame))
    writer.release()


def media_duration(timestamps: np.ndarray) -> float:
    """Duration implied by source timestamps: last stamp plus one mean step."""
    if timestamps.shape[0] < 2:
        return float(timestamps[-1]) + 1.0 / FRAME_RATE_HZ
    mean_dt = float(timestamps[-1] - timestamps[0]) / (timestamps.shape[0] - 1)
    return float(timestamps[-1]) + mean_dt


def check_frame_gaps(timestamps: np.ndarray, source: str) -> None:
    gaps = np.diff(timestamps)
    if gaps.size and float(gaps.max()) > MAX_FRAME_GAP_S:
        raise CorruptVideoError(
            f"{source}: frame gap of {gaps.max():.3f}s exceeds {MAX_FRAME_GAP_S}s "
            "(dropped segment)"
        )


def resample_indices(timestamps: np.ndarray, duration: float) -> tuple[np.ndarray, np.ndarray]:
    """Map the 10 Hz target grid onto nearest source frames.

    Returns ``(grid_times, source_indices)``. Resampling an already-10 Hz
    stream selects every source frame exactly once, which makes ingest
    idempotent.
    """
    n_out = int(round(duration * FRAME_RATE_HZ))
    if n_out < 1:
        raise CorruptVideoError(f"clip too short to resample: duration {duration:.3f}s")
    grid = np.arange(n_out, dtype=np.float64) / FRAME_RATE_HZ
    idx = np.searchsorted(timestamps, grid)
    idx = np.clip(idx, 0, timestamps.shape[0] - 1)
    left = np.clip(idx - 1, 0, timestamps.shape[0] - 1)
    pick_left = np.abs(timestamps[left] - grid) <= np.abs(timestamps[idx] - grid)
    return grid, np.where(pick_left, left, idx)


# ---------------------------------------------------------------------------
# telemetry
# ---------------------------------------------------------------------------


def load_telemetry(path: str | Path) -> list[tuple[float, float, float]]:
    """Read a telemetry CSV with header ``timestamp,speed,course``."""
    rows: list[tuple[float, float, float]] = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        required = {"timestamp", "speed", "course"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise TelemetryError(f"{path}: telemetry header must contain {sorted(required)}")
        for row in reader:
            rows.append((float(row["timestamp"]), float(row["speed"]), float(row["course"])))
    return rows


def _interpolate_telemetry(
    telemetry: Sequence[tuple[float, float, float]], grid: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    rows = sorted(telemetry)
    ts = np.asarray([r[0] for r in rows], dtype=np.float64)
    speed = np.interp(grid, ts, [r[1] for r in rows])
    course = np.interp(grid, ts, [r[2] for r in rows])
    return speed, course


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def ingest_clip(
    video_ref: str | Path,
    gaze_ref: str | Path,
    telemetry_table: Sequence[tuple[float, float, float]] | str | Path,
    out_dir: str | Path,
    vid: str | None = None,
    media_format: str = "same",
) -> ClipRecord:
    """Materialize one unlabeled ClipRecord on the 10 Hz grid.

    Frames of both the driving video and the gaze video are resampled to
    10 Hz (nearest source frame per grid time); telemetry is linearly
    interpolated onto the grid. Resampled media lands in ``out_dir`` as
    ``{vid}.{ext}`` / ``{vid}_gaze.{ext}``.

    Args:
        video_ref: source driving video (mp4/… via OpenCV, or .npz).
        gaze_ref: source gaze-density video, same container options.
        telemetry_table: rows of (timestamp, speed, course), or a CSV path.
        out_dir: directory receiving the resampled media.
        vid: clip id; defaults to the video filename stem.
        media_format: output container, "same" to mirror the input extension
            (otherwise e.g. "mp4" or "npz").

    Raises:
        CorruptVideoError: undecodable media or a frame gap > 0.5 s.
        TelemetryError: empty telemetry table.
    """
    if isinstance(telemetry_table, (str, Path)):
        telemetry_table = load_telemetry(telemetry_table)
    if not telemetry_table:
        raise TelemetryError(f"empty telemetry for {video_ref}")

    video_ref = Path(video_ref)
    vid = vid or video_ref.stem
    frames, timestamps = read_media(video_ref)
    check_frame_gaps(timestamps, str(video_ref))
    duration = media_duration(timestamps)
    grid, pick = resample_indices(timestamps, duration)
    resampled = frames[pick]

    gaze_frames, gaze_ts = read_media(gaze_ref)
    check_frame_gaps(gaze_ts, str(gaze_ref))
    _, gaze_pick = resample_indices(gaze_ts, duration)
    gaze_pick = np.clip(gaze_pick, 0, gaze_frames.shape[0] - 1)
    gaze_resampled = gaze_frames[gaze_pick]

    speed, course = _interpolate_telemetry(telemetry_table, grid)

    ext = video_ref.suffix.lstrip(".") if media_format == "same" else media_format
    out_dir = Path(out_dir).resolve()
    video_out = out_dir / f"{vid}.{ext}"
    gaze_out = out_dir / f"{vid}_gaze.{ext}"
    write_media(video_out, resampled)
    write_media(gaze_out, gaze_resampled)

    record = ClipRecord(
        vid=vid,
        video_path=str(video_out),
        gazemap_path=str(gaze_out),
        speed=tuple(float(v) for v in speed),
        course=tuple(float(v) for v in course),
    )
    record.validate()
    return record


def load_assumption_flags(path: str | Path) -> list[tuple[str, str]]:
    """Read the human review CSV with header ``vid,violation``."""
    flags: list[tuple[str, str]] = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or not {"vid", "violation"}.issubset(reader.fieldnames):
            raise ValidationError(f"{path}: flag header must contain vid,violation")
        for row in reader:
            flags.append((row["vid"], row["violation"]))
    return flags


def filter_corpus(
    clips: Sequence[ClipRecord], assumption_flags: Iterable[tuple[str, str]]
) -> tuple[list[ClipRecord], list[AssumptionReport]]:
    """Drop clips flagged by the human assumption review.

    ``assumption_flags`` holds (vid, violation-code) pairs. Returns the kept
    clips (same objects, order preserved) and one report per input clip;
    |kept| + |failed reports| == |input|.

    Raises:
        ValidationError: a flag references an unknown vid or an unknown code.
    """
    known = {clip.vid for clip in clips}
    violations: dict[str, list[str]] = {}
    unknown_ids = []
    for vid, code in assumption_flags:
        if code not in ASSUMPTION_CODES:
            raise ValidationError(
                f"unknown violation code {code!r}; expected one of {ASSUMPTION_CODES}"
            )
        if vid not in known:
            unknown_ids.append(vid)
            continue
        violations.setdefault(vid, []).append(code)
    if unknown_ids:
        raise ValidationError(f"assumption flags reference unknown vids: {sorted(set(unknown_ids))}")

    kept: list[ClipRecord] = []
    reports: list[AssumptionReport] = []
    for clip in clips:
        codes = tuple(dict.fromkeys(violations.get(clip.vid, ())))
        report = AssumptionReport(vid=clip.vid, passed=not codes, violated_assumptions=codes)
        reports.append(report)
        if report.passed:
            kept.append(clip)
    return kept, reports


# ---------------------------------------------------------------------------
# manifest persistence
# ---------------------------------------------------------------------------


def _clip_to_json(clip: ClipRecord, base: Path) -> dict:
    def _rel(p: str) -> str:
        try:
            return str(Path(p).relative_to(base))
        except ValueError:
            return p

    return {
        "vid": clip.vid,
        "video_path": _rel(clip.video_path),
        "gazemap_path": _rel(clip.gazemap_path),
        "speed": list(clip.speed),
        "course": list(clip.course),
        "message": clip.message,
        "necessity_score": clip.necessity_score,
        "explanation_interval": (
            list(clip.explanation_interval) if clip.explanation_interval else None
        ),
    }


def _clip_from_json(entry: dict, base: Path) -> ClipRecord:
    def _abs(p: str) -> str:
        path = Path(p)
        return str(path if path.is_absolute() else base / path)

    required = {
        "vid", "video_path", "gazemap_path", "speed", "course",
        "message", "necessity_score", "explanation_interval",
    }
    missing = required - entry.keys()
    if missing:
        raise ValidationError(f"manifest entry missing fields: {sorted(missing)}")
    interval = entry["explanation_interval"]
    clip = ClipRecord(
        vid=entry["vid"],
        video_path=_abs(entry["video_path"]),
        gazemap_path=_abs(entry["gazemap_path"]),
        speed=tuple(entry["speed"]),
        course=tuple(entry["course"]),
        message=entry["message"],
        necessity_score=entry["necessity_score"],
        explanation_interval=tuple(interval) if interval is not None else None,
    )
    clip.validate()
    return clip


def save_manifest(clips: Sequence[ClipRecord], path: str | Path) -> None:
    """Persist the corpus as a versioned UTF-8 JSON manifest.

    Media paths under the manifest's directory are stored relative to it.
    """
    path = Path(path)
    seen: set[str] = set()
    for clip in clips:
        clip.validate()
        if clip.vid in seen:
            raise ValidationError(f"duplicate vid in corpus: {clip.vid}")
        seen.add(clip.vid)
    base = path.resolve().parent
    doc = {
        "schema": MANIFEST_SCHEMA,
        "clips": [_clip_to_json(clip, base) for clip in clips],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(doc, handle, indent=1)
        handle.write("\n")


def load_manifest(path: str | Path) -> list[ClipRecord]:
    """Load and validate a corpus manifest; relative media paths are resolved
    against the manifest's directory."""
    path = Path(path)
    with open(path, encoding="utf-8") as handle:
        doc = json.load(handle)
    schema = doc.get("schema")
    if schema != MANIFEST_SCHEMA:
        raise ManifestVersionError(
            f"{path}: manifest schema {schema!r} != supported {MANIFEST_SCHEMA!r}"
        )
    base = path.resolve().parent
    clips = [_clip_from_json(entry, base) for entry in doc["clips"]]
    seen: set[str] = set()
    for clip in clips:
        if clip.vid in seen:
            raise ValidationError(f"duplicate vid in manifest: {clip.vid}")
        seen.add(clip.vid)
    return clips
