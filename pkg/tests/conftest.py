from __future__ import annotations

import numpy as np
import pytest

from xnec.corpus import ClipRecord, write_media
from xnec.fixture import generate_labeled_manifest


def make_clip(
    vid: str = "c0",
    n_frames: int = 100,
    score: float | None = None,
    interval: tuple[float, float] | None = None,
    message: str | None = None,
) -> ClipRecord:
    """Lightweight in-memory clip; media paths are placeholders."""
    return ClipRecord(
        vid=vid,
        video_path=f"{vid}.mp4",
        gazemap_path=f"{vid}_gaze.mp4",
        speed=tuple(8.0 + 0.01 * i for i in range(n_frames)),
        course=tuple(90.0 for _ in range(n_frames)),
        message=message,
        necessity_score=score,
        explanation_interval=interval,
    )


def write_source_clip(
    tmp_path,
    vid: str = "src",
    duration_s: float = 10.0,
    fps: float = 30.0,
    size: int = 32,
    fmt: str = "mp4",
):
    """Write a synthetic source video + gaze pair at an arbitrary fps."""
    n = int(round(duration_s * fps))
    rng = np.random.default_rng(7)
    frames = rng.integers(0, 255, size=(n, size, size, 3), dtype=np.uint8)
    gaze = rng.integers(0, 255, size=(n, size, size), dtype=np.uint8)
    video = tmp_path / f"{vid}.{fmt}"
    gazemap = tmp_path / f"{vid}_gaze.{fmt}"
    write_media(video, frames, fps=fps)
    write_media(gazemap, gaze, fps=fps)
    return video, gazemap


@pytest.fixture(scope="session")
def labeled_manifest(tmp_path_factory):
    """Small labeled corpus with real 10 Hz media, shared across tests."""
    root = tmp_path_factory.mktemp("labeled_fixture")
    return generate_labeled_manifest(root, n_high=6, n_low=4, seed=11)
