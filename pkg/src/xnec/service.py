"""Annotation backend: serve clips, collect annotation events, export.

Persistence is an append-only JSONL event log, fsynced before every ack, so
an acked submission survives any crash; the in-memory view is the
last-write-wins materialization per (vid, annotator). Each annotator walks
the whole corpus once in a per-annotator seeded random order; resubmission
(fine-tuning) replaces the prior event for that clip.
"""

from __future__ import annotations

import csv
import io
import json
import os
import random
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, JSONResponse, Response
from pydantic import BaseModel

from .aggregate import AnnotationEvent, aggregate_clip, group_events
from .corpus import ClipRecord, load_manifest, save_manifest
from .errors import ValidationError

MIN_EVENTS_FOR_AGGREGATION = 3
DEFAULT_EXPECTED_ANNOTATORS = 5


@dataclass(frozen=True)
class ServiceConfig:
    corpus_path: str
    log_path: str
    seed: int = 0
    annotators: tuple[str, ...] | None = None  # None: open registration
    port: int = 8319
    ui_dir: str | None = None  # static front-end mounted at /ui when set

    @staticmethod
    def from_sources(config_file: str | Path | None = None, **overrides) -> "ServiceConfig":
        """Config file (JSON) plus XNEC_* environment overrides plus kwargs."""
        data: dict = {}
        if config_file:
            with open(config_file, encoding="utf-8") as handle:
                data.update(json.load(handle))
        env_map = {
            "XNEC_CORPUS": "corpus_path",
            "XNEC_LOG": "log_path",
            "XNEC_SEED": "seed",
            "XNEC_PORT": "port",
            "XNEC_ANNOTATORS": "annotators",
            "XNEC_UI_DIR": "ui_dir",
        }
        for env_name, key in env_map.items():
            if env_name in os.environ:
                data[key] = os.environ[env_name]
        data.update({k: v for k, v in overrides.items() if v is not None})
        if isinstance(data.get("seed"), str):
            data["seed"] = int(data["seed"])
        if isinstance(data.get("port"), str):
            data["port"] = int(data["port"])
        annotators = data.get("annotators")
        if isinstance(annotators, str):
            data["annotators"] = tuple(a for a in annotators.split(",") if a)
        elif isinstance(annotators, list):
            data["annotators"] = tuple(annotators)
        return ServiceConfig(**data)


class EventLog:
    """Append-only, crash-safe annotation store.

    Every append is flushed and fsynced before it returns (the ack), and a
    single lock serializes writers, so per-key replacement is linearizable.
    A torn final line from a mid-write crash is ignored on replay.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._events: dict[tuple[str, str], AnnotationEvent] = {}
        self._replay()

    def _replay(self) -> None:
        if not self.path.exists():
            return
        with open(self.path, encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                try:
                    raw = json.loads(line)
                    event = AnnotationEvent(
                        vid=raw["vid"],
                        annotator_id=raw["annotator_id"],
                        moment=float(raw["moment"]),
                        score=float(raw["score"]),
                        explanation=raw["explanation"],
                    )
                except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                    continue  # torn tail write; everything acked is intact
                self._events[(event.vid, event.annotator_id)] = event

    def append(self, event: AnnotationEvent) -> None:
        payload = json.dumps(
            {
                "vid": event.vid,
                "annotator_id": event.annotator_id,
                "moment": event.moment,
                "score": event.score,
                "explanation": event.explanation,
            },
            separators=(",", ":"),
        )
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as handle:
                handle.write(payload + "\n")
                handle.flush()
                os.fsync(handle.fileno())
            self._events[(event.vid, event.annotator_id)] = event

    def get(self, vid: str, annotator_id: str) -> AnnotationEvent | None:
        with self._lock:
            return self._events.get((vid, annotator_id))

    def snapshot(self) -> list[AnnotationEvent]:
        with self._lock:
            return sorted(
                self._events.values(), key=lambda e: (e.vid, e.annotator_id)
            )


def annotator_queue(vids: Sequence[str], annotator_id: str, seed: int) -> list[str]:
    """Per-annotator clip order: every clip exactly once, seeded shuffle."""
    order = sorted(vids)
    random.Random(f"{seed}:{annotator_id}").shuffle(order)
    return order


def export_rows(events: Sequence[AnnotationEvent]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(["vid", "annotator_id", "moment", "score", "explanation"])
    for e in events:
        writer.writerow([e.vid, e.annotator_id, repr(e.moment), repr(e.score), e.explanation])
    return buffer.getvalue()


def aggregate_corpus(
    clips: Sequence[ClipRecord], events: Sequence[AnnotationEvent], expected: int
) -> tuple[list[ClipRecord], bool]:
    """Label every clip that has enough annotations (>= 3); others pass
    through unlabeled. The complete flag means every clip reached the
    expected annotator count."""
    grouped = group_events(events)
    labeled: list[ClipRecord] = []
    for clip in clips:
        clip_events = grouped.get(clip.vid, [])
        if len(clip_events) >= MIN_EVENTS_FOR_AGGREGATION:
            label = aggregate_clip(clip_events)
            labeled.append(
                clip.with_label(label.message, label.necessity_score, label.interval)
            )
        else:
            labeled.append(clip)
    complete = all(len(grouped.get(clip.vid, [])) >= expected for clip in clips)
    return labeled, complete


class SubmissionBody(BaseModel):
    vid: str
    annotator_id: str
    moment: float
    score: float
    explanation: str


def _field_error(field: str, message: str, status: int = 422) -> HTTPException:
    return HTTPException(status_code=status, detail={"field": field, "message": message})


def create_app(config: ServiceConfig) -> FastAPI:
    clips = load_manifest(config.corpus_path)
    by_vid = {c.vid: c for c in clips}
    vids = [c.vid for c in clips]
    store = EventLog(config.log_path)
    expected = (
        len(config.annotators) if config.annotators else DEFAULT_EXPECTED_ANNOTATORS
    )

    app = FastAPI(title="xnec annotation service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.store = store
    app.state.config = config
    if config.ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=config.ui_dir, html=True), name="ui")

    def _check_annotator(annotator_id: str) -> None:
        if config.annotators is not None and annotator_id not in config.annotators:
            raise HTTPException(status_code=404, detail=f"unknown annotator {annotator_id!r}")

    def _next_vid(annotator_id: str) -> str | None:
        for vid in annotator_queue(vids, annotator_id, config.seed):
            if store.get(vid, annotator_id) is None:
                return vid
        return None

    def _validate(body: SubmissionBody) -> AnnotationEvent:
        clip = by_vid.get(body.vid)
        if clip is None:
            raise HTTPException(status_code=404, detail=f"unknown vid {body.vid!r}")
        if not 0.0 <= body.score <= 1.0:
            raise _field_error("score", f"score {body.score} outside [0, 1]")
        if not 0.0 <= body.moment <= clip.duration + 1e-9:
            raise _field_error("moment", f"moment {body.moment} outside [0, {clip.duration}]")
        if not body.explanation.strip():
            raise _field_error("explanation", "explanation must be non-empty")
        return AnnotationEvent(
            vid=body.vid,
            annotator_id=body.annotator_id,
            moment=body.moment,
            score=body.score,
            explanation=body.explanation,
        )

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "clips": len(vids)}

    @app.get("/session/{annotator_id}/next")
    def next_clip(annotator_id: str) -> dict:
        _check_annotator(annotator_id)
        done_count = sum(
            1 for vid in vids if store.get(vid, annotator_id) is not None
        )
        vid = _next_vid(annotator_id)
        if vid is None:
            return {"done": True, "progress": done_count, "total": len(vids)}
        clip = by_vid[vid]
        return {
            "done": False,
            "vid": vid,
            "duration": clip.duration,
            "video_url": f"/clips/{vid}/video",
            "progress": done_count,
            "total": len(vids),
        }

    @app.post("/annotations", status_code=201)
    def submit(body: SubmissionBody) -> dict:
        _check_annotator(body.annotator_id)
        event = _validate(body)
        current = _next_vid(body.annotator_id)
        if current != body.vid:
            raise HTTPException(
                status_code=409,
                detail=f"annotator {body.annotator_id!r} is assigned {current!r}, not {body.vid!r}",
            )
        store.append(event)  # durable before the ack below
        return {"acked": True, "vid": event.vid, "annotator_id": event.annotator_id}

    @app.put("/annotations/{vid}/{annotator_id}")
    def fine_tune(vid: str, annotator_id: str, body: SubmissionBody) -> dict:
        _check_annotator(annotator_id)
        if body.vid != vid or body.annotator_id != annotator_id:
            raise _field_error("vid", "body does not match the path", status=409)
        if store.get(vid, annotator_id) is None:
            raise HTTPException(status_code=404, detail="nothing to fine-tune; submit first")
        event = _validate(body)
        store.append(event)
        return {"acked": True, "vid": vid, "annotator_id": annotator_id, "replaced": True}

    @app.get("/export.csv")
    def export_csv() -> Response:
        events = store.snapshot()
        grouped = group_events(events)
        complete = all(len(grouped.get(vid, [])) >= expected for vid in vids)
        return Response(
            content=export_rows(events),
            media_type="text/csv",
            headers={"X-Export-Complete": "1" if complete else "0"},
        )

    @app.get("/export/manifest.json")
    def export_manifest() -> JSONResponse:
        labeled, complete = aggregate_corpus(clips, store.snapshot(), expected)
        import tempfile

        with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as tmp:
            tmp_path = tmp.name
        try:
            save_manifest(labeled, tmp_path)
            with open(tmp_path, encoding="utf-8") as handle:
                doc = json.load(handle)
        finally:
            os.unlink(tmp_path)
        doc["complete"] = complete
        doc["expected_annotators"] = expected
        return JSONResponse(doc)

    @app.get("/clips/{vid}/video")
    def clip_video(vid: str) -> FileResponse:
        clip = by_vid.get(vid)
        if clip is None:
            raise HTTPException(status_code=404, detail=f"unknown vid {vid!r}")
        if not Path(clip.video_path).exists():
            raise HTTPException(status_code=404, detail=f"media missing for {vid!r}")
        return FileResponse(clip.video_path)

    return app


def run_service(config: ServiceConfig) -> None:
    import uvicorn

    uvicorn.run(create_app(config), host="127.0.0.1", port=config.port, log_level="warning")
