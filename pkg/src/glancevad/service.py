"""Local annotation service: video list, range-capable streaming, glance CRUD
with write-through persistence, and export of the full glance file.
"""

from __future__ import annotations

import datetime
import json
import mimetypes
import threading
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.encoders import jsonable_encoder
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel
from starlette.exceptions import HTTPException as StarletteHTTPException

from .dataio import DatasetManifest, GlanceRecord, load_glances, save_glances

VIDEO_SUFFIXES = (".mp4", ".webm", ".mkv", ".avi", ".mov")


class ApiError(Exception):
    def __init__(self, status_code: int, error: str, detail: str) -> None:
        super().__init__(detail)
        self.status_code = status_code
        self.error = error
        self.detail = detail


class GlanceStore:
    """In-memory glance records persisted to disk on every mutation."""

    def __init__(self, manifest: DatasetManifest, path: str | Path, annotator: str = "local"):
        self.manifest = manifest
        self.path = Path(path)
        self.annotator = annotator
        self._lock = threading.Lock()
        if self.path.exists():
            self.records = load_glances(self.path, manifest)
        else:
            self.records = {}

    def list_for(self, video_id: str) -> list[GlanceRecord]:
        with self._lock:
            return list(self.records.get(video_id, []))

    def add(self, video_id: str, frame: int) -> list[GlanceRecord]:
        entry = self.manifest.by_id(video_id)
        if not 0 <= frame < entry.total_frames:
            raise ApiError(
                422,
                "frame_out_of_range",
                f"frame {frame} out of range [0, {entry.total_frames}) for {video_id}",
            )
        with self._lock:
            existing = self.records.setdefault(video_id, [])
            if any(r.frame == frame for r in existing):
                raise ApiError(
                    422, "duplicate_frame", f"frame {frame} already annotated for {video_id}"
                )
            stamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
            existing.append(
                GlanceRecord(frame=frame, wall_clock_annotated_at=stamp, annotator=self.annotator)
            )
            existing.sort(key=lambda r: r.frame)
            save_glances(self.path, self.records)
            return list(existing)

    def delete(self, video_id: str, frame: int) -> None:
        self.manifest.by_id(video_id)
        with self._lock:
            existing = self.records.get(video_id, [])
            kept = [r for r in existing if r.frame != frame]
            if len(kept) == len(existing):
                raise ApiError(
                    404, "glance_not_found", f"no glance at frame {frame} for {video_id}"
                )
            self.records[video_id] = kept
            save_glances(self.path, self.records)

    def export(self) -> list[dict]:
        with self._lock:
            return [
                {
                    "video_id": vid,
                    "glances": [r.to_dict() for r in recs],
                    "schema_version": 1,
                }
                for vid, recs in sorted(self.records.items())
            ]


def _video_record(store: GlanceStore, entry) -> dict:
    return {
        "video_id": entry.video_id,
        "duration_s": entry.total_frames / entry.fps,
        "total_frames": entry.total_frames,
        "fps": entry.fps,
        "annotated_count": len(store.list_for(entry.video_id)),
    }


def _glance_payload(video_id: str, records: list[GlanceRecord]) -> dict:
    return {
        "video_id": video_id,
        "glances": [r.to_dict() for r in records],
        "schema_version": 1,
    }


def _find_video_file(videos_dir: Path | None, video_id: str) -> Path | None:
    if videos_dir is None:
        return None
    direct = videos_dir / video_id
    if direct.is_file():
        return direct
    for suffix in VIDEO_SUFFIXES:
        candidate = videos_dir / f"{video_id}{suffix}"
        if candidate.is_file():
            return candidate
    return None


def _range_response(path: Path, range_header: str | None) -> Response:
    size = path.stat().st_size
    media_type = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
    headers = {"Accept-Ranges": "bytes"}
    if range_header:
        unit, _, spec = range_header.partition("=")
        start_s, _, end_s = spec.partition("-")
        if unit.strip() != "bytes" or (not start_s and not end_s):
            raise ApiError(416, "bad_range", f"unsupported range {range_header!r}")
        if start_s:
            start = int(start_s)
            end = min(int(end_s), size - 1) if end_s else size - 1
        else:
            # suffix form: last N bytes
            start = max(size - int(end_s), 0)
            end = size - 1
        if start > end or start >= size:
            raise ApiError(416, "bad_range", f"range {range_header!r} outside 0-{size - 1}")
        with open(path, "rb") as fh:
            fh.seek(start)
            chunk = fh.read(end - start + 1)
        headers["Content-Range"] = f"bytes {start}-{end}/{size}"
        return Response(chunk, status_code=206, headers=headers, media_type=media_type)
    with open(path, "rb") as fh:
        return Response(fh.read(), status_code=200, headers=headers, media_type=media_type)


class GlancePost(BaseModel):
    frame: int


def packaged_ui_dir() -> Path | None:
    candidate = Path(__file__).parent / "ui"
    return candidate if (candidate / "index.html").is_file() else None


def create_app(
    manifest: DatasetManifest,
    glances_path: str | Path,
    videos_dir: str | Path | None = None,
    ui_dir: str | Path | None = None,
    annotator: str = "local",
) -> FastAPI:
    store = GlanceStore(manifest, glances_path, annotator=annotator)
    videos_root = Path(videos_dir) if videos_dir else None
    app = FastAPI(title="glance annotation service")
    app.state.store = store

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError) -> JSONResponse:
        return JSONResponse(
            {"error": exc.error, "detail": exc.detail}, status_code=exc.status_code
        )

    @app.exception_handler(RequestValidationError)
    async def _validation_error(_req: Request, exc: RequestValidationError) -> JSONResponse:
        return JSONResponse(
            {"error": "validation_error", "detail": jsonable_encoder(exc.errors())},
            status_code=422,
        )

    @app.exception_handler(StarletteHTTPException)
    async def _http_error(_req: Request, exc: StarletteHTTPException) -> JSONResponse:
        return JSONResponse(
            {"error": "http_error", "detail": str(exc.detail)}, status_code=exc.status_code
        )

    def _entry_or_404(video_id: str):
        for entry in manifest.videos:
            if entry.video_id == video_id:
                return entry
        raise ApiError(404, "unknown_video", f"no video {video_id!r} in manifest")

    @app.get("/api/videos")
    async def list_videos() -> list[dict]:
        return [_video_record(store, e) for e in manifest.videos]

    @app.get("/api/videos/{video_id}/stream")
    async def stream_video(video_id: str, request: Request) -> Response:
        _entry_or_404(video_id)
        path = _find_video_file(videos_root, video_id)
        if path is None:
            raise ApiError(404, "no_video_file", f"no media file found for {video_id!r}")
        return _range_response(path, request.headers.get("range"))

    @app.get("/api/videos/{video_id}/glances")
    async def get_glances(video_id: str) -> dict:
        _entry_or_404(video_id)
        return _glance_payload(video_id, store.list_for(video_id))

    @app.post("/api/videos/{video_id}/glances", status_code=201)
    async def post_glance(video_id: str, body: GlancePost) -> dict:
        _entry_or_404(video_id)
        records = store.add(video_id, body.frame)
        return _glance_payload(video_id, records)

    @app.delete("/api/videos/{video_id}/glances/{frame}", status_code=204)
    async def delete_glance(video_id: str, frame: int) -> Response:
        _entry_or_404(video_id)
        store.delete(video_id, frame)
        return Response(status_code=204)

    @app.get("/api/export")
    async def export() -> Response:
        payload = json.dumps(store.export(), sort_keys=True, indent=2) + "\n"
        return Response(
            payload,
            media_type="application/json",
            headers={"Content-Disposition": 'attachment; filename="glances.json"'},
        )

    resolved_ui = Path(ui_dir) if ui_dir else packaged_ui_dir()
    if resolved_ui is not None and (resolved_ui / "index.html").is_file():
        app.mount("/", StaticFiles(directory=resolved_ui, html=True), name="ui")
    else:

        @app.get("/")
        async def index() -> dict:
            return {"detail": "annotation API is running; no UI assets bundled"}

    return app
