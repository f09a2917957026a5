"""HTTP facade: chat, knowledge editing, control configuration, traces,
ratings, and analytics for the operator console and programmatic clients.

Persistence is deliberately boring: traces and ratings are append-only
newline-delimited JSON files under the data directory, serialized through a
single writer lock, so the analytics summary can always be recomputed from
the raw logs. Editor endpoints are protected by one static bearer token from
the environment (CTRLBOT_TOKEN); when it is unset the control plane is open,
which is only sensible on a developer machine.
"""

from __future__ import annotations

import json
import os
import threading
import time
from pathlib import Path
from typing import Optional

from fastapi import Body, FastAPI, Header, Query, Request
from fastapi.exceptions import HTTPException, RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from . import knowledge
from .control import ControlConfig, Engine, RoutePath, control_level, trace_to_dict
from .errors import EmptyBody, InvalidConfig, UnknownDocument

TOKEN_ENV = "CTRLBOT_TOKEN"
END_USER_RATING_LIMIT = 5  # per session; editors are not limited

_STATUS_LABELS = {
    400: "bad_request", 401: "unauthorized", 404: "not_found",
    409: "conflict", 422: "unprocessable", 429: "too_many_requests",
    503: "unavailable",
}


class AppendLog:
    """Append-only JSONL log with an in-memory mirror."""

    def __init__(self, path: Optional[Path]):
        self.path = path
        self.records: list[dict] = []
        self._lock = threading.Lock()
        if path is not None and path.exists():
            with path.open(encoding="utf-8") as handle:
                for line in handle:
                    if line.strip():
                        self.records.append(json.loads(line))

    def append(self, record: dict) -> None:
        with self._lock:
            self.records.append(record)
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as handle:
                    handle.write(json.dumps(record, ensure_ascii=False) + "\n")

    def snapshot(self) -> list[dict]:
        with self._lock:
            return list(self.records)


def compute_analytics(traces: list[dict], ratings: list[dict],
                      t_from: Optional[float], t_to: Optional[float]) -> dict:
    """Summary recomputed from raw logs every call — no cached drift."""

    def in_window(record: dict) -> bool:
        ts = record.get("timestamp", 0.0)
        if t_from is not None and ts < t_from:
            return False
        if t_to is not None and ts > t_to:
            return False
        return True

    traces = [r for r in traces if in_window(r)]
    ratings = [r for r in ratings if in_window(r)]
    by_path = {path.value: 0 for path in RoutePath}
    hedged = refusals = violations = 0
    for record in traces:
        trace = record["trace"]
        by_path[trace["path"]] = by_path.get(trace["path"], 0) + 1
        if trace.get("hedged"):
            hedged += 1
        if trace["path"] == RoutePath.REFUSAL.value:
            refusals += 1
        grounding = trace.get("grounding")
        if grounding is not None and not grounding.get("grounded", True):
            violations += 1
    rating_counts = {"good": {"client_editor": 0, "end_user": 0},
                     "bad": {"client_editor": 0, "end_user": 0}}
    for record in ratings:
        verdict = record.get("verdict")
        rater = record.get("rater")
        if verdict in rating_counts and rater in rating_counts[verdict]:
            rating_counts[verdict][rater] += 1
    return {
        "window": {"from": t_from, "to": t_to},
        "total_turns": len(traces),
        "turns_by_path": by_path,
        "hedged_answers": hedged,
        "refusals": refusals,
        "grounding_violations": violations,
        "ratings": rating_counts,
    }


def create_app(engine: Optional[Engine] = None, data_dir: Optional[str | Path] = None,
               ui_dir: Optional[str | Path] = None,
               clock=time.time) -> FastAPI:
    app = FastAPI(title="ctrlbot", docs_url=None, redoc_url=None)
    data_path = Path(data_dir) if data_dir else None
    traces = AppendLog(data_path / "traces.jsonl" if data_path else None)
    ratings = AppendLog(data_path / "ratings.jsonl" if data_path else None)
    reindex_lock = threading.Lock()
    rating_counts_by_session: dict[str, int] = {}

    app.state.engine = engine
    app.state.traces = traces
    app.state.ratings = ratings

    @app.exception_handler(HTTPException)
    async def _http_error(_request: Request, exc: HTTPException):
        label = _STATUS_LABELS.get(exc.status_code, "error")
        return JSONResponse(status_code=exc.status_code,
                            content={"error": label, "detail": str(exc.detail)})

    @app.exception_handler(RequestValidationError)
    async def _validation_error(_request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=422,
                            content={"error": "unprocessable", "detail": str(exc)})

    def require_engine() -> Engine:
        if app.state.engine is None:
            raise HTTPException(503, "knowledge base not loaded")
        return app.state.engine

    def require_editor(authorization: Optional[str]) -> None:
        token = os.environ.get(TOKEN_ENV)
        if not token:
            return  # open control plane (dev mode)
        if authorization != f"Bearer {token}":
            raise HTTPException(401, "missing or invalid bearer token")

    # --- chat -----------------------------------------------------------

    @app.post("/chat")
    def chat(payload: dict = Body(...)):
        eng = require_engine()
        message = payload.get("message")
        if not isinstance(message, str) or not message.strip():
            raise HTTPException(400, "message must be a non-empty string")
        session_id = payload.get("session_id")
        sid, answer, trace = eng.chat(message, session_id)
        record = {
            "session_id": sid,
            "turn_id": trace.turn_id,
            "utterance": message,
            "answer": answer,
            "timestamp": clock(),
            "trace": trace_to_dict(trace),
        }
        traces.append(record)
        return {"session_id": sid, "answer": answer, "trace": record["trace"]}

    # --- control configuration -------------------------------------------

    @app.get("/config")
    def get_config():
        eng = require_engine()
        ordinal, label = control_level(eng.config)
        return {"config": eng.config.to_dict(), "ordinal": ordinal, "label": label}

    @app.put("/config")
    def put_config(payload: dict = Body(...),
                   authorization: Optional[str] = Header(default=None)):
        require_editor(authorization)
        eng = require_engine()
        try:
            config = ControlConfig.from_dict(payload)
        except InvalidConfig as exc:
            raise HTTPException(422, str(exc)) from exc
        ordinal, label = eng.set_config(config)
        return {"ordinal": ordinal, "label": label}

    # --- knowledge editing -------------------------------------------------

    @app.post("/documents")
    def post_document(payload: dict = Body(...),
                      authorization: Optional[str] = Header(default=None)):
        require_editor(authorization)
        eng = require_engine()
        title = payload.get("title", "")
        body = payload.get("body", "")
        metadata = payload.get("metadata") or {}
        try:
            doc_id = knowledge.ingest_document(eng.kb, title, body, metadata)
        except EmptyBody as exc:
            raise HTTPException(400, str(exc)) from exc
        return {"id": doc_id, "revision": 1}

    @app.patch("/documents/{doc_id}/annotations")
    def patch_annotations(doc_id: str, payload: dict = Body(...),
                          authorization: Optional[str] = Header(default=None)):
        require_editor(authorization)
        eng = require_engine()
        key = payload.get("key")
        value = payload.get("value")
        if not key or value is None:
            raise HTTPException(400, "annotation requires 'key' and 'value'")
        try:
            revision = knowledge.annotate_document(eng.kb, doc_id, str(key), str(value))
        except UnknownDocument as exc:
            raise HTTPException(404, f"unknown document {doc_id!r}") from exc
        return {"id": doc_id, "revision": revision}

    @app.delete("/documents/{doc_id}")
    def delete_document(doc_id: str,
                        authorization: Optional[str] = Header(default=None)):
        require_editor(authorization)
        eng = require_engine()
        try:
            knowledge.delete_document(eng.kb, doc_id)
        except UnknownDocument as exc:
            raise HTTPException(404, f"unknown document {doc_id!r}") from exc
        return {"deleted": doc_id}

    @app.post("/reindex")
    def reindex(authorization: Optional[str] = Header(default=None)):
        require_editor(authorization)
        eng = require_engine()
        if not reindex_lock.acquire(blocking=False):
            raise HTTPException(409, "reindex already running")
        try:
            index = eng.reindex()
            return {"documents": index.doc_count,
                    "vocabulary": len(index.vocabulary)}
        finally:
            reindex_lock.release()

    # --- ratings and analytics ------------------------------------------------

    @app.post("/ratings")
    def post_rating(payload: dict = Body(...)):
        session_id = payload.get("session_id")
        turn_id = payload.get("turn_id")
        rater = payload.get("rater", "end_user")
        verdict = payload.get("verdict")
        if rater not in ("client_editor", "end_user"):
            raise HTTPException(400, "rater must be client_editor or end_user")
        if verdict not in ("good", "bad"):
            raise HTTPException(400, "verdict must be good or bad")
        known = any(r["session_id"] == session_id and r["turn_id"] == turn_id
                    for r in traces.snapshot())
        if not known:
            raise HTTPException(404, "rating references an unknown trace")
        if rater == "end_user":
            count = rating_counts_by_session.get(session_id, 0)
            if count >= END_USER_RATING_LIMIT:
                raise HTTPException(429, "end-user rating limit reached for session")
            rating_counts_by_session[session_id] = count + 1
        record = {
            "session_id": session_id,
            "turn_id": turn_id,
            "rater": rater,
            "verdict": verdict,
            "comment": payload.get("comment"),
            "timestamp": clock(),
        }
        ratings.append(record)
        return {"recorded": True}

    @app.get("/analytics")
    def analytics(t_from: Optional[float] = Query(default=None, alias="from"),
                  t_to: Optional[float] = Query(default=None, alias="to")):
        return compute_analytics(traces.snapshot(), ratings.snapshot(), t_from, t_to)

    @app.get("/traces/{session_id}")
    def get_traces(session_id: str):
        return [r for r in traces.snapshot() if r["session_id"] == session_id]

    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
