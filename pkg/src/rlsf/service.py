"""HTTP feedback service consumed by the labeling UI.

The hub is the single-writer state shared between a (paused) trainer and the
web frontend: the trainer enqueues a round's queries and blocks; the UI
polls pending queries, fetches payloads, and posts per-segment labels. A
query is answered exactly once; the first complete answer wins.
"""

from __future__ import annotations

import threading

from fastapi import FastAPI, HTTPException, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .feedback import FeedbackAnswer, FeedbackQuery
from .types import canonical_json


class FeedbackHub:
    """Thread-safe query/answer exchange for one run."""

    def __init__(self, run_id: str = ""):
        self.run_id = run_id
        self._lock = threading.Lock()
        self._pending: dict[str, FeedbackQuery] = {}
        self._answers: dict[str, FeedbackAnswer] = {}
        self._round = -1
        self._total_queries = 0
        # optional callback invoked with each accepted FeedbackAnswer
        # (standalone serving appends straight to the run's feedback log)
        self.answer_sink = None

    def enqueue(self, queries: list[FeedbackQuery]) -> None:
        with self._lock:
            for q in queries:
                if q.query_id in self._pending or q.query_id in self._answers:
                    raise ValueError(f"duplicate query id {q.query_id!r}")
                self._pending[q.query_id] = q
            if queries:
                self._round = queries[0].round_index
            self._total_queries += len(queries)

    def pending_ids(self) -> list[str]:
        with self._lock:
            return list(self._pending.keys())

    def get_query(self, query_id: str) -> FeedbackQuery | None:
        with self._lock:
            return self._pending.get(query_id)

    def post_answer(self, query_id: str, labels: list[int]) -> tuple[int, str]:
        """Returns (http_status, message). 200 accepted, 404 unknown,
        409 duplicate, 422 label mismatch."""
        with self._lock:
            if query_id in self._answers:
                return 409, "query already answered; first answer wins"
            query = self._pending.get(query_id)
            if query is None:
                return 404, "unknown query id"
            if len(labels) != len(query.segments):
                return 422, f"expected {len(query.segments)} labels, got {len(labels)}"
            if any(lbl not in (0, 1) for lbl in labels):
                return 422, "labels must be 0 or 1"
            self._answers[query_id] = FeedbackAnswer(query_id, tuple(labels))
            del self._pending[query_id]
            return 200, "accepted"

    def all_answered(self) -> bool:
        with self._lock:
            return not self._pending

    def clear_pending(self) -> None:
        with self._lock:
            self._pending.clear()

    def take_answers(self) -> list[FeedbackAnswer]:
        """Drain collected answers, in query-issue order."""
        with self._lock:
            answers = list(self._answers.values())
            self._answers.clear()
            return answers

    def status(self) -> dict:
        with self._lock:
            return {
                "run_id": self.run_id,
                "round": self._round,
                "pending": len(self._pending),
                "answered": len(self._answers),
                "total_queries": self._total_queries,
                "waiting_for_labels": bool(self._pending),
            }


class LabelsBody(BaseModel):
    labels: list[int]


def build_app(hub: FeedbackHub, static_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="rlsf feedback service")

    @app.get("/api/status")
    def status():
        return hub.status()

    @app.get("/api/queries")
    def list_queries():
        return {"pending": hub.pending_ids()}

    @app.get("/api/queries/{query_id}")
    def get_query(query_id: str):
        query = hub.get_query(query_id)
        if query is None:
            raise HTTPException(status_code=404, detail="unknown query id")
        # canonical serialization so exports and fetches are byte-identical
        return Response(content=canonical_json(query.payload()), media_type="application/json")

    @app.post("/api/queries/{query_id}/labels")
    def post_labels(query_id: str, body: LabelsBody):
        code, message = hub.post_answer(query_id, body.labels)
        if code != 200:
            raise HTTPException(status_code=code, detail=message)
        if hub.answer_sink is not None:
            hub.answer_sink(FeedbackAnswer(query_id, tuple(body.labels)))
        return {"accepted": True, "query_id": query_id}

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app


def serve(hub: FeedbackHub, host: str = "127.0.0.1", port: int = 8008,
          static_dir: str | None = None, in_thread: bool = False):
    """Run the service; with ``in_thread`` returns the daemon thread."""
    import uvicorn

    config = uvicorn.Config(build_app(hub, static_dir), host=host, port=port, log_level="warning")
    server = uvicorn.Server(config)
    if in_thread:
        thread = threading.Thread(target=server.run, daemon=True, name="rlsf-feedback-service")
        thread.start()
        return server, thread
    server.run()
    return server, None
