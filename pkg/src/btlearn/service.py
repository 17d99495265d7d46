"""HTTP facade over the session manager.

Request/response endpoints map one-to-one onto SessionManager operations;
progress streams out over server-sent events.  This is the only surface the
browser UI consumes.
"""

from __future__ import annotations

import json
import queue
from pathlib import Path
from typing import Any

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import FileResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from . import lfd
from .assets import list_scenarios
from .errors import (
    BtLearnError,
    ConfigError,
    InvalidAction,
    InvalidPhaseTransition,
    NoAchievingAction,
    UnknownScenario,
    UnknownSession,
)
from .session import DemoFlags, SessionManager


class CreateSession(BaseModel):
    scenario: str
    configs: dict[str, Any] = Field(default_factory=dict)


class StartGp(BaseModel):
    generations: int


class DemoRequest(BaseModel):
    # either a complete demonstration document, or a script to record here
    demonstration: dict[str, Any] | None = None
    script: list[dict[str, Any]] | None = None
    initial: dict[str, Any] | None = None
    seed: int | None = None
    flags: dict[str, Any] = Field(default_factory=dict)


class RunTree(BaseModel):
    genome: str | None = None
    max_ticks: int | None = None


def _http_error(e: BtLearnError) -> HTTPException:
    if isinstance(e, (UnknownSession, UnknownScenario)):
        return HTTPException(status_code=404, detail=str(e))
    if isinstance(e, InvalidPhaseTransition):
        return HTTPException(status_code=409, detail=str(e))
    if isinstance(e, (InvalidAction, NoAchievingAction, ConfigError)):
        return HTTPException(status_code=422, detail=str(e))
    return HTTPException(status_code=400, detail=str(e))


def create_app(manager: SessionManager, frontend_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="btlearn service")

    @app.exception_handler(BtLearnError)
    async def _handle(request: Request, exc: BtLearnError):
        raise _http_error(exc)

    @app.get("/scenarios")
    def scenarios() -> dict[str, Any]:
        return {"scenarios": list_scenarios()}

    @app.post("/sessions")
    def create_session(body: CreateSession) -> dict[str, Any]:
        try:
            sid = manager.create_session(body.scenario, body.configs)
        except BtLearnError as e:
            raise _http_error(e)
        return {"id": sid}

    @app.get("/sessions")
    def sessions() -> dict[str, Any]:
        return {"sessions": manager.list_sessions()}

    @app.get("/sessions/{sid}")
    def describe(sid: str) -> dict[str, Any]:
        try:
            return manager.describe(sid)
        except BtLearnError as e:
            raise _http_error(e)

    @app.post("/sessions/{sid}/gp/start")
    def start(sid: str, body: StartGp) -> dict[str, Any]:
        try:
            manager.start_gp(sid, body.generations)
        except (BtLearnError, ValueError) as e:
            if isinstance(e, BtLearnError):
                raise _http_error(e)
            raise HTTPException(status_code=422, detail=str(e))
        return {"ok": True}

    @app.post("/sessions/{sid}/gp/pause")
    def pause(sid: str) -> dict[str, Any]:
        try:
            manager.pause_gp(sid)
        except BtLearnError as e:
            raise _http_error(e)
        return {"ok": True}

    @app.post("/sessions/{sid}/gp/resume")
    def resume(sid: str) -> dict[str, Any]:
        try:
            manager.resume_gp(sid)
        except BtLearnError as e:
            raise _http_error(e)
        return {"ok": True}

    @app.post("/sessions/{sid}/demos")
    def add_demo(sid: str, body: DemoRequest) -> dict[str, Any]:
        try:
            if body.demonstration is not None:
                demo = lfd.Demonstration.from_dict(body.demonstration)
            elif body.script is not None:
                demo = manager.record_demo_script(sid, body.script, body.initial, body.seed)
            else:
                raise HTTPException(status_code=422, detail="demonstration or script required")
            return manager.add_demonstration(sid, demo, DemoFlags.from_dict(body.flags))
        except BtLearnError as e:
            raise _http_error(e)

    @app.get("/sessions/{sid}/best-tree")
    def best_tree(sid: str) -> dict[str, Any]:
        try:
            return manager.get_best_tree(sid)
        except BtLearnError as e:
            raise _http_error(e)

    @app.get("/sessions/{sid}/history")
    def history(sid: str) -> dict[str, Any]:
        try:
            return {"history": manager.get_history(sid)}
        except BtLearnError as e:
            raise _http_error(e)

    @app.post("/sessions/{sid}/run-tree")
    def run_tree(sid: str, body: RunTree) -> dict[str, Any]:
        try:
            return manager.run_tree(sid, body.genome, body.max_ticks)
        except BtLearnError as e:
            raise _http_error(e)

    @app.get("/sessions/{sid}/events")
    def events(sid: str) -> StreamingResponse:
        try:
            manager.get(sid)
        except BtLearnError as e:
            raise _http_error(e)

        def stream():
            q = manager.subscribe(sid)
            try:
                # replay the log so late subscribers reconstruct the full view
                log = Path(manager.store) / sid / "events.jsonl"
                if log.exists():
                    for line in log.read_text().splitlines():
                        yield f"data: {line}\n\n"
                while True:
                    try:
                        event = q.get(timeout=1.0)
                    except queue.Empty:
                        yield ": keepalive\n\n"
                        continue
                    yield f"data: {json.dumps(event, sort_keys=True)}\n\n"
            finally:
                manager.unsubscribe(sid, q)

        return StreamingResponse(stream(), media_type="text/event-stream")

    if frontend_dir is not None and Path(frontend_dir).is_dir():
        front = Path(frontend_dir)

        @app.get("/")
        def index() -> FileResponse:
            return FileResponse(front / "index.html")

        app.mount("/static", StaticFiles(directory=front), name="static")

    return app
