"""HTTP surface of the edit session.

GET  /api/session            current SessionState
POST /api/edit               start an instruction-driven PDU run
POST /api/omega              set the render-time detail weight
GET  /api/preview            PNG preview (frame, omega) from the snapshot
GET  /api/report             latest PduReport JSON
POST /api/round/advance      confirm the next round (manual-confirm mode)
GET  /api/events             server-sent stream of SessionState changes

Errors are 4xx with {"error": {"code", "message"}} bodies.
"""

from __future__ import annotations

import json
import queue
from pathlib import Path

from fastapi import FastAPI, Query, Request
from fastapi.responses import JSONResponse, Response, StreamingResponse
from fastapi.staticfiles import StaticFiles

from ..config import RunConfig
from ..pdu import PduSchedule
from .models import EditStartRequest, OmegaRequest, SessionStateModel
from .session import IllegalPhase, SessionManager


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse({"error": {"code": code, "message": message}}, status_code=status)


def create_app(config: RunConfig, frontend_dir=None) -> FastAPI:
    app = FastAPI(title="talker-session")
    session = SessionManager(config)
    app.state.session = session

    @app.get("/api/session", response_model=SessionStateModel)
    def get_session():
        return session.state

    @app.post("/api/edit", response_model=SessionStateModel, status_code=202)
    def start_edit(body: EditStartRequest):
        schedule = None
        if body.schedule is not None:
            try:
                schedule = PduSchedule(
                    tuple((float(s), int(t)) for s, t in body.schedule),
                    body.epochs_per_round or config.schedule.epochs_per_round or 75,
                    body.instruction,
                    body.subset_size or config.schedule.subset_size,
                )
            except ValueError as exc:
                return _error(400, "bad_schedule", str(exc))
        elif body.schedule_preset is not None:
            from ..pdu import make_default_schedule

            try:
                schedule = make_default_schedule(body.schedule_preset)
            except ValueError as exc:
                return _error(400, "bad_schedule", str(exc))
            if body.epochs_per_round:
                schedule = PduSchedule(schedule.rounds, body.epochs_per_round)
            schedule = schedule.with_instruction(
                body.instruction, body.subset_size or config.schedule.subset_size
            )
        try:
            session.start_edit(body.instruction, schedule)
        except IllegalPhase as exc:
            return _error(409, "illegal_phase", str(exc))
        return session.state

    @app.post("/api/omega", response_model=SessionStateModel)
    def set_omega(body: OmegaRequest):
        try:
            session.set_omega(body.omega)
        except ValueError as exc:
            return _error(400, "bad_omega", str(exc))
        return session.state

    @app.get("/api/preview")
    def preview(frame: int = Query(default=0), omega: float | None = Query(default=None)):
        try:
            png = session.preview_png(frame, omega)
        except KeyError as exc:
            return _error(404, "unknown_frame", str(exc))
        except ValueError as exc:
            return _error(400, "bad_omega", str(exc))
        except IllegalPhase as exc:
            return _error(409, "no_snapshot", str(exc))
        return Response(content=png, media_type="image/png")

    @app.get("/api/report")
    def report():
        payload = session.report_json()
        if payload is None:
            return _error(404, "no_report", "no edit run has completed yet")
        return JSONResponse(payload)

    @app.post("/api/round/advance", response_model=SessionStateModel)
    def advance():
        try:
            session.advance_round()
        except IllegalPhase as exc:
            return _error(409, "no_barrier", str(exc))
        return session.state

    @app.get("/api/events")
    async def events(request: Request):
        q = session.subscribe()

        async def stream():
            # terminates via task cancellation when the client disconnects
            import anyio

            try:
                while True:
                    try:
                        item = q.get_nowait()
                    except queue.Empty:
                        await anyio.sleep(0.05)
                        continue
                    yield f"event: state\ndata: {json.dumps(item)}\n\n"
            finally:
                session.unsubscribe(q)

        return StreamingResponse(stream(), media_type="text/event-stream")

    root = Path(frontend_dir) if frontend_dir else Path("frontend/dist")
    if root.is_dir():
        app.mount("/", StaticFiles(directory=str(root), html=True), name="ui")

    return app
