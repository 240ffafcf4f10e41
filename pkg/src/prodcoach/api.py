"""REST boundary plus the newline-delimited JSON cue stream.

All endpoints live under /api/v1. Errors map onto a closed code set:
400 validation, 404 not_found, 409 state/busy, 502 upstream, 500 storage.
The cue stream is chunked NDJSON, resumable via the last-seen seq.
"""

from __future__ import annotations

import json
import time
from typing import Iterator, Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel

from .errors import CoachError
from .models import Session, UserAccount, rfc3339
from .sessions import CoachService

STREAM_POLL_SECONDS = 0.5


class RegisterBody(BaseModel):
    name: str
    major: str
    year: str
    coach_name: str
    coach_personality: str


class SpeechBody(BaseModel):
    enabled: bool


class StartSessionBody(BaseModel):
    user_id: str
    kind: str


class MessageBody(BaseModel):
    text: str


class ConfidenceBody(BaseModel):
    score: int


def _account_json(account: UserAccount) -> dict:
    return {
        "user_id": account.user_id,
        "name": account.name,
        "major": account.major,
        "year": account.year.value,
        "coach_name": account.coach_name,
        "coach_personality": account.coach_personality,
        "speech_enabled": account.speech_enabled,
    }


def _session_json(session: Session) -> dict:
    opening = session.turns[0] if session.turns else None
    return {
        "session_id": session.session_id,
        "user_id": session.user_id,
        "kind": session.kind,
        "started_at": rfc3339(session.started_at),
        "ended": session.ended,
        "coach_text": opening.text if opening else "",
    }


def create_app(service: CoachService) -> FastAPI:
    app = FastAPI(title="prodcoach", docs_url=None, redoc_url=None)

    @app.exception_handler(CoachError)
    async def coach_error_handler(request: Request, exc: CoachError):
        return JSONResponse(
            status_code=exc.http_status,
            content={"status": exc.http_status, "code": exc.code, "message": str(exc)},
        )

    @app.exception_handler(RequestValidationError)
    async def body_error_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400,
            content={"status": 400, "code": "validation", "message": str(exc.errors()[:3])},
        )

    @app.post("/api/v1/users", status_code=201)
    def register(body: RegisterBody):
        account = service.register_user(
            name=body.name,
            major=body.major,
            year=body.year,
            coach_name=body.coach_name,
            coach_personality=body.coach_personality,
        )
        return _account_json(account)

    @app.get("/api/v1/users/{user_id}")
    def get_user(user_id: str):
        return _account_json(service.account(user_id))

    @app.put("/api/v1/users/{user_id}/speech")
    def put_speech(user_id: str, body: SpeechBody):
        account = service.toggle_speech(user_id, body.enabled)
        return _account_json(account)

    @app.get("/api/v1/users/{user_id}/lessons")
    def get_lessons(user_id: str):
        return service.lessons_plan(user_id)

    @app.post("/api/v1/sessions", status_code=201)
    def start_session(body: StartSessionBody):
        session = service.start_session(body.user_id, body.kind)
        return _session_json(session)

    @app.post("/api/v1/sessions/{session_id}/messages")
    def post_message(session_id: str, body: MessageBody):
        reply, cues, ended = service.post_student_message(session_id, body.text)
        return {
            "reply": reply,
            "cues": [cue.to_json_dict() for cue in cues],
            "ended": ended,
        }

    @app.post("/api/v1/users/{user_id}/lessons/{lesson}/confidence")
    def post_confidence(user_id: str, lesson: str, body: ConfidenceBody):
        record = service.submit_confidence(user_id, lesson, body.score)
        return {
            "lesson": record.lesson.value,
            "status": record.status,
            "confidence": record.confidence,
        }

    @app.get("/api/v1/users/{user_id}/dashboard")
    def get_dashboard(user_id: str):
        return service.dashboard(user_id).to_json_dict()

    @app.get("/api/v1/users/{user_id}/cues")
    def get_cues(user_id: str, since: int = 0, follow: bool = False, timeout_s: Optional[float] = None):
        service.account(user_id)  # 404 before the stream starts
        deadline = None if timeout_s is None else time.monotonic() + timeout_s

        def stream() -> Iterator[str]:
            last = since
            while True:
                if follow:
                    cues = service.wait_for_cues(user_id, last, STREAM_POLL_SECONDS)
                else:
                    cues = service.cues_after(user_id, last)
                for cue in cues:
                    last = cue.seq
                    yield json.dumps(cue.to_json_dict(), ensure_ascii=False) + "\n"
                if not follow:
                    return
                if deadline is not None and time.monotonic() >= deadline:
                    return

        return StreamingResponse(stream(), media_type="application/x-ndjson")

    return app
