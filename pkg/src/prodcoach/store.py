"""Append-only event log per user, plus the fold that rebuilds state from it.

The log is the single source of truth: the live service applies every event
through the same ``apply_event`` used by ``replay``, so a replayed user is
always identical to the live one at the same sequence number. On disk each
user owns one newline-delimited JSON file; ``index.json`` maps user ids to
filenames. Events are immutable once written and sequence numbers are
gapless per user.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Iterator, Optional

from .errors import NotFoundError, StorageError, ValidationError
from .models import (
    AffectReading,
    ConversationTurn,
    CueEvent,
    CueKind,
    Emotion,
    InsightEntry,
    LessonId,
    LessonRecord,
    MoodReport,
    Polarity,
    Role,
    Session,
    SESSION_KINDS,
    UserAccount,
    UserProfile,
    UserState,
    Year,
    parse_rfc3339,
    rfc3339,
)

logger = logging.getLogger(__name__)


@dataclass
class EventRecord:
    seq: int
    at: datetime
    kind: str
    payload: dict

    def to_line(self) -> str:
        doc = {"seq": self.seq, "at": rfc3339(self.at), "kind": self.kind, "payload": self.payload}
        return json.dumps(doc, ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_line(cls, line: str) -> "EventRecord":
        doc = json.loads(line)
        return cls(seq=doc["seq"], at=parse_rfc3339(doc["at"]), kind=doc["kind"], payload=doc["payload"])


# Required payload fields per event kind, with accepted types. Extra fields
# are rejected so fixture logs stay canonical.
_STR = (str,)
_BOOL = (bool,)
_NUM = (int, float)
PAYLOAD_SCHEMAS: dict[str, dict[str, tuple[type, ...]]] = {
    "user_registered": {
        "user_id": _STR, "name": _STR, "major": _STR, "year": _STR,
        "coach_name": _STR, "coach_personality": _STR,
    },
    "speech_toggled": {"enabled": _BOOL},
    "session_started": {"session_id": _STR, "kind": _STR, "system_prompt": _STR},
    "coach_turn": {
        "session_id": _STR, "text": _STR, "expression": _STR, "gesture": _STR, "ended": _BOOL,
    },
    "student_turn": {
        "session_id": _STR, "text": _STR, "compound": _NUM, "polarity": _STR, "emotion": _STR,
    },
    "session_ended": {"session_id": _STR, "elapsed_minutes": _NUM},
    "confidence_submitted": {"lesson": _STR, "score": (int,)},
    "profile_extracted": {
        "raw": (dict,), "interests": (list,), "academics": _STR, "routine": _STR,
        "goals": _STR, "motivations": _STR, "obstacles": (list,), "prior_tools": _STR,
    },
    "mood_computed": {"overall": _STR, "detailed": _STR, "fallback": _BOOL},
    "insights_added": {"entries": (list,), "after": _STR},
    "order_recommended": {"order": (list,), "fallback": _BOOL},
}


def validate_payload(kind: str, payload: dict) -> None:
    schema = PAYLOAD_SCHEMAS.get(kind)
    if schema is None:
        raise ValidationError(f"unknown event kind: {kind}")
    missing = sorted(schema.keys() - payload.keys())
    if missing:
        raise ValidationError(f"{kind} payload missing fields: {', '.join(missing)}")
    extra = sorted(payload.keys() - schema.keys())
    if extra:
        raise ValidationError(f"{kind} payload has unknown fields: {', '.join(extra)}")
    for name, types in schema.items():
        value = payload[name]
        # bool is an int subclass; keep int-typed fields strictly numeric.
        if isinstance(value, bool) and bool not in types:
            raise ValidationError(f"{kind} payload field {name} has wrong type")
        if not isinstance(value, types):
            raise ValidationError(f"{kind} payload field {name} has wrong type")
    if kind == "session_started" and payload["kind"] not in SESSION_KINDS:
        raise ValidationError(f"unknown session kind: {payload['kind']}")


class EventLog:
    """Durable per-user NDJSON logs under one data directory."""

    def __init__(self, data_dir: str | Path):
        self._dir = Path(data_dir)
        self._dir.mkdir(parents=True, exist_ok=True)
        self._index_path = self._dir / "index.json"
        self._lock = threading.Lock()
        self._user_locks: dict[str, threading.Lock] = {}
        self._last_seqs: dict[str, int] = {}
        self._index: dict[str, str] = {}
        if self._index_path.exists():
            self._index = json.loads(self._index_path.read_text(encoding="utf-8"))

    def _user_lock(self, user_id: str) -> threading.Lock:
        with self._lock:
            return self._user_locks.setdefault(user_id, threading.Lock())

    def _log_path(self, user_id: str) -> Path:
        filename = self._index.get(user_id)
        if filename is None:
            raise NotFoundError(f"unknown user: {user_id}")
        return self._dir / filename

    def user_ids(self) -> list[str]:
        return sorted(self._index)

    def exists(self, user_id: str) -> bool:
        return user_id in self._index

    def register(self, user_id: str) -> None:
        """Reserve a log file for a new user and publish it in the index."""
        with self._lock:
            if user_id in self._index:
                raise ValidationError(f"user already registered: {user_id}")
            filename = f"{user_id}.ndjson"
            (self._dir / filename).touch()
            self._index[user_id] = filename
            tmp = self._index_path.with_suffix(".json.tmp")
            tmp.write_text(json.dumps(self._index, indent=2, sort_keys=True), encoding="utf-8")
            os.replace(tmp, self._index_path)

    def append(self, user_id: str, kind: str, payload: dict, at: datetime) -> EventRecord:
        validate_payload(kind, payload)
        with self._user_lock(user_id):
            path = self._log_path(user_id)
            seq = self._last_seqs.get(user_id)
            if seq is None:
                seq = sum(1 for _ in self.read(user_id))
            event = EventRecord(seq=seq + 1, at=at, kind=kind, payload=payload)
            try:
                with open(path, "a", encoding="utf-8") as fh:
                    fh.write(event.to_line() + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
            except OSError as exc:
                raise StorageError(f"append failed for {user_id}: {exc}") from exc
            self._last_seqs[user_id] = event.seq
            return event

    def read(self, user_id: str) -> Iterator[EventRecord]:
        path = self._log_path(user_id)
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise StorageError(f"read failed for {user_id}: {exc}") from exc
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                yield EventRecord.from_line(line)
            except (json.JSONDecodeError, KeyError) as exc:
                if i == len(lines) - 1:
                    # Torn final line from a crash mid-append: recoverable.
                    logger.warning("skipping torn final event for %s: %s", user_id, exc)
                    return
                raise StorageError(f"corrupt event at line {i + 1} for {user_id}: {exc}") from exc


def new_state_from_registration(event: EventRecord) -> UserState:
    p = event.payload
    account = UserAccount(
        user_id=p["user_id"],
        name=p["name"],
        major=p["major"],
        year=Year(p["year"]),
        coach_name=p["coach_name"],
        coach_personality=p["coach_personality"],
        speech_enabled=True,
    )
    state = UserState(account=account)
    for lesson in LessonId:
        state.records[lesson] = LessonRecord(user_id=account.user_id, lesson=lesson)
    state.last_seq = event.seq
    return state


def apply_event(state: UserState, event: EventRecord) -> UserState:
    """Fold one event into the aggregate. Pure over the event data: no clock,
    no model calls, no recomputation of anything the payload already carries."""
    if event.seq != state.last_seq + 1:
        raise StorageError(f"sequence gap: expected {state.last_seq + 1}, got {event.seq}")
    p = event.payload
    kind = event.kind
    if kind == "user_registered":
        raise StorageError("duplicate user_registered event")
    elif kind == "speech_toggled":
        state.account.speech_enabled = p["enabled"]
    elif kind == "session_started":
        session = Session(
            session_id=p["session_id"],
            user_id=state.account.user_id,
            kind=p["kind"],
            system_prompt=p["system_prompt"],
            started_at=event.at,
        )
        state.sessions[session.session_id] = session
        if session.kind != "intro":
            record = state.records[LessonId(session.kind)]
            record.status = "in_progress"
            record.session_id = session.session_id
            record.confidence = None
            record.elapsed_minutes = 0.0
    elif kind == "coach_turn":
        session = state.sessions[p["session_id"]]
        session.turns.append(ConversationTurn(role=Role.COACH, text=p["text"], at=event.at))
        cues = [
            CueEvent(seq=0, kind=CueKind.EXPRESSION, name_or_text=p["expression"]),
            CueEvent(seq=0, kind=CueKind.GESTURE, name_or_text=p["gesture"]),
        ]
        if state.account.speech_enabled:
            cues.append(CueEvent(seq=0, kind=CueKind.SAY, name_or_text=p["text"]))
        for cue in cues:
            cue.seq = len(state.cues) + 1
            state.cues.append(cue)
    elif kind == "student_turn":
        session = state.sessions[p["session_id"]]
        reading = AffectReading(
            compound=p["compound"],
            polarity=Polarity(p["polarity"]),
            emotion=Emotion(p["emotion"]),
        )
        session.turns.append(
            ConversationTurn(role=Role.STUDENT, text=p["text"], at=event.at, affect=reading)
        )
    elif kind == "session_ended":
        session = state.sessions[p["session_id"]]
        session.ended = True
        session.ended_at = event.at
        if session.kind != "intro":
            record = state.records[LessonId(session.kind)]
            record.elapsed_minutes = p["elapsed_minutes"]
    elif kind == "confidence_submitted":
        record = state.records[LessonId(p["lesson"])]
        record.confidence = p["score"]
        record.status = "mastered"
    elif kind == "profile_extracted":
        state.profile = UserProfile(
            user_id=state.account.user_id,
            raw=p["raw"],
            interests=[str(x) for x in p["interests"]],
            academics=p["academics"],
            routine=p["routine"],
            goals=p["goals"],
            motivations=p["motivations"],
            obstacles=[str(x) for x in p["obstacles"]],
            prior_tools=p["prior_tools"],
            extracted_at=event.at,
        )
    elif kind == "mood_computed":
        state.mood = MoodReport(overall=p["overall"], detailed=p["detailed"])
        state.mood_fallback = p["fallback"]
    elif kind == "insights_added":
        for entry in p["entries"]:
            state.insights.append(
                InsightEntry(
                    insight=entry["insight"],
                    suggestion=entry["suggestion"],
                    generated_after=p["after"],
                    at=event.at,
                )
            )
    elif kind == "order_recommended":
        state.lesson_order = [LessonId(x) for x in p["order"]]
        state.order_fallback = p["fallback"]
    else:
        raise StorageError(f"unknown event kind in log: {kind}")
    state.last_seq = event.seq
    return state


def fold_events(events: Iterator[EventRecord]) -> Optional[UserState]:
    state: Optional[UserState] = None
    for event in events:
        if state is None:
            if event.kind != "user_registered":
                raise StorageError(f"log must start with user_registered, got {event.kind}")
            state = new_state_from_registration(event)
        else:
            apply_event(state, event)
    return state


def replay(log: EventLog, user_id: str) -> UserState:
    """Deterministic rebuild of a user's full state from their event log."""
    if not log.exists(user_id):
        raise NotFoundError(f"unknown user: {user_id}")
    state = fold_events(log.read(user_id))
    if state is None:
        raise NotFoundError(f"no events recorded for user: {user_id}")
    return state
