"""The coaching state machine.

Owns registration, the introductory flow, the six lesson flows, termination
detection, timing, and confidence capture. Every state transition is an
event appended to the store and folded through the same function replay
uses, so live state and replayed state can never diverge.

Message handling is atomic per session: the model is called first, and only
a successful reply commits events. Concurrent posts to one session are
rejected as busy; distinct sessions proceed independently.
"""

from __future__ import annotations

import json
import logging
import threading
import uuid
from datetime import datetime, timezone
from typing import Callable, Optional, Protocol

from . import analytics
from .affect import AffectEngine
from .errors import (
    BusyError,
    NotFoundError,
    ScriptError,
    StateError,
    UpstreamError,
    ValidationError,
)
from .gateway import ChatRequest, COACHING_TEMPERATURE, Gateway
from .jsonextract import extract_json_object, strip_trailing_json
from .models import (
    CueEvent,
    DEFAULT_LESSON_ORDER,
    INTRO_KIND,
    LessonId,
    LessonRecord,
    PROFILE_UNKNOWN,
    Role,
    SESSION_KINDS,
    Session,
    UserAccount,
    UserState,
    Year,
)
from .prompts import TemplateSet
from .store import EventLog, apply_event, new_state_from_registration, replay

logger = logging.getLogger(__name__)

TERMINATION_MARKER = "[Conversation End]"

# Cues for a session-opening greeting, where no student affect exists yet.
GREETING_EXPRESSION = "happy"
GREETING_GESTURE = "wave"


def detect_termination(coach_text: str) -> bool:
    """Exact, case-sensitive marker match; nothing fuzzier."""
    return TERMINATION_MARKER in coach_text


def clean_coach_reply(raw: str) -> tuple[str, bool]:
    """Strip the termination marker and any trailing JSON payload for display.

    The raw reply is still what profile extraction reads; only the student-
    facing text loses the protocol artifacts.
    """
    if not detect_termination(raw):
        return raw.strip(), False
    text = raw.replace(TERMINATION_MARKER, "")
    return strip_trailing_json(text).strip(), True


class Clock(Protocol):
    def now(self) -> datetime: ...


class SystemClock:
    def now(self) -> datetime:
        return datetime.now(timezone.utc)


def _default_id_factory() -> str:
    return uuid.uuid4().hex


# Key aliases the model commonly uses in the extracted profile JSON, in
# preference order per field.
_PROFILE_TEXT_ALIASES = {
    "academics": ("academics", "academic_journey", "academic_interests", "favorite_subjects", "studies"),
    "routine": ("routine", "daily_routine", "typical_day", "daily_habits", "habits", "schedule"),
    "goals": ("goals", "short_term_goals", "long_term_goals", "aspirations", "objectives"),
    "motivations": ("motivations", "motivation", "motivators"),
    "prior_tools": (
        "prior_tools", "previous_tools", "productivity_tools", "tools",
        "prior_experience", "previous_experiences", "previous_experience",
    ),
}
_PROFILE_LIST_ALIASES = {
    "interests": ("interests", "hobbies", "personal_interests", "interests_and_hobbies"),
    "obstacles": ("obstacles", "challenges", "struggles", "barriers", "blockers"),
}


def _as_text(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value.strip()
    if isinstance(value, list):
        return "; ".join(_as_text(v) for v in value if _as_text(v))
    return json.dumps(value, ensure_ascii=False)


def _as_list(value) -> list[str]:
    if value is None:
        return []
    if isinstance(value, list):
        return [_as_text(v) for v in value if _as_text(v)]
    text = _as_text(value)
    return [text] if text else []


def normalize_profile(raw: dict) -> dict:
    """Map the model's free-form profile JSON onto the fixed field set.

    Every field comes back populated; the explicit "unknown" sentinel fills
    anything the conversation did not surface.
    """
    fields: dict = {"raw": raw}
    for field, aliases in _PROFILE_TEXT_ALIASES.items():
        parts = [_as_text(raw[a]) for a in aliases if a in raw]
        text = "; ".join(p for p in parts if p)
        fields[field] = text or PROFILE_UNKNOWN
    for field, aliases in _PROFILE_LIST_ALIASES.items():
        items: list[str] = []
        for alias in aliases:
            if alias in raw:
                items.extend(_as_list(raw[alias]))
        fields[field] = items or [PROFILE_UNKNOWN]
    return fields


class CoachService:
    """Facade over store + gateway + prompts + affect; one instance per data dir."""

    def __init__(
        self,
        log: EventLog,
        gateway: Gateway,
        templates: TemplateSet,
        affect: AffectEngine,
        clock: Clock = SystemClock(),
        id_factory: Callable[[], str] = _default_id_factory,
    ):
        self._log = log
        self._gateway = gateway
        self._templates = templates
        self._affect = affect
        self._clock = clock
        self._new_id = id_factory
        self._lock = threading.Lock()
        self._states: dict[str, UserState] = {}
        self._session_owner: dict[str, str] = {}
        self._user_locks: dict[str, threading.RLock] = {}
        self._busy: dict[str, threading.Lock] = {}
        self._cue_conditions: dict[str, threading.Condition] = {}

    # -- state access -------------------------------------------------------

    def _user_lock(self, user_id: str) -> threading.RLock:
        with self._lock:
            return self._user_locks.setdefault(user_id, threading.RLock())

    def _cue_condition(self, user_id: str) -> threading.Condition:
        with self._lock:
            return self._cue_conditions.setdefault(user_id, threading.Condition())

    def _state(self, user_id: str) -> UserState:
        with self._user_lock(user_id):
            state = self._states.get(user_id)
            if state is None:
                state = replay(self._log, user_id)  # raises NotFoundError
                self._states[user_id] = state
                with self._lock:
                    for session_id in state.sessions:
                        self._session_owner[session_id] = user_id
            return state

    def _append(self, state: UserState, kind: str, payload: dict, at: datetime) -> None:
        """Write the event, then fold it into live state. Caller holds the user lock."""
        event = self._log.append(state.account.user_id, kind, payload, at)
        apply_event(state, event)

    def _notify_cues(self, user_id: str) -> None:
        condition = self._cue_condition(user_id)
        with condition:
            condition.notify_all()

    def replay_user(self, user_id: str) -> UserState:
        """State rebuilt from disk only; bypasses the live cache."""
        return replay(self._log, user_id)

    def account(self, user_id: str) -> UserAccount:
        return self._state(user_id).account

    # -- registration & settings --------------------------------------------

    def register_user(
        self, name: str, major: str, year: str, coach_name: str, coach_personality: str
    ) -> UserAccount:
        fields = {
            "name": name.strip(),
            "major": major.strip(),
            "coach_name": coach_name.strip(),
            "coach_personality": coach_personality.strip(),
        }
        for field, value in fields.items():
            if not value:
                raise ValidationError(f"{field} must be non-empty")
        user_id = self._new_id()
        self._log.register(user_id)
        with self._user_lock(user_id):
            event = self._log.append(
                user_id,
                "user_registered",
                {
                    "user_id": user_id,
                    "name": fields["name"],
                    "major": fields["major"],
                    "year": Year.coerce(year).value,
                    "coach_name": fields["coach_name"],
                    "coach_personality": fields["coach_personality"],
                },
                self._clock.now(),
            )
            self._states[user_id] = new_state_from_registration(event)
        return self._states[user_id].account

    def toggle_speech(self, user_id: str, enabled: bool) -> UserAccount:
        state = self._state(user_id)
        with self._user_lock(user_id):
            self._append(state, "speech_toggled", {"enabled": bool(enabled)}, self._clock.now())
        return state.account

    # -- conversation flows --------------------------------------------------

    def _bindings(self, state: UserState, kind: str) -> dict[str, str]:
        account = state.account
        bindings = {
            "coach_name": account.coach_name,
            "coach_personality": account.coach_personality,
            "username": account.name,
            "major": account.major,
            "year": account.year.value,
        }
        if kind != INTRO_KIND:
            bindings["user_profile"] = json.dumps(
                state.profile.raw, ensure_ascii=False, separators=(",", ":")
            )
        return bindings

    def start_session(self, user_id: str, kind: str) -> Session:
        if kind not in SESSION_KINDS:
            raise ValidationError(f"unknown session kind: {kind!r}")
        state = self._state(user_id)
        if kind != INTRO_KIND and state.profile is None:
            raise StateError("lesson requires an extracted user profile; finish the intro first")
        template_id = INTRO_KIND if kind == INTRO_KIND else f"lesson_{kind}"
        system_prompt = self._templates.render(template_id, self._bindings(state, kind))
        reply = self._gateway.complete(
            ChatRequest(
                system_prompt=system_prompt,
                temperature=COACHING_TEMPERATURE,
                template_id=template_id,
            )
        )
        display, ended = clean_coach_reply(reply.text)
        session_id = self._new_id()
        at = self._clock.now()
        with self._user_lock(user_id):
            self._append(
                state,
                "session_started",
                {"session_id": session_id, "kind": kind, "system_prompt": system_prompt},
                at,
            )
            with self._lock:
                self._session_owner[session_id] = user_id
            self._append(
                state,
                "coach_turn",
                {
                    "session_id": session_id,
                    "text": display,
                    "expression": GREETING_EXPRESSION,
                    "gesture": GREETING_GESTURE,
                    "ended": ended,
                },
                at,
            )
            if ended:
                self._end_session(state, state.sessions[session_id], reply.text, at)
        self._notify_cues(user_id)
        return state.sessions[session_id]

    def post_student_message(self, session_id: str, text: str) -> tuple[str, list[CueEvent], bool]:
        user_id = self._find_session_owner(session_id)
        busy = self._busy.setdefault(session_id, threading.Lock())
        if not busy.acquire(blocking=False):
            raise BusyError(f"a message for session {session_id} is already in flight")
        try:
            return self._post_locked(user_id, session_id, text)
        finally:
            busy.release()

    def _find_session_owner(self, session_id: str) -> str:
        with self._lock:
            user_id = self._session_owner.get(session_id)
        if user_id is not None:
            return user_id
        # Not in the live cache; hydrate users from disk until found.
        for candidate in self._log.user_ids():
            self._state(candidate)
        with self._lock:
            user_id = self._session_owner.get(session_id)
        if user_id is None:
            raise NotFoundError(f"unknown session: {session_id}")
        return user_id

    def _post_locked(self, user_id: str, session_id: str, text: str) -> tuple[str, list[CueEvent], bool]:
        state = self._state(user_id)
        session = state.sessions[session_id]
        if session.ended:
            raise StateError(f"session {session_id} has ended")
        message = text.strip()
        if not message:
            raise ValidationError("message text must be non-empty")
        reading = self._affect.read(message)
        expression, gesture = (cue.name_or_text for cue in self._affect.cues(reading))
        history = [(turn.role, turn.text) for turn in session.turns]
        history.append((Role.STUDENT, message))
        # Model first: if this raises, no event is written and the session is
        # byte-identical to before the call.
        reply = self._gateway.complete(
            ChatRequest(
                system_prompt=session.system_prompt,
                history=history,
                temperature=COACHING_TEMPERATURE,
                template_id=session.template_id,
            )
        )
        display, ended = clean_coach_reply(reply.text)
        at = self._clock.now()
        with self._user_lock(user_id):
            cue_mark = len(state.cues)
            self._append(
                state,
                "student_turn",
                {
                    "session_id": session_id,
                    "text": message,
                    "compound": reading.compound,
                    "polarity": reading.polarity.value,
                    "emotion": reading.emotion.value,
                },
                at,
            )
            self._append(
                state,
                "coach_turn",
                {
                    "session_id": session_id,
                    "text": display,
                    "expression": expression,
                    "gesture": gesture,
                    "ended": ended,
                },
                at,
            )
            if ended:
                self._end_session(state, session, reply.text, at)
            new_cues = list(state.cues[cue_mark:])
        self._notify_cues(user_id)
        return display, new_cues, ended

    # -- end-of-session pipeline ----------------------------------------------

    def _end_session(self, state: UserState, session: Session, raw_reply: str, at: datetime) -> None:
        elapsed_minutes = max((at - session.started_at).total_seconds() / 60.0, 0.0)
        self._append(
            state,
            "session_ended",
            {"session_id": session.session_id, "elapsed_minutes": elapsed_minutes},
            at,
        )
        if session.is_intro:
            self._extract_profile(state, raw_reply, at)
            if state.profile is not None:
                self._recommend_order(state, at)
        self._refresh_mood(state, at)
        self._collect_insights(state, session.kind, at)

    def _extract_profile(self, state: UserState, raw_reply: str, at: datetime) -> None:
        try:
            raw, _ = extract_json_object(raw_reply)
        except UpstreamError as exc:
            logger.warning("intro ended without a usable profile JSON: %s", exc)
            return
        self._append(state, "profile_extracted", normalize_profile(raw), at)

    def _recommend_order(self, state: UserState, at: datetime) -> None:
        profile_json = json.dumps(state.profile.raw, ensure_ascii=False, separators=(",", ":"))
        try:
            order, fallback = analytics.request_lesson_order(
                profile_json, self._gateway, self._templates
            )
        except UpstreamError as exc:
            if isinstance(exc, ScriptError):
                raise
            logger.warning("lesson ordering call failed, keeping default plan: %s", exc)
            return
        self._append(
            state,
            "order_recommended",
            {"order": [lesson.value for lesson in order], "fallback": fallback},
            at,
        )

    def _refresh_mood(self, state: UserState, at: datetime) -> None:
        transcript = analytics.render_transcript(list(state.sessions.values()))
        try:
            report, fallback = analytics.classify_mood(transcript, self._gateway, self._templates)
        except UpstreamError as exc:
            if isinstance(exc, ScriptError):
                raise
            logger.warning("mood refresh failed, keeping previous report: %s", exc)
            return
        self._append(
            state,
            "mood_computed",
            {"overall": report.overall, "detailed": report.detailed, "fallback": fallback},
            at,
        )

    def _collect_insights(self, state: UserState, after: str, at: datetime) -> None:
        transcript = analytics.render_transcript(list(state.sessions.values()))
        try:
            entries = analytics.generate_insights(
                transcript, after, at, self._gateway, self._templates
            )
        except UpstreamError as exc:
            if isinstance(exc, ScriptError):
                raise
            logger.warning("insights call failed, keeping existing entries: %s", exc)
            return
        if entries:
            self._append(
                state,
                "insights_added",
                {
                    "entries": [{"insight": e.insight, "suggestion": e.suggestion} for e in entries],
                    "after": after,
                },
                at,
            )

    # -- confidence & plan ----------------------------------------------------

    def submit_confidence(self, user_id: str, lesson: str, score: int) -> LessonRecord:
        state = self._state(user_id)
        try:
            lesson_id = LessonId(lesson)
        except ValueError:
            raise ValidationError(f"unknown lesson: {lesson!r}") from None
        if isinstance(score, bool) or not isinstance(score, int) or not 1 <= score <= 5:
            raise ValidationError("confidence score must be an integer from 1 to 5")
        with self._user_lock(user_id):
            session = state.session_for(lesson_id)
            if session is None or not session.ended:
                raise StateError(f"lesson {lesson_id.value} has no ended session to score")
            self._append(
                state,
                "confidence_submitted",
                {"lesson": lesson_id.value, "score": score},
                self._clock.now(),
            )
        return state.records[lesson_id]

    def lessons_plan(self, user_id: str) -> dict:
        state = self._state(user_id)
        now = self._clock.now()
        with self._user_lock(user_id):
            order = state.lesson_order or list(DEFAULT_LESSON_ORDER)
            lessons = []
            for lesson in order:
                record = state.records[lesson]
                session = state.session_for(lesson)
                lessons.append(
                    {
                        "lesson": lesson.value,
                        "status": record.status,
                        "confidence": record.confidence,
                        "elapsed_minutes": state.elapsed_minutes(lesson, now),
                        "pending_confidence": bool(
                            session is not None and session.ended and record.confidence is None
                        ),
                    }
                )
            return {
                "order": [lesson.value for lesson in order],
                "order_fallback": state.order_fallback,
                "lessons": lessons,
            }

    def dashboard(self, user_id: str):
        state = self._state(user_id)
        with self._user_lock(user_id):
            return analytics.build_snapshot(state, self._clock.now())

    # -- cue stream -----------------------------------------------------------

    def cues_after(self, user_id: str, since: int) -> list[CueEvent]:
        state = self._state(user_id)
        with self._user_lock(user_id):
            return [cue for cue in state.cues if cue.seq > since]

    def wait_for_cues(self, user_id: str, since: int, timeout_s: float) -> list[CueEvent]:
        """Block until a cue newer than `since` exists, or the timeout passes."""
        condition = self._cue_condition(user_id)
        with condition:
            cues = self.cues_after(user_id, since)
            if cues:
                return cues
            condition.wait(timeout=timeout_s)
            return self.cues_after(user_id, since)

    def speech_enabled(self, user_id: str) -> bool:
        return self._state(user_id).account.speech_enabled
