"""Domain types for the coaching service.

Everything here is plain data. Behavior lives in the modules that own it
(sessions, analytics, affect, store); these types only enforce their own
field invariants.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Optional


def rfc3339(dt: datetime) -> str:
    """Serialize a timestamp as RFC 3339 UTC with millisecond precision."""
    return dt.astimezone(timezone.utc).isoformat(timespec="milliseconds").replace("+00:00", "Z")


def parse_rfc3339(text: str) -> datetime:
    return datetime.fromisoformat(text.replace("Z", "+00:00"))


class LessonId(str, Enum):
    TIME_BLOCKING = "time_blocking"
    TIME_TRACKING = "time_tracking"
    TASK_BREAKDOWN = "task_breakdown"
    EISENHOWER_MATRIX = "eisenhower_matrix"
    ABCDE_METHOD = "abcde_method"
    EAT_THAT_FROG = "eat_that_frog"


# Tie-break order for engagement ranking: declaration order of the enum.
CANONICAL_LESSONS: tuple[LessonId, ...] = tuple(LessonId)

# Plan shown before (or instead of) a model-recommended ordering.
DEFAULT_LESSON_ORDER: tuple[LessonId, ...] = (
    LessonId.TASK_BREAKDOWN,
    LessonId.TIME_BLOCKING,
    LessonId.TIME_TRACKING,
    LessonId.EISENHOWER_MATRIX,
    LessonId.ABCDE_METHOD,
    LessonId.EAT_THAT_FROG,
)

INTRO_KIND = "intro"
SESSION_KINDS = (INTRO_KIND,) + tuple(l.value for l in LessonId)


class Year(str, Enum):
    FIRST = "first"
    SECOND = "second"
    THIRD = "third"
    FOURTH = "fourth"
    OTHER = "other"

    @classmethod
    def coerce(cls, value: str) -> "Year":
        """Anything outside first..fourth maps to OTHER."""
        try:
            return cls(value.strip().lower())
        except ValueError:
            return cls.OTHER


class Role(str, Enum):
    COACH = "coach"
    STUDENT = "student"


class Polarity(str, Enum):
    POSITIVE = "positive"
    NEUTRAL = "neutral"
    NEGATIVE = "negative"


class Emotion(str, Enum):
    HAPPINESS = "happiness"
    FEAR = "fear"
    SURPRISE = "surprise"
    SADNESS = "sadness"
    ANGER = "anger"
    NEUTRAL = "neutral"


@dataclass
class AffectReading:
    compound: float
    polarity: Polarity
    emotion: Emotion


class CueKind(str, Enum):
    SAY = "say"
    EXPRESSION = "expression"
    GESTURE = "gesture"


EXPRESSIONS = frozenset({"happy", "sad", "neutral", "surprised", "afraid", "angry"})
GESTURES = frozenset({"nod", "wave", "encourage", "calm", "idle"})


@dataclass
class RobotCue:
    kind: CueKind
    name_or_text: str

    def __post_init__(self):
        if self.kind is CueKind.EXPRESSION and self.name_or_text not in EXPRESSIONS:
            raise ValueError(f"unknown expression: {self.name_or_text}")
        if self.kind is CueKind.GESTURE and self.name_or_text not in GESTURES:
            raise ValueError(f"unknown gesture: {self.name_or_text}")


@dataclass
class UserAccount:
    user_id: str
    name: str
    major: str
    year: Year
    coach_name: str
    coach_personality: str
    speech_enabled: bool = True


@dataclass
class ConversationTurn:
    role: Role
    text: str
    at: datetime
    affect: Optional[AffectReading] = None  # present iff role is STUDENT


@dataclass
class Session:
    session_id: str
    user_id: str
    kind: str  # "intro" or a LessonId value
    system_prompt: str
    started_at: datetime
    turns: list[ConversationTurn] = field(default_factory=list)
    ended: bool = False
    ended_at: Optional[datetime] = None

    @property
    def is_intro(self) -> bool:
        return self.kind == INTRO_KIND

    @property
    def template_id(self) -> str:
        return INTRO_KIND if self.is_intro else f"lesson_{self.kind}"

    def student_texts(self) -> list[str]:
        return [t.text for t in self.turns if t.role is Role.STUDENT]


PROFILE_UNKNOWN = "unknown"


@dataclass
class UserProfile:
    user_id: str
    raw: dict
    interests: list[str]
    academics: str
    routine: str
    goals: str
    motivations: str
    obstacles: list[str]
    prior_tools: str
    extracted_at: datetime


@dataclass
class LessonRecord:
    user_id: str
    lesson: LessonId
    status: str = "not_started"  # not_started | in_progress | mastered
    confidence: Optional[int] = None
    elapsed_minutes: float = 0.0  # finalized at session end; live value accrues via UserState
    session_id: Optional[str] = None


MOOD_TAXONOMY: dict[str, tuple[str, ...]] = {
    "Positive": ("Hopeful and Inspired", "Confident and Determined", "Energized and Focused"),
    "Neutral": ("Calm and Grounded", "Reflective and Observant", "Balanced and Centered"),
    "Negative": ("Overwhelmed and Stressed", "Frustrated and Discouraged", "Anxious and Uncertain"),
}

FALLBACK_MOOD = ("Neutral", "Balanced and Centered")


@dataclass
class MoodReport:
    overall: str
    detailed: str

    def is_valid(self) -> bool:
        return self.detailed in MOOD_TAXONOMY.get(self.overall, ())


@dataclass
class EngagementStats:
    lesson: LessonId
    word_count: int
    lexical_diversity: float


@dataclass
class InsightEntry:
    insight: str
    suggestion: str
    generated_after: str  # "intro" or a LessonId value
    at: datetime


@dataclass
class DashboardSnapshot:
    progress_mastered: int
    progress_remaining: int
    mood: Optional[MoodReport]
    mood_fallback: bool
    time_per_lesson: dict[LessonId, float]
    confidence_per_lesson: dict[LessonId, Optional[int]]
    top_engagement: list[LessonId]
    insights: list[InsightEntry]

    def to_json_dict(self) -> dict:
        mood = None
        if self.mood is not None:
            mood = {
                "overall": self.mood.overall,
                "detailed": self.mood.detailed,
                "fallback": self.mood_fallback,
            }
        return {
            "progress_mastered": self.progress_mastered,
            "progress_remaining": self.progress_remaining,
            "mood": mood,
            "time_per_lesson": {l.value: self.time_per_lesson[l] for l in CANONICAL_LESSONS},
            "confidence_per_lesson": {
                l.value: self.confidence_per_lesson[l] for l in CANONICAL_LESSONS
            },
            "top_engagement": [l.value for l in self.top_engagement],
            "insights": [
                {
                    "insight": e.insight,
                    "suggestion": e.suggestion,
                    "generated_after": e.generated_after,
                    "at": rfc3339(e.at),
                }
                for e in self.insights
            ],
        }


@dataclass
class CueEvent:
    """One emitted cue on a user's stream. Seq numbers are per-user and gapless."""

    seq: int
    kind: CueKind
    name_or_text: str

    def to_json_dict(self) -> dict:
        payload: dict = {"seq": self.seq, "type": self.kind.value}
        if self.kind is CueKind.SAY:
            payload["text"] = self.name_or_text
        else:
            payload["name"] = self.name_or_text
        return payload


@dataclass
class UserState:
    """Aggregate state for one user, produced by folding their event log."""

    account: UserAccount
    profile: Optional[UserProfile] = None
    sessions: dict[str, Session] = field(default_factory=dict)
    records: dict[LessonId, LessonRecord] = field(default_factory=dict)
    lesson_order: Optional[list[LessonId]] = None
    order_fallback: Optional[bool] = None
    mood: Optional[MoodReport] = None
    mood_fallback: bool = False
    insights: list[InsightEntry] = field(default_factory=list)
    cues: list[CueEvent] = field(default_factory=list)
    last_seq: int = 0

    def session_for(self, lesson: LessonId) -> Optional[Session]:
        record = self.records[lesson]
        if record.session_id is None:
            return None
        return self.sessions[record.session_id]

    def elapsed_minutes(self, lesson: LessonId, now: datetime) -> float:
        """Wall-clock minutes on a lesson: 0 before start, accruing while live,
        frozen once the session ends."""
        record = self.records[lesson]
        if record.status == "not_started":
            return 0.0
        session = self.session_for(lesson)
        if session is None:
            return record.elapsed_minutes
        if session.ended:
            return record.elapsed_minutes
        return max((now - session.started_at).total_seconds() / 60.0, 0.0)
