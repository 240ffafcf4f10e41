"""Dashboard metrics: progress, mood, time, confidence, engagement, insights.

The engagement metrics and progress are pure functions over session data.
Mood, lesson ordering, and insights call the model through the gateway and
validate its output against closed schemas, falling back to safe defaults
so the dashboard always renders.
"""

from __future__ import annotations

import logging
from datetime import datetime
from typing import Optional

from .errors import UpstreamError, ValidationError
from .gateway import ChatRequest, Gateway, STRUCTURED_TEMPERATURE
from .jsonextract import extract_json_array, extract_json_object
from .models import (
    CANONICAL_LESSONS,
    DEFAULT_LESSON_ORDER,
    FALLBACK_MOOD,
    DashboardSnapshot,
    EngagementStats,
    InsightEntry,
    LessonId,
    LessonRecord,
    MoodReport,
    Role,
    Session,
    UserState,
)
from .prompts import TemplateSet
from .text import tokenize

logger = logging.getLogger(__name__)

TOP_ENGAGEMENT_SIZE = 3
# Word counts within 10% of the cluster head count as "similar"; lexical
# diversity breaks the tie inside a cluster.
_BAND_NUM, _BAND_DEN = 9, 10

_CANONICAL_INDEX = {lesson: i for i, lesson in enumerate(CANONICAL_LESSONS)}


def word_count(student_turns: list[str]) -> int:
    return sum(len(tokenize(text)) for text in student_turns)


def lexical_diversity(student_turns: list[str]) -> float:
    tokens = [t for text in student_turns for t in tokenize(text)]
    if not tokens:
        return 0.0
    return len(set(tokens)) / len(tokens)


def rank_engagement(stats: list[EngagementStats]) -> list[LessonId]:
    """Top lessons by word count, with diversity deciding within a 10% band."""
    seen = set()
    for s in stats:
        if s.lesson in seen:
            raise ValidationError(f"duplicate engagement entry for lesson {s.lesson.value}")
        seen.add(s.lesson)
    engaged = sorted(
        (s for s in stats if s.word_count > 0),
        key=lambda s: (-s.word_count, _CANONICAL_INDEX[s.lesson]),
    )
    clusters: list[list[EngagementStats]] = []
    for s in engaged:
        # Integer cross-multiplication keeps the 10% band exact under scaling.
        if clusters and _BAND_DEN * s.word_count >= _BAND_NUM * clusters[-1][0].word_count:
            clusters[-1].append(s)
        else:
            clusters.append([s])
    ranked: list[LessonId] = []
    for cluster in clusters:
        cluster.sort(key=lambda s: (-s.lexical_diversity, _CANONICAL_INDEX[s.lesson]))
        ranked.extend(s.lesson for s in cluster)
    return ranked[:TOP_ENGAGEMENT_SIZE]


def progress(records: list[LessonRecord]) -> tuple[int, int]:
    if len(records) != len(CANONICAL_LESSONS) or {r.lesson for r in records} != set(CANONICAL_LESSONS):
        raise ValidationError("progress needs exactly one record per lesson")
    mastered = sum(1 for r in records if r.status == "mastered")
    return mastered, len(CANONICAL_LESSONS) - mastered


def render_transcript(sessions: list[Session]) -> str:
    """All sessions concatenated in start order, one speaker-tagged line per turn."""
    blocks = []
    for session in sorted(sessions, key=lambda s: s.started_at):
        lines = [
            f"{'Coach' if turn.role is Role.COACH else 'Student'}: {turn.text}"
            for turn in session.turns
        ]
        if lines:
            blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def classify_mood(
    conversation_history: str, gateway: Gateway, templates: TemplateSet
) -> tuple[MoodReport, bool]:
    """Model-classified mood, validated against the two-level taxonomy.

    Returns (report, fallback_flag). One retry on an invalid reply, then the
    neutral fallback keeps the dashboard total. Gateway failures propagate.
    """
    if not conversation_history.strip():
        raise ValidationError("conversation history must be non-empty")
    prompt = templates.render("mood", {"conversation_history": conversation_history})
    request = ChatRequest(
        system_prompt=prompt, temperature=STRUCTURED_TEMPERATURE, template_id="mood"
    )
    for attempt in range(2):
        reply = gateway.complete(request)
        try:
            payload, _ = extract_json_object(reply.text)
            report = MoodReport(overall=str(payload["overall"]), detailed=str(payload["detailed"]))
        except (UpstreamError, KeyError) as exc:
            logger.warning("mood reply unusable (attempt %d): %s", attempt + 1, exc)
            continue
        if report.is_valid():
            return report, False
        logger.warning(
            "mood reply violates taxonomy (attempt %d): %s / %s",
            attempt + 1, report.overall, report.detailed,
        )
    return MoodReport(*FALLBACK_MOOD), True


_LESSON_BY_NORMALIZED = {
    "".join(tokenize(lesson.value)): lesson for lesson in CANONICAL_LESSONS
}


def validate_lesson_order(model_output: str) -> tuple[list[LessonId], bool]:
    """Accept the model's ordering iff it names each lesson exactly once.

    Matching is case- and separator-insensitive. Anything else falls back to
    the default order with a flag; the lesson plan must always render.
    """
    try:
        entries, _ = extract_json_array(model_output)
    except UpstreamError as exc:
        logger.warning("lesson ordering unusable, falling back: %s", exc)
        return list(DEFAULT_LESSON_ORDER), True
    order = []
    for entry in entries:
        lesson = _LESSON_BY_NORMALIZED.get("".join(tokenize(str(entry))))
        if lesson is None:
            logger.warning("lesson ordering has unknown entry %r, falling back", entry)
            return list(DEFAULT_LESSON_ORDER), True
        order.append(lesson)
    if sorted(order, key=_CANONICAL_INDEX.get) != list(CANONICAL_LESSONS):
        logger.warning("lesson ordering is not a permutation, falling back")
        return list(DEFAULT_LESSON_ORDER), True
    return order, False


def request_lesson_order(
    profile_json: str, gateway: Gateway, templates: TemplateSet
) -> tuple[list[LessonId], bool]:
    prompt = templates.render("ordering", {"user_profile": profile_json})
    reply = gateway.complete(
        ChatRequest(system_prompt=prompt, temperature=STRUCTURED_TEMPERATURE, template_id="ordering")
    )
    return validate_lesson_order(reply.text)


def generate_insights(
    conversation_history: str,
    after: str,
    now: datetime,
    gateway: Gateway,
    templates: TemplateSet,
) -> list[InsightEntry]:
    """Fresh insight/suggestion pairs; empty on a degraded (twice-malformed) reply."""
    if not conversation_history.strip():
        raise ValidationError("conversation history must be non-empty")
    prompt = templates.render("insights", {"conversation_history": conversation_history})
    request = ChatRequest(
        system_prompt=prompt, temperature=STRUCTURED_TEMPERATURE, template_id="insights"
    )
    for attempt in range(2):
        reply = gateway.complete(request)
        try:
            entries, _ = extract_json_array(reply.text)
        except UpstreamError as exc:  # extraction/parse defects in the reply text
            logger.warning("insights reply unparsable (attempt %d): %s", attempt + 1, exc)
            continue
        results = []
        for entry in entries:
            if not isinstance(entry, dict):
                continue
            insight = str(entry.get("insight", "")).strip()
            suggestion = str(entry.get("suggestion", "")).strip()
            if insight and suggestion:
                results.append(
                    InsightEntry(insight=insight, suggestion=suggestion, generated_after=after, at=now)
                )
        return results
    logger.warning("insights degraded: reply malformed twice, keeping existing entries")
    return []


def engagement_stats(state: UserState) -> list[EngagementStats]:
    stats = []
    for lesson in CANONICAL_LESSONS:
        session = state.session_for(lesson)
        texts = session.student_texts() if session is not None else []
        stats.append(
            EngagementStats(
                lesson=lesson,
                word_count=word_count(texts),
                lexical_diversity=lexical_diversity(texts),
            )
        )
    return stats


def build_snapshot(state: UserState, now: datetime) -> DashboardSnapshot:
    """Materialize all six dashboard metrics. Pure over (state, now)."""
    mastered, remaining = progress(list(state.records.values()))
    return DashboardSnapshot(
        progress_mastered=mastered,
        progress_remaining=remaining,
        mood=state.mood,
        mood_fallback=state.mood_fallback,
        time_per_lesson={l: state.elapsed_minutes(l, now) for l in CANONICAL_LESSONS},
        confidence_per_lesson={l: state.records[l].confidence for l in CANONICAL_LESSONS},
        top_engagement=rank_engagement(engagement_stats(state)),
        insights=list(state.insights),
    )
