"""Pull structured JSON back out of free-form model text.

Models are instructed to return a JSON payload, but they wrap it in prose,
emit example braces earlier in the reply, or produce slightly broken JSON.
The scanner here finds the *last* balanced block (the instructed payload
comes after the conversational text) while respecting string literals, and
a single repair pass handles the common defects before we give up.
"""

from __future__ import annotations

import json
import logging
import re

from .errors import ExtractionError, JsonParseError

logger = logging.getLogger(__name__)

_TRAILING_COMMA = re.compile(r",\s*([}\]])")
_SMART_QUOTES = {"“": '"', "”": '"', "‘": "'", "’": "'"}


def _last_balanced_span(text: str, open_ch: str, close_ch: str) -> tuple[int, int] | None:
    """Span (start, end inclusive) of the last top-level balanced block, or None.

    Tracks double-quoted strings and backslash escapes so braces inside
    literals don't confuse the depth count.
    """
    span = None
    depth = 0
    start = -1
    in_string = False
    escaped = False
    for i, ch in enumerate(text):
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            if depth > 0:
                in_string = True
            continue
        if ch == open_ch:
            if depth == 0:
                start = i
            depth += 1
        elif ch == close_ch:
            if depth > 0:
                depth -= 1
                if depth == 0:
                    span = (start, i)
    return span


def _repair(block: str) -> str:
    repaired = block
    for smart, plain in _SMART_QUOTES.items():
        repaired = repaired.replace(smart, plain)
    repaired = _TRAILING_COMMA.sub(r"\1", repaired)
    if repaired != block:
        logger.warning("repaired malformed JSON block before parsing")
    return repaired


def _parse_block(block: str):
    try:
        return json.loads(block)
    except json.JSONDecodeError:
        pass
    try:
        return json.loads(_repair(block))
    except json.JSONDecodeError as exc:
        raise JsonParseError(f"unparsable JSON block: {exc}", block=block) from exc


def extract_json_object(text: str) -> tuple[dict, str]:
    """Parse the last balanced {...} block; return (object, text without it)."""
    span = _last_balanced_span(text, "{", "}")
    if span is None:
        raise ExtractionError("no balanced JSON object in text")
    start, end = span
    value = _parse_block(text[start : end + 1])
    if not isinstance(value, dict):
        raise JsonParseError("balanced block is not a JSON object", block=text[start : end + 1])
    return value, text[:start] + text[end + 1 :]


def strip_trailing_json(text: str) -> str:
    """Drop one balanced {...} or [...] block sitting at the very end of text."""
    stripped = text.rstrip()
    for open_ch, close_ch in (("{", "}"), ("[", "]")):
        if not stripped.endswith(close_ch):
            continue
        span = _last_balanced_span(stripped, open_ch, close_ch)
        if span is not None and span[1] == len(stripped) - 1:
            return stripped[: span[0]]
    return text


def extract_json_array(text: str) -> tuple[list, str]:
    """Parse the last balanced [...] block; return (array, text without it)."""
    span = _last_balanced_span(text, "[", "]")
    if span is None:
        raise ExtractionError("no balanced JSON array in text")
    start, end = span
    value = _parse_block(text[start : end + 1])
    if not isinstance(value, list):
        raise JsonParseError("balanced block is not a JSON array", block=text[start : end + 1])
    return value, text[:start] + text[end + 1 :]
