"""Rule-based affect pipeline: compound sentiment, emotion label, robot cues.

The lexicons ship as versioned TSV data files. Scoring follows the standard
compound-score convention: token valences in [-4, 4], a negator within the
three preceding tokens flips valence by -0.74, an immediately preceding
booster shifts magnitude, and the total normalizes to [-1, 1] via
s / sqrt(s^2 + 15).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .models import AffectReading, CueKind, Emotion, Polarity, RobotCue
from .text import tokenize

LEXICON_VERSION = "1"

NEGATION_SCALAR = -0.74
NEGATION_WINDOW = 3
NORMALIZATION_ALPHA = 15.0
POLARITY_THRESHOLD = 0.05

# Fixed priority for count ties, strongest claim first.
_EMOTION_PRIORITY = (
    Emotion.HAPPINESS,
    Emotion.SADNESS,
    Emotion.ANGER,
    Emotion.FEAR,
    Emotion.SURPRISE,
)

_EXPRESSION_FOR_EMOTION = {
    Emotion.HAPPINESS: "happy",
    Emotion.SADNESS: "sad",
    Emotion.ANGER: "angry",
    Emotion.FEAR: "afraid",
    Emotion.SURPRISE: "surprised",
}
_EXPRESSION_FOR_POLARITY = {
    Polarity.POSITIVE: "happy",
    Polarity.NEGATIVE: "sad",
    Polarity.NEUTRAL: "neutral",
}
_GESTURE_FOR_POLARITY = {
    Polarity.POSITIVE: "encourage",
    Polarity.NEGATIVE: "calm",
    Polarity.NEUTRAL: "nod",
}


@dataclass(frozen=True)
class ValenceLexicon:
    entries: dict[str, float]
    boosters: dict[str, float]
    negators: frozenset[str]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("valence lexicon is empty")
        bad = {t: v for t, v in self.entries.items() if not -4.0 <= v <= 4.0}
        if bad:
            raise ValueError(f"valences out of [-4, 4]: {bad}")


def _read_tsv(path) -> dict[str, float]:
    values: dict[str, float] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        token, _, value = line.partition("\t")
        values[token] = float(value)
    return values


def load_valence_lexicon(directory: str | Path | None = None) -> ValenceLexicon:
    directory = _lexicon_dir(directory)
    return ValenceLexicon(
        entries=_read_tsv(directory / "valence.tsv"),
        boosters=_read_tsv(directory / "boosters.tsv"),
        negators=frozenset(_read_tsv(directory / "negators.tsv")),
    )


def load_emotion_lexicons(directory: str | Path | None = None) -> dict[Emotion, dict[str, float]]:
    directory = _lexicon_dir(directory)
    return {
        emotion: _read_tsv(directory / f"emotion_{emotion.value}.tsv")
        for emotion in _EMOTION_PRIORITY
    }


def _lexicon_dir(directory):
    if directory is None:
        return resources.files("prodcoach") / "lexicons"
    return Path(directory)


def compound_sentiment(text: str, lexicon: ValenceLexicon) -> float:
    tokens = tokenize(text)
    total = 0.0
    for i, token in enumerate(tokens):
        valence = lexicon.entries.get(token)
        if valence is None:
            continue
        if i > 0:
            boost = lexicon.boosters.get(tokens[i - 1])
            if boost is not None:
                valence += boost if valence > 0 else -boost
        window = tokens[max(0, i - NEGATION_WINDOW) : i]
        if any(t in lexicon.negators for t in window):
            valence *= NEGATION_SCALAR
        total += valence
    if total == 0.0:
        return 0.0
    normalized = total / math.sqrt(total * total + NORMALIZATION_ALPHA)
    return max(-1.0, min(1.0, normalized))


def polarity_of(compound: float) -> Polarity:
    if compound >= POLARITY_THRESHOLD:
        return Polarity.POSITIVE
    if compound <= -POLARITY_THRESHOLD:
        return Polarity.NEGATIVE
    return Polarity.NEUTRAL


def classify_emotion(text: str, lexicons: dict[Emotion, dict[str, float]]) -> Emotion:
    tokens = tokenize(text)
    scores = {
        emotion: sum(lexicon[t] for t in tokens if t in lexicon)
        for emotion, lexicon in lexicons.items()
    }
    best = max(_EMOTION_PRIORITY, key=lambda e: scores[e])
    if scores[best] <= 0:
        return Emotion.NEUTRAL
    return best


def map_to_cues(reading: AffectReading) -> list[RobotCue]:
    """Expression follows the emotion when there is one, else the polarity;
    the gesture always follows the polarity. Deterministic table lookup."""
    if reading.emotion is Emotion.NEUTRAL:
        expression = _EXPRESSION_FOR_POLARITY[reading.polarity]
    else:
        expression = _EXPRESSION_FOR_EMOTION[reading.emotion]
    return [
        RobotCue(CueKind.EXPRESSION, expression),
        RobotCue(CueKind.GESTURE, _GESTURE_FOR_POLARITY[reading.polarity]),
    ]


class AffectEngine:
    """Loaded lexicons plus the scoring functions, bundled for injection."""

    def __init__(self, directory: str | Path | None = None):
        self.lexicon = load_valence_lexicon(directory)
        self.emotions = load_emotion_lexicons(directory)

    def read(self, text: str) -> AffectReading:
        compound = compound_sentiment(text, self.lexicon)
        return AffectReading(
            compound=compound,
            polarity=polarity_of(compound),
            emotion=classify_emotion(text, self.emotions),
        )

    def cues(self, reading: AffectReading) -> list[RobotCue]:
        return map_to_cues(reading)
