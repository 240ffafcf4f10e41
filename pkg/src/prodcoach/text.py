"""Tokenization shared by the affect pipeline and the engagement metrics."""

import re

# Runs of alphanumeric characters after lowercasing. [^\W_] is exactly the
# characters str.isalnum() accepts, with underscore excluded.
_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumeric, drop empty tokens."""
    return _TOKEN.findall(text.lower())
