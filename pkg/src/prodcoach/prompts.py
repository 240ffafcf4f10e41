"""Prompt templates: seven conversation families plus three auxiliary prompts.

Templates are plain UTF-8 text files shipped as package data (wording edits
must not require code changes). Placeholders use the bracket form [name],
where names are lowercase identifiers; bracketed literals such as
"[Conversation End]" do not match that shape and pass through untouched.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import ValidationError
from .models import INTRO_KIND, LessonId

PLACEHOLDER = re.compile(r"\[([a-z][a-z0-9_]*)\]")

TEMPLATE_IDS = (
    INTRO_KIND,
    *(f"lesson_{lesson.value}" for lesson in LessonId),
    "ordering",
    "mood",
    "insights",
)


def lesson_template_id(lesson: LessonId) -> str:
    return f"lesson_{lesson.value}"


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str

    @property
    def required_placeholders(self) -> frozenset[str]:
        return frozenset(PLACEHOLDER.findall(self.body))

    def render(self, bindings: dict[str, str]) -> str:
        missing = sorted(self.required_placeholders - bindings.keys())
        if missing:
            raise ValidationError(
                f"template {self.template_id!r} missing placeholder(s): {', '.join(missing)}"
            )
        empty = sorted(k for k in self.required_placeholders if not str(bindings[k]).strip())
        if empty:
            raise ValidationError(
                f"template {self.template_id!r} has empty binding(s): {', '.join(empty)}"
            )
        text = self.body
        for name in self.required_placeholders:
            text = text.replace(f"[{name}]", str(bindings[name]))
        return text


class TemplateSet:
    """All templates from one directory, resolved through its manifest."""

    def __init__(self, templates: dict[str, PromptTemplate]):
        missing = [tid for tid in TEMPLATE_IDS if tid not in templates]
        if missing:
            raise ValidationError(f"template manifest missing ids: {', '.join(missing)}")
        self._templates = templates

    def get(self, template_id: str) -> PromptTemplate:
        try:
            return self._templates[template_id]
        except KeyError:
            raise ValidationError(f"unknown template id: {template_id}") from None

    def render(self, template_id: str, bindings: dict[str, str]) -> str:
        return self.get(template_id).render(bindings)

    def lesson_template_for(self, lesson: LessonId) -> PromptTemplate:
        return self.get(lesson_template_id(lesson))


def load_templates(directory: str | Path | None = None) -> TemplateSet:
    """Load templates from a directory holding manifest.json, or the packaged set."""
    if directory is None:
        directory = resources.files("prodcoach") / "templates"
    else:
        directory = Path(directory)
    manifest_path = directory / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValidationError(f"template manifest not found: {manifest_path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"template manifest is not valid JSON: {exc}") from None
    templates = {}
    for template_id, filename in manifest.items():
        body = (directory / filename).read_text(encoding="utf-8")
        templates[template_id] = PromptTemplate(template_id=template_id, body=body)
    return TemplateSet(templates)
