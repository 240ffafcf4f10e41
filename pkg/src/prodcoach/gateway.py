"""Single choke point for model calls.

Live mode speaks the OpenAI-compatible chat-completions wire protocol over
HTTP. Scripted mode replays fixture responses keyed by (template_id, turn
index) so every flow can run hermetically. Nothing outside this module ever
talks to a model.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol

import httpx

from .errors import ScriptError, UpstreamError, ValidationError
from .models import Role

logger = logging.getLogger(__name__)

# Wire role names for the chat-completions protocol.
_WIRE_ROLES = {Role.COACH: "assistant", Role.STUDENT: "user"}

COACHING_TEMPERATURE = 0.7
# Ordering / mood / insights outputs must validate against closed schemas.
STRUCTURED_TEMPERATURE = 0.0
DEFAULT_MAX_OUTPUT_TOKENS = 1024

ENV_MODE = "COACH_LLM_MODE"
ENV_BASE_URL = "COACH_LLM_BASE_URL"
ENV_API_KEY = "COACH_LLM_API_KEY"
ENV_MODEL = "COACH_LLM_MODEL"
ENV_SCRIPT = "COACH_LLM_SCRIPT"


@dataclass
class ChatRequest:
    system_prompt: str
    history: list[tuple[Role, str]] = field(default_factory=list)
    temperature: float = COACHING_TEMPERATURE
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    # Scripted mode matches replies on this id; live mode ignores it.
    template_id: Optional[str] = None

    def __post_init__(self):
        if not self.system_prompt.strip():
            raise ValidationError("system_prompt must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValidationError("temperature must be in [0, 2]")
        if self.max_output_tokens <= 0:
            raise ValidationError("max_output_tokens must be positive")


@dataclass
class ChatResponse:
    text: str
    model_name: str
    latency_ms: int


class Gateway(Protocol):
    def complete(self, req: ChatRequest) -> ChatResponse: ...


@dataclass
class GatewayConfig:
    mode: str  # "live" | "scripted"
    base_url: str = ""
    api_key: str = ""
    model: str = ""
    script_path: str = ""
    retries: int = 3
    timeout_ms: int = 30_000

    def validate(self) -> "GatewayConfig":
        if self.mode == "live":
            missing = [
                name
                for name, value in (
                    ("base_url", self.base_url),
                    ("api_key", self.api_key),
                    ("model", self.model),
                )
                if not value
            ]
            if missing:
                raise ValidationError(f"live gateway config missing: {', '.join(missing)}")
        elif self.mode == "scripted":
            if not self.script_path:
                raise ValidationError("scripted gateway config missing: script_path")
        else:
            raise ValidationError(f"unknown gateway mode: {self.mode!r}")
        return self


def gateway_config_from_env(env: Optional[dict] = None) -> GatewayConfig:
    env = os.environ if env is None else env
    return GatewayConfig(
        mode=env.get(ENV_MODE, "live"),
        base_url=env.get(ENV_BASE_URL, ""),
        api_key=env.get(ENV_API_KEY, ""),
        model=env.get(ENV_MODEL, ""),
        script_path=env.get(ENV_SCRIPT, ""),
    ).validate()


def build_gateway(config: GatewayConfig) -> Gateway:
    config.validate()
    if config.mode == "scripted":
        return ScriptedGateway.from_file(config.script_path)
    return LiveGateway(config)


class LiveGateway:
    """Chat-completion client with exponential backoff on transport/5xx failures."""

    def __init__(
        self,
        config: GatewayConfig,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
        backoff_base_s: float = 0.25,
    ):
        self._config = config
        self._sleep = sleep
        self._backoff_base_s = backoff_base_s
        self._client = httpx.Client(
            base_url=config.base_url.rstrip("/"),
            headers={"Authorization": f"Bearer {config.api_key}"},
            timeout=config.timeout_ms / 1000.0,
            transport=transport,
        )

    def _body(self, req: ChatRequest) -> dict:
        messages = [{"role": "system", "content": req.system_prompt}]
        messages += [{"role": _WIRE_ROLES[role], "content": text} for role, text in req.history]
        return {
            "model": self._config.model,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        }

    def complete(self, req: ChatRequest) -> ChatResponse:
        body = self._body(req)
        attempts = self._config.retries + 1
        last_error: str = ""
        last_status: Optional[int] = None
        started = time.monotonic()
        for attempt in range(attempts):
            if attempt:
                self._sleep(self._backoff_base_s * 2 ** (attempt - 1))
            try:
                response = self._client.post("/chat/completions", json=body)
            except httpx.HTTPError as exc:
                last_error = f"transport failure: {exc}"
                logger.warning("gateway attempt %d/%d failed: %s", attempt + 1, attempts, exc)
                continue
            if response.status_code >= 500:
                last_error = f"upstream status {response.status_code}"
                last_status = response.status_code
                logger.warning("gateway attempt %d/%d got %d", attempt + 1, attempts, response.status_code)
                continue
            if response.status_code >= 400:
                # Client errors are not retryable; surface immediately.
                raise UpstreamError(
                    f"model backend rejected request: {response.status_code}",
                    status=response.status_code,
                )
            return self._parse(response, started)
        raise UpstreamError(f"model backend unreachable after {attempts} attempts: {last_error}", status=last_status)

    def _parse(self, response: httpx.Response, started: float) -> ChatResponse:
        try:
            data = response.json()
            content = data["choices"][0]["message"]["content"]
        except (json.JSONDecodeError, LookupError, TypeError) as exc:
            raise UpstreamError(f"malformed chat-completions response: {exc}") from exc
        if content is None:
            content = ""
        return ChatResponse(
            text=content,
            model_name=str(data.get("model", "")),
            latency_ms=int((time.monotonic() - started) * 1000),
        )


# Single-shot analysis templates, as opposed to the coaching conversations.
AUX_TEMPLATES = frozenset({"ordering", "mood", "insights"})


class ScriptedGateway:
    """Deterministic stub replaying fixture replies.

    Coaching requests carry conversation history; their turn index is the
    number of student messages so far, which makes the reply a pure function
    of the request even when sessions interleave. Single-shot requests
    (ordering, mood, insights) have nothing to index by, so each of those
    templates keeps an advancing cursor, serialized under a lock.
    """

    def __init__(self, scripts: dict[str, list[str]]):
        self._scripts = scripts
        self._cursors: dict[str, int] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedGateway":
        try:
            entries = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ValidationError(f"script file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"script file is not valid JSON: {exc}") from None
        scripts: dict[str, list[str]] = {}
        for entry in entries:
            scripts.setdefault(entry["template_id"], []).extend(entry["replies"])
        return cls(scripts)

    def complete(self, req: ChatRequest) -> ChatResponse:
        if req.template_id is None:
            raise ScriptError("scripted gateway requires template_id on requests")
        replies = self._scripts.get(req.template_id)
        if replies is None:
            raise ScriptError(f"no script for template {req.template_id!r}")
        if req.template_id in AUX_TEMPLATES:
            with self._lock:
                index = self._cursors.get(req.template_id, 0)
                self._cursors[req.template_id] = index + 1
        else:
            index = sum(1 for role, _ in req.history if role is Role.STUDENT)
        if index >= len(replies):
            raise ScriptError(
                f"script exhausted for template {req.template_id!r} (needed reply {index}, have {len(replies)})"
            )
        return ChatResponse(text=replies[index], model_name="scripted", latency_ms=0)
