"""Model backends: an OpenAI-compatible HTTP client and two offline test doubles."""

from __future__ import annotations

import json
import logging
import re
import threading
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Protocol

from clh.backend.parsing import GenerationResult, format_strings, parse_generation
from clh.errors import ScriptedMiss, UnparseableResponse
from clh.http import JsonClient, RetryPolicy
from clh.io import text_digest, write_json

logger = logging.getLogger(__name__)

Decoding = Literal["thinking", "constrained"]
SCRIPT_SCHEMA = "clh.script/1"


@dataclass(frozen=True)
class GenerationRequest:
    """One model call.

    ``choices`` lists the code behind each presented id (id ``i`` is
    ``choices[i - 1]``). ``gold`` and ``evidence`` are only read by the
    oracle backend.
    """

    template: str
    prompt: str
    constraint: str | None = None
    choices: tuple[str, ...] = ()
    multi: bool = True
    gold: frozenset[str] = frozenset()
    evidence: tuple[str, ...] = ()


class Backend(Protocol):
    kind: str
    decoding: Decoding

    def complete(self, request: GenerationRequest) -> str: ...


def generate(backend: Backend, request: GenerationRequest | str, constraint: str | None = None) -> GenerationResult:
    """Run one request and split the output.

    Under a constraint the output (stripped) must match the pattern in full.
    """
    if isinstance(request, str):
        request = GenerationRequest(template="", prompt=request, constraint=constraint)
    elif constraint is not None:
        request = GenerationRequest(**{**request.__dict__, "constraint": constraint})
    if not request.prompt:
        raise ValueError("empty prompt")
    raw = backend.complete(request)
    if request.constraint is not None and not re.fullmatch(request.constraint, raw.strip(), re.DOTALL):
        raise UnparseableResponse(f"output does not match constraint {request.constraint!r}: {raw[:120]!r}")
    return parse_generation(raw)


class HttpBackend:
    """Chat-completions client (vLLM, OpenAI and compatible servers).

    Temperature is pinned to 0. A constraint is forwarded as ``guided_regex``
    (the vLLM extension) unless ``constraint_field`` says otherwise.
    """

    kind = "http"

    def __init__(
        self,
        base_url: str,
        model: str,
        decoding: Decoding = "thinking",
        timeout: float = 120.0,
        max_in_flight: int = 8,
        retry: RetryPolicy | None = None,
        api_key_env: str | None = "CLH_API_KEY",
        max_tokens: int | None = None,
        constraint_field: str = "guided_regex",
        transport=None,
        sleep=None,
    ) -> None:
        self.model = model
        self.decoding = decoding
        self.max_tokens = max_tokens
        self.constraint_field = constraint_field
        kwargs = {"sleep": sleep} if sleep else {}
        self.client = JsonClient(base_url, timeout, api_key_env, max_in_flight, retry, transport, **kwargs)

    def payload(self, request: GenerationRequest) -> dict:
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": 0,
        }
        if self.max_tokens:
            body["max_tokens"] = self.max_tokens
        if request.constraint is not None:
            body[self.constraint_field] = request.constraint
        return body

    def complete(self, request: GenerationRequest) -> str:
        body = self.client.post("chat/completions", self.payload(request))
        try:
            message = body["choices"][0]["message"]
            content = message.get("content") or ""
        except (KeyError, IndexError, TypeError, AttributeError) as exc:
            raise UnparseableResponse(f"unexpected chat response shape: {exc}") from exc
        reasoning = message.get("reasoning_content") or message.get("reasoning")
        if reasoning:  # servers with a reasoning parser split the trace out
            content = f"<think>{reasoning}</think>\n{content}"
        return content


def script_key(template: str, prompt: str) -> str:
    return f"{template}:{text_digest(prompt)[:16]}"


class ScriptedBackend:
    """Answers from a fixed table keyed by ``template:sha256(prompt)[:16]``.

    A ``"<template>:*"`` key serves as that template's explicit fallback.
    """

    kind = "scripted"

    def __init__(self, answers: Mapping[str, str], decoding: Decoding = "thinking") -> None:
        self.answers = dict(answers)
        self.decoding = decoding

    def complete(self, request: GenerationRequest) -> str:
        key = script_key(request.template, request.prompt)
        if key in self.answers:
            return self.answers[key]
        fallback = f"{request.template}:*"
        if fallback in self.answers:
            return self.answers[fallback]
        raise ScriptedMiss(f"no scripted answer for {key}")

    @classmethod
    def load(cls, path: str | Path, decoding: Decoding = "thinking") -> ScriptedBackend:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if data.get("schema") != SCRIPT_SCHEMA:
            raise ValueError(f"{path}: not a {SCRIPT_SCHEMA} answer table")
        return cls(data["answers"], decoding)

    def save(self, path: str | Path) -> None:
        write_json(path, {"schema": SCRIPT_SCHEMA, "answers": self.answers})


class OracleBackend:
    """Upper-bound test double that always answers with the gold codes.

    Evidence prompts get the gold evidence spans; selection prompts get the
    ids whose codes are gold (only the first one for single-choice prompts),
    or ``0`` when none is.
    """

    kind = "oracle"

    def __init__(self, decoding: Decoding = "thinking") -> None:
        self.decoding = decoding

    def complete(self, request: GenerationRequest) -> str:
        if request.template == "evidence":
            answer = format_strings(list(request.evidence))
        else:
            ids = [i for i, code in enumerate(request.choices, start=1) if code in request.gold]
            if not request.multi:
                ids = ids[:1]
            answer = ", ".join(map(str, ids)) or "0"
        if self.decoding == "thinking":
            return f"oracle</think>\n<answer>{answer}</answer>"
        return f"<answer>{answer}</answer>"


@dataclass
class RecordingBackend:
    """Wraps a backend and records its answers as a scripted table."""

    inner: Backend
    answers: dict[str, str] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def kind(self) -> str:
        return self.inner.kind

    @property
    def decoding(self) -> Decoding:
        return self.inner.decoding

    def complete(self, request: GenerationRequest) -> str:
        raw = self.inner.complete(request)
        with self._lock:
            self.answers[script_key(request.template, request.prompt)] = raw
        return raw

    def scripted(self) -> ScriptedBackend:
        return ScriptedBackend(dict(sorted(self.answers.items())), self.decoding)
