"""Greedy word-at-a-time continuation against a completion backend.

The generator streams text fragments. ``complete_word`` stops as soon as a
full word is available (the accumulated text has whitespace after some
non-space character) or the model ends its turn. Text generated past the
boundary is returned as a ``Carry`` and fed back on the next call by
appending it to the prompt, so backends stay stateless.
"""

from __future__ import annotations

import json
import logging
import re
from contextlib import closing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Protocol, Sequence

from .errors import GenerationOverflow, PreconditionError, TransientError

log = logging.getLogger(__name__)

EOT_MARK = "<|eot_id|>"
WORD_TOKEN_BUDGET = 24
SUFFIX_TOKEN_BUDGET = 256

_WS = re.compile(r"\s")


@dataclass(frozen=True)
class TokenEvent:
    kind: str  # "text" or "eot"
    payload: str = ""

    def __post_init__(self):
        if self.kind not in ("text", "eot"):
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.kind == "eot" and self.payload:
            raise ValueError("end_of_turn carries no payload")

    @classmethod
    def text(cls, payload: str) -> TokenEvent:
        return cls("text", payload)

    @classmethod
    def eot(cls) -> TokenEvent:
        return cls("eot")

    @property
    def is_eot(self) -> bool:
        return self.kind == "eot"


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    max_new_tokens: int
    stop_on: frozenset[str] = frozenset({"word_boundary", "end_of_turn"})
    temperature: float = 0.0

    def __post_init__(self):
        if self.temperature != 0:
            raise PreconditionError("only greedy decoding (temperature 0) is supported")
        if self.max_new_tokens <= 0:
            raise PreconditionError("max_new_tokens must be positive")


class LlmBackend(Protocol):
    def stream(self, request: GenerationRequest) -> Iterator[TokenEvent]: ...


@dataclass(frozen=True)
class Word:
    text: str


class _EndOfTurn:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "EndOfTurn"


EndOfTurn = _EndOfTurn()


@dataclass(frozen=True)
class Carry:
    """Generated material that belongs to the next call.

    ``end_of_turn`` is set when the model closed its turn right after a word;
    the word is returned immediately and the end of turn is replayed next.
    """

    text: str = ""
    end_of_turn: bool = False


def split_word(text: str) -> tuple[str, str] | None:
    """Split off the first complete word, or None if no boundary yet."""
    start = len(text) - len(text.lstrip())
    m = _WS.search(text, start)
    if start == len(text) or m is None:
        return None
    return text[start:m.start()], text[m.start():]


def complete_word(backend: LlmBackend, prompt: str, carry: Carry = Carry(), *,
                  max_new_tokens: int = WORD_TOKEN_BUDGET) -> tuple[Word | _EndOfTurn, Carry]:
    if not prompt:
        raise PreconditionError("empty prompt")
    if carry.end_of_turn:
        return EndOfTurn, Carry()
    acc = carry.text
    hit = split_word(acc)
    if hit:
        return Word(hit[0]), Carry(hit[1])

    request = GenerationRequest(prompt + carry.text, max_new_tokens)
    used = 0
    with closing(backend.stream(request)) as events:
        for ev in events:
            if ev.is_eot:
                word = acc.strip()
                if word:
                    return Word(word), Carry(end_of_turn=True)
                return EndOfTurn, Carry()
            acc += ev.payload
            used += 1
            hit = split_word(acc)
            if hit:
                return Word(hit[0]), Carry(hit[1])
            if used >= max_new_tokens:
                break
    raise GenerationOverflow(f"no word boundary within {used} tokens: {acc!r}")


def complete_to_end(backend: LlmBackend, prompt: str, carry: Carry = Carry(), *,
                    max_new_tokens: int = SUFFIX_TOKEN_BUDGET) -> tuple[str, bool]:
    """Generate until end of turn; returns (normalized suffix, truncated)."""
    if not prompt:
        raise PreconditionError("empty prompt")
    acc = carry.text
    if carry.end_of_turn:
        return " ".join(acc.split()), False
    request = GenerationRequest(prompt + carry.text, max_new_tokens)
    used = 0
    truncated = True
    with closing(backend.stream(request)) as events:
        for ev in events:
            if ev.is_eot:
                truncated = False
                break
            acc += ev.payload
            used += 1
            if used >= max_new_tokens:
                break
    if truncated:
        log.warning("suffix generation hit the %d token budget", max_new_tokens)
    return " ".join(acc.split()), truncated


def _to_event(item) -> TokenEvent:
    if item is None or item == EOT_MARK:
        return TokenEvent.eot()
    if isinstance(item, TokenEvent):
        return item
    return TokenEvent.text(str(item))


class ScriptedBackend:
    """Replays a fixed fragment list; once exhausted it only ends turns."""

    def __init__(self, script: Iterable):
        self.events = [_to_event(x) for x in script]
        self.position = 0
        self.prompts: list[str] = []

    def stream(self, request: GenerationRequest) -> Iterator[TokenEvent]:
        self.prompts.append(request.prompt)
        while True:
            if self.position >= len(self.events):
                yield TokenEvent.eot()
                return
            ev = self.events[self.position]
            self.position += 1
            yield ev


@dataclass
class ScriptBook:
    """Session id -> fragment script, as stored in mock script files."""

    scripts: dict[str, list] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path) -> ScriptBook:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ValueError(f"{path}: script file must map session ids to fragment lists")
        return cls({str(k): list(v) for k, v in data.items()})

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.scripts, ensure_ascii=False, indent=1), encoding="utf-8")

    def for_session(self, session_id: str) -> ScriptedBackend:
        return ScriptedBackend(self.scripts.get(session_id, []))

    def ping(self) -> None:
        return None


class ScriptedResponder:
    """Whole-response mock used for background extraction; one reply per attempt."""

    def __init__(self, responses: Sequence[str] | str):
        self.responses = [responses] if isinstance(responses, str) else list(responses)
        self.calls = 0

    def complete(self, prompt: str, max_tokens: int = 1024) -> str:
        if not self.responses:
            raise TransientError("no scripted response")
        reply = self.responses[min(self.calls, len(self.responses) - 1)]
        self.calls += 1
        return reply


_FRAGMENT = re.compile(r"\s*\S+|\s+$")


class CompletionClient:
    """Raw text-completion client for OpenAI-compatible inference servers.

    A raw endpoint is required: the assistant turn is authored by the caller
    and must not be wrapped by a server-side chat template.
    """

    def __init__(self, base_url: str, model: str, *, api_key: str | None = None,
                 stop: Sequence[str] = (EOT_MARK,), streaming: bool = True,
                 timeout: float = 60.0, client=None):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.model = model
        self.stop = list(stop)
        self.streaming = streaming
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(timeout=timeout, headers=headers)

    @property
    def url(self) -> str:
        return f"{self.base_url}/v1/completions"

    def ping(self) -> None:
        import httpx

        try:
            self._client.get(f"{self.base_url}/v1/models").raise_for_status()
        except httpx.HTTPError as e:
            raise TransientError(f"completion service unreachable: {e}") from e

    def _payload(self, prompt: str, max_tokens: int, stream: bool) -> dict:
        return {"model": self.model, "prompt": prompt, "temperature": 0,
                "max_tokens": max_tokens, "stop": self.stop, "stream": stream}

    def stream(self, request: GenerationRequest) -> Iterator[TokenEvent]:
        import httpx

        try:
            if not self.streaming:
                text, finish = self._whole(request.prompt, request.max_new_tokens)
                for frag in _FRAGMENT.findall(text):
                    yield TokenEvent.text(frag)
                if finish == "stop":
                    yield TokenEvent.eot()
                return
            payload = self._payload(request.prompt, request.max_new_tokens, True)
            with self._client.stream("POST", self.url, json=payload) as resp:
                resp.raise_for_status()
                for line in resp.iter_lines():
                    if not line.startswith("data:"):
                        continue
                    body = line[5:].strip()
                    if body == "[DONE]":
                        return
                    choice = json.loads(body)["choices"][0]
                    if choice.get("text"):
                        yield TokenEvent.text(choice["text"])
                    if choice.get("finish_reason") == "stop":
                        yield TokenEvent.eot()
                        return
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as e:
            raise TransientError(f"completion request failed: {e}") from e

    def _whole(self, prompt: str, max_tokens: int) -> tuple[str, str | None]:
        resp = self._client.post(self.url, json=self._payload(prompt, max_tokens, False))
        resp.raise_for_status()
        choice = resp.json()["choices"][0]
        return choice["text"], choice.get("finish_reason")

    def complete(self, prompt: str, max_tokens: int = 1024) -> str:
        import httpx

        try:
            return self._whole(prompt, max_tokens)[0]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as e:
            raise TransientError(f"completion request failed: {e}") from e


def load_responses(path: str | Path) -> Mapping[str, list[str]]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return {str(k): ([v] if isinstance(v, str) else list(v)) for k, v in data.items()}
