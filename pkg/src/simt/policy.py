"""The READ/WRITE loop.

There is no separate policy model. At every step the prompt is rebuilt from
the source words revealed so far and the target words emitted so far, and the
generator is asked for one more word:

* a full word means WRITE: it is appended to the target, and (by default) the
  next source word is revealed as well;
* an end-of-turn means READ: only the next source word is revealed.

WRITEs are blocked until a minimum amount of source audio has been read. Once
the source is exhausted, the rest of the translation is generated in one go
and every such word is stamped with the full source duration.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

from .asr_stream import (AsrBackend, AudioTimeline, StampedWord, TranscriptState,
                         drain_word, finalize, ingest_chunk)
from .errors import GenerationOverflow, PreconditionError
from .llm_backend import (SUFFIX_TOKEN_BUDGET, WORD_TOKEN_BUDGET, Carry, LlmBackend, Word,
                          complete_to_end, complete_word)
from .prompt_builder import (DEFAULT_SYSTEM_MESSAGE, LLAMA3, BackgroundInfo, ChatTemplate,
                             PromptSpec, render_prompt)

log = logging.getLogger(__name__)

READ = "READ"
WRITE = "WRITE"


@dataclass(frozen=True)
class SessionConfig:
    min_read_time: float = 1200.0
    chunk_duration: float = 200.0
    src_lang: str = "English"
    tgt_lang: str = "German"
    priming_enabled: bool = True
    background_enabled: bool = True
    # reveal the next source word after every WRITE as well as every READ
    read_on_write: bool = True
    computation_aware: bool = False
    word_token_budget: int = WORD_TOKEN_BUDGET
    suffix_token_budget: int = SUFFIX_TOKEN_BUDGET
    template: ChatTemplate = LLAMA3
    system_message: str = DEFAULT_SYSTEM_MESSAGE

    def __post_init__(self):
        if self.min_read_time < 0:
            raise PreconditionError("min_read_time must be >= 0")
        if self.chunk_duration <= 0:
            raise PreconditionError("chunk_duration must be > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["template"] = asdict(self.template)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SessionConfig:
        d = dict(d)
        if isinstance(d.get("template"), dict):
            d["template"] = ChatTemplate(**d["template"])
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def fingerprint(self, extra: dict | None = None) -> str:
        payload = {"session": self.to_dict(), **(extra or {})}
        blob = json.dumps(payload, sort_keys=True, ensure_ascii=False).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass(frozen=True)
class Action:
    kind: str
    at_source_ms: float
    word: str | None = None
    # source word revealed by this action, if any
    source_word: str | None = None

    def __post_init__(self):
        if self.kind == WRITE and not self.word:
            raise ValueError("WRITE needs a word")
        if self.kind == READ and self.word is not None:
            raise ValueError("READ carries no target word")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "at_source_ms": self.at_source_ms}
        if self.word is not None:
            d["word"] = self.word
        if self.source_word is not None:
            d["source_word"] = self.source_word
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Action:
        return cls(d["kind"], d["at_source_ms"], d.get("word"), d.get("source_word"))


@dataclass
class TranslationRecord:
    sentence_id: str
    hypothesis: str
    reference: str
    delays: list[float]
    trace: list[Action]
    source_duration: float
    config_fingerprint: str
    wall_time: float | None = None
    source_words: list[tuple[str, float]] = field(default_factory=list)
    source_text: str | None = None
    flags: list[str] = field(default_factory=list)

    @property
    def hyp_words(self) -> list[str]:
        return self.hypothesis.split()

    def to_dict(self) -> dict:
        return {
            "sentence_id": self.sentence_id,
            "hypothesis": self.hypothesis,
            "reference": self.reference,
            "delays": self.delays,
            "trace": [a.to_dict() for a in self.trace],
            "wall_time": self.wall_time,
            "source_duration": self.source_duration,
            "config_fingerprint": self.config_fingerprint,
            "source_words": [[w, t] for w, t in self.source_words],
            "source_text": self.source_text,
            "flags": self.flags,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: dict) -> TranslationRecord:
        return cls(
            sentence_id=str(d["sentence_id"]),
            hypothesis=d["hypothesis"],
            reference=d["reference"],
            delays=[float(x) for x in d["delays"]],
            trace=[Action.from_dict(a) for a in d.get("trace", [])],
            source_duration=float(d["source_duration"]),
            config_fingerprint=d.get("config_fingerprint", ""),
            wall_time=d.get("wall_time"),
            source_words=[(w, float(t)) for w, t in d.get("source_words", [])],
            source_text=d.get("source_text"),
            flags=list(d.get("flags", [])),
        )


def max_hypothesis_words(n_source: int) -> int:
    return 2 * n_source + 20


class Session:
    """One sentence being translated. Drive it with ``step`` then ``finish``."""

    def __init__(self, timeline: AudioTimeline, asr: AsrBackend, llm: LlmBackend,
                 cfg: SessionConfig, background: BackgroundInfo | None = None, *,
                 clock: Callable[[], float] = time.perf_counter, keep_prompts: bool = False):
        if timeline.chunk_duration != cfg.chunk_duration:
            timeline = timeline.with_chunk(cfg.chunk_duration)
        self.timeline = timeline
        self.asr = asr
        self.llm = llm
        self.cfg = cfg
        self.background = background if cfg.background_enabled else None
        self.clock = clock
        self.keep_prompts = keep_prompts

        self.transcript = TranscriptState()
        self.source: list[StampedWord] = []
        self.target: list[str] = []
        self.delays: list[float] = []
        self.trace: list[Action] = []
        self.carry = Carry()
        self.flags: list[str] = []
        self.prompts: list[dict] = []
        self.finished = False
        self._t0 = clock()

    @property
    def elapsed_ms(self) -> float:
        return self.transcript.audio_cursor

    @property
    def source_exhausted(self) -> bool:
        return self.transcript.exhausted

    def _flag(self, flag: str) -> None:
        if flag not in self.flags:
            self.flags.append(flag)

    def _stamp(self, source_ms: float) -> float:
        if self.cfg.computation_aware:
            return source_ms + (self.clock() - self._t0) * 1000.0
        return source_ms

    def render(self) -> str:
        spec = PromptSpec(
            src_lang=self.cfg.src_lang, tgt_lang=self.cfg.tgt_lang,
            partial_source=tuple(w.word for w in self.source),
            partial_target=tuple(self.target),
            background=self.background,
            priming_enabled=self.cfg.priming_enabled,
            system_message=self.cfg.system_message,
        )
        prompt = render_prompt(spec, self.cfg.template)
        if self.keep_prompts:
            self.prompts.append({"step": len(self.trace), "prompt": prompt})
        return prompt

    def _reveal(self) -> StampedWord | None:
        state = self.transcript
        while not state.pending and not state.audio_finished:
            state = ingest_chunk(state, self.timeline, self.asr, strict=False)
            self.transcript = state
        self.transcript, word = drain_word(state)
        if word is not None:
            self.source.append(word)
        return word

    def _read(self) -> Action | None:
        word = self._reveal()
        if word is None:
            return None
        action = Action(READ, self.elapsed_ms, source_word=word.word)
        self.trace.append(action)
        return action

    def step(self) -> Action | None:
        """Take one READ or WRITE. Returns None if a READ found no more source."""
        if self.finished or self.source_exhausted:
            raise PreconditionError("session has no more steps; call finish()")
        if not self.source or self.elapsed_ms < self.cfg.min_read_time:
            return self._read()

        prompt = self.render()
        try:
            result, self.carry = complete_word(self.llm, prompt, self.carry,
                                               max_new_tokens=self.cfg.word_token_budget)
        except GenerationOverflow as e:
            log.warning("treating overflow as end of turn: %s", e)
            self._flag("word_overflow")
            result, self.carry = None, Carry()

        if isinstance(result, Word):
            if len(self.target) >= max_hypothesis_words(len(self.source)):
                self._flag("hypothesis_truncated")
            else:
                at = self.elapsed_ms
                self.target.append(result.text)
                self.delays.append(self._stamp(at))
                revealed = self._reveal() if self.cfg.read_on_write else None
                action = Action(WRITE, at, result.text,
                                revealed.word if revealed is not None else None)
                self.trace.append(action)
                return action
        return self._read()

    def finish(self) -> list[str]:
        """Generate the remaining translation once the source is exhausted."""
        if self.finished:
            return []
        self.transcript = finalize(self.transcript, self.asr, self.timeline, strict=False)
        while self.transcript.pending:
            self._read()
        words: list[str] = []
        if self.source:
            suffix, truncated = complete_to_end(self.llm, self.render(), self.carry,
                                                max_new_tokens=self.cfg.suffix_token_budget)
            if truncated:
                self._flag("suffix_overflow")
            words = suffix.split()
        self.carry = Carry()
        end = self._stamp(self.timeline.total_duration)
        self.target.extend(words)
        self.delays.extend([end] * len(words))
        limit = max_hypothesis_words(len(self.source))
        if len(self.target) > limit:
            self._flag("hypothesis_truncated")
            del self.target[limit:]
            del self.delays[limit:]
        self.finished = True
        return words

    def run(self) -> None:
        while not self.source_exhausted:
            self.step()
        self.finish()

    def wall_ms(self) -> float:
        return (self.clock() - self._t0) * 1000.0


def run_session(audio: AudioTimeline, reference: str, background: BackgroundInfo | None,
                cfg: SessionConfig, *, asr: AsrBackend, llm: LlmBackend,
                sentence_id: str = "0", source_text: str | None = None,
                measure_wall: bool = True, fingerprint: str | None = None,
                session_hook: Callable[[Session], None] | None = None,
                keep_prompts: bool = False) -> TranslationRecord:
    session = Session(audio, asr, llm, cfg, background, keep_prompts=keep_prompts)
    session.run()
    if session_hook is not None:
        session_hook(session)
    return TranslationRecord(
        sentence_id=sentence_id,
        hypothesis=" ".join(session.target),
        reference=reference,
        delays=list(session.delays),
        trace=list(session.trace),
        source_duration=audio.total_duration,
        config_fingerprint=fingerprint or cfg.fingerprint(),
        wall_time=session.wall_ms() if measure_wall else None,
        source_words=[(w.word, w.available_at) for w in session.source],
        source_text=source_text,
        flags=list(session.flags),
    )
