"""Incremental speech recognition by repeated re-transcription of a growing prefix.

Audio is consumed in fixed chunks. After each chunk the whole prefix read so
far is transcribed again, and the newly visible words are queued in a word
buffer. The final word of every mid-stream transcription is withheld because
the recognizer tends to get it wrong while the speaker is still mid-word; it
is only released once the full timeline has been read.

Words that have been handed to the translator (``committed``) never change.
Revisions from later transcriptions only affect the uncommitted tail.
"""

from __future__ import annotations

import io
import logging
import wave
from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np

from .errors import PreconditionError, ReconciliationError, TransientError

log = logging.getLogger(__name__)

SAMPLE_RATE = 16_000
DEFAULT_CHUNK_MS = 200.0


@dataclass(frozen=True)
class TimedWord:
    """One fixture word; it becomes recognizable once the prefix covers ``end_ms``."""

    word: str
    end_ms: float
    surface_override: str | None = None

    @property
    def surface(self) -> str:
        return self.surface_override if self.surface_override is not None else self.word


@dataclass(frozen=True)
class AudioTimeline:
    total_duration: float
    chunk_duration: float = DEFAULT_CHUNK_MS
    words: tuple[TimedWord, ...] | None = None
    samples: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.chunk_duration <= 0:
            raise PreconditionError("chunk_duration must be positive")
        if self.total_duration < 0:
            raise PreconditionError("total_duration must be non-negative")
        if self.words is not None and self.samples is not None:
            raise PreconditionError("timeline holds either samples or fixture words, not both")

    @property
    def simulated(self) -> bool:
        return self.samples is None

    def with_chunk(self, chunk_duration: float) -> AudioTimeline:
        return replace(self, chunk_duration=chunk_duration)

    def prefix_samples(self, upto_ms: float) -> np.ndarray:
        if self.samples is None:
            raise PreconditionError("fixture timeline has no samples")
        n = int(round(upto_ms * SAMPLE_RATE / 1000.0))
        return self.samples[:n]


@dataclass(frozen=True)
class StampedWord:
    word: str
    available_at: float


@dataclass(frozen=True)
class TranscriptState:
    committed: tuple[StampedWord, ...] = ()
    pending: tuple[StampedWord, ...] = ()
    audio_cursor: float = 0.0
    audio_finished: bool = False
    # latest raw transcription, kept for invariant checks and debugging
    last_raw: tuple[str, ...] = ()

    @property
    def committed_words(self) -> list[str]:
        return [w.word for w in self.committed]

    @property
    def visible_words(self) -> list[str]:
        return [w.word for w in self.committed + self.pending]

    @property
    def exhausted(self) -> bool:
        """True once the audio is finished and the word buffer is empty."""
        return self.audio_finished and not self.pending


class AsrBackend(Protocol):
    def transcribe(self, timeline: AudioTimeline, upto_ms: float) -> list[str]:
        """Return the word list for the audio prefix ``[0, upto_ms)``."""
        ...


class FixtureAsrBackend:
    """Simulated recognizer over a timed-transcript fixture.

    A word is recognized once the prefix reaches its end time. Surface
    overrides stand in for recognition errors.
    """

    def transcribe(self, timeline: AudioTimeline, upto_ms: float) -> list[str]:
        if timeline.words is None:
            raise PreconditionError("FixtureAsrBackend needs a fixture timeline")
        return [w.surface for w in timeline.words if w.end_ms <= upto_ms]

    def ping(self) -> None:
        return None


def _wav_bytes(samples: np.ndarray) -> bytes:
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(SAMPLE_RATE)
        wf.writeframes(np.asarray(samples, dtype="<i2").tobytes())
    return buf.getvalue()


class HttpAsrBackend:
    """Client for an OpenAI-compatible ``/v1/audio/transcriptions`` service.

    Each call uploads the whole prefix as a 16 kHz 16-bit mono WAV file.
    """

    def __init__(self, base_url: str, model: str, *, api_key: str | None = None,
                 language: str = "en", timeout: float = 30.0, client=None):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.model = model
        self.language = language
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(timeout=timeout, headers=headers)

    def ping(self) -> None:
        import httpx

        try:
            self._client.get(f"{self.base_url}/v1/models").raise_for_status()
        except httpx.HTTPError as e:
            raise TransientError(f"ASR service unreachable: {e}") from e

    def transcribe(self, timeline: AudioTimeline, upto_ms: float) -> list[str]:
        import httpx

        audio = _wav_bytes(timeline.prefix_samples(upto_ms))
        try:
            resp = self._client.post(
                f"{self.base_url}/v1/audio/transcriptions",
                files={"file": ("prefix.wav", audio, "audio/wav")},
                data={"model": self.model, "language": self.language,
                      "temperature": "0", "response_format": "json"},
            )
            resp.raise_for_status()
            text = resp.json()["text"]
        except (httpx.HTTPError, KeyError, ValueError) as e:
            raise TransientError(f"transcription failed: {e}") from e
        return text.split()


def _reconcile(state: TranscriptState, visible: Sequence[str], cursor: float,
               strict: bool) -> tuple[StampedWord, ...]:
    n_committed = len(state.committed)
    if len(visible) < n_committed:
        if strict:
            raise ReconciliationError(
                f"transcription has {len(visible)} usable words but {n_committed} are committed")
        return ()
    for old, new in zip(state.committed, visible):
        if old.word != new:
            log.debug("ignoring revision of committed word %r -> %r", old.word, new)
    tail = visible[n_committed:]
    # keep stamps for the part of the old buffer that survived unchanged
    keep = 0
    for old, new in zip(state.pending, tail):
        if old.word != new:
            break
        keep += 1
    fresh = tuple(StampedWord(w, cursor) for w in tail[keep:])
    return state.pending[:keep] + fresh


def ingest_chunk(state: TranscriptState, timeline: AudioTimeline, backend: AsrBackend,
                 *, strict: bool = True) -> TranscriptState:
    """Read one more chunk of audio and refresh the word buffer.

    With ``strict=False`` a transcription that got shorter than the committed
    prefix still advances the cursor but clears the buffer instead of raising.
    """
    if state.audio_finished:
        raise PreconditionError("audio already finished")
    if timeline.total_duration == 0:
        return replace(state, audio_finished=True)
    if state.audio_cursor >= timeline.total_duration:
        raise PreconditionError("no chunks remain; call finalize")

    cursor = min(state.audio_cursor + timeline.chunk_duration, timeline.total_duration)
    raw = tuple(backend.transcribe(timeline, cursor))
    complete = cursor >= timeline.total_duration
    visible = raw if complete else raw[:-1]
    pending = _reconcile(state, visible, cursor, strict)
    return replace(state, pending=pending, audio_cursor=cursor,
                   audio_finished=complete, last_raw=raw)


def drain_word(state: TranscriptState) -> tuple[TranscriptState, StampedWord | None]:
    """Move the head of the word buffer into the committed list."""
    if not state.pending:
        return state, None
    head = state.pending[0]
    return replace(state, committed=state.committed + (head,), pending=state.pending[1:]), head


def finalize(state: TranscriptState, backend: AsrBackend, timeline: AudioTimeline,
             *, strict: bool = True) -> TranscriptState:
    """Transcribe the whole timeline once more and release the withheld tail word.

    Any audio not yet ingested is consumed here. Idempotent on a finished state.
    """
    if state.audio_finished:
        return state
    cursor = timeline.total_duration
    if cursor == 0:
        return replace(state, audio_finished=True)
    raw = tuple(backend.transcribe(timeline, cursor))
    pending = _reconcile(state, raw, cursor, strict)
    return replace(state, pending=pending, audio_cursor=cursor,
                   audio_finished=True, last_raw=raw)


def stream_all(timeline: AudioTimeline, backend: AsrBackend) -> list[TranscriptState]:
    """Ingest a whole timeline without draining; returns the state after every chunk."""
    state = TranscriptState()
    history = [state]
    while not state.audio_finished:
        state = ingest_chunk(state, timeline, backend)
        history.append(state)
    return history
