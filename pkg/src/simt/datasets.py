"""Manifest-driven evaluation sets.

A manifest is JSONL with one sentence per line::

    {"id": "s1", "fixture_path": "fixtures/s1.jsonl", "reference": "...",
     "source_text": "...", "talk_id": "t1", "background_id": "t1"}

Exactly one of ``audio_path`` / ``fixture_path`` must be set. Relative paths
are resolved against the manifest's directory. Background documents live in
``<manifest dir>/backgrounds/<background_id>.json`` unless another directory
is given.
"""

from __future__ import annotations

import json
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .asr_stream import DEFAULT_CHUNK_MS, SAMPLE_RATE, AudioTimeline, TimedWord
from .errors import AudioFormatError, BackgroundError, ManifestError
from .prompt_builder import BackgroundInfo, load_background

# sentence counts of the public evaluation sets, used to sanity-check manifests
KNOWN_SIZES = {
    "TED-TST-2023": 102,
    "TED-TST-2024": 478,
    "FLEURS": 642,
    "AmbiEval": 96,
}

_ENTRY_KEYS = ("id", "audio_path", "fixture_path", "reference", "source_text",
               "background_id", "talk_id")


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    reference: str
    audio_path: str | None = None
    fixture_path: str | None = None
    source_text: str | None = None
    background_id: str | None = None
    talk_id: str | None = None

    def __post_init__(self):
        if (self.audio_path is None) == (self.fixture_path is None):
            raise ManifestError(f"entry {self.id!r}: set exactly one of audio_path / fixture_path")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in _ENTRY_KEYS if getattr(self, k) is not None}


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    base_dir: Path = Path(".")
    backgrounds: dict[str, BackgroundInfo] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p

    def background_for(self, entry: ManifestEntry) -> BackgroundInfo | None:
        if entry.background_id is None:
            return None
        return self.backgrounds[entry.background_id]

    def timeline(self, entry: ManifestEntry, chunk_duration: float = DEFAULT_CHUNK_MS) -> AudioTimeline:
        if entry.fixture_path is not None:
            return load_timed_transcript(self.resolve(entry.fixture_path), chunk_duration)
        return read_audio(self.resolve(entry.audio_path), chunk_duration)

    def check_size(self, dataset: str) -> None:
        expected = KNOWN_SIZES[dataset]
        if len(self.entries) != expected:
            raise ManifestError(f"{dataset} has {expected} sentences, manifest has {len(self.entries)}")

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.to_dict(), ensure_ascii=False) + "\n" for e in self.entries)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


def parse_manifest(text: str, base_dir: Path = Path("."),
                   background_dir: Path | None = None) -> Manifest:
    entries = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as e:
            raise ManifestError(f"line {lineno}: {e.msg}") from None
        if "id" not in d or "reference" not in d:
            raise ManifestError(f"line {lineno}: 'id' and 'reference' are required")
        kw = {k: d.get(k) for k in _ENTRY_KEYS}
        kw["id"] = str(kw["id"])
        try:
            entries.append(ManifestEntry(**kw))
        except ManifestError as e:
            raise ManifestError(f"line {lineno}: {e}") from None

    ids = [e.id for e in entries]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise ManifestError(f"duplicate ids: {', '.join(dupes)}")

    bg_dir = background_dir if background_dir is not None else base_dir / "backgrounds"
    backgrounds: dict[str, BackgroundInfo] = {}
    missing = []
    for e in entries:
        bid = e.background_id
        if bid is None or bid in backgrounds:
            continue
        path = bg_dir / f"{bid}.json"
        if not path.is_file():
            missing.append(f"{e.id} -> {bid}")
            continue
        try:
            backgrounds[bid] = load_background(path.read_text(encoding="utf-8"))
        except BackgroundError as err:
            raise ManifestError(f"background {bid!r}: {err}") from None
    if missing:
        raise ManifestError("dangling background ids: " + "; ".join(missing))
    return Manifest(entries, base_dir, backgrounds)


def load_manifest(path: str | Path, background_dir: str | Path | None = None) -> Manifest:
    path = Path(path)
    return parse_manifest(path.read_text(encoding="utf-8"), path.parent,
                          Path(background_dir) if background_dir is not None else None)


def parse_timed_transcript(text: str, chunk_duration: float = DEFAULT_CHUNK_MS) -> AudioTimeline:
    words = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as e:
            raise ManifestError(f"fixture line {lineno}: {e.msg}") from None
        try:
            words.append(TimedWord(str(d["word"]), float(d["end_ms"]), d.get("surface_override")))
        except KeyError as e:
            raise ManifestError(f"fixture line {lineno}: missing {e}") from None
    for a, b in zip(words, words[1:]):
        if b.end_ms < a.end_ms:
            raise ManifestError(f"end times go backwards at {b.word!r} ({a.end_ms} -> {b.end_ms})")
    if words and words[0].end_ms < 0:
        raise ManifestError("negative end time")
    total = words[-1].end_ms if words else 0.0
    return AudioTimeline(total, chunk_duration, words=tuple(words))


def load_timed_transcript(path: str | Path, chunk_duration: float = DEFAULT_CHUNK_MS) -> AudioTimeline:
    return parse_timed_transcript(Path(path).read_text(encoding="utf-8"), chunk_duration)


def dump_timed_transcript(words, path: str | Path) -> None:
    lines = []
    for w in words:
        d = {"word": w.word, "end_ms": w.end_ms}
        if w.surface_override is not None:
            d["surface_override"] = w.surface_override
        lines.append(json.dumps(d, ensure_ascii=False))
    Path(path).write_text("".join(l + "\n" for l in lines), encoding="utf-8")


def read_audio(path: str | Path, chunk_duration: float = DEFAULT_CHUNK_MS) -> AudioTimeline:
    """Load a 16 kHz, 16-bit mono WAV file. Other formats are rejected, never resampled."""
    try:
        with wave.open(str(path), "rb") as wf:
            rate, channels, width = wf.getframerate(), wf.getnchannels(), wf.getsampwidth()
            if rate != SAMPLE_RATE or channels != 1 or width != 2:
                raise AudioFormatError(
                    f"{path}: need {SAMPLE_RATE} Hz 16-bit mono, got {rate} Hz, "
                    f"{8 * width}-bit, {channels} channel(s)")
            frames = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as e:
        raise AudioFormatError(f"{path}: {e}") from None
    samples = np.frombuffer(frames, dtype="<i2").copy()
    return AudioTimeline(len(samples) * 1000.0 / SAMPLE_RATE, chunk_duration, samples=samples)
