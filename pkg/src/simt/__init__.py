"""Simultaneous speech translation with a prompted LLM over streaming ASR, plus evaluation."""

from .asr_stream import (AudioTimeline, FixtureAsrBackend, TimedWord, TranscriptState,
                         drain_word, finalize, ingest_chunk)
from .llm_backend import (Carry, EndOfTurn, ScriptBook, ScriptedBackend, TokenEvent, Word,
                          complete_to_end, complete_word)
from .metrics import (DelaySequence, MetricReport, aggregate_report, average_lagging,
                      corpus_bleu, length_aware_average_lagging, real_time_factor,
                      word_error_rate)
from .policy import Action, Session, SessionConfig, TranslationRecord, run_session
from .prompt_builder import (BackgroundInfo, ChatTemplate, NamedEntity, PromptSpec,
                             build_extraction_prompt, load_background,
                             parse_extraction_response, render_prompt)

__all__ = [
    "AudioTimeline",
    "FixtureAsrBackend",
    "TimedWord",
    "TranscriptState",
    "drain_word",
    "finalize",
    "ingest_chunk",
    "Carry",
    "EndOfTurn",
    "ScriptBook",
    "ScriptedBackend",
    "TokenEvent",
    "Word",
    "complete_to_end",
    "complete_word",
    "DelaySequence",
    "MetricReport",
    "aggregate_report",
    "average_lagging",
    "corpus_bleu",
    "length_aware_average_lagging",
    "real_time_factor",
    "word_error_rate",
    "Action",
    "Session",
    "SessionConfig",
    "TranslationRecord",
    "run_session",
    "BackgroundInfo",
    "ChatTemplate",
    "NamedEntity",
    "PromptSpec",
    "build_extraction_prompt",
    "load_background",
    "parse_extraction_response",
    "render_prompt",
]

__version__ = "0.1.0"
