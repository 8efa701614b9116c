"""Latency and quality metrics.

Latency uses source-time delays in milliseconds. Average lagging compares each
emitted word with an ideal translator that spreads the target evenly over the
source duration ``T``::

    AL = 1/tau * sum_{i=1..tau} (d_i - (i - 1) * T / |Y|)

where ``tau`` is the first index with ``d_i >= T``. The length-aware variant
replaces ``|Y|`` by ``max(|Y|, |Y_ref|)`` so over-generation is not rewarded.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

from .errors import PreconditionError, UndefinedMetricError

NGRAM_ORDER = 4
DEFAULT_TOKENIZE = "intl"


@dataclass(frozen=True)
class DelaySequence:
    delays: tuple[float, ...]
    source_duration: float
    ref_len: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "delays", tuple(float(d) for d in self.delays))
        if self.source_duration <= 0:
            raise UndefinedMetricError("source duration must be positive")
        if any(b < a for a, b in zip(self.delays, self.delays[1:])):
            raise PreconditionError("delays must be non-decreasing")
        if self.delays and self.delays[0] < 0:
            raise PreconditionError("delays must be non-negative")

    @property
    def hyp_len(self) -> int:
        return len(self.delays)


def _lagging(delays: Sequence[float], T: float, rate_len: int) -> float:
    step = T / rate_len
    total = 0.0
    tau = 0
    for i, d in enumerate(delays):
        total += d - i * step
        tau = i + 1
        if d >= T:
            break
    return total / tau


def average_lagging(d: DelaySequence) -> float:
    if d.hyp_len == 0:
        raise UndefinedMetricError("average lagging is undefined for an empty hypothesis")
    return _lagging(d.delays, d.source_duration, d.hyp_len)


def length_aware_average_lagging(d: DelaySequence) -> float:
    if d.hyp_len == 0:
        raise UndefinedMetricError("LAAL is undefined for an empty hypothesis")
    if not d.ref_len:
        raise UndefinedMetricError("LAAL needs a non-empty reference")
    return _lagging(d.delays, d.source_duration, max(d.hyp_len, d.ref_len))


# --- BLEU -------------------------------------------------------------------

class _IntlTokenizer:
    """mteval-v14 international tokenization: split off punctuation and symbols."""

    def __init__(self):
        import regex

        self._rules = [
            (regex.compile(r"(\P{N})(\p{P})"), r"\1 \2 "),
            (regex.compile(r"(\p{P})(\P{N})"), r" \1 \2"),
            (regex.compile(r"(\p{S})"), r" \1 "),
        ]

    def __call__(self, line: str) -> str:
        for rx, repl in self._rules:
            line = rx.sub(repl, line)
        return " ".join(line.split())


class _Tokenizer13a:
    """mteval-v13a tokenization."""

    def __init__(self):
        import re

        self._rules = [
            (re.compile(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])"), r" \1 "),
            (re.compile(r"([^0-9])([\.,])"), r"\1 \2 "),
            (re.compile(r"([\.,])([^0-9])"), r" \1 \2"),
            (re.compile(r"([0-9])(-)"), r"\1 \2 "),
        ]

    def __call__(self, line: str) -> str:
        line = line.replace("<skipped>", "").replace("-\n", "").replace("\n", " ")
        if "&" in line:
            line = (line.replace("&quot;", '"').replace("&amp;", "&")
                    .replace("&lt;", "<").replace("&gt;", ">"))
        line = f" {line} "
        for rx, repl in self._rules:
            line = rx.sub(repl, line)
        return " ".join(line.split())


@lru_cache(maxsize=None)
def get_tokenizer(name: str):
    if name == "intl":
        return _IntlTokenizer()
    if name == "13a":
        return _Tokenizer13a()
    if name == "none":
        return lambda s: " ".join(s.split())
    raise ValueError(f"unknown tokenizer {name!r}")


@dataclass
class BleuStats:
    correct: list[int] = field(default_factory=lambda: [0] * NGRAM_ORDER)
    total: list[int] = field(default_factory=lambda: [0] * NGRAM_ORDER)
    sys_len: int = 0
    ref_len: int = 0

    def __iadd__(self, other: BleuStats) -> BleuStats:
        for n in range(NGRAM_ORDER):
            self.correct[n] += other.correct[n]
            self.total[n] += other.total[n]
        self.sys_len += other.sys_len
        self.ref_len += other.ref_len
        return self


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def sentence_stats(hypothesis: str, reference: str, tokenize: str = DEFAULT_TOKENIZE) -> BleuStats:
    tok = get_tokenizer(tokenize)
    hyp = tok(hypothesis.rstrip()).split()
    ref = tok(reference.rstrip()).split()
    stats = BleuStats(sys_len=len(hyp), ref_len=len(ref))
    for n in range(1, NGRAM_ORDER + 1):
        h, r = _ngrams(hyp, n), _ngrams(ref, n)
        stats.correct[n - 1] = sum(min(c, r[g]) for g, c in h.items())
        stats.total[n - 1] = max(len(hyp) - n + 1, 0)
    return stats


def bleu_from_stats(stats: BleuStats) -> float:
    """Corpus BLEU with exponential ("mteval") smoothing of zero n-gram matches."""
    if not any(stats.correct):
        return 0.0
    logs = []
    halvings = 1.0
    for n in range(NGRAM_ORDER):
        if stats.total[n] == 0:
            return 0.0
        if stats.correct[n] == 0:
            halvings *= 2
            p = 100.0 / (halvings * stats.total[n])
        else:
            p = 100.0 * stats.correct[n] / stats.total[n]
        logs.append(math.log(p))
    if stats.correct == stats.total and stats.sys_len >= stats.ref_len:
        # a perfect match is exactly 100, without float drift from exp(log)
        return 100.0
    bp = 1.0
    if stats.sys_len < stats.ref_len:
        bp = math.exp(1 - stats.ref_len / stats.sys_len) if stats.sys_len else 0.0
    return bp * math.exp(sum(logs) / NGRAM_ORDER)


def corpus_bleu(hypotheses: Sequence[str], references: Sequence[str],
                tokenize: str = DEFAULT_TOKENIZE) -> float:
    if len(hypotheses) != len(references):
        raise PreconditionError(
            f"{len(hypotheses)} hypotheses but {len(references)} references")
    if not hypotheses:
        raise PreconditionError("empty corpus")
    stats = BleuStats()
    for h, r in zip(hypotheses, references):
        stats += sentence_stats(h, r, tokenize)
    return bleu_from_stats(stats)


# --- WER --------------------------------------------------------------------

def word_edit_distance(hyp: Sequence[str], ref: Sequence[str]) -> int:
    prev = list(range(len(ref) + 1))
    for i, hw in enumerate(hyp, 1):
        cur = [i] + [0] * len(ref)
        for j, rw in enumerate(ref, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (hw != rw))
        prev = cur
    return prev[-1]


def word_error_rate(hypothesis: str, reference: str) -> float:
    ref = reference.split()
    if not ref:
        raise UndefinedMetricError("WER is undefined for an empty reference")
    return word_edit_distance(hypothesis.split(), ref) / len(ref)


def real_time_factor(wall_time: float, audio_duration: float) -> float:
    if audio_duration <= 0:
        raise PreconditionError("audio duration must be positive")
    return wall_time / audio_duration


def corpus_rtf(wall_times: Iterable[float], durations: Iterable[float]) -> float:
    """Total wall time over total audio, not the mean of per-clip ratios."""
    return real_time_factor(sum(wall_times), sum(durations))


# --- aggregation ------------------------------------------------------------

@dataclass
class SentenceMetrics:
    sentence_id: str
    al_ms: float | None
    laal_ms: float | None
    wer: float | None
    rtf: float | None
    hyp_len: int
    ref_len: int
    excluded: str | None = None


@dataclass
class MetricReport:
    bleu: float
    al_ms: float | None
    laal_ms: float | None
    wer: float | None
    rtf: float | None
    n_records: int
    n_excluded: int
    tokenize: str
    config_fingerprint: str
    per_sentence: list[SentenceMetrics] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> MetricReport:
        d = dict(d)
        d["per_sentence"] = [SentenceMetrics(**s) for s in d.get("per_sentence", [])]
        return cls(**d)

    def row(self, **extra) -> dict:
        return {**extra, "bleu": self.bleu, "al_ms": self.al_ms, "laal_ms": self.laal_ms,
                "wer": self.wer, "rtf": self.rtf, "config_fingerprint": self.config_fingerprint}


def _mean(xs: list[float]) -> float | None:
    return sum(xs) / len(xs) if xs else None


def sentence_metrics(rec, tokenize: str = DEFAULT_TOKENIZE) -> SentenceMetrics:
    hyp_len = len(rec.hypothesis.split())
    ref_len = len(get_tokenizer("none")(rec.reference).split())
    wer = None
    if rec.source_text and rec.source_text.split():
        wer = word_error_rate(" ".join(w for w, _ in rec.source_words), rec.source_text)
    rtf = None
    if rec.wall_time is not None and rec.source_duration > 0:
        rtf = real_time_factor(rec.wall_time, rec.source_duration)
    try:
        seq = DelaySequence(tuple(rec.delays), rec.source_duration, ref_len)
        al = average_lagging(seq)
        laal = length_aware_average_lagging(seq)
        excluded = None
    except (UndefinedMetricError, PreconditionError) as e:
        al = laal = None
        excluded = str(e)
    return SentenceMetrics(rec.sentence_id, al, laal, wer, rtf, hyp_len, ref_len, excluded)


def aggregate_report(records: Sequence, tokenize: str = DEFAULT_TOKENIZE,
                     config_fingerprint: str | None = None) -> MetricReport:
    """Corpus BLEU, mean AL/LAAL, corpus WER and corpus RTF over a record set.

    Records whose latency is undefined (e.g. empty hypothesis) still count
    towards BLEU but are left out of the latency means.
    """
    if not records:
        raise PreconditionError("no records to aggregate")
    per = [sentence_metrics(r, tokenize) for r in records]
    bleu = corpus_bleu([r.hypothesis for r in records], [r.reference for r in records], tokenize)
    ok = [p for p in per if p.excluded is None]

    edits = ref_words = 0
    for r in records:
        if r.source_text and r.source_text.split():
            ref = r.source_text.split()
            edits += word_edit_distance([w for w, _ in r.source_words], ref)
            ref_words += len(ref)
    wer = edits / ref_words if ref_words else None

    rtf = None
    if all(r.wall_time is not None for r in records):
        total_audio = sum(r.source_duration for r in records)
        if total_audio > 0:
            rtf = corpus_rtf([r.wall_time for r in records], [r.source_duration for r in records])

    if config_fingerprint is None:
        fps = sorted({r.config_fingerprint for r in records})
        config_fingerprint = fps[0] if len(fps) == 1 else "+".join(fps)
    return MetricReport(
        bleu=bleu,
        al_ms=_mean([p.al_ms for p in ok]),
        laal_ms=_mean([p.laal_ms for p in ok]),
        wer=wer,
        rtf=rtf,
        n_records=len(records),
        n_excluded=len(per) - len(ok),
        tokenize=tokenize,
        config_fingerprint=config_fingerprint,
        per_sentence=per,
    )


CURVE_FIELDS = ["min_read_time", "bleu", "al_ms", "laal_ms", "wer", "rtf", "config_fingerprint"]


def write_curve_csv(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=CURVE_FIELDS, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in CURVE_FIELDS})
