import random
from pathlib import Path

import hypothesis
import pytest
from hypothesis import strategies as st

from simt.asr_stream import AudioTimeline, TimedWord
from simt.llm_backend import EOT_MARK

hypothesis.settings.register_profile("default", max_examples=100, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.load_profile("default")

GOLDEN = Path(__file__).parent / "golden"

SRC_VOCAB = ["the", "early", "vote", "was", "held", "in", "March", "and", "results",
             "came", "late", "CPA", "kicks", "wellbore", "fluids"]
TGT_VOCAB = ["die", "Wahl", "wurde", "im", "März", "abgehalten", "und", "Ergebnisse",
             "kamen", "spät", "Bohrloch", "Flüssigkeiten", "vorzeitige", "Jahr,", "gut."]


def make_timeline(ends, words=None, chunk=200.0, total=None):
    words = words or [f"w{i}" for i in range(len(ends))]
    tw = tuple(TimedWord(w, float(e)) for w, e in zip(words, ends))
    return AudioTimeline(float(total if total is not None else (ends[-1] if ends else 0)),
                         chunk, words=tw)


def random_fixture(rng: random.Random, max_words=14, chunk=200.0):
    n = rng.randint(0, max_words)
    t = 0
    words = []
    for _ in range(n):
        t += rng.randint(60, 600)
        words.append(TimedWord(rng.choice(SRC_VOCAB), float(t)))
    total = float(t + rng.choice([0, 0, 150]))
    return AudioTimeline(total, chunk, words=tuple(words))


def random_script(rng: random.Random, n_words=None, eot_rate=0.35):
    """Fragments of a random target sentence with end-of-turn markers sprinkled in."""
    n_words = rng.randint(0, 12) if n_words is None else n_words
    out = []
    for i in range(n_words):
        w = rng.choice(TGT_VOCAB)
        lead = "" if i == 0 else " "
        if len(w) > 3 and rng.random() < 0.4:
            cut = rng.randint(1, len(w) - 1)
            out += [lead + w[:cut], w[cut:]]
        else:
            out.append(lead + w)
        while rng.random() < eot_rate:
            out.append(EOT_MARK)
    out.append(EOT_MARK)
    return out


def script_text(script):
    return " ".join("".join(x for x in script if x != EOT_MARK).split())


@st.composite
def timelines(draw, max_words=10):
    gaps = draw(st.lists(st.integers(1, 700), max_size=max_words))
    ends, t = [], 0
    for g in gaps:
        t += g
        ends.append(t)
    chunk = draw(st.sampled_from([100.0, 200.0, 300.0]))
    pad = draw(st.sampled_from([0, 0, 90]))
    words = draw(st.lists(st.sampled_from(SRC_VOCAB), min_size=len(ends), max_size=len(ends)))
    return make_timeline(ends, words, chunk=chunk, total=(ends[-1] + pad) if ends else pad)


@st.composite
def scripts(draw, max_words=10):
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(0, max_words))
    return random_script(random.Random(seed), n_words=n)


@pytest.fixture
def golden():
    return GOLDEN


# --- acceptance summary -------------------------------------------------------

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        prev = _criteria.get(n)
        # a criterion split over several tests fails if any part fails
        if prev is None or prev[0] == "PASS" or status == "FAIL":
            _criteria[n] = (status, title)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        status, title = _criteria[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {title}")
