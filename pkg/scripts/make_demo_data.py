"""Write the small demo corpus under data/demo.

Two talks, five sentences. Word end times are synthetic (a fixed cost per
word plus a per-character cost) and the LLM script interleaves words with
end-of-turn markers so that runs exercise both READ and WRITE.
"""

import argparse
import json
from pathlib import Path

from simt.asr_stream import TimedWord
from simt.datasets import Manifest, ManifestEntry, dump_timed_transcript
from simt.llm_backend import EOT_MARK, ScriptBook
from simt.prompt_builder import BackgroundInfo, NamedEntity

SENTENCES = [
    ("s1", "t1", "Early elections are being held in the country this year",
     "Vorzeitige Wahlen werden in diesem Jahr im Land abgehalten."),
    ("s2", "t1", "The Bundestag voted on the new budget on Friday",
     "Der Bundestag stimmte am Freitag über den neuen Haushalt ab."),
    ("s3", "t1", "Turnout was higher than expected",
     "Die Wahlbeteiligung war höher als erwartet."),
    ("s4", "t2", "The wellbore was flooded with drilling fluid",
     "Das Bohrloch wurde mit Bohrspülung geflutet."),
    ("s5", "t2", "Engineers detected a kick early in the shift",
     "Die Ingenieure erkannten früh in der Schicht einen Zufluss."),
]

# simulated recognition errors: fixture word -> what the recognizer hears
MISHEARD = {("s5", "kick"): "kit"}

BACKGROUNDS = {
    "t1": BackgroundInfo("Elections in Germany", (
        NamedEntity("Bundestag", "German federal parliament"),
        NamedEntity("turnout", "share of eligible voters who voted"),
    )),
    "t2": BackgroundInfo("Offshore drilling safety", (
        NamedEntity("wellbore", "the drilled hole of an oil well"),
        NamedEntity("kick", "unplanned influx of formation fluid into the wellbore"),
    )),
}

TALKS = {
    "t1": "Early elections are being held in the country this year. The Bundestag voted "
          "on the new budget on Friday. Turnout was higher than expected.",
    "t2": "The wellbore was flooded with drilling fluid. Engineers detected a kick early "
          "in the shift and closed the blowout preventer.",
}


def timed_words(sid, text):
    t = 0.0
    out = []
    for w in text.split():
        t += 120 + 45 * len(w)
        out.append(TimedWord(w, t, MISHEARD.get((sid, w))))
    return out


def fragments(translation, every=2):
    """Split a translation into word fragments with an end of turn after every ``every`` words."""
    out = []
    for i, w in enumerate(translation.split()):
        lead = "" if i == 0 else " "
        if len(w) > 6:
            out += [lead + w[:3], w[3:]]
        else:
            out.append(lead + w)
        if i % every == every - 1:
            out.append(EOT_MARK)
    out.append(EOT_MARK)
    return out


def write_demo(root: Path) -> None:
    (root / "fixtures").mkdir(parents=True, exist_ok=True)
    (root / "backgrounds").mkdir(exist_ok=True)
    (root / "talks").mkdir(exist_ok=True)
    entries = []
    for sid, tid, src, ref in SENTENCES:
        dump_timed_transcript(timed_words(sid, src), root / "fixtures" / f"{sid}.jsonl")
        entries.append(ManifestEntry(sid, ref, fixture_path=f"fixtures/{sid}.jsonl",
                                     source_text=src, background_id=tid, talk_id=tid))
    Manifest(entries).dump(root / "manifest.jsonl")
    for tid, info in BACKGROUNDS.items():
        (root / "backgrounds" / f"{tid}.json").write_text(info.to_json(indent=2) + "\n")
    for tid, text in TALKS.items():
        (root / "talks" / f"{tid}.txt").write_text(text + "\n")
    ScriptBook({sid: fragments(ref) for sid, _, _, ref in SENTENCES}).dump(root / "llm_script.json")
    # mock extraction replies: chatty wrapper around the document, as real models do
    responses = {tid: "Here is the JSON:\n```json\n" + info.to_json(indent=2) + "\n```"
                 for tid, info in BACKGROUNDS.items()}
    (root / "extraction_responses.json").write_text(json.dumps(responses, indent=1) + "\n")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "data" / "demo"))
    write_demo(Path(ap.parse_args().out))
