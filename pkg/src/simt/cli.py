"""Command-line harness: run, curve, extract-background, score.

Exit codes: 0 success, 1 configuration error, 2 backend unreachable,
3 some sessions (or talks, or sweep points) failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

from .asr_stream import FixtureAsrBackend, HttpAsrBackend
from .datasets import Manifest, ManifestEntry, load_manifest
from .errors import (ExtractionError, ManifestError, RecordFormatError, SimtError,
                     TransientError)
from .llm_backend import (CompletionClient, ScriptBook, ScriptedResponder, load_responses)
from .metrics import DEFAULT_TOKENIZE, MetricReport, aggregate_report, write_curve_csv
from .policy import SessionConfig, TranslationRecord, run_session
from .prompt_builder import (build_extraction_prompt, parse_extraction_response,
                             wrap_user_turn)

log = logging.getLogger("simt")

EXIT_OK, EXIT_CONFIG, EXIT_BACKEND, EXIT_PARTIAL = 0, 1, 2, 3

RECORDS = "records.jsonl"
REPORT = "report.json"
REPORT_CSV = "report.csv"
PROMPTS = "prompts.jsonl"
ERRORS = "errors.jsonl"


class ConfigError(SimtError):
    pass


@dataclass
class RunConfig:
    manifest: str
    out_dir: str
    session: SessionConfig = field(default_factory=SessionConfig)
    llm_url: str | None = None
    llm_model: str | None = None
    llm_script: str | None = None
    llm_streaming: bool = True
    asr_url: str | None = None
    asr_model: str | None = None
    background_dir: str | None = None
    sweep: list[float] = field(default_factory=list)
    parallel: int | None = None
    resume: bool = False
    force: bool = False
    dump_prompts: bool = False
    tokenize: str = DEFAULT_TOKENIZE
    limit: int | None = None

    def validate(self) -> None:
        if (self.llm_url is None) == (self.llm_script is None):
            raise ConfigError("give exactly one of --llm-url / --llm-script")
        if self.llm_url and not self.llm_model:
            raise ConfigError("--llm-url needs --llm-model")
        if self.asr_url and not self.asr_model:
            raise ConfigError("--asr-url needs --asr-model")
        if any(b <= a for a, b in zip(self.sweep, self.sweep[1:])):
            raise ConfigError("sweep values must be strictly increasing")
        if self.parallel is not None and self.parallel < 1:
            raise ConfigError("--parallel must be >= 1")

    @property
    def live_llm(self) -> bool:
        return self.llm_url is not None

    @property
    def workers(self) -> int:
        if self.parallel is not None:
            return self.parallel
        # uncontended timing when wall time feeds RTF
        return 1 if self.live_llm else min(8, os.cpu_count() or 1)

    def fingerprint(self) -> str:
        backend = {"llm": self.llm_model or "script", "asr": self.asr_model or "fixture",
                   "tokenize": self.tokenize}
        return self.session.fingerprint(backend)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["session"] = self.session.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        d = dict(d)
        if isinstance(d.get("session"), dict):
            d["session"] = SessionConfig.from_dict(d["session"])
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class RunResult:
    records: list[TranslationRecord]
    report: MetricReport | None
    exit_code: int
    out_dir: Path
    failures: list[dict] = field(default_factory=list)


def read_records(path: str | Path, *, repair_tail: bool = False) -> list[TranslationRecord]:
    """Parse a record log. A torn final line is dropped when ``repair_tail`` is set."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines(keepends=True)
    out = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            out.append(TranslationRecord.from_dict(json.loads(line)))
        except (ValueError, KeyError, TypeError) as e:
            if repair_tail and lineno == len(lines):
                log.warning("dropping torn last line of %s", path)
                keep = "".join(lines[:-1])
                path.write_text(keep, encoding="utf-8")
                break
            raise RecordFormatError(str(e), lineno) from None
    return out


def _build_llm(cfg: RunConfig):
    if cfg.live_llm:
        client = CompletionClient(cfg.llm_url, cfg.llm_model,
                                  api_key=os.environ.get("SIMT_LLM_API_KEY"),
                                  stop=(cfg.session.template.turn_end,),
                                  streaming=cfg.llm_streaming)
        return client, (lambda _id: client)
    try:
        book = ScriptBook.load(cfg.llm_script)
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read LLM script: {e}") from None
    return book, book.for_session


def _build_asr(cfg: RunConfig, manifest: Manifest):
    fixture = FixtureAsrBackend()
    live = None
    if cfg.asr_url:
        live = HttpAsrBackend(cfg.asr_url, cfg.asr_model, api_key=os.environ.get("SIMT_ASR_API_KEY"))
    if live is None and any(e.audio_path for e in manifest.entries):
        raise ConfigError("manifest has audio entries; configure --asr-url")

    def pick(entry: ManifestEntry):
        return fixture if entry.fixture_path else live

    return live, pick


def cmd_run(cfg: RunConfig) -> RunResult:
    cfg.validate()
    out = Path(cfg.out_dir)
    try:
        manifest = load_manifest(cfg.manifest, cfg.background_dir)
    except (OSError, ManifestError) as e:
        raise ConfigError(f"manifest: {e}") from None

    llm_root, llm_for = _build_llm(cfg)
    asr_live, asr_for = _build_asr(cfg, manifest)
    for backend in (llm_root, asr_live):
        if backend is not None:
            backend.ping()  # TransientError -> exit 2 before any session starts

    out.mkdir(parents=True, exist_ok=True)
    rec_path = out / RECORDS
    done: list[TranslationRecord] = []
    if rec_path.exists() and rec_path.stat().st_size > 0:
        if cfg.resume:
            done = read_records(rec_path, repair_tail=True)
        elif not cfg.force:
            raise ConfigError(f"{rec_path} exists; pass --resume or --force")
        else:
            rec_path.unlink()
    done_ids = {r.sentence_id for r in done}
    todo = [e for e in manifest.entries if e.id not in done_ids]
    if cfg.limit is not None:
        todo = todo[:cfg.limit]

    fingerprint = cfg.fingerprint()
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, ensure_ascii=False))
    prompt_dumps: dict[str, list[dict]] = {}

    def job(entry: ManifestEntry) -> TranslationRecord:
        timeline = manifest.timeline(entry, cfg.session.chunk_duration)

        def keep(session):
            if cfg.dump_prompts:
                prompt_dumps[entry.id] = session.prompts

        return run_session(
            timeline, entry.reference, manifest.background_for(entry), cfg.session,
            asr=asr_for(entry), llm=llm_for(entry.id), sentence_id=entry.id,
            source_text=entry.source_text, measure_wall=cfg.live_llm,
            fingerprint=fingerprint, session_hook=keep, keep_prompts=cfg.dump_prompts,
        )

    failures = []
    new_records = []
    # futures are drained in manifest order so the log is reproducible under parallelism
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool, \
            open(rec_path, "a", encoding="utf-8") as sink:
        futures = [(e, pool.submit(job, e)) for e in todo]
        for entry, fut in futures:
            try:
                rec = fut.result()
            except Exception as e:  # noqa: BLE001 - any session failure is reported, not fatal
                log.error("session %s failed: %s", entry.id, e)
                failures.append({"id": entry.id, "error": f"{type(e).__name__}: {e}"})
                continue
            sink.write(rec.to_json() + "\n")
            sink.flush()
            new_records.append(rec)

    if failures:
        with open(out / ERRORS, "a", encoding="utf-8") as f:
            for fail in failures:
                f.write(json.dumps(fail, ensure_ascii=False) + "\n")
    if cfg.dump_prompts:
        with open(out / PROMPTS, "a", encoding="utf-8") as f:
            for entry in todo:
                for p in prompt_dumps.get(entry.id, []):
                    f.write(json.dumps({"id": entry.id, **p}, ensure_ascii=False) + "\n")

    by_id = {r.sentence_id: r for r in done + new_records}
    records = [by_id[e.id] for e in manifest.entries if e.id in by_id]
    report = None
    if records:
        report = aggregate_report(records, cfg.tokenize, fingerprint)
        write_report(report, out, min_read_time=cfg.session.min_read_time)
    code = EXIT_PARTIAL if failures else EXIT_OK
    return RunResult(records, report, code, out, failures)


def write_report(report: MetricReport, out: Path, **row) -> None:
    (out / REPORT).write_text(json.dumps(report.to_dict(), indent=1, ensure_ascii=False))
    write_curve_csv(out / REPORT_CSV, [report.row(**row)])


def cmd_curve(cfg: RunConfig) -> tuple[list[dict], int]:
    cfg.validate()
    if not cfg.sweep:
        raise ConfigError("curve needs at least one --sweep value")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    code = EXIT_OK
    for value in cfg.sweep:
        point = replace(cfg, session=replace(cfg.session, min_read_time=value),
                        out_dir=str(out / f"mrt_{value:g}"), sweep=[])
        try:
            res = cmd_run(point)
        except TransientError:
            raise
        except Exception as e:  # noqa: BLE001 - a failed point must not stop the sweep
            log.error("sweep point %g failed: %s", value, e)
            rows.append({"min_read_time": value, "error": str(e)})
            code = EXIT_PARTIAL
            continue
        if res.exit_code != EXIT_OK:
            code = EXIT_PARTIAL
        if res.report is None:
            rows.append({"min_read_time": value, "error": "no records"})
            continue
        rows.append(res.report.row(min_read_time=value))
    rows.sort(key=lambda r: r["min_read_time"])
    write_curve_csv(out / "curve.csv", rows)
    return rows, code


def cmd_extract_background(inputs: Sequence[str | Path], out_dir: str | Path, *,
                           llm_url: str | None = None, llm_model: str | None = None,
                           responses: str | Path | None = None, retries: int = 2) -> tuple[dict, int]:
    """Build one background document per input text; the talk id is the file stem."""
    if (llm_url is None) == (responses is None):
        raise ConfigError("give exactly one of --llm-url / --responses")
    if llm_url and not llm_model:
        raise ConfigError("--llm-url needs --llm-model")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if llm_url:
        client = CompletionClient(llm_url, llm_model, api_key=os.environ.get("SIMT_LLM_API_KEY"),
                                  streaming=False)
        client.ping()
        backend_for = lambda _tid: client  # noqa: E731
    else:
        table = load_responses(responses)
        backend_for = lambda tid: ScriptedResponder(table.get(tid, []))  # noqa: E731

    results: dict[str, str] = {}
    failures = []
    for path in map(Path, inputs):
        tid = path.stem
        if tid in results:
            raise ConfigError(f"two inputs share the talk id {tid!r}")
        prompt = wrap_user_turn(build_extraction_prompt(path.read_text(encoding="utf-8")))
        backend = backend_for(tid)
        last = None
        for attempt in range(retries + 1):
            try:
                info = parse_extraction_response(backend.complete(prompt))
            except (ExtractionError, TransientError) as e:
                last = e
                log.info("talk %s attempt %d failed: %s", tid, attempt + 1, e)
                continue
            target = out / f"{tid}.json"
            target.write_text(info.to_json(indent=2) + "\n", encoding="utf-8")
            results[tid] = str(target)
            break
        else:
            failures.append({"talk_id": tid, "attempts": retries + 1, "error": str(last)})
    if failures:
        with open(out / "failures.jsonl", "w", encoding="utf-8") as f:
            for fail in failures:
                f.write(json.dumps(fail, ensure_ascii=False) + "\n")
    return {"written": results, "failures": failures}, (EXIT_PARTIAL if failures else EXIT_OK)


def cmd_score(records_path: str | Path, references: str | Path | None = None,
              tokenize: str = DEFAULT_TOKENIZE, out_dir: str | Path | None = None) -> MetricReport:
    records = read_records(records_path)
    if not records:
        raise ConfigError("no records to score")
    if references is not None:
        manifest = load_manifest(references)
        refs = {e.id: e for e in manifest.entries}
        records = [replace(r, reference=refs[r.sentence_id].reference,
                           source_text=refs[r.sentence_id].source_text or r.source_text)
                   if r.sentence_id in refs else r for r in records]
    fps = {r.config_fingerprint for r in records}
    report = aggregate_report(records, tokenize, fps.pop() if len(fps) == 1 else None)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_report(report, out)
    return report


# --- argument parsing -------------------------------------------------------

def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    p.add_argument("--manifest")
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--llm-url")
    p.add_argument("--llm-model")
    p.add_argument("--llm-script", help="mock: JSON mapping sentence id -> fragment list")
    p.add_argument("--no-stream", dest="llm_streaming", action="store_false", default=None)
    p.add_argument("--asr-url")
    p.add_argument("--asr-model")
    p.add_argument("--background-dir")
    p.add_argument("--src-lang")
    p.add_argument("--tgt-lang")
    p.add_argument("--min-read-time", type=float, help="ms of audio before any WRITE")
    p.add_argument("--chunk", dest="chunk_duration", type=float, help="ms of audio per ASR chunk")
    p.add_argument("--no-priming", dest="priming_enabled", action="store_false", default=None)
    p.add_argument("--no-background", dest="background_enabled", action="store_false", default=None)
    p.add_argument("--no-read-on-write", dest="read_on_write", action="store_false", default=None)
    p.add_argument("--computation-aware", action="store_true", default=None)
    p.add_argument("--word-token-budget", type=int)
    p.add_argument("--suffix-token-budget", type=int)
    p.add_argument("--parallel", type=int)
    p.add_argument("--resume", action="store_true", default=None)
    p.add_argument("--force", action="store_true", default=None)
    p.add_argument("--limit", type=int, help="stop after this many new sessions")
    p.add_argument("--dump-prompts", action="store_true", default=None)
    p.add_argument("--tokenize", choices=["intl", "13a"])


_SESSION_FLAGS = {f.name for f in fields(SessionConfig)}


def config_from_args(args: argparse.Namespace) -> RunConfig:
    base: dict = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, ValueError) as e:
            raise ConfigError(f"config file: {e}") from None
    session = dict(base.pop("session", {}) or {})
    for key, val in vars(args).items():
        if val is None or key in ("cmd", "config", "verbose", "func"):
            continue
        if key in _SESSION_FLAGS:
            session[key] = val
        elif key == "sweep":
            base["sweep"] = list(val)
        else:
            base[key] = val
    base["session"] = SessionConfig.from_dict(session)
    if not base.get("manifest") or not base.get("out_dir"):
        raise ConfigError("--manifest and --out are required")
    return RunConfig.from_dict(base)


def _print_report(report: MetricReport) -> None:
    def fmt(x):
        return "n/a" if x is None else f"{x:.2f}"

    print(f"BLEU {report.bleu:.2f}  AL {fmt(report.al_ms)}  LAAL {fmt(report.laal_ms)}  "
          f"WER {fmt(report.wer)}  RTF {fmt(report.rtf)}  "
          f"n={report.n_records} excluded={report.n_excluded}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", help="translate every manifest entry and score the result")
    _add_run_args(run)

    curve = sub.add_parser("curve", help="sweep --min-read-time and write curve.csv")
    _add_run_args(curve)
    curve.add_argument("--sweep", type=float, nargs="+", help="min-read-time values in ms")

    ext = sub.add_parser("extract-background", help="build background documents from talk texts")
    ext.add_argument("inputs", nargs="+", help="one plain-text file per talk")
    ext.add_argument("--out", dest="out_dir", required=True)
    ext.add_argument("--llm-url")
    ext.add_argument("--llm-model")
    ext.add_argument("--responses", help="mock: JSON mapping talk id -> response(s)")
    ext.add_argument("--retries", type=int, default=2)

    score = sub.add_parser("score", help="recompute metrics from a record log")
    score.add_argument("records")
    score.add_argument("--references", help="manifest whose references replace the logged ones")
    score.add_argument("--tokenize", choices=["intl", "13a"], default=DEFAULT_TOKENIZE)
    score.add_argument("--out", dest="out_dir")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.cmd == "run":
            res = cmd_run(config_from_args(args))
            if res.report is not None:
                _print_report(res.report)
            return res.exit_code
        if args.cmd == "curve":
            rows, code = cmd_curve(config_from_args(args))
            for row in rows:
                print(json.dumps(row))
            return code
        if args.cmd == "extract-background":
            summary, code = cmd_extract_background(
                args.inputs, args.out_dir, llm_url=args.llm_url, llm_model=args.llm_model,
                responses=args.responses, retries=args.retries)
            print(json.dumps(summary, indent=1))
            return code
        if args.cmd == "score":
            report = cmd_score(args.records, args.references, args.tokenize, args.out_dir)
            _print_report(report)
            return EXIT_OK
    except TransientError as e:
        print(f"backend error: {e}", file=sys.stderr)
        return EXIT_BACKEND
    except (ConfigError, ManifestError, RecordFormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
