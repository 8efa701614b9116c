"""Background / response-priming ablation on a manifest.

Runs the four on/off combinations and prints one row each. A scripted
backend ignores the prompt, so all rows agree; the ablation only says
something against a real model (--llm-url, --llm-model). Without those the
in-process copy server from mock_completion_server.py is used, which is
enough to check the plumbing.
"""

import argparse
import itertools
from pathlib import Path

from make_demo_data import write_demo
from mock_completion_server import start
from simt.cli import RunConfig, cmd_run
from simt.policy import SessionConfig

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--manifest", default=str(ROOT / "data" / "demo" / "manifest.jsonl"))
    ap.add_argument("--out", default=str(ROOT / "runs" / "ablation"))
    ap.add_argument("--min-read-time", type=float, default=1200)
    ap.add_argument("--llm-url")
    ap.add_argument("--llm-model", default="copy")
    args = ap.parse_args()

    manifest = Path(args.manifest)
    if not manifest.exists():
        write_demo(manifest.parent)
    url = args.llm_url
    if url is None:
        server = start()
        url = f"http://127.0.0.1:{server.server_address[1]}"

    print(f"{'background':>10} {'priming':>8} {'BLEU':>7} {'AL':>8} {'LAAL':>8} {'RTF':>7}")
    for bg, prime in itertools.product([True, False], repeat=2):
        session = SessionConfig(min_read_time=args.min_read_time, background_enabled=bg,
                                priming_enabled=prime)
        name = f"bg{int(bg)}_prime{int(prime)}"
        res = cmd_run(RunConfig(manifest=str(manifest), out_dir=str(Path(args.out) / name),
                                session=session, llm_url=url, llm_model=args.llm_model,
                                force=True))
        r = res.report
        print(f"{str(bg):>10} {str(prime):>8} {r.bleu:7.2f} {r.al_ms:8.1f} {r.laal_ms:8.1f} "
              f"{r.rtf:7.3f}")


if __name__ == "__main__":
    main()
