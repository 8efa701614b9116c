"""Quality/latency curve on the demo corpus by sweeping the min-read gate.

With the scripted backend this runs in well under a second. Point it at a
real server with --llm-url/--llm-model to get a meaningful curve.
"""

import argparse
from pathlib import Path

from make_demo_data import write_demo
from simt.cli import RunConfig, cmd_curve

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", default=str(ROOT / "data" / "demo"))
    ap.add_argument("--out", default=str(ROOT / "runs" / "demo_curve"))
    ap.add_argument("--sweep", type=float, nargs="+", default=[600, 900, 1200, 1500, 1800])
    ap.add_argument("--llm-url")
    ap.add_argument("--llm-model")
    args = ap.parse_args()

    data = Path(args.data)
    if not (data / "manifest.jsonl").exists():
        write_demo(data)
    cfg = RunConfig(manifest=str(data / "manifest.jsonl"), out_dir=args.out, sweep=args.sweep,
                    llm_url=args.llm_url, llm_model=args.llm_model,
                    llm_script=None if args.llm_url else str(data / "llm_script.json"),
                    force=True)
    rows, code = cmd_curve(cfg)
    print(f"{'min_read':>9} {'BLEU':>7} {'AL':>8} {'LAAL':>8}")
    for r in rows:
        if "error" in r:
            print(f"{r['min_read_time']:>9g}  failed: {r['error']}")
            continue
        print(f"{r['min_read_time']:>9g} {r['bleu']:7.2f} {r['al_ms']:8.1f} {r['laal_ms']:8.1f}")
    print(f"curve written to {Path(args.out) / 'curve.csv'}")
    return code


if __name__ == "__main__":
    raise SystemExit(main())
