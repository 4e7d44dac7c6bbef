#!/usr/bin/env python3
"""Generate a corpus (if needed) and benchmark all four methods on it.

Equivalent to:

    mmorph synth --out <workdir>/corpus --count N ...
    mmorph bench --corpus <workdir>/corpus --out <workdir>/bench

but keeps everything in one reproducible invocation.
"""

import argparse
import sys
from pathlib import Path

from mmorph.bench import (
    BenchConfig,
    run_bench,
    spec_for_method,
    summarize,
    write_rows_csv,
    write_summary_json,
)
from mmorph.io import write_corpus
from mmorph.synth import SynthConfig


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", default="benchmark_out")
    ap.add_argument("--count", type=int, default=50)
    ap.add_argument("--size", type=int, default=96)
    ap.add_argument("--frames", type=int, default=3)
    ap.add_argument("--freq", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--split", default="test", choices=("train", "val", "test"))
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument(
        "--methods", default="direct,compose,mmorph-1,mmorph-2",
        help="comma-separated method names",
    )
    args = ap.parse_args(argv)

    work = Path(args.workdir)
    corpus = work / "corpus"
    if not (corpus / "manifest.json").is_file():
        cfg = SynthConfig(
            size=args.size, frames=args.frames, freq=args.freq, seed=args.seed
        )
        print(f"generating {args.count} movies under {corpus} ...")
        write_corpus(
            corpus,
            cfg,
            args.count,
            progress=lambda split, i: print(f"  {split}/{i}", end="\r"),
        )
        print()
    else:
        print(f"reusing existing corpus {corpus}")

    methods = tuple(
        spec_for_method(m.strip()) for m in args.methods.split(",") if m.strip()
    )
    bench_cfg = BenchConfig(
        corpus_dir=str(corpus),
        methods=methods,
        split=args.split,
        threads=args.threads,
    )
    rows = run_bench(
        bench_cfg, progress=lambda done, total: print(f"  movie {done}/{total}", end="\r")
    )
    print()
    summary = summarize(rows)
    out = work / "bench"
    out.mkdir(parents=True, exist_ok=True)
    write_rows_csv(rows, out / "rows.csv")
    write_summary_json(summary, out / "summary.json")

    header = f"{'method':>10} {'epe mean':>10} {'epe med':>9} {'rmse':>8} {'negdet%':>8} {'detauc':>7} {'time_s':>7}"
    print(header)
    print("-" * len(header))
    for spec in methods:
        st = summary["methods"][spec.method.value]
        em = st["epe_mean"]["mean"] if st["epe_mean"] else float("nan")
        eMd = st["epe_median"]["median"] if st["epe_median"] else float("nan")
        print(
            f"{spec.method.value:>10} {em:>10.3f} {eMd:>9.3f} "
            f"{st['rmse']['mean']:>8.4f} {st['negdet_pct']['mean']:>8.2f} "
            f"{st['detauc']['mean']:>7.3f} {st['time_s']['mean']:>7.2f}"
        )
    print(f"\nwrote {out / 'rows.csv'} and {out / 'summary.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
