"""Command-line interface.

Commands::

    mmorph synth     generate a train/val/test corpus of synthetic movies
    mmorph register  register one movie and write the transform + metrics
    mmorph bench     benchmark methods over a corpus split (CSV + summary)
    mmorph field     algebra on saved fields/transforms (exp, compose,
                     bracket, invert, detmap)

Exit codes: 0 success, 1 usage error, 2 data/file error, 3 numeric failure.
``MMORPH_THREADS`` sets the default worker count for ``bench``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from .bench import (
    BenchConfig,
    evaluate_registration,
    run_bench,
    spec_for_method,
    summarize,
    write_rows_csv,
    write_summary_json,
)
from .estimator import EstimatorConfig
from .grid import (
    ConvergenceError,
    ScalarImage,
    Transform,
    VectorField,
    invert_transform,
    jacobian_determinant,
    warp_image,
)
from .io import DataFormatError, read_mmf, read_movie, write_corpus, write_mmf
from .lie import ExpConfig, exp, lie_bracket
from .grid import compose
from .pipeline import SequenceInput, register
from .synth import GenerationError, SynthConfig

__all__ = ["main"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    """Bad command line or argument values; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="mmorph", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--count", type=int, default=10, help="number of movies")
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--frames", type=int, default=3)
    p.add_argument("--freq", type=int, default=10, help="pattern repetitions across the image")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true", help="overwrite a non-empty directory")

    p = sub.add_parser("register", help="register one movie")
    p.add_argument("--movie", required=True, help="movie directory (frame_<t>.mmf + manifest)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--method", default="mmorph-2", help="direct|compose|mmorph-1|mmorph-2")
    p.add_argument("--target", type=int, default=None, help="target frame index (default last)")
    p.add_argument("--correction-passes", type=int, default=1)
    p.add_argument("--subsample", type=int, default=None, help="compose: frames kept in the chain")
    p.add_argument("--alpha", type=float, default=None, help="smoothness weight override")
    p.add_argument("--beta", type=float, default=None, help="volume-penalty weight override")
    p.add_argument("--levels", type=int, default=None, help="estimator pyramid levels override")
    p.add_argument("--iters", type=int, default=None, help="estimator iterations per level")
    p.add_argument("--squarings", type=int, default=None, help="exponential squaring count")
    p.add_argument("--png", action="store_true", help="also write PNG previews")

    p = sub.add_parser("bench", help="benchmark methods over a corpus")
    p.add_argument("--corpus", required=True, help="corpus directory from `mmorph synth`")
    p.add_argument("--out", required=True, help="output directory for rows.csv + summary.json")
    p.add_argument("--methods", default="direct,compose,mmorph-1,mmorph-2",
                   help="comma-separated method names")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--limit", type=int, default=None, help="benchmark only the first N movies")
    p.add_argument("--threads", type=int, default=None,
                   help="worker processes (default: MMORPH_THREADS or 1)")

    p = sub.add_parser("field", help="field and transform algebra")
    fsub = p.add_subparsers(dest="field_command", required=True, parser_class=_Parser)

    f = fsub.add_parser("exp", help="exponentiate a velocity field")
    f.add_argument("--in", dest="infile", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--squarings", type=int, default=None)

    f = fsub.add_parser("compose", help="compose two transforms (outer o inner)")
    f.add_argument("--outer", required=True)
    f.add_argument("--inner", required=True)
    f.add_argument("--out", required=True)

    f = fsub.add_parser("bracket", help="Lie bracket of two velocity fields")
    f.add_argument("--a", required=True)
    f.add_argument("--b", required=True)
    f.add_argument("--out", required=True)

    f = fsub.add_parser("invert", help="invert a transform")
    f.add_argument("--in", dest="infile", required=True)
    f.add_argument("--out", required=True)

    f = fsub.add_parser("detmap", help="Jacobian determinant map of a transform")
    f.add_argument("--in", dest="infile", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--png", default=None, help="also render the map to this PNG path")

    return parser


def _write_png(values: np.ndarray, path, lo: float, hi: float) -> None:
    """8-bit grayscale render of a 2D array windowed to [lo, hi]."""
    from PIL import Image

    if values.ndim != 2:
        raise DataFormatError("PNG rendering requires a 2D grid")
    scaled = np.clip((values - lo) / (hi - lo), 0.0, 1.0)
    Image.fromarray((scaled * 255.0 + 0.5).astype(np.uint8), mode="L").save(path)


def _frame_png(img: ScalarImage, path) -> None:
    _write_png(img.values.mean(axis=-1), path, 0.0, 1.0)


def _expect(obj, cls, what: str):
    if not isinstance(obj, cls):
        raise DataFormatError(
            f"{what} must hold a {cls.__name__.lower()}, got {type(obj).__name__.lower()}"
        )
    return obj


def _estimator_from_args(args) -> EstimatorConfig:
    cfg = EstimatorConfig()
    overrides = {}
    if args.alpha is not None:
        overrides["alpha"] = args.alpha
    if args.beta is not None:
        overrides["beta"] = args.beta
    if args.levels is not None:
        overrides["levels"] = args.levels
    if args.iters is not None:
        overrides["iters_per_level"] = args.iters
    if args.squarings is not None:
        overrides["exp"] = ExpConfig(num_squarings=args.squarings)
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        size=args.size, frames=args.frames, freq=args.freq, seed=args.seed
    )
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    manifest = write_corpus(args.out, cfg, args.count, force=args.force)
    s = manifest["splits"]
    print(
        f"wrote {args.count} movies to {args.out} "
        f"(train/val/test = {s['train']}/{s['val']}/{s['test']})"
    )
    return EXIT_OK


def cmd_register(args) -> int:
    movie = read_movie(args.movie)
    exp_cfg = ExpConfig(num_squarings=args.squarings) if args.squarings else ExpConfig()
    spec = spec_for_method(
        args.method,
        estimator=_estimator_from_args(args),
        exp_cfg=exp_cfg,
        correction_passes=args.correction_passes,
        subsample_frames=args.subsample,
    )
    seq = SequenceInput(movie.frames, target_index=args.target)
    target = seq.target_index
    t0 = time.perf_counter()
    result = register(seq, spec)
    elapsed = time.perf_counter() - t0
    gt = movie.gt_lagrangian[target - 1] if movie.gt_lagrangian else None
    report = evaluate_registration(
        movie.frames, result, target, gt, wall_time_s=elapsed
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_mmf(result.lagrangian, out / "phi_0t.mmf", extra_meta={"target": target})
    doc = {"method": spec.method.value, "target": target, "metrics": report.as_dict()}
    (out / "metrics.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    if args.png:
        _frame_png(movie.frames[0], out / "reference.png")
        _frame_png(movie.frames[target], out / "target.png")
        _frame_png(warp_image(movie.frames[target], result.lagrangian), out / "warped.png")
        _write_png(jacobian_determinant(result.lagrangian), out / "detmap.png", 0.5, 1.5)
    print(
        f"{spec.method.value} target={target} rmse={report.rmse:.4f}"
        + (f" epe={report.epe_mean:.4f}" if report.epe_mean is not None else "")
        + f" time={elapsed:.2f}s -> {out}"
    )
    return EXIT_OK


def cmd_bench(args) -> int:
    names = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not names:
        raise UsageError("--methods must name at least one method")
    try:
        methods = tuple(spec_for_method(n) for n in names)
    except ValueError as e:
        raise UsageError(str(e)) from None
    cfg = BenchConfig(
        corpus_dir=args.corpus,
        methods=methods,
        split=args.split,
        limit=args.limit,
        threads=args.threads,
    )
    rows = run_bench(cfg)
    summary = summarize(rows)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_rows_csv(rows, out / "rows.csv")
    write_summary_json(summary, out / "summary.json")
    for name in names:
        st = summary["methods"][name]
        epe_part = (
            f"epe {st['epe_mean']['mean']:.3f}±{st['epe_mean']['std']:.3f} "
            f"(median {st['epe_median']['median']:.3f}) "
            if st["epe_mean"] is not None
            else ""
        )
        print(
            f"{name:>9}: rmse {st['rmse']['mean']:.4f}  {epe_part}"
            f"negdet {st['negdet_pct']['mean']:.2f}%  "
            f"detauc {st['detauc']['mean']:.3f}  "
            f"time {st['time_s']['mean']:.2f}s"
        )
    print(f"rows: {out / 'rows.csv'}  summary: {out / 'summary.json'}")
    return EXIT_OK


def cmd_field(args) -> int:
    if args.field_command == "exp":
        v = _expect(read_mmf(args.infile), VectorField, "--in")
        cfg = ExpConfig(num_squarings=args.squarings) if args.squarings else ExpConfig()
        write_mmf(exp(v, cfg), args.out)
    elif args.field_command == "compose":
        outer = _expect(read_mmf(args.outer), Transform, "--outer")
        inner = _expect(read_mmf(args.inner), Transform, "--inner")
        write_mmf(compose(outer, inner), args.out)
    elif args.field_command == "bracket":
        a = _expect(read_mmf(args.a), VectorField, "--a")
        b = _expect(read_mmf(args.b), VectorField, "--b")
        write_mmf(lie_bracket(a, b), args.out)
    elif args.field_command == "invert":
        t = _expect(read_mmf(args.infile), Transform, "--in")
        write_mmf(invert_transform(t), args.out)
    elif args.field_command == "detmap":
        t = _expect(read_mmf(args.infile), Transform, "--in")
        det = jacobian_determinant(t)
        write_mmf(ScalarImage(t.shape, det[..., None]), args.out)
        if args.png:
            _write_png(det, args.png, 0.5, 1.5)
    else:  # pragma: no cover - argparse enforces the choices
        raise UsageError(f"unknown field command {args.field_command!r}")
    print(f"wrote {args.out}")
    return EXIT_OK


_COMMANDS = {
    "synth": cmd_synth,
    "register": cmd_register,
    "bench": cmd_bench,
    "field": cmd_field,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, FileExistsError, FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ConvergenceError, GenerationError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        # DataFormatError subclasses ValueError, so this branch must come
        # last: what reaches it is bad argument values (config validation).
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


def entry() -> None:  # console-script hook
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
