"""Benchmark harness: run registration methods over a corpus split.

Produces one CSV row per (movie, method) pair plus a per-method summary
(mean, population std, median of every numeric column).  Metrics are
computed for the final target frame (t = T-1), the hardest and therefore
most discriminative target; per-target numbers can be recovered by
registering individual targets with :func:`mmorph.pipeline.register`.

Movies are independent, so the harness shards the corpus across a process
pool.  ``time_s`` is the wall time of the whole-method ``run_sequence`` per
movie; every other column is a deterministic function of the movie files,
so results (apart from timings) are identical for any worker count.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .estimator import EstimatorConfig
from .grid import ScalarImage, Transform, warp_image
from .lie import ExpConfig
from .metrics import (
    CropSpec,
    MetricsReport,
    det_auc,
    epe,
    l_inc,
    l_sim,
    l_smooth,
    neg_det_pct,
    rmse_metric,
)
from .io import corpus_movie_dirs, read_movie
from .pipeline import Method, MethodSpec, RegistrationResult, run_sequence

__all__ = [
    "BenchConfig",
    "CSV_COLUMNS",
    "evaluate_registration",
    "resolve_threads",
    "run_bench",
    "spec_for_method",
    "summarize",
    "write_rows_csv",
]

CSV_COLUMNS = (
    "movie_id",
    "method",
    "T",
    "rmse",
    "epe_mean",
    "epe_median",
    "negdet_pct",
    "detauc",
    "l_sim",
    "l_smooth",
    "l_inc",
    "time_s",
)

_SUMMARY_COLUMNS = CSV_COLUMNS[3:]


def spec_for_method(
    name: str,
    estimator: EstimatorConfig | None = None,
    exp_cfg: ExpConfig | None = None,
    correction_passes: int = 1,
    subsample_frames: int | None = None,
) -> MethodSpec:
    """Build a MethodSpec from a method name like ``"mmorph-2"``."""
    try:
        method = Method(name)
    except ValueError:
        valid = ", ".join(m.value for m in Method)
        raise ValueError(f"unknown method {name!r} (choose from: {valid})") from None
    return MethodSpec(
        method=method,
        estimator=estimator or EstimatorConfig(),
        exp=exp_cfg or ExpConfig(),
        correction_passes=correction_passes,
        subsample_frames=subsample_frames if method is Method.COMPOSE else None,
    )


def evaluate_registration(
    frames: list[ScalarImage],
    result: RegistrationResult,
    target: int,
    gt: Transform | None = None,
    crop: CropSpec = CropSpec(),
    wall_time_s: float | None = None,
) -> MetricsReport:
    """Score one registration result against frame 0 (and ground truth)."""
    phi = result.lagrangian
    warped = warp_image(frames[target], phi)
    if gt is not None:
        epe_mean, epe_median = epe(phi, gt, crop)
    else:
        epe_mean = epe_median = None
    if wall_time_s is None:
        wall_time_s = sum(result.timings.values())
    return MetricsReport(
        rmse=rmse_metric(frames[0], warped, crop),
        epe_mean=epe_mean,
        epe_median=epe_median,
        negdet_pct=neg_det_pct(phi, crop),
        detauc=det_auc(phi, crop),
        l_sim=l_sim(frames[0], warped),
        l_smooth=l_smooth(phi.displacement),
        l_inc=l_inc(phi),
        wall_time_s=wall_time_s,
    )


@dataclass(frozen=True)
class BenchConfig:
    """What to benchmark: a corpus split against a set of method specs."""

    corpus_dir: str
    methods: tuple[MethodSpec, ...] = (
        spec_for_method("direct"),
        spec_for_method("compose"),
        spec_for_method("mmorph-1"),
        spec_for_method("mmorph-2"),
    )
    split: str = "test"
    limit: int | None = None
    threads: int | None = None
    crop: CropSpec = field(default_factory=CropSpec)

    def __post_init__(self):
        if not self.methods:
            raise ValueError("at least one method is required")
        if self.limit is not None and self.limit < 1:
            raise ValueError("limit must be >= 1")
        if self.threads is not None and self.threads < 1:
            raise ValueError("threads must be >= 1")


def resolve_threads(requested: int | None) -> int:
    """Worker count: explicit argument, else MMORPH_THREADS, else 1."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("MMORPH_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as e:
            raise ValueError(f"MMORPH_THREADS must be an integer, got {env!r}") from e
    return 1


def _bench_one(args: tuple[str, tuple[MethodSpec, ...], CropSpec]) -> list[dict]:
    """Worker: all method rows for one movie directory."""
    movie_dir, methods, crop = args
    movie = read_movie(movie_dir)
    target = movie.T - 1
    gt = movie.gt_lagrangian[-1] if movie.gt_lagrangian else None
    movie_id = movie.manifest.get("index", int(Path(movie_dir).name))
    rows = []
    for spec in methods:
        t0 = time.perf_counter()
        results = run_sequence(movie.frames, spec)
        elapsed = time.perf_counter() - t0
        report = evaluate_registration(
            movie.frames, results[-1], target, gt, crop, wall_time_s=elapsed
        )
        rows.append(
            {
                "movie_id": movie_id,
                "method": spec.method.value,
                "T": movie.T,
                "rmse": report.rmse,
                "epe_mean": report.epe_mean,
                "epe_median": report.epe_median,
                "negdet_pct": report.negdet_pct,
                "detauc": report.detauc,
                "l_sim": report.l_sim,
                "l_smooth": report.l_smooth,
                "l_inc": report.l_inc,
                "time_s": report.wall_time_s,
            }
        )
    return rows


def run_bench(cfg: BenchConfig, progress=None) -> list[dict]:
    """Benchmark every movie of the split; rows ordered by movie then method."""
    dirs = corpus_movie_dirs(cfg.corpus_dir, cfg.split)
    if cfg.limit is not None:
        dirs = dirs[: cfg.limit]
    if not dirs:
        raise FileNotFoundError(
            f"no movies under {cfg.corpus_dir}/{cfg.split}/movies"
        )
    jobs = [(str(d), cfg.methods, cfg.crop) for d in dirs]
    threads = resolve_threads(cfg.threads)
    rows: list[dict] = []
    if threads == 1 or len(jobs) == 1:
        for i, job in enumerate(jobs):
            rows.extend(_bench_one(job))
            if progress is not None:
                progress(i + 1, len(jobs))
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for i, movie_rows in enumerate(pool.map(_bench_one, jobs)):
                rows.extend(movie_rows)
                if progress is not None:
                    progress(i + 1, len(jobs))
    return rows


def summarize(rows: list[dict]) -> dict:
    """Per-method mean/std/median of each numeric column (std has ddof=0).

    ``epe_*`` entries are null when no row of that method carried ground
    truth.
    """
    methods = []
    for row in rows:
        if row["method"] not in methods:
            methods.append(row["method"])
    summary: dict = {"movies": len({r["movie_id"] for r in rows}), "methods": {}}
    for method in methods:
        sub = [r for r in rows if r["method"] == method]
        stats = {}
        for col in _SUMMARY_COLUMNS:
            vals = [r[col] for r in sub if r[col] is not None]
            if vals:
                arr = np.asarray(vals, dtype=np.float64)
                stats[col] = {
                    "mean": float(arr.mean()),
                    "std": float(arr.std()),
                    "median": float(np.median(arr)),
                }
            else:
                stats[col] = None
        summary["methods"][method] = stats
    return summary


def write_rows_csv(rows: list[dict], path) -> None:
    """Write benchmark rows with the canonical column order."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row[k] is None else row[k]) for k in CSV_COLUMNS})


def write_summary_json(summary: dict, path) -> None:
    Path(path).write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
