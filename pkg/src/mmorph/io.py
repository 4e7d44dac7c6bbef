"""Binary container, corpus layout, and report schema.

The MMF container is a deliberately minimal format so any language can read
it: 4 ASCII magic bytes ``MMF1``, an unsigned 32-bit little-endian header
length, a UTF-8 JSON header, then the payload as 32-bit little-endian
floats, row-major with channels interleaved (exactly the in-memory layout of
the value arrays, truncated to single precision).

Corpus layout written by ``write_corpus``::

    <out>/manifest.json                       corpus-level config
    <out>/<split>/movies/<idx>/manifest.json  per-movie seed + config
    <out>/<split>/movies/<idx>/frame_<t>.mmf  frames, t = 0..T-1
    <out>/<split>/movies/<idx>/gt_<t>.mmf     reference-to-frame t transform

Single-precision storage is exact for the frame payloads only up to float32
rounding; round-trips of what was written are bit-identical.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import GridShape, ScalarImage, Transform, TransformKind, VectorField
from .synth import MovieSample, SynthConfig, corpus_seed, generate_movie

__all__ = [
    "CorpusMovie",
    "DataFormatError",
    "METRICS_SCHEMA",
    "read_mmf",
    "read_movie",
    "write_corpus",
    "write_mmf",
    "write_movie",
]

_MAGIC = b"MMF1"

SPLIT_NAMES = ("train", "val", "test")


class DataFormatError(ValueError):
    """A file does not hold what its format promises."""


def _header_for(x) -> dict:
    if isinstance(x, ScalarImage):
        kind = "image"
        values = x.values
        shape = x.shape
        meta: dict = {}
    elif isinstance(x, VectorField):
        kind = "field"
        values = x.values
        shape = x.shape
        meta = {}
    elif isinstance(x, Transform):
        kind = "transform"
        values = x.displacement.values
        shape = x.shape
        meta = {"transform_kind": x.kind.value}
    else:
        raise TypeError(f"cannot serialize {type(x).__name__}")
    return {
        "kind": kind,
        "shape": list(shape.dims),
        "channels": int(values.shape[-1]),
        "spacing": list(shape.spacing),
        "meta": meta,
    }, values


def write_mmf(x, path, extra_meta: dict | None = None) -> None:
    """Serialize an image, field, or transform to one MMF file."""
    header, values = _header_for(x)
    if extra_meta:
        header["meta"] = {**header["meta"], **extra_meta}
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(values, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def read_mmf(path):
    """Load an MMF file back into the object kind named in its header.

    A payload containing NaN raises a warning but still loads (bypassing the
    finiteness validation of the normal constructors) so damaged data can be
    inspected.
    """
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise DataFormatError(f"not an MMF file: {path}")
    if len(raw) < 8:
        raise DataFormatError(f"corrupt container (truncated header length): {path}")
    (header_len,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + header_len:
        raise DataFormatError(f"corrupt container (truncated header): {path}")
    try:
        header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataFormatError(f"corrupt container (bad header): {path}") from e
    try:
        kind = header["kind"]
        dims = tuple(int(d) for d in header["shape"])
        channels = int(header["channels"])
        spacing = tuple(float(s) for s in header["spacing"])
        meta = header.get("meta", {})
    except (KeyError, TypeError, ValueError) as e:
        raise DataFormatError(f"corrupt container (bad header fields): {path}") from e
    expected = 4 * int(np.prod(dims)) * channels
    payload = raw[8 + header_len :]
    if len(payload) != expected:
        raise DataFormatError(
            f"corrupt container (payload {len(payload)} bytes, expected {expected}): {path}"
        )
    vals = (
        np.frombuffer(payload, dtype="<f4")
        .reshape(dims + (channels,))
        .astype(np.float64)
    )
    shape = GridShape(dims, spacing)
    has_nan = not np.all(np.isfinite(vals))
    if has_nan:
        warnings.warn(f"MMF payload contains non-finite values: {path}", RuntimeWarning)

    def build(cls):
        if has_nan:
            obj = cls.__new__(cls)
            obj.shape = shape
            obj.values = vals
            return obj
        return cls(shape, vals)

    if kind == "image":
        return build(ScalarImage)
    if kind == "field":
        return build(VectorField)
    if kind == "transform":
        tk = TransformKind(meta.get("transform_kind", "lagrangian"))
        field = build(VectorField)
        if has_nan:
            obj = Transform.__new__(Transform)
            obj.displacement = field
            obj.kind = tk
            return obj
        return Transform(field, tk)
    raise DataFormatError(f"corrupt container (unknown kind {kind!r}): {path}")


@dataclass
class CorpusMovie:
    """One movie loaded from disk: frames, ground truth if present, manifest."""

    frames: list[ScalarImage]
    gt_lagrangian: list[Transform] | None
    manifest: dict

    @property
    def T(self) -> int:
        return len(self.frames)


def _config_dict(cfg: SynthConfig) -> dict:
    return {
        "size": cfg.size,
        "frames": cfg.frames,
        "freq": cfg.freq,
        "seed": cfg.seed,
        "reject_limit": cfg.reject_limit,
    }


def write_movie(movie_dir, movie: MovieSample, cfg: SynthConfig, index: int, split: str) -> None:
    """Write one movie's frames, ground truth, and manifest into a directory."""
    movie_dir = Path(movie_dir)
    movie_dir.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(movie.frames):
        write_mmf(frame, movie_dir / f"frame_{t}.mmf")
    for t, gt in enumerate(movie.gt_lagrangian, start=1):
        write_mmf(gt, movie_dir / f"gt_{t}.mmf")
    manifest = {
        "index": index,
        "split": split,
        "seed": movie.seed,
        "config": _config_dict(cfg),
    }
    (movie_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def read_movie(movie_dir) -> CorpusMovie:
    """Load a movie directory written by ``write_movie``."""
    movie_dir = Path(movie_dir)
    manifest_path = movie_dir / "manifest.json"
    if not manifest_path.is_file():
        raise DataFormatError(f"not a movie directory (no manifest.json): {movie_dir}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    frames = []
    t = 0
    while (movie_dir / f"frame_{t}.mmf").is_file():
        frames.append(read_mmf(movie_dir / f"frame_{t}.mmf"))
        t += 1
    if len(frames) < 2:
        raise DataFormatError(f"movie directory holds {len(frames)} frames: {movie_dir}")
    gts = []
    for t in range(1, len(frames)):
        gt_path = movie_dir / f"gt_{t}.mmf"
        if not gt_path.is_file():
            gts = None
            break
        gts.append(read_mmf(gt_path))
    return CorpusMovie(frames, gts, manifest)


def split_counts(count: int, fractions=(0.6, 0.2, 0.2)) -> dict[str, int]:
    """Deterministic train/val/test sizes; remainders go to the test split."""
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must be three non-negative values summing to 1")
    n_train = int(count * fractions[0])
    n_val = int(count * fractions[1])
    return {"train": n_train, "val": n_val, "test": count - n_train - n_val}


def write_corpus(
    out_dir,
    cfg: SynthConfig,
    count: int,
    force: bool = False,
    fractions=(0.6, 0.2, 0.2),
    progress=None,
) -> dict:
    """Generate ``count`` movies and write them under train/val/test splits.

    Movie ``i`` draws from an independent stream seeded by
    ``corpus_seed(cfg.seed, i)``, so corpora are reproducible file-for-file
    and movies may be generated in any order or in parallel.  Split
    membership is by index order.  Returns the corpus manifest.
    """
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()) and not force:
        raise FileExistsError(
            f"output directory {out_dir} is not empty (use force to overwrite)"
        )
    counts = split_counts(count, fractions)
    bounds = {
        "train": range(0, counts["train"]),
        "val": range(counts["train"], counts["train"] + counts["val"]),
        "test": range(counts["train"] + counts["val"], count),
    }
    manifest = {
        "count": count,
        "splits": counts,
        "config": _config_dict(cfg),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    for split, indices in bounds.items():
        for i in indices:
            movie_cfg = SynthConfig(
                size=cfg.size,
                frames=cfg.frames,
                freq=cfg.freq,
                seed=corpus_seed(cfg.seed, i),
                reject_limit=cfg.reject_limit,
            )
            movie = generate_movie(movie_cfg)
            write_movie(out_dir / split / "movies" / str(i), movie, movie_cfg, i, split)
            if progress is not None:
                progress(split, i)
    return manifest


def corpus_movie_dirs(corpus_dir, split: str = "test") -> list[Path]:
    """Movie directories of one split, ordered by numeric index."""
    if split not in SPLIT_NAMES:
        raise ValueError(f"unknown split {split!r} (choose from: {', '.join(SPLIT_NAMES)})")
    root = Path(corpus_dir) / split / "movies"
    if not root.is_dir():
        return []
    dirs = [p for p in root.iterdir() if p.is_dir()]
    return sorted(dirs, key=lambda p: int(p.name))


# Schema of the metrics.json document written by the register command and of
# the per-method summary entries in the bench report.
METRICS_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["method", "target", "metrics"],
    "properties": {
        "method": {"type": "string"},
        "target": {"type": "integer", "minimum": 1},
        "metrics": {
            "type": "object",
            "required": [
                "rmse",
                "epe_mean",
                "epe_median",
                "negdet_pct",
                "detauc",
                "l_sim",
                "l_smooth",
                "l_inc",
                "wall_time_s",
            ],
            "properties": {
                "rmse": {"type": "number", "minimum": 0},
                "epe_mean": {"type": ["number", "null"], "minimum": 0},
                "epe_median": {"type": ["number", "null"], "minimum": 0},
                "negdet_pct": {"type": "number", "minimum": 0, "maximum": 100},
                "detauc": {"type": "number", "minimum": 0, "maximum": 1},
                "l_sim": {"type": "number", "minimum": 0},
                "l_smooth": {"type": "number", "minimum": 0},
                "l_inc": {"type": "number", "minimum": 0},
                "wall_time_s": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": True,
}
