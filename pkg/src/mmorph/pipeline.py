"""Sequence-level Lagrangian motion estimation.

Four strategies produce the reference-to-target transform of an image
sequence whose frame 0 is the reference:

- ``DIRECT``: one velocity field estimated straight between frame 0 and the
  target frame.  Fast, but large motion over a repetitive pattern locks onto
  the wrong repetition.
- ``COMPOSE``: estimate consecutive-frame velocities and compose their
  exponentials; every step stays small, at the price of one interpolation
  per composition.
- ``MMORPH1`` / ``MMORPH2``: accumulate the consecutive-frame velocities
  into a single momenta field (first order: sum; second order: sum plus half
  the field bracket), exponentiate once ("shooting"), then estimate a small
  residual between the reference and the shot-back target frame and compose
  it in ("correction").

The consecutive-pair estimator is resolved through the module attribute
``estimate_svf`` so tests can substitute a counting or stub estimator.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum

from .estimator import EstimatorConfig
from .estimator import estimate_svf as _estimate_svf_impl
from .grid import (
    ScalarImage,
    Transform,
    TransformKind,
    VectorField,
    compose,
    warp_image,
)
from .lie import ExpConfig, MomentaOrder, exp, momenta_step

__all__ = [
    "Method",
    "MethodSpec",
    "RegistrationResult",
    "SequenceInput",
    "register",
    "register_compose",
    "register_direct",
    "register_mmorph",
    "run_sequence",
    "subsample_indices",
]

# Module-level alias so callers and tests can monkeypatch the estimator used
# by every method (e.g. to count calls or substitute known fields).
estimate_svf = _estimate_svf_impl


class Method(Enum):
    DIRECT = "direct"
    COMPOSE = "compose"
    MMORPH1 = "mmorph-1"
    MMORPH2 = "mmorph-2"


@dataclass(frozen=True)
class MethodSpec:
    """A method plus the configurations it runs with.

    ``correction_passes`` applies to the Mmorph methods (0 disables the
    correction stage; the default single pass is sufficient in practice).
    ``subsample_frames`` applies to COMPOSE: when set, only that many frames
    (including reference and target, evenly spaced, ties rounding toward the
    reference) participate in the composition chain.
    """

    method: Method
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    exp: ExpConfig = field(default_factory=ExpConfig)
    correction_passes: int = 1
    subsample_frames: int | None = None

    def __post_init__(self):
        if self.correction_passes < 0:
            raise ValueError("correction_passes must be >= 0")
        if self.subsample_frames is not None:
            if self.method is not Method.COMPOSE:
                raise ValueError("frame subsampling applies to COMPOSE only")
            if self.subsample_frames < 2:
                raise ValueError("subsample_frames must be >= 2")


@dataclass
class SequenceInput:
    """Frames of one sequence; frame 0 is the reference.

    ``target_index`` selects the frame whose reference-to-frame transform is
    requested; it defaults to the last frame.
    """

    frames: list[ScalarImage]
    target_index: int | None = None

    def __post_init__(self):
        if len(self.frames) < 2:
            raise ValueError("a sequence needs at least 2 frames")
        shape0 = self.frames[0].shape
        c0 = self.frames[0].values.shape[-1]
        for f in self.frames[1:]:
            if f.shape != shape0 or f.values.shape[-1] != c0:
                raise ValueError("all frames must share shape and channels")
        if self.target_index is None:
            self.target_index = len(self.frames) - 1
        if not 1 <= self.target_index < len(self.frames):
            raise ValueError("target_index must be in [1, T-1]")


@dataclass
class RegistrationResult:
    """Output of one method for one target frame.

    ``eulerian`` holds the consecutive-frame transforms the method used
    (empty for DIRECT); ``momenta`` and ``residual`` are present for the
    Mmorph methods.  ``timings`` reports seconds per stage; a stage absent
    from a method reports 0.0.
    """

    lagrangian: Transform
    eulerian: list[Transform]
    momenta: VectorField | None
    residual: Transform | None
    timings: dict[str, float]


def _as_lagrangian(phi: Transform) -> Transform:
    """Tag a finished reference-to-target map; per-step flows stay Eulerian."""
    return Transform(phi.displacement, TransformKind.LAGRANGIAN)


def _zero_timings() -> dict[str, float]:
    return {"eulerian": 0.0, "momenta": 0.0, "shooting": 0.0, "correction": 0.0}


def subsample_indices(target: int, count: int) -> list[int]:
    """Evenly spaced frame indices from 0 to target, inclusive.

    ``count`` is the number of kept frames.  Fractional positions exactly
    halfway between frames round toward the reference (index 0 side), so the
    selection is deterministic.
    """
    if count < 2:
        raise ValueError("count must be >= 2")
    count = min(count, target + 1)
    out = []
    for k in range(count):
        x = k * target / (count - 1)
        frac = x - math.floor(x)
        idx = math.floor(x) if abs(frac - 0.5) < 1e-9 else round(x)
        out.append(int(idx))
    # Evenly spaced positions are strictly increasing by > 0.5 except for
    # degenerate count > target+1, which the clamp above rules out.
    return out


def _estimate_chain(frames: list[ScalarImage], indices: list[int], cfg) -> tuple[list[VectorField], float]:
    """Velocity per consecutive pair of ``indices``; returns fields and seconds."""
    t0 = time.perf_counter()
    fields = [
        estimate_svf(frames[a], frames[b], cfg)
        for a, b in zip(indices[:-1], indices[1:])
    ]
    return fields, time.perf_counter() - t0


def _correct(
    frames: list[ScalarImage],
    target: int,
    phi: Transform,
    spec: MethodSpec,
) -> tuple[Transform, Transform | None]:
    """Compose residual estimates into phi; returns (corrected, residual).

    Each pass registers the reference against the target frame pulled back
    through the current transform, then composes the residual inside:
    frames[0] ~ (frames[target] o phi) o exp(v_res) = frames[target] o
    (phi o exp(v_res)).
    """
    residual: Transform | None = None
    for _ in range(spec.correction_passes):
        moved = warp_image(frames[target], phi)
        v_res = estimate_svf(frames[0], moved, spec.estimator)
        step = exp(v_res, spec.exp)
        residual = step if residual is None else compose(residual, step)
        phi = compose(phi, step)
    return phi, residual


def register_direct(seq: SequenceInput, spec: MethodSpec) -> RegistrationResult:
    """One straight estimate between the reference and the target frame."""
    timings = _zero_timings()
    t0 = time.perf_counter()
    v = estimate_svf(seq.frames[0], seq.frames[seq.target_index], spec.estimator)
    timings["eulerian"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    phi = exp(v, spec.exp)
    timings["shooting"] = time.perf_counter() - t0
    return RegistrationResult(_as_lagrangian(phi), [], None, None, timings)


def _compose_from_fields(
    fields: list[VectorField], spec: MethodSpec
) -> tuple[Transform, list[Transform]]:
    eulerian = [exp(v, spec.exp) for v in fields]
    phi = eulerian[0]
    for step in eulerian[1:]:
        phi = compose(step, phi)
    return phi, eulerian


def register_compose(seq: SequenceInput, spec: MethodSpec) -> RegistrationResult:
    """Compose exponentials of consecutive (or subsampled) pair estimates."""
    timings = _zero_timings()
    target = seq.target_index
    if spec.subsample_frames is None:
        indices = list(range(target + 1))
    else:
        indices = subsample_indices(target, spec.subsample_frames)
    fields, timings["eulerian"] = _estimate_chain(seq.frames, indices, spec.estimator)
    t0 = time.perf_counter()
    phi, eulerian = _compose_from_fields(fields, spec)
    timings["shooting"] = time.perf_counter() - t0
    return RegistrationResult(_as_lagrangian(phi), eulerian, None, None, timings)


def _momenta_order(method: Method) -> MomentaOrder:
    return MomentaOrder.ORDER1 if method is Method.MMORPH1 else MomentaOrder.ORDER2


def register_mmorph(seq: SequenceInput, spec: MethodSpec) -> RegistrationResult:
    """Momenta accumulation, one exponential, then residual correction."""
    if spec.method not in (Method.MMORPH1, Method.MMORPH2):
        raise ValueError("register_mmorph requires an Mmorph method spec")
    timings = _zero_timings()
    target = seq.target_index
    indices = list(range(target + 1))
    fields, timings["eulerian"] = _estimate_chain(seq.frames, indices, spec.estimator)

    t0 = time.perf_counter()
    order = _momenta_order(spec.method)
    p = fields[0]
    for v in fields[1:]:
        p = momenta_step(p, v, order)
    timings["momenta"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    phi = exp(p, spec.exp)
    timings["shooting"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    phi, residual = _correct(seq.frames, target, phi, spec)
    timings["correction"] = time.perf_counter() - t0

    eulerian = [exp(v, spec.exp) for v in fields]
    return RegistrationResult(_as_lagrangian(phi), eulerian, p, residual, timings)


def register(seq: SequenceInput, spec: MethodSpec) -> RegistrationResult:
    """Dispatch to the configured method."""
    if spec.method is Method.DIRECT:
        return register_direct(seq, spec)
    if spec.method is Method.COMPOSE:
        return register_compose(seq, spec)
    return register_mmorph(seq, spec)


def run_sequence(frames: list[ScalarImage], spec: MethodSpec) -> list[RegistrationResult]:
    """Reference-to-frame results for every frame t = 1..T-1.

    Consecutive-pair velocities are estimated once and reused across targets
    for COMPOSE and the Mmorph methods; each result's "eulerian" timing is
    the cost of the estimates that result depends on (steps up to its
    target), so timings across results share, rather than repeat, that cost.
    DIRECT estimates each target separately, and COMPOSE with frame
    subsampling builds each target's chain independently.
    """
    T = len(frames)
    if spec.method is Method.DIRECT or (
        spec.method is Method.COMPOSE and spec.subsample_frames is not None
    ):
        return [
            register(SequenceInput(frames, target_index=t), spec)
            for t in range(1, T)
        ]

    step_fields: list[VectorField] = []
    step_times: list[float] = []
    for t in range(1, T):
        t0 = time.perf_counter()
        step_fields.append(estimate_svf(frames[t - 1], frames[t], spec.estimator))
        step_times.append(time.perf_counter() - t0)

    results: list[RegistrationResult] = []
    if spec.method is Method.COMPOSE:
        eulerian: list[Transform] = []
        phi: Transform | None = None
        for t in range(1, T):
            timings = _zero_timings()
            timings["eulerian"] = sum(step_times[:t])
            t0 = time.perf_counter()
            step = exp(step_fields[t - 1], spec.exp)
            eulerian.append(step)
            phi = step if phi is None else compose(step, phi)
            timings["shooting"] = time.perf_counter() - t0
            results.append(
                RegistrationResult(_as_lagrangian(phi), list(eulerian), None, None, timings)
            )
        return results

    order = _momenta_order(spec.method)
    eulerian = []
    p: VectorField | None = None
    for t in range(1, T):
        timings = _zero_timings()
        timings["eulerian"] = sum(step_times[:t])
        t0 = time.perf_counter()
        v = step_fields[t - 1]
        p = v if p is None else momenta_step(p, v, order)
        timings["momenta"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        phi = exp(p, spec.exp)
        eulerian.append(exp(v, spec.exp))
        timings["shooting"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        phi, residual = _correct(frames, t, phi, spec)
        timings["correction"] = time.perf_counter() - t0
        results.append(
            RegistrationResult(_as_lagrangian(phi), list(eulerian), p, residual, timings)
        )
    return results
