"""Registration losses and evaluation metrics.

Every loss is a per-node mean so values are comparable across grid sizes.
Evaluation metrics (rmse, epe, fold statistics) run on a centered crop that
discards a fractional border per axis, which separates genuine estimation
error from boundary-extrapolation artifacts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import (
    GridShape,
    ScalarImage,
    ShapeMismatchError,
    Transform,
    VectorField,
    jacobian_determinant,
    jacobian_matrix,
)

__all__ = [
    "CropSpec",
    "LossWeights",
    "MetricsReport",
    "det_auc",
    "epe",
    "l_inc",
    "l_sim",
    "l_smooth",
    "l_total",
    "neg_det_pct",
    "rmse_metric",
]

DET_AUC_TAU_MAX = 0.5
DET_AUC_TAU_STEP = 0.01


@dataclass(frozen=True)
class LossWeights:
    """Weights for the combined objective: sim + alpha*smooth + beta*inc,
    with gamma weighting the reference-to-frame sum against the
    frame-to-frame sum."""

    alpha: float = 0.008
    beta: float = 0.0
    gamma: float = 0.5
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")


@dataclass(frozen=True)
class CropSpec:
    """Centered evaluation crop: drop ``fraction`` of each axis on each side."""

    fraction: float = 0.10

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 0.4:
            raise ValueError("crop fraction must lie in [0, 0.4]")

    def slices(self, dims: tuple[int, ...]) -> tuple[slice, ...]:
        out = []
        for d in dims:
            lo = int(d * self.fraction)
            hi = d - lo
            if hi <= lo:
                raise ValueError(f"crop fraction {self.fraction} empties axis of size {d}")
            out.append(slice(lo, hi))
        return tuple(out)


@dataclass
class MetricsReport:
    """Per-registration evaluation summary (see the bench CSV columns)."""

    rmse: float
    epe_mean: float | None
    epe_median: float | None
    negdet_pct: float
    detauc: float
    l_sim: float
    l_smooth: float
    l_inc: float
    wall_time_s: float

    def as_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "epe_mean": self.epe_mean,
            "epe_median": self.epe_median,
            "negdet_pct": self.negdet_pct,
            "detauc": self.detauc,
            "l_sim": self.l_sim,
            "l_smooth": self.l_smooth,
            "l_inc": self.l_inc,
            "wall_time_s": self.wall_time_s,
        }


def _check_images(a: ScalarImage, b: ScalarImage):
    if a.shape != b.shape or a.channels != b.channels:
        raise ShapeMismatchError("images must share grid and channel count")


def l_sim(a: ScalarImage, b: ScalarImage) -> float:
    """Mean squared intensity difference over voxels and channels."""
    _check_images(a, b)
    diff = a.values - b.values
    return float(np.mean(diff * diff))


def l_smooth(u: VectorField) -> float:
    """Mean squared Frobenius norm of the displacement Jacobian."""
    J = jacobian_matrix(u)
    return float(np.mean(np.sum(J * J, axis=(-2, -1))))


def l_inc(t: Transform, epsilon: float = 1e-6) -> float:
    """Incompressibility penalty: per-node mean of |log max(det, eps)|
    plus the folded mass -min(det, 0)."""
    det = jacobian_determinant(t)
    log_term = np.abs(np.log(np.maximum(det, epsilon)))
    fold_term = -np.minimum(det, 0.0)
    return float(np.mean(log_term + fold_term))


def rmse_metric(reference: ScalarImage, warped: ScalarImage, crop: CropSpec = CropSpec()) -> float:
    """Root mean squared intensity error on the evaluation crop."""
    _check_images(reference, warped)
    region = crop.slices(reference.shape.dims)
    diff = reference.values[region] - warped.values[region]
    return float(np.sqrt(np.mean(diff * diff)))


def epe(predicted: Transform, truth: Transform, crop: CropSpec = CropSpec()) -> tuple[float, float]:
    """End-point error of predicted vs true displacement on the crop.

    Returns (mean, median); the median is the exact lower median (element
    at index (n-1)//2 of the sorted magnitudes), so even-sized selections
    do not interpolate.
    """
    if predicted.shape != truth.shape:
        raise ShapeMismatchError("transforms must share a grid")
    region = crop.slices(predicted.shape.dims)
    err = np.linalg.norm(
        predicted.displacement.values[region] - truth.displacement.values[region],
        axis=-1,
    ).ravel()
    lower_median = float(np.sort(err)[(err.size - 1) // 2])
    return float(err.mean()), lower_median


def neg_det_pct(t: Transform, crop: CropSpec = CropSpec()) -> float:
    """Percentage of cropped nodes with a negative Jacobian determinant."""
    det = jacobian_determinant(t)[crop.slices(t.shape.dims)]
    return float(100.0 * np.mean(det < 0.0))


def det_auc(t: Transform, crop: CropSpec = CropSpec()) -> float:
    """Area under the determinant-accuracy curve.

    F(tau) is the fraction of cropped nodes with |det - 1| <= tau; the curve
    is integrated over tau in [0, 0.5] by the trapezoid rule at step 0.01 and
    normalized so the identity transform scores exactly 1.0.
    """
    det = jacobian_determinant(t)[crop.slices(t.shape.dims)]
    dev = np.abs(det - 1.0).ravel()
    taus = np.linspace(0.0, DET_AUC_TAU_MAX, int(round(DET_AUC_TAU_MAX / DET_AUC_TAU_STEP)) + 1)
    F = np.array([np.mean(dev <= tau) for tau in taus])
    return float(np.trapezoid(F, taus) / DET_AUC_TAU_MAX)


def l_total(
    frames: list[ScalarImage],
    eulerian: list[Transform],
    lagrangian: list[Transform],
    w: LossWeights = LossWeights(),
) -> tuple[float, float, float]:
    """Sequence objective: frame-to-frame terms plus gamma-weighted
    reference-to-frame terms.

    ``eulerian[t]`` must map frame t to frame t+1 (length T-1) and
    ``lagrangian[t-1]`` the reference to frame t (length T-1).  Each pair
    contributes l_sim + alpha*l_smooth + beta*l_inc with frames warped by the
    corresponding transform.  Returns (l_eul, l_lag, combined).
    """
    from .grid import warp_image  # local import to avoid a cycle in docs builds

    T = len(frames)
    if T < 2:
        raise ValueError("need at least two frames")
    if len(eulerian) != T - 1 or len(lagrangian) != T - 1:
        raise ValueError(
            f"expected {T - 1} eulerian and {T - 1} lagrangian transforms, "
            f"got {len(eulerian)} and {len(lagrangian)}"
        )

    def pair_term(fixed, moving, t):
        warped = warp_image(moving, t)
        term = l_sim(fixed, warped) + w.alpha * l_smooth(t.displacement)
        if w.beta > 0:
            term += w.beta * l_inc(t, w.epsilon)
        return term

    eul = sum(pair_term(frames[t], frames[t + 1], eulerian[t]) for t in range(T - 1))
    lag = sum(pair_term(frames[0], frames[t], lagrangian[t - 1]) for t in range(1, T))
    return float(eul), float(lag), float(eul + w.gamma * lag)
