"""Grid containers and resampling primitives for images, fields and transforms.

Fields live on a regular D-dimensional grid (D = 2 or 3) indexed in pixel
units.  Displacement fields use the convention phi(x) = x + u(x), components
ordered (axis0, axis1[, axis2]); images are pulled back by ``warp_image``,
i.e. (I o phi)(x) = I(phi(x)).  Values are stored row-major with a trailing
channel axis, matching the serialized container layout.

All operations are pure: inputs are never mutated, results are freshly
allocated.  Anisotropic ``spacing`` only rescales derivative stencils;
displacements themselves stay in pixel units.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import ndimage

__all__ = [
    "BoundaryPolicy",
    "ConvergenceError",
    "GridShape",
    "INTERIOR_RIM",
    "ScalarImage",
    "ShapeMismatchError",
    "Transform",
    "TransformKind",
    "VectorField",
    "compose",
    "interior_slices",
    "invert_transform",
    "jacobian_determinant",
    "jacobian_matrix",
    "sample",
    "warp_image",
]

# Rim excluded from every "interior" tolerance statement.  Distinct from the
# fractional evaluation crop used by the metrics module.
INTERIOR_RIM = 2


class ShapeMismatchError(ValueError):
    """Operands live on different grids."""


class ConvergenceError(RuntimeError):
    """An iterative routine did not reach its tolerance."""


class BoundaryPolicy(Enum):
    """Out-of-domain sampling behavior."""

    CLAMP_TO_EDGE = "clamp_to_edge"
    ZERO_DISPLACEMENT = "zero_displacement"


class TransformKind(Enum):
    """Bookkeeping tag: frame-to-frame versus reference-to-frame maps."""

    EULERIAN = "eulerian"
    LAGRANGIAN = "lagrangian"


@dataclass(frozen=True)
class GridShape:
    """Dimensions and per-axis spacing of a regular grid.

    Supports 2D and 3D grids with every dimension at least 4 so that the
    interior (minus a 2-voxel rim) is never empty.
    """

    dims: tuple[int, ...]
    spacing: tuple[float, ...] | None = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) not in (2, 3):
            raise ValueError(f"grid must be 2D or 3D, got {len(dims)} dims")
        if any(d < 4 for d in dims):
            raise ValueError(f"every grid dimension must be >= 4, got {dims}")
        spacing = self.spacing
        if spacing is None:
            spacing = (1.0,) * len(dims)
        spacing = tuple(float(s) for s in spacing)
        if len(spacing) != len(dims):
            raise ValueError("spacing must give one value per axis")
        if any(s <= 0 for s in spacing):
            raise ValueError(f"spacing must be positive, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def npoints(self) -> int:
        return int(np.prod(self.dims))


def _as_values(shape: GridShape, values, channels: int | None = None) -> np.ndarray:
    vals = np.asarray(values, dtype=np.float64)
    expected_nd = shape.ndim + 1
    if vals.ndim != expected_nd or vals.shape[: shape.ndim] != shape.dims:
        raise ValueError(
            f"values of shape {vals.shape} do not match grid {shape.dims} "
            "with a trailing channel axis"
        )
    if vals.shape[-1] < 1:
        raise ValueError("at least one channel required")
    if channels is not None and vals.shape[-1] != channels:
        raise ValueError(
            f"expected {channels} channels, got {vals.shape[-1]}"
        )
    if not np.all(np.isfinite(vals)):
        raise ValueError("values must be finite")
    return vals


@dataclass
class ScalarImage:
    """Multi-channel intensity image on a grid; values shaped dims + (C,)."""

    shape: GridShape
    values: np.ndarray

    def __post_init__(self):
        self.values = _as_values(self.shape, self.values)

    @property
    def channels(self) -> int:
        return self.values.shape[-1]

    @classmethod
    def from_array(cls, values, spacing=None) -> "ScalarImage":
        """Build from an array whose last axis is the channel axis."""
        values = np.asarray(values, dtype=np.float64)
        return cls(GridShape(values.shape[:-1], spacing), values)


@dataclass
class VectorField:
    """Displacement/velocity field in pixel units; one component per axis."""

    shape: GridShape
    values: np.ndarray

    def __post_init__(self):
        self.values = _as_values(self.shape, self.values, channels=self.shape.ndim)

    @property
    def channels(self) -> int:
        return self.values.shape[-1]

    @classmethod
    def from_array(cls, values, spacing=None) -> "VectorField":
        values = np.asarray(values, dtype=np.float64)
        return cls(GridShape(values.shape[:-1], spacing), values)

    @classmethod
    def zeros(cls, shape: GridShape) -> "VectorField":
        return cls(shape, np.zeros(shape.dims + (shape.ndim,)))


@dataclass
class Transform:
    """Deformation phi(x) = x + u(x) carried as its displacement field."""

    displacement: VectorField
    kind: TransformKind = TransformKind.EULERIAN

    @property
    def shape(self) -> GridShape:
        return self.displacement.shape

    @classmethod
    def identity(cls, shape: GridShape, kind: TransformKind = TransformKind.EULERIAN) -> "Transform":
        return cls(VectorField.zeros(shape), kind)


@functools.lru_cache(maxsize=64)
def _identity_coords(dims: tuple[int, ...]) -> np.ndarray:
    """Node coordinates, shape dims + (D,).  Cached; treat as read-only."""
    coords = np.stack(
        np.meshgrid(*(np.arange(d, dtype=np.float64) for d in dims), indexing="ij"),
        axis=-1,
    )
    coords.flags.writeable = False
    return coords


def interior_slices(dims: tuple[int, ...], rim: int = INTERIOR_RIM) -> tuple[slice, ...]:
    """Slices selecting the grid minus a ``rim``-voxel border on every side."""
    if any(d <= 2 * rim for d in dims):
        raise ValueError(f"grid {dims} has no interior for rim {rim}")
    return tuple(slice(rim, d - rim) for d in dims)


def _sample_values(values: np.ndarray, positions: np.ndarray, policy: BoundaryPolicy) -> np.ndarray:
    """Multilinear sampling of dims+(C,) values at positions shaped (..., D)."""
    mode = "nearest" if policy is BoundaryPolicy.CLAMP_TO_EDGE else "constant"
    coords = np.moveaxis(positions, -1, 0)
    out = np.empty(positions.shape[:-1] + (values.shape[-1],))
    for c in range(values.shape[-1]):
        ndimage.map_coordinates(
            values[..., c], coords, output=out[..., c], order=1, mode=mode, cval=0.0
        )
    return out


def sample(field: ScalarImage | VectorField, coords, policy: BoundaryPolicy = BoundaryPolicy.CLAMP_TO_EDGE) -> np.ndarray:
    """Sample a field at continuous coordinates.

    Parameters
    ----------
    field : ScalarImage or VectorField
    coords : array_like, shape (..., D)
        Positions in pixel units.
    policy : BoundaryPolicy
        CLAMP_TO_EDGE clamps out-of-domain coordinates to the boundary;
        ZERO_DISPLACEMENT treats the field as zero outside the domain and is
        only meaningful for vector fields.

    Returns
    -------
    ndarray, shape (..., C)
    """
    if policy is BoundaryPolicy.ZERO_DISPLACEMENT and not isinstance(field, VectorField):
        raise ValueError("ZeroDisplacement sampling applies to vector fields only")
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim < 1 or coords.shape[-1] != field.shape.ndim:
        raise ValueError(
            f"coordinates must have {field.shape.ndim} components on the last axis"
        )
    if not np.all(np.isfinite(coords)):
        raise ValueError("invalid coordinate")
    return _sample_values(field.values, coords, policy)


def warp_image(image: ScalarImage, transform: Transform) -> ScalarImage:
    """Pull back an image through a transform: out(x) = image(x + u(x))."""
    if image.shape != transform.shape:
        raise ShapeMismatchError(
            f"image grid {image.shape.dims} != transform grid {transform.shape.dims}"
        )
    positions = _identity_coords(image.shape.dims) + transform.displacement.values
    return ScalarImage(
        image.shape,
        _sample_values(image.values, positions, BoundaryPolicy.CLAMP_TO_EDGE),
    )


def _compose_disp(outer_u: np.ndarray, inner_u: np.ndarray, dims: tuple[int, ...]) -> np.ndarray:
    positions = _identity_coords(dims) + inner_u
    return _sample_values(outer_u, positions, BoundaryPolicy.CLAMP_TO_EDGE) + inner_u


def compose(outer: Transform, inner: Transform, kind: TransformKind | None = None) -> Transform:
    """Function composition (outer o inner)(x) = outer(inner(x)).

    The outer displacement is sampled with edge clamping at the positions
    the inner transform maps to.  ``kind`` defaults to the outer tag.
    """
    if outer.shape != inner.shape:
        raise ShapeMismatchError(
            f"outer grid {outer.shape.dims} != inner grid {inner.shape.dims}"
        )
    u = _compose_disp(
        outer.displacement.values, inner.displacement.values, outer.shape.dims
    )
    return Transform(VectorField(outer.shape, u), kind or outer.kind)


def jacobian_matrix(f: VectorField) -> np.ndarray:
    """Per-node Jacobian of a vector field, shape dims + (D, D).

    J[..., i, j] = d f_i / d x_j via central differences in the interior and
    one-sided differences at the boundary, scaled by 1/spacing per axis.
    """
    D = f.shape.ndim
    J = np.empty(f.shape.dims + (D, D))
    for i in range(D):
        grads = np.gradient(f.values[..., i], *f.shape.spacing, edge_order=1)
        if D == 1:
            grads = [grads]
        for j in range(D):
            J[..., i, j] = grads[j]
    return J


def _det(F: np.ndarray) -> np.ndarray:
    """Determinant of a dims+(D,D) matrix field, closed form for D in {2,3}."""
    D = F.shape[-1]
    if D == 2:
        return F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    return (
        F[..., 0, 0] * (F[..., 1, 1] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 1])
        - F[..., 0, 1] * (F[..., 1, 0] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 0])
        + F[..., 0, 2] * (F[..., 1, 0] * F[..., 2, 1] - F[..., 1, 1] * F[..., 2, 0])
    )


def jacobian_determinant(t: Transform) -> np.ndarray:
    """det(I + J_u) per node, shape dims."""
    J = jacobian_matrix(t.displacement)
    F = J.copy()
    D = t.shape.ndim
    for i in range(D):
        F[..., i, i] += 1.0
    return _det(F)


def invert_transform(t: Transform, max_iter: int = 50, tol: float = 1e-4) -> Transform:
    """Invert a fold-free transform by fixed-point iteration.

    Iterates u_inv <- -u(x + u_inv(x)) until the interior max-norm residual
    of compose(t, t_inv) drops below ``tol``.  The caller must supply a
    fold-free transform (jacobian_determinant > 0 everywhere); convergence is
    otherwise not guaranteed.

    Raises
    ------
    ConvergenceError
        If the residual is still above ``tol`` after ``max_iter`` updates.
    """
    dims = t.shape.dims
    region = interior_slices(dims)
    u = t.displacement.values
    ident = _identity_coords(dims)
    u_inv = np.zeros_like(u)
    for _ in range(max_iter + 1):
        pulled = _sample_values(u, ident + u_inv, BoundaryPolicy.CLAMP_TO_EDGE)
        residual = u_inv + pulled
        worst = np.max(np.linalg.norm(residual[region], axis=-1))
        if worst < tol:
            return Transform(VectorField(t.shape, u_inv), t.kind)
        u_inv = -pulled
    raise ConvergenceError(
        f"inversion did not converge: interior residual {worst:.3e} > {tol:g} "
        f"after {max_iter} iterations"
    )
