"""Regular 3D grids and the scalar/label volumes living on them.

World coordinates are millimeters. A grid point with integer index ijk sits at
``origin + direction @ (spacing * ijk)``; the direction matrix is orthonormal, so
voxel axes map to world axes without shear. Arrays are indexed ``[i, j, k]`` with
axis 0 along world-x of the direction matrix; storage order only matters at file
boundaries and is handled there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigError, GridMismatchError

_IDENTITY9 = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)


@dataclass(frozen=True)
class GridMeta:
    """Geometry of a regular grid: shape, spacing (mm), origin (mm), direction."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    direction: tuple[float, ...] = _IDENTITY9

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "direction", tuple(float(d) for d in self.direction))
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise ConfigError(f"dims must be three positive integers, got {self.dims}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ConfigError(f"spacing must be three positive reals, got {self.spacing}")
        if len(self.origin) != 3:
            raise ConfigError("origin must have three components")
        d = self.direction_matrix
        if not np.allclose(d.T @ d, np.eye(3), atol=1e-6):
            raise ConfigError("direction matrix must be orthonormal within 1e-6")

    @property
    def direction_matrix(self) -> np.ndarray:
        return np.asarray(self.direction, dtype=np.float64).reshape(3, 3)

    @property
    def min_spacing(self) -> float:
        return min(self.spacing)

    @property
    def center_world(self) -> np.ndarray:
        half = (np.asarray(self.dims, dtype=np.float64) - 1.0) / 2.0
        return self.world_from_voxel(half)

    def world_from_voxel(self, ijk) -> np.ndarray:
        """Map continuous voxel indices, shape (..., 3), to world mm."""
        ijk = np.asarray(ijk, dtype=np.float64)
        scaled = ijk * np.asarray(self.spacing, dtype=np.float64)
        return scaled @ self.direction_matrix.T + np.asarray(self.origin, dtype=np.float64)

    def voxel_from_world(self, pts) -> np.ndarray:
        """Map world mm points, shape (..., 3), to continuous voxel indices."""
        pts = np.asarray(pts, dtype=np.float64)
        rel = pts - np.asarray(self.origin, dtype=np.float64)
        # orthonormal direction: inverse equals transpose
        return (rel @ self.direction_matrix) / np.asarray(self.spacing, dtype=np.float64)

    def matches(self, other: "GridMeta", tol: float = 1e-6) -> bool:
        return (
            self.dims == other.dims
            and np.allclose(self.spacing, other.spacing, atol=tol)
            and np.allclose(self.origin, other.origin, atol=tol)
            and np.allclose(self.direction, other.direction, atol=tol)
        )

    def voxel_mesh(self) -> np.ndarray:
        """Integer voxel index mesh as float64, shape dims + (3,)."""
        axes = [np.arange(n, dtype=np.float64) for n in self.dims]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


@dataclass
class Volume:
    """Scalar image on a grid, stored as 32-bit reals."""

    meta: GridMeta
    voxels: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.float32)
        if self.voxels.shape != self.meta.dims:
            raise GridMismatchError(
                f"voxel array shape {self.voxels.shape} does not match dims {self.meta.dims}"
            )


@dataclass
class LabelMap:
    """Integer segmentation on a grid; label 0 is background."""

    meta: GridMeta
    voxels: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.voxels)
        if not np.issubdtype(arr.dtype, np.integer):
            raise ConfigError("label voxels must be integers")
        if arr.size and arr.min() < 0:
            raise ConfigError("labels must be non-negative")
        self.voxels = arr.astype(np.uint16)
        if self.voxels.shape != self.meta.dims:
            raise GridMismatchError(
                f"label array shape {self.voxels.shape} does not match dims {self.meta.dims}"
            )

    @property
    def class_ids(self) -> tuple[int, ...]:
        """Present class IDs in increasing order, background 0 excluded."""
        return tuple(int(c) for c in np.unique(self.voxels) if c != 0)


def _clamped_linear_pull(arr: np.ndarray, vox_pts: np.ndarray) -> np.ndarray:
    """Trilinear values of arr at continuous voxel coordinates (..., 3), edge clamped."""
    coords = np.moveaxis(np.asarray(vox_pts, dtype=np.float64), -1, 0)
    return ndimage.map_coordinates(
        np.asarray(arr, dtype=np.float64), coords, order=1, mode="nearest", output=np.float64
    )


def _nearest_index(vox_pts: np.ndarray, dims) -> tuple[np.ndarray, np.ndarray]:
    """Nearest voxel index (ties toward the lower index) plus an inside-extent mask."""
    c = np.asarray(vox_pts, dtype=np.float64)
    dims_arr = np.asarray(dims)
    inside = np.all((c >= -0.5) & (c <= dims_arr - 0.5), axis=-1)
    idx = np.ceil(c - 0.5).astype(np.int64)
    idx = np.clip(idx, 0, dims_arr - 1)
    return idx, inside


def sample_trilinear(v: Volume, point) -> float | np.ndarray:
    """Trilinear interpolation at world points; outside the grid, clamps to the boundary.

    ``point`` may be a single 3-vector or an array shaped (..., 3); the return value
    matches (scalar or (...) array).
    """
    pts = np.asarray(point, dtype=np.float64)
    single = pts.ndim == 1
    vals = _clamped_linear_pull(v.voxels, v.meta.voxel_from_world(pts))
    return float(vals) if single else vals


def sample_nearest(l: LabelMap, point) -> int | np.ndarray:
    """Label of the nearest voxel center; points outside the grid extent give 0.

    Ties between neighboring centers resolve toward the lower index on each axis.
    """
    pts = np.asarray(point, dtype=np.float64)
    single = pts.ndim == 1
    idx, inside = _nearest_index(l.meta.voxel_from_world(pts), l.meta.dims)
    vals = l.voxels[idx[..., 0], idx[..., 1], idx[..., 2]]
    vals = np.where(inside, vals, 0).astype(l.voxels.dtype)
    return int(vals) if single else vals


def resample_to_grid(v: Volume, target: GridMeta, mode: str = "trilinear") -> Volume:
    """Resample a volume onto another grid by pulling values at target voxel centers."""
    if mode not in ("trilinear", "nearest"):
        raise ConfigError(f"unknown resampling mode {mode!r}")
    world = target.world_from_voxel(target.voxel_mesh())
    vox = v.meta.voxel_from_world(world)
    if mode == "trilinear":
        out = _clamped_linear_pull(v.voxels, vox)
    else:
        idx, _ = _nearest_index(vox, v.meta.dims)
        out = v.voxels[idx[..., 0], idx[..., 1], idx[..., 2]]
    return Volume(target, out.astype(np.float32))


def _smooth_array(arr: np.ndarray, sigma_mm, spacing) -> np.ndarray:
    """Separable Gaussian on a raw array; sigma in mm, edges replicated."""
    sigma_mm = np.broadcast_to(np.asarray(sigma_mm, dtype=np.float64), (3,))
    if np.any(sigma_mm < 0):
        raise ConfigError("smoothing sigma must be non-negative")
    sigma_vox = sigma_mm / np.asarray(spacing, dtype=np.float64)
    return ndimage.gaussian_filter(np.asarray(arr, dtype=np.float64), sigma=sigma_vox, mode="nearest")


def gaussian_smooth(v: Volume, sigma_mm) -> Volume:
    """Gaussian-smooth a volume with a physical-units kernel (scalar or per-axis mm)."""
    return Volume(v.meta, _smooth_array(v.voxels, sigma_mm, v.meta.spacing).astype(np.float32))


def _pyramid_level_meta(meta: GridMeta, factor: int) -> GridMeta:
    dims = tuple(int(math.ceil(n / factor)) for n in meta.dims)
    spacing = tuple(s * factor for s in meta.spacing)
    # center the coarse grid on the source index range so no level center leaves the extent
    shift = [(n - 1 - (m - 1) * factor) / 2.0 for n, m in zip(meta.dims, dims)]
    origin = meta.world_from_voxel(np.asarray(shift, dtype=np.float64))
    return GridMeta(dims, spacing, tuple(origin), meta.direction)


def build_pyramid(v: Volume, shrink_factors) -> list[Volume]:
    """Coarse-to-fine pyramid; each level is pre-smoothed then resampled.

    Levels with factor f > 1 are smoothed with sigma = 0.5 * f * spacing per axis
    before resampling; a factor-1 level is the original volume. Factors must be
    positive integers in non-increasing order, and no level may have a dimension
    below 4.
    """
    factors = [int(f) for f in shrink_factors]
    if not factors:
        raise ConfigError("at least one shrink factor is required")
    if any(f < 1 for f in factors):
        raise ConfigError(f"shrink factors must be >= 1, got {factors}")
    if any(a < b for a, b in zip(factors, factors[1:])):
        raise ConfigError(f"shrink factors must be non-increasing, got {factors}")
    levels = []
    for f in factors:
        if f == 1:
            levels.append(Volume(v.meta, v.voxels.copy()))
            continue
        meta_l = _pyramid_level_meta(v.meta, f)
        if any(d < 4 for d in meta_l.dims):
            raise ConfigError(
                f"shrink factor {f} reduces dims {v.meta.dims} below 4 per axis"
            )
        sigma_mm = tuple(0.5 * f * s for s in v.meta.spacing)
        smoothed = Volume(v.meta, _smooth_array(v.voxels, sigma_mm, v.meta.spacing).astype(np.float32))
        levels.append(resample_to_grid(smoothed, meta_l, "trilinear"))
    return levels


def spatial_gradient(v: Volume) -> np.ndarray:
    """Per-voxel spatial gradient along world axes, units 1/mm, shape dims + (3,).

    Central differences in the interior, one-sided at the faces. Axes with a single
    voxel get a zero derivative.
    """
    data = np.asarray(v.voxels, dtype=np.float64)
    grads = []
    for axis in range(3):
        if v.meta.dims[axis] > 1:
            grads.append(np.gradient(data, v.meta.spacing[axis], axis=axis, edge_order=1))
        else:
            grads.append(np.zeros_like(data))
    gvox = np.stack(grads, axis=-1)
    # rotate voxel-axis derivatives into world axes
    return gvox @ v.meta.direction_matrix.T
