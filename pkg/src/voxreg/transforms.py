"""Spatial transforms: matrix parameterizations and dense displacement fields.

All transforms act on world coordinates in millimeters and are used as pull-back
maps: warping samples the source image at the mapped point, so a map that "sends
the moving image onto the fixed grid" takes fixed-grid points to moving-image
points. Displacement fields store per-voxel world-mm vectors u with
phi(x) = x + u(x).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CertificateError, ConfigError, GridMismatchError, NonConvergentError
from .volume import (
    GridMeta,
    LabelMap,
    Volume,
    _clamped_linear_pull,
    _nearest_index,
    _smooth_array,
)


@dataclass(frozen=True)
class TranslationParams:
    """Pure translation by t millimeters."""

    t: tuple[float, float, float]

    def to_affine(self, center=(0.0, 0.0, 0.0)) -> "AffineParams":
        return AffineParams(matrix=_I9, t=tuple(float(x) for x in self.t), center=tuple(center))


@dataclass(frozen=True)
class RigidParams:
    """Rotation about a center followed by translation.

    rotation holds (az, ay, ax) in radians; the rotation matrix is
    Rz(az) @ Ry(ay) @ Rx(ax).
    """

    rotation: tuple[float, float, float]
    t: tuple[float, float, float]
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def rotation_matrix(self) -> np.ndarray:
        return _rotation_zyx(*self.rotation)

    def to_affine(self) -> "AffineParams":
        m = self.rotation_matrix()
        return AffineParams(tuple(m.ravel()), tuple(self.t), tuple(self.center))


@dataclass(frozen=True)
class AffineParams:
    """General linear map about a center followed by translation.

    Applied as p -> center + M @ (p - center) + t with M stored row-major.
    """

    matrix: tuple[float, ...] = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)
    t: tuple[float, float, float] = (0.0, 0.0, 0.0)
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if len(self.matrix) != 9:
            raise ConfigError("affine matrix needs 9 row-major entries")
        object.__setattr__(self, "matrix", tuple(float(v) for v in self.matrix))
        object.__setattr__(self, "t", tuple(float(v) for v in self.t))
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))

    @property
    def matrix33(self) -> np.ndarray:
        return np.asarray(self.matrix, dtype=np.float64).reshape(3, 3)

    @classmethod
    def identity(cls, center=(0.0, 0.0, 0.0)) -> "AffineParams":
        return cls(center=tuple(float(c) for c in center))


_I9 = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)

ParametricTransform = TranslationParams | RigidParams | AffineParams


def _rotation_zyx(az: float, ay: float, ax: float) -> np.ndarray:
    cz, sz = math.cos(az), math.sin(az)
    cy, sy = math.cos(ay), math.sin(ay)
    cx, sx = math.cos(ax), math.sin(ax)
    rz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    return rz @ ry @ rx


def euler_zyx_from_matrix(m: np.ndarray) -> tuple[float, float, float]:
    """Recover (az, ay, ax) from a rotation matrix built as Rz @ Ry @ Rx."""
    m = np.asarray(m, dtype=np.float64)
    ay = math.asin(max(-1.0, min(1.0, -m[2, 0])))
    az = math.atan2(m[1, 0], m[0, 0])
    ax = math.atan2(m[2, 1], m[2, 2])
    return az, ay, ax


def _as_affine(params: ParametricTransform) -> AffineParams:
    if isinstance(params, AffineParams):
        return params
    if isinstance(params, (TranslationParams, RigidParams)):
        return params.to_affine()
    raise ConfigError(f"unsupported transform type {type(params).__name__}")


def apply_point(params: ParametricTransform, point) -> np.ndarray:
    """Map world points (..., 3) through a parametric transform."""
    a = _as_affine(params)
    pts = np.asarray(point, dtype=np.float64)
    c = np.asarray(a.center, dtype=np.float64)
    out = (pts - c) @ a.matrix33.T + c + np.asarray(a.t, dtype=np.float64)
    return out


@dataclass
class DisplacementField:
    """Dense per-voxel displacement in world millimeters, shape dims + (3,)."""

    meta: GridMeta
    vectors: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.shape != self.meta.dims + (3,):
            raise GridMismatchError(
                f"vector array shape {self.vectors.shape} does not match dims {self.meta.dims} + (3,)"
            )

    @classmethod
    def zero(cls, meta: GridMeta) -> "DisplacementField":
        return cls(meta, np.zeros(meta.dims + (3,), dtype=np.float32))


@dataclass(frozen=True)
class InversionConfig:
    """Controls for fixed-point displacement inversion.

    The inverse is accepted once the composed residual max-norm drops below
    epsilon2 * min(spacing); each sweep's correction is capped at
    step_cap_fraction * min(spacing).
    """

    epsilon2: float = 0.1
    max_sweeps: int = 50
    step_cap_fraction: float = 0.5

    def __post_init__(self):
        if self.epsilon2 <= 0:
            raise ConfigError("epsilon2 must be positive")
        if self.max_sweeps < 1:
            raise ConfigError("max_sweeps must be at least 1")
        if not 0 < self.step_cap_fraction <= 1:
            raise ConfigError("step_cap_fraction must lie in (0, 1]")


@dataclass
class DiffeomorphicMap:
    """Forward/inverse displacement pair with its measured inverse-consistency residual."""

    forward: DisplacementField
    inverse: DisplacementField
    residual_inf_norm: float


def _sample_vectors(fld: DisplacementField, world_pts: np.ndarray) -> np.ndarray:
    """Clamped trilinear pull of a vector field at world points (..., 3)."""
    vox = fld.meta.voxel_from_world(world_pts)
    out = np.empty(world_pts.shape, dtype=np.float64)
    for c in range(3):
        out[..., c] = _clamped_linear_pull(fld.vectors[..., c], vox)
    return out


def _grid_world(meta: GridMeta) -> np.ndarray:
    return meta.world_from_voxel(meta.voxel_mesh())


def warp_volume(v, transform, target: GridMeta, mode: str = "trilinear"):
    """Pull-back warp onto a target grid.

    The output voxel at world point x takes the source value at phi(x), where phi
    is either a parametric transform or a displacement field (interpolated if its
    grid differs from the target). Volumes interpolate with boundary clamping;
    label maps require nearest mode and map out-of-grid points to background.
    """
    if isinstance(v, LabelMap) and mode != "nearest":
        raise ConfigError("label maps must be warped with nearest mode")
    if mode not in ("trilinear", "nearest"):
        raise ConfigError(f"unknown warp mode {mode!r}")
    x = _grid_world(target)
    if isinstance(transform, DisplacementField):
        if transform.meta.matches(target):
            mapped = x + transform.vectors.astype(np.float64)
        else:
            mapped = x + _sample_vectors(transform, x)
    else:
        mapped = apply_point(transform, x)
    vox = v.meta.voxel_from_world(mapped)
    if isinstance(v, LabelMap):
        idx, inside = _nearest_index(vox, v.meta.dims)
        out = v.voxels[idx[..., 0], idx[..., 1], idx[..., 2]]
        out = np.where(inside, out, 0).astype(np.uint16)
        return LabelMap(target, out)
    if mode == "nearest":
        idx, _ = _nearest_index(vox, v.meta.dims)
        out = v.voxels[idx[..., 0], idx[..., 1], idx[..., 2]]
        return Volume(target, out.astype(np.float32))
    return Volume(target, _clamped_linear_pull(v.voxels, vox).astype(np.float32))


def compose_fields(outer: DisplacementField, inner: DisplacementField) -> DisplacementField:
    """Displacement of outer(inner(x)) on the inner field's grid.

    u(x) = u_inner(x) + u_outer(x + u_inner(x)), with the outer field interpolated
    (edge clamped) at the mapped points.
    """
    x = _grid_world(inner.meta)
    y = x + inner.vectors.astype(np.float64)
    u = inner.vectors.astype(np.float64) + _sample_vectors(outer, y)
    return DisplacementField(inner.meta, u.astype(np.float32))


def euler_step(phi: DisplacementField, velocity: DisplacementField, dt: float) -> DisplacementField:
    """One explicit integration step: u'(x) = u(x) + dt * v(x + u(x))."""
    if not phi.meta.matches(velocity.meta):
        raise GridMismatchError("euler_step needs the map and velocity on one grid")
    x = _grid_world(phi.meta)
    u = phi.vectors.astype(np.float64)
    u = u + dt * _sample_vectors(velocity, x + u)
    return DisplacementField(phi.meta, u.astype(np.float32))


def _composition_residual(u_fwd: np.ndarray, inv: DisplacementField, x: np.ndarray) -> float:
    """Max-norm of inverse(forward(x)) - x over the grid."""
    res = u_fwd + _sample_vectors(inv, x + u_fwd)
    return float(np.max(np.abs(res))) if res.size else 0.0


def invert_field(phi: DisplacementField, cfg: InversionConfig = InversionConfig()) -> DiffeomorphicMap:
    """Numerically invert a displacement field by damped fixed-point sweeps.

    Starting from the identity, each sweep measures the composition residual
    v(x) = psi_inv(phi(x)) - x, scales it so the applied correction never exceeds
    step_cap_fraction * min(spacing) in max-norm, and subtracts it from psi_inv at
    the points psi_inv currently maps to. Iteration stops once the residual
    max-norm falls below epsilon2 * min(spacing); exceeding max_sweeps raises
    NonConvergentError.
    """
    meta = phi.meta
    r = meta.min_spacing
    tol = cfg.epsilon2 * r
    cap = cfg.step_cap_fraction * r
    x = _grid_world(meta)
    u = phi.vectors.astype(np.float64)
    w = np.zeros_like(u)
    w_field = DisplacementField(meta, w.astype(np.float32))
    residual = math.inf
    for _ in range(cfg.max_sweeps):
        res = u + _sample_vectors(w_field, x + u)
        residual = float(np.max(np.abs(res)))
        if residual < tol:
            return DiffeomorphicMap(phi, w_field, residual)
        gamma = min(1.0, cap / residual)
        res_field = DisplacementField(meta, res.astype(np.float32))
        w = w - gamma * _sample_vectors(res_field, x + w)
        w_field = DisplacementField(meta, w.astype(np.float32))
    # one final measurement so the error reports the post-update residual
    res = u + _sample_vectors(w_field, x + u)
    residual = float(np.max(np.abs(res)))
    if residual < tol:
        return DiffeomorphicMap(phi, w_field, residual)
    raise NonConvergentError(
        f"inversion residual {residual:.6g} mm did not reach {tol:.6g} mm "
        f"in {cfg.max_sweeps} sweeps",
        residual_inf_norm=residual,
        bound=tol,
    )


def certify_pair(
    forward: DisplacementField, inverse: DisplacementField, cfg: InversionConfig
) -> DiffeomorphicMap:
    """Wrap an existing forward/inverse pair, measuring and enforcing the residual bound."""
    x = _grid_world(forward.meta)
    residual = _composition_residual(forward.vectors.astype(np.float64), inverse, x)
    tol = cfg.epsilon2 * forward.meta.min_spacing
    if residual >= tol:
        raise CertificateError(
            f"composition residual {residual:.6g} mm exceeds bound {tol:.6g} mm",
            residual_inf_norm=residual,
            bound=tol,
        )
    return DiffeomorphicMap(forward, inverse, residual)


def smooth_field(fld: DisplacementField, sigma_mm) -> DisplacementField:
    """Componentwise Gaussian smoothing of a displacement field (sigma in mm)."""
    sig = np.max(np.broadcast_to(np.asarray(sigma_mm, dtype=np.float64), (3,)))
    if sig <= 0:
        return DisplacementField(fld.meta, fld.vectors.copy())
    out = np.empty_like(fld.vectors, dtype=np.float64)
    for c in range(3):
        out[..., c] = _smooth_array(fld.vectors[..., c], sigma_mm, fld.meta.spacing)
    return DisplacementField(fld.meta, out.astype(np.float32))


def resample_field(fld: DisplacementField, target: GridMeta) -> DisplacementField:
    """Carry a displacement field onto another grid; vectors stay world-mm values."""
    if fld.meta.matches(target):
        return DisplacementField(target, fld.vectors.copy())
    x = _grid_world(target)
    return DisplacementField(target, _sample_vectors(fld, x).astype(np.float32))


def params_to_field(params: ParametricTransform, grid: GridMeta) -> DisplacementField:
    """Dense displacement equivalent of a parametric transform on a given grid."""
    x = _grid_world(grid)
    return DisplacementField(grid, (apply_point(params, x) - x).astype(np.float32))
