"""Synthetic multimodal phantoms with analytically known deformations.

A phantom is a set of soft-edged ellipsoids rasterized twice: once in place with
the "fixed" intensities, and once through the inverse of an analytic warp with
the "moving" intensities. Structure intensities may differ arbitrarily between
the two renderings, which makes the pair multimodal: a global intensity mapping
between them need not exist, while local structure is preserved.

The warp is the pull-back truth map T taking fixed-grid world points to moving
world points, so a structure centered at c in the fixed volume appears at T(c)
in the moving volume, and warping the moving volume by T reproduces the fixed
one. Every warp here has a closed-form inverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PhantomSpecError
from .transforms import DisplacementField, RigidParams, apply_point
from .volume import GridMeta, LabelMap, Volume


@dataclass(frozen=True)
class ShiftWarp:
    """Uniform displacement of the structures by ``shift`` mm."""

    shift: tuple[float, float, float]

    def forward_points(self, pts) -> np.ndarray:
        return np.asarray(pts, dtype=np.float64) + np.asarray(self.shift, dtype=np.float64)

    def inverse_points(self, pts) -> np.ndarray:
        return np.asarray(pts, dtype=np.float64) - np.asarray(self.shift, dtype=np.float64)


@dataclass(frozen=True)
class RigidWarp:
    """Rotation (ZYX Euler radians) about a center plus translation."""

    angles_zyx: tuple[float, float, float]
    t: tuple[float, float, float]
    center: tuple[float, float, float]

    def _params(self) -> RigidParams:
        return RigidParams(self.angles_zyx, self.t, self.center)

    def forward_points(self, pts) -> np.ndarray:
        return apply_point(self._params(), pts)

    def inverse_points(self, pts) -> np.ndarray:
        p = np.asarray(pts, dtype=np.float64)
        r = self._params().rotation_matrix()
        c = np.asarray(self.center, dtype=np.float64)
        return (p - c - np.asarray(self.t, dtype=np.float64)) @ r + c


@dataclass(frozen=True)
class SinusoidWarp:
    """Smooth sinusoidal displacement with a closed-form inverse.

    The axes are coupled triangularly: z moves by the constant
    a*sin(phase_z), y by a*sin(2*pi*z/period + phase_y), and x by
    a*sin(2*pi*y/period + phase_x), each argument taken at the source point.
    That gives shear (hence rotation content) in two planes while staying
    exactly invertible by back-substitution.
    """

    amplitude_mm: float
    period_mm: float
    phases: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.amplitude_mm < 0 or self.period_mm <= 0:
            raise PhantomSpecError("sinusoid needs amplitude >= 0 and period > 0")
        if self.amplitude_mm >= self.period_mm / 4.0:
            raise PhantomSpecError(
                f"amplitude {self.amplitude_mm} must stay below period/4 = {self.period_mm / 4.0}"
            )

    def forward_points(self, pts) -> np.ndarray:
        p = np.asarray(pts, dtype=np.float64)
        a = self.amplitude_mm
        w = 2.0 * math.pi / self.period_mm
        px, py, pz = self.phases
        out = p.copy()
        out[..., 2] = p[..., 2] + a * math.sin(pz)
        out[..., 1] = p[..., 1] + a * np.sin(w * p[..., 2] + py)
        out[..., 0] = p[..., 0] + a * np.sin(w * p[..., 1] + px)
        return out

    def inverse_points(self, pts) -> np.ndarray:
        p = np.asarray(pts, dtype=np.float64)
        a = self.amplitude_mm
        w = 2.0 * math.pi / self.period_mm
        px, py, pz = self.phases
        z = p[..., 2] - a * math.sin(pz)
        y = p[..., 1] - a * np.sin(w * z + py)
        x = p[..., 0] - a * np.sin(w * y + px)
        return np.stack([x, y, z], axis=-1)


class IdentityWarp:
    def forward_points(self, pts) -> np.ndarray:
        return np.asarray(pts, dtype=np.float64).copy()

    def inverse_points(self, pts) -> np.ndarray:
        return np.asarray(pts, dtype=np.float64).copy()


PhantomWarp = ShiftWarp | RigidWarp | SinusoidWarp | IdentityWarp


@dataclass(frozen=True)
class Structure:
    """Ellipsoid with per-rendering intensities; labels use the hard boundary."""

    class_id: int
    center: tuple[float, float, float]
    radii: tuple[float, float, float]
    intensity_fixed: float
    intensity_moving: float

    def __post_init__(self):
        if self.class_id < 1:
            raise PhantomSpecError("structure class ids start at 1")
        if any(r <= 0 for r in self.radii):
            raise PhantomSpecError("structure radii must be positive")


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    structures: tuple[Structure, ...]
    warp: PhantomWarp = field(default_factory=IdentityWarp)
    noise_sigma: float = 0.01
    seed: int = 0
    edge_mm: float = 1.0
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.structures:
            raise PhantomSpecError("a phantom needs at least one structure")
        if self.noise_sigma < 0 or self.edge_mm < 0:
            raise PhantomSpecError("noise_sigma and edge_mm must be non-negative")

    @property
    def meta(self) -> GridMeta:
        return GridMeta(self.dims, self.spacing, self.origin)


@dataclass
class Phantom:
    fixed: Volume
    moving: Volume
    fixed_labels: LabelMap
    moving_labels: LabelMap
    true_map: PhantomWarp
    spec: PhantomSpec


def _rasterize(spec: PhantomSpec, query_pts: np.ndarray, which: str):
    """Paint structures at the query points; later structures overwrite earlier ones."""
    vol = np.zeros(query_pts.shape[:-1], dtype=np.float64)
    labels = np.zeros(query_pts.shape[:-1], dtype=np.uint16)
    for s in spec.structures:
        rel = (query_pts - np.asarray(s.center, dtype=np.float64)) / np.asarray(s.radii, dtype=np.float64)
        rho = np.sqrt(np.sum(rel * rel, axis=-1))
        inside_mm = (1.0 - rho) * min(s.radii)
        if spec.edge_mm > 0:
            w = np.clip(0.5 + inside_mm / (2.0 * spec.edge_mm), 0.0, 1.0)
        else:
            w = (inside_mm >= 0).astype(np.float64)
        intensity = s.intensity_fixed if which == "fixed" else s.intensity_moving
        vol = vol * (1.0 - w) + intensity * w
        labels[rho <= 1.0] = s.class_id
    return vol, labels


def make_phantom(spec: PhantomSpec) -> Phantom:
    """Deterministic phantom pair; the same spec always yields identical voxels.

    The fixed noise field is drawn before the moving one from a generator seeded
    with spec.seed, so the two renderings get independent but reproducible noise.
    """
    meta = spec.meta
    grid_world = meta.world_from_voxel(meta.voxel_mesh())
    fixed_vol, fixed_lab = _rasterize(spec, grid_world, "fixed")
    moving_query = spec.warp.inverse_points(grid_world)
    moving_vol, moving_lab = _rasterize(spec, moving_query, "moving")
    rng = np.random.default_rng(spec.seed)
    if spec.noise_sigma > 0:
        fixed_vol = fixed_vol + rng.normal(0.0, spec.noise_sigma, size=meta.dims)
        moving_vol = moving_vol + rng.normal(0.0, spec.noise_sigma, size=meta.dims)
    return Phantom(
        fixed=Volume(meta, fixed_vol.astype(np.float32)),
        moving=Volume(meta, moving_vol.astype(np.float32)),
        fixed_labels=LabelMap(meta, fixed_lab),
        moving_labels=LabelMap(meta, moving_lab),
        true_map=spec.warp,
        spec=spec,
    )


def truth_field(warp: PhantomWarp, meta: GridMeta) -> DisplacementField:
    """The warp's pull-back displacement sampled on a grid."""
    x = meta.world_from_voxel(meta.voxel_mesh())
    return DisplacementField(meta, (warp.forward_points(x) - x).astype(np.float32))


def preset(name: str, seed: int = 0) -> PhantomSpec:
    """Built-in phantom descriptions used by the command line."""
    if name == "small":
        return PhantomSpec(
            dims=(24, 24, 24),
            spacing=(1.0, 1.0, 1.0),
            structures=(
                Structure(1, (9.0, 10.0, 12.0), (5.0, 4.0, 4.5), 0.9, 0.35),
                Structure(2, (16.0, 14.0, 11.0), (3.5, 4.5, 3.0), 0.45, 0.85),
            ),
            warp=ShiftWarp((1.5, -1.0, 0.5)),
            noise_sigma=0.01,
            seed=seed,
        )
    if name == "demo":
        return PhantomSpec(
            dims=(48, 48, 48),
            spacing=(1.0, 1.0, 1.0),
            structures=(
                Structure(1, (21.0, 24.0, 25.0), (11.0, 9.0, 10.0), 0.55, 0.75),
                Structure(2, (18.0, 20.0, 22.0), (4.5, 4.0, 4.0), 0.95, 0.25),
                Structure(3, (29.0, 27.0, 24.0), (4.0, 5.0, 4.5), 0.30, 0.90),
                Structure(4, (24.0, 31.0, 29.0), (3.0, 3.5, 3.0), 0.70, 0.50),
            ),
            warp=SinusoidWarp(2.5, 64.0, (0.9, 2.4, 0.6)),
            noise_sigma=0.01,
            seed=seed,
        )
    raise PhantomSpecError(f"unknown phantom preset {name!r}")
