"""Registration ladder: parametric pre-alignment plus greedy symmetric refinement.

Parametric stages (translation, rigid, affine) maximize the windowed correlation
score with finite-difference gradients and a backtracking line search, coarse to
fine over a shrink pyramid. Diffeomorphic stages refine with two half-maps
advanced by equal-and-opposite smoothed force steps; both half-maps keep
certified numerical inverses, and the final forward/inverse pair is composed
from the half-maps. The elastic kind runs the same loop one-sided (only the
forward half-map moves) with total-field smoothing.

Every accepted iteration appends a trace record (level, iteration, score, step);
a step whose score would drop is retried at half length up to three times, so
the score is non-decreasing across accepted iterations of a level.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateImageError, NonConvergentError
from .similarity import SimilarityConfig, cc_force, cc_score
from .transforms import (
    AffineParams,
    DiffeomorphicMap,
    DisplacementField,
    InversionConfig,
    _rotation_zyx,
    apply_point,
    certify_pair,
    compose_fields,
    euler_step,
    euler_zyx_from_matrix,
    invert_field,
    resample_field,
    smooth_field,
    warp_volume,
)
from .volume import GridMeta, LabelMap, Volume, build_pyramid, gaussian_smooth

logger = logging.getLogger(__name__)

PARAMETRIC_KINDS = ("translation", "rigid", "affine")
DIFFEO_KINDS = ("elastic", "elastic_syn")
STAGE_KINDS = PARAMETRIC_KINDS + DIFFEO_KINDS

_SCORE_SLACK = 1e-12
_MAX_HALVINGS = 3


@dataclass(frozen=True)
class StageConfig:
    """One rung of the ladder with its per-level schedule.

    The three per-level lists must have equal length. step_size is the
    line-search scale for parametric kinds and the per-iteration target
    displacement in mm for diffeomorphic kinds; None picks the kind's default
    (1.0 respectively 0.4) at construction. total_sigma_mm smooths the
    accumulated forward map and must be positive for elastic and zero for
    elastic_syn.
    """

    kind: str
    iterations_per_level: tuple[int, ...] = (60, 40, 20)
    shrink_factors: tuple[int, ...] = (4, 2, 1)
    smoothing_sigmas_mm: tuple[float, ...] = (4.0, 2.0, 0.0)
    step_size: float | None = None
    update_sigma_mm: float = 3.0
    total_sigma_mm: float = 0.0

    def __post_init__(self):
        if self.kind not in STAGE_KINDS:
            raise ConfigError(f"unknown stage kind {self.kind!r}; expected one of {STAGE_KINDS}")
        object.__setattr__(
            self, "iterations_per_level", tuple(int(i) for i in self.iterations_per_level)
        )
        object.__setattr__(self, "shrink_factors", tuple(int(s) for s in self.shrink_factors))
        object.__setattr__(
            self, "smoothing_sigmas_mm", tuple(float(s) for s in self.smoothing_sigmas_mm)
        )
        if self.step_size is None:
            object.__setattr__(
                self, "step_size", 1.0 if self.kind in PARAMETRIC_KINDS else 0.4
            )
        n = len(self.iterations_per_level)
        if n == 0 or len(self.shrink_factors) != n or len(self.smoothing_sigmas_mm) != n:
            raise ConfigError(
                "the three per-level lists need one entry per level (got "
                f"{len(self.iterations_per_level)}/{len(self.shrink_factors)}"
                f"/{len(self.smoothing_sigmas_mm)})"
            )
        if any(i < 0 for i in self.iterations_per_level):
            raise ConfigError("iteration counts must be non-negative")
        if any(s < 0 for s in self.smoothing_sigmas_mm) or self.update_sigma_mm < 0:
            raise ConfigError("smoothing sigmas must be non-negative")
        if self.step_size <= 0:
            raise ConfigError("step_size must be positive")
        if self.kind == "elastic" and self.total_sigma_mm <= 0:
            raise ConfigError("elastic stages need total_sigma_mm > 0")
        if self.kind == "elastic_syn" and self.total_sigma_mm != 0:
            raise ConfigError("elastic_syn keeps total_sigma_mm at 0")

    @property
    def levels(self) -> int:
        return len(self.iterations_per_level)


@dataclass(frozen=True)
class TraceRecord:
    stage: int
    level: int
    iteration: int
    cc_score: float
    step_size: float


@dataclass
class SynState:
    """Half-maps phi1 (moving side) and phi2 (fixed side) with their inverses."""

    phi1: DisplacementField
    phi2: DisplacementField
    phi1_inv: DisplacementField
    phi2_inv: DisplacementField

    @classmethod
    def identity(cls, meta: GridMeta) -> "SynState":
        return cls(
            DisplacementField.zero(meta),
            DisplacementField.zero(meta),
            DisplacementField.zero(meta),
            DisplacementField.zero(meta),
        )


@dataclass
class RegistrationResult:
    pre_affine: AffineParams
    diffeo: DiffeomorphicMap | None
    trace: list[TraceRecord]
    final_score: float


def _check_not_constant(v: Volume, name: str):
    arr = v.voxels
    if arr.size == 0 or float(arr.max()) == float(arr.min()):
        raise DegenerateImageError(f"{name} image is constant; correlation is undefined")


# ---------------------------------------------------------------------------
# parametric stages


def _pack(kind: str, init: AffineParams) -> np.ndarray:
    if kind == "translation":
        return np.asarray(init.t, dtype=np.float64)
    if kind == "rigid":
        m = init.matrix33
        u, _, vt = np.linalg.svd(m)
        r = u @ vt
        if np.linalg.det(r) < 0:
            u[:, -1] *= -1
            r = u @ vt
        return np.concatenate([np.asarray(euler_zyx_from_matrix(r)), np.asarray(init.t)])
    return np.concatenate([init.matrix33.ravel(), np.asarray(init.t)])


def _unpack(kind: str, p: np.ndarray, init: AffineParams, center) -> AffineParams:
    if kind == "translation":
        return AffineParams(init.matrix, tuple(p), tuple(center))
    if kind == "rigid":
        m = _rotation_zyx(p[0], p[1], p[2])
        return AffineParams(tuple(m.ravel()), tuple(p[3:6]), tuple(center))
    return AffineParams(tuple(p[:9]), tuple(p[9:12]), tuple(center))


def _param_scales(kind: str, radius_mm: float) -> np.ndarray:
    # unit scaled-step moves the volume edge by roughly one millimeter
    s_lin = 1.0 / max(radius_mm, 1.0)
    if kind == "translation":
        return np.ones(3)
    if kind == "rigid":
        return np.asarray([s_lin, s_lin, s_lin, 1.0, 1.0, 1.0])
    return np.asarray([s_lin] * 9 + [1.0] * 3)


def register_parametric(
    moving: Volume,
    fixed: Volume,
    stage: StageConfig,
    sim_cfg: SimilarityConfig = SimilarityConfig(),
    init: AffineParams | None = None,
    stage_index: int = 0,
) -> tuple[AffineParams, list[TraceRecord]]:
    """Recover a parametric transform maximizing the windowed correlation score.

    The returned transform is the pull-back map from fixed-grid world points to
    moving-image points. ``init`` seeds the search (its rotation part is kept for
    a translation stage, its nearest rotation for a rigid stage).
    """
    if stage.kind not in PARAMETRIC_KINDS:
        raise ConfigError(f"register_parametric cannot run a {stage.kind!r} stage")
    _check_not_constant(fixed, "fixed")
    _check_not_constant(moving, "moving")
    center = tuple(fixed.meta.center_world) if init is None else init.center
    if init is None:
        init = AffineParams.identity(center)
    extent = np.asarray(fixed.meta.dims) * np.asarray(fixed.meta.spacing)
    radius = 0.5 * float(np.linalg.norm(extent))
    scales = _param_scales(stage.kind, radius)
    p = _pack(stage.kind, init)
    trace: list[TraceRecord] = []

    pyr_f = build_pyramid(fixed, stage.shrink_factors)
    pyr_m = build_pyramid(moving, stage.shrink_factors)
    for level in range(stage.levels):
        f_l = pyr_f[level]
        m_l = pyr_m[level]
        if stage.smoothing_sigmas_mm[level] > 0:
            f_l = gaussian_smooth(f_l, stage.smoothing_sigmas_mm[level])
            m_l = gaussian_smooth(m_l, stage.smoothing_sigmas_mm[level])
        h = f_l.meta.min_spacing
        eps = 0.1 * h * scales

        def score_at(vec: np.ndarray) -> float:
            params = _unpack(stage.kind, vec, init, center)
            warped = warp_volume(m_l, params, f_l.meta, "trilinear")
            return cc_score(warped, f_l, sim_cfg)

        current = score_at(p)
        step_mm = stage.step_size * h
        for it in range(stage.iterations_per_level[level]):
            grad = np.zeros_like(p)
            for i in range(p.size):
                e = np.zeros_like(p)
                e[i] = eps[i]
                grad[i] = (score_at(p + e) - score_at(p - e)) / (2.0 * eps[i])
            d = grad * scales * scales
            induced = float(np.max(np.abs(d) / scales))
            if induced < 1e-12:
                break
            d = d / induced  # unit step along d now moves at most ~1 mm
            accepted = False
            t = step_mm
            while t > 1e-6 * h:
                cand = p + t * d
                sc = score_at(cand)
                if sc > current + _SCORE_SLACK:
                    p, current, accepted = cand, sc, True
                    break
                t /= 2.0
            if not accepted:
                break
            step_mm = min(2.0 * t, 2.0 * h)
            trace.append(TraceRecord(stage_index, level, it, current, t))
        logger.info(
            "stage %d (%s) level %d: score %.6f", stage_index, stage.kind, level, current
        )
    return _unpack(stage.kind, p, init, center), trace


# ---------------------------------------------------------------------------
# diffeomorphic stages


def _state_score(i: Volume, j: Volume, state: SynState, sim_cfg: SimilarityConfig) -> float:
    i1 = warp_volume(i, state.phi1, state.phi1.meta, "trilinear")
    j2 = warp_volume(j, state.phi2, state.phi2.meta, "trilinear")
    return cc_score(i1, j2, sim_cfg)


def syn_iteration(
    i: Volume,
    j: Volume,
    state: SynState,
    stage: StageConfig,
    sim_cfg: SimilarityConfig = SimilarityConfig(),
    inv_cfg: InversionConfig = InversionConfig(),
    step_mm: float | None = None,
) -> SynState:
    """One greedy step of the symmetric (or one-sided elastic) refinement.

    Warps both images to the current mid-space, computes the correlation force,
    smooths it, advances the half-maps by equal-and-opposite steps whose largest
    displacement is step_mm (never more than 0.4 * min spacing), then recomputes
    both inverses. The input state is not modified. Swapping i and j exactly
    swaps the roles of (phi1, phi2): the force field is antisymmetrized so both
    orders perform the same arithmetic.
    """
    meta = state.phi1.meta
    if not (i.meta.matches(meta) and j.meta.matches(meta)):
        raise ConfigError("syn_iteration needs images and state on one grid")
    if step_mm is None:
        step_mm = stage.step_size
    one_sided = stage.kind == "elastic"
    i1 = warp_volume(i, state.phi1, meta, "trilinear")
    j2 = warp_volume(j, state.phi2, meta, "trilinear")
    f = cc_force(i1, j2, sim_cfg)
    if not one_sided:
        f = 0.5 * (f - cc_force(j2, i1, sim_cfg))
    nu = smooth_field(DisplacementField(meta, f.astype(np.float32)), stage.update_sigma_mm)
    nu_max = float(np.max(np.abs(nu.vectors)))
    if nu_max == 0.0:
        return SynState(state.phi1, state.phi2, state.phi1_inv, state.phi2_inv)
    dt = min(step_mm, 0.4 * meta.min_spacing) / nu_max
    phi1 = euler_step(state.phi1, nu, dt)
    if one_sided:
        phi2 = state.phi2
        if stage.total_sigma_mm > 0:
            phi1 = smooth_field(phi1, stage.total_sigma_mm)
    else:
        nu_neg = DisplacementField(meta, -nu.vectors)
        phi2 = euler_step(state.phi2, nu_neg, dt)
    phi1_inv = invert_field(phi1, inv_cfg).inverse
    phi2_inv = invert_field(phi2, inv_cfg).inverse
    return SynState(phi1, phi2, phi1_inv, phi2_inv)


def finalize_syn(state: SynState, inv_cfg: InversionConfig = InversionConfig()) -> DiffeomorphicMap:
    """Compose the half-maps into the full forward/inverse pair and certify it.

    forward = phi2_inv(phi1(x)) maps fixed-grid points onto the moving image;
    inverse = phi1_inv(phi2(x)) undoes it. The certificate measures the max-norm
    of inverse(forward(x)) - x over the grid.
    """
    forward = compose_fields(state.phi2_inv, state.phi1)
    inverse = compose_fields(state.phi1_inv, state.phi2)
    return certify_pair(forward, inverse, inv_cfg)


def _carry_state(state: SynState, meta: GridMeta, inv_cfg: InversionConfig) -> SynState:
    phi1 = resample_field(state.phi1, meta)
    phi2 = resample_field(state.phi2, meta)
    return SynState(
        phi1,
        phi2,
        invert_field(phi1, inv_cfg).inverse,
        invert_field(phi2, inv_cfg).inverse,
    )


def _run_diffeo(
    moving_pre: Volume,
    fixed: Volume,
    stage: StageConfig,
    sim_cfg: SimilarityConfig,
    inv_cfg: InversionConfig,
    stage_index: int,
) -> tuple[DiffeomorphicMap, list[TraceRecord]]:
    pyr_i = build_pyramid(moving_pre, stage.shrink_factors)
    pyr_j = build_pyramid(fixed, stage.shrink_factors)
    trace: list[TraceRecord] = []
    state: SynState | None = None
    for level in range(stage.levels):
        i_l = pyr_i[level]
        j_l = pyr_j[level]
        if stage.smoothing_sigmas_mm[level] > 0:
            i_l = gaussian_smooth(i_l, stage.smoothing_sigmas_mm[level])
            j_l = gaussian_smooth(j_l, stage.smoothing_sigmas_mm[level])
        meta_l = j_l.meta
        if state is None:
            state = SynState.identity(meta_l)
        elif not state.phi1.meta.matches(meta_l):
            state = _carry_state(state, meta_l, inv_cfg)
        current = _state_score(i_l, j_l, state, sim_cfg)
        base_step = stage.step_size
        for it in range(stage.iterations_per_level[level]):
            accepted = False
            used = base_step
            for halving in range(_MAX_HALVINGS + 1):
                used = base_step / (2.0**halving)
                try:
                    cand = syn_iteration(i_l, j_l, state, stage, sim_cfg, inv_cfg, used)
                except NonConvergentError:
                    continue
                sc = _state_score(i_l, j_l, cand, sim_cfg)
                if sc >= current - _SCORE_SLACK:
                    accepted = True
                    break
            if not accepted:
                break
            state = cand
            current = sc
            trace.append(TraceRecord(stage_index, level, it, current, used))
        logger.info(
            "stage %d (%s) level %d: score %.6f after %d accepted iterations",
            stage_index,
            stage.kind,
            level,
            current,
            len([r for r in trace if r.stage == stage_index and r.level == level]),
        )
    return finalize_syn(state, inv_cfg), trace


# ---------------------------------------------------------------------------
# pipeline


def register_pipeline(
    moving: Volume,
    fixed: Volume,
    stages: list[StageConfig],
    sim_cfg: SimilarityConfig = SimilarityConfig(),
    inv_cfg: InversionConfig = InversionConfig(),
) -> RegistrationResult:
    """Run a ladder of stages; parametric rungs feed the diffeomorphic one.

    Parametric stages refine one shared transform in order; an (optional, single,
    final) diffeomorphic stage then refines the residual between the pre-warped
    moving volume and the fixed volume. The full pull-back map is
    pre_affine(x + forward(x)).
    """
    if not stages:
        raise ConfigError("at least one stage is required")
    kinds = [s.kind for s in stages]
    diffeo_positions = [k for k, kind in enumerate(kinds) if kind in DIFFEO_KINDS]
    if len(diffeo_positions) > 1:
        raise ConfigError("at most one diffeomorphic stage is supported")
    if diffeo_positions and diffeo_positions[0] != len(stages) - 1:
        raise ConfigError("parametric stages must precede the diffeomorphic stage")
    _check_not_constant(fixed, "fixed")
    _check_not_constant(moving, "moving")

    center = tuple(fixed.meta.center_world)
    aff = AffineParams.identity(center)
    trace: list[TraceRecord] = []
    diffeo: DiffeomorphicMap | None = None
    for idx, st in enumerate(stages):
        if st.kind in PARAMETRIC_KINDS:
            aff, tr = register_parametric(moving, fixed, st, sim_cfg, init=aff, stage_index=idx)
        else:
            moving_pre = warp_volume(moving, aff, fixed.meta, "trilinear")
            diffeo, tr = _run_diffeo(moving_pre, fixed, st, sim_cfg, inv_cfg, idx)
        trace.extend(tr)

    if diffeo is None:
        warped = warp_volume(moving, aff, fixed.meta, "trilinear")
    else:
        moving_pre = warp_volume(moving, aff, fixed.meta, "trilinear")
        warped = warp_volume(moving_pre, diffeo.forward, fixed.meta, "trilinear")
    final_score = cc_score(warped, fixed, sim_cfg)
    return RegistrationResult(pre_affine=aff, diffeo=diffeo, trace=trace, final_score=final_score)


def apply_transform(
    v: Volume | LabelMap,
    pre_affine: AffineParams | None,
    fld: DisplacementField | None,
    target: GridMeta,
    mode: str = "trilinear",
):
    """Warp through the composite pipeline map x -> pre_affine(x + u(x)).

    Either part may be None; with both None this is a plain resample onto the
    target grid.
    """
    from .transforms import _grid_world, _sample_vectors
    from .volume import _clamped_linear_pull, _nearest_index

    if isinstance(v, LabelMap) and mode != "nearest":
        raise ConfigError("label maps must be warped with nearest mode")
    x = _grid_world(target)
    mapped = x
    if fld is not None:
        if fld.meta.matches(target):
            mapped = x + fld.vectors.astype(np.float64)
        else:
            mapped = x + _sample_vectors(fld, x)
    if pre_affine is not None:
        mapped = apply_point(pre_affine, mapped)
    vox = v.meta.voxel_from_world(mapped)
    if isinstance(v, LabelMap):
        idx, inside = _nearest_index(vox, v.meta.dims)
        out = v.voxels[idx[..., 0], idx[..., 1], idx[..., 2]]
        return LabelMap(target, np.where(inside, out, 0).astype(np.uint16))
    if mode == "nearest":
        idx, _ = _nearest_index(vox, v.meta.dims)
        return Volume(target, v.voxels[idx[..., 0], idx[..., 1], idx[..., 2]].astype(np.float32))
    return Volume(target, _clamped_linear_pull(v.voxels, vox).astype(np.float32))
