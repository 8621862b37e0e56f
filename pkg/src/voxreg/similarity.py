"""Local windowed cross-correlation between two volumes on one grid.

Each voxel carries a cubic window of side ``window_n``; windows are truncated at
the faces. With Ibar, Jbar the locally mean-subtracted images, the per-voxel
fields are the windowed sums A = sum(Ibar*Jbar), B = sum(Ibar^2), C =
sum(Jbar^2), and the correlation cc = A^2 / (B*C), which Cauchy-Schwarz keeps in
[0, 1] up to rounding. Windows whose variance product does not exceed
``variance_guard`` are treated as uninformative and score 0.

The force returned by :func:`cc_force` is the analytic gradient of
:func:`cc_score` with respect to a displacement of the first image, derived by
chaining d(score)/d(I1) through the spatial gradient of I1. Because the score
averages cc over the unguarded voxels, the gradient carries the window-overlap
and mean-subtraction terms and the 1/N normalization; its single-window leading
term is the familiar (2A/(BC)) * (Jbar - (A/B) Ibar) * grad(I1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigError, GridMismatchError
from .volume import GridMeta, LabelMap, Volume, spatial_gradient


@dataclass(frozen=True)
class SimilarityConfig:
    window_n: int = 5
    variance_guard: float = 1e-5

    def __post_init__(self):
        if self.window_n < 3 or self.window_n % 2 == 0:
            raise ConfigError(f"window_n must be odd and >= 3, got {self.window_n}")
        if self.variance_guard <= 0:
            raise ConfigError("variance_guard must be positive")


@dataclass
class CcFields:
    """Windowed correlation ingredients, all float64 arrays of the grid shape."""

    meta: GridMeta
    A: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)
    C: np.ndarray = field(repr=False)
    cc: np.ndarray = field(repr=False)


def _box_sum(arr: np.ndarray, n: int) -> np.ndarray:
    """Sum over the (truncated) n^3 window centered at each voxel."""
    mean = ndimage.uniform_filter(np.asarray(arr, dtype=np.float64), size=n, mode="constant", cval=0.0)
    return mean * float(n) ** 3


def _window_counts(shape, n: int) -> np.ndarray:
    return _box_sum(np.ones(shape, dtype=np.float64), n)


def local_mean(v: Volume | np.ndarray, n: int) -> np.ndarray:
    """Mean over each voxel's n^3 window, renormalized where the window is truncated."""
    if n < 3 or n % 2 == 0:
        raise ConfigError(f"window size must be odd and >= 3, got {n}")
    arr = v.voxels if isinstance(v, Volume) else np.asarray(v)
    return _box_sum(arr, n) / _window_counts(arr.shape, n)


def _check_same_grid(i: Volume, j: Volume):
    if not i.meta.matches(j.meta):
        raise GridMismatchError("correlation requires both volumes on the same grid")


def _mean_subtracted(i: Volume, j: Volume, n: int):
    ibar = np.asarray(i.voxels, dtype=np.float64)
    jbar = np.asarray(j.voxels, dtype=np.float64)
    counts = _window_counts(ibar.shape, n)
    ibar = ibar - _box_sum(ibar, n) / counts
    jbar = jbar - _box_sum(jbar, n) / counts
    return ibar, jbar, counts


def cc_fields(i: Volume, j: Volume, cfg: SimilarityConfig = SimilarityConfig()) -> CcFields:
    """Windowed correlation fields between two volumes on a shared grid."""
    _check_same_grid(i, j)
    n = cfg.window_n
    ibar, jbar, _ = _mean_subtracted(i, j, n)
    a = _box_sum(ibar * jbar, n)
    b = _box_sum(ibar * ibar, n)
    c = _box_sum(jbar * jbar, n)
    bc = b * c
    cc = np.zeros_like(a)
    np.divide(a * a, bc, out=cc, where=bc > cfg.variance_guard)
    return CcFields(meta=i.meta, A=a, B=b, C=c, cc=cc)


def cc_score(
    i: Volume,
    j: Volume,
    cfg: SimilarityConfig = SimilarityConfig(),
    mask: LabelMap | None = None,
) -> float:
    """Mean cc over unguarded voxels, optionally restricted to mask foreground.

    An empty selection (fully guarded, or mask excludes every unguarded voxel)
    scores 0.
    """
    f = cc_fields(i, j, cfg)
    sel = f.B * f.C > cfg.variance_guard
    if mask is not None:
        if not mask.meta.matches(i.meta):
            raise GridMismatchError("mask must live on the image grid")
        sel &= mask.voxels > 0
    n_sel = int(np.count_nonzero(sel))
    if n_sel == 0:
        return 0.0
    return float(f.cc[sel].sum() / n_sel)


def cc_force(
    i_warped: Volume, j: Volume, cfg: SimilarityConfig = SimilarityConfig()
) -> np.ndarray:
    """Ascent direction of cc_score(i_warped, j) per unit displacement of i_warped.

    Returns a float64 array of shape dims + (3,), units 1/mm. Writing p =
    2A/(BC) and q = 2A^2/(B^2 C) on the guarded support, the exact intensity
    gradient of the score at voxel x is

        (G(x) - boxsum(G / n_w)(x)) / N,  G = Jbar * boxsum(p) - Ibar * boxsum(q)

    with n_w the per-voxel window count and N the unguarded-voxel count of the
    score; the boxsum(G / n_w) term is the feedback of each voxel on its
    neighbors' window means. The force chains this with the spatial gradient of
    i_warped. Voxels whose windows fail the variance guard (on B*C, and on B for
    the q ratio) contribute nothing.
    """
    _check_same_grid(i_warped, j)
    n = cfg.window_n
    guard = cfg.variance_guard
    ibar, jbar, counts = _mean_subtracted(i_warped, j, n)
    a = _box_sum(ibar * jbar, n)
    b = _box_sum(ibar * ibar, n)
    c = _box_sum(jbar * jbar, n)
    bc = b * c
    scored = bc > guard
    n_score = int(np.count_nonzero(scored))
    if n_score == 0:
        return np.zeros(i_warped.meta.dims + (3,), dtype=np.float64)
    valid = scored & (b > guard)
    p = np.zeros_like(a)
    q = np.zeros_like(a)
    np.divide(2.0 * a, bc, out=p, where=valid)
    np.divide(2.0 * a * a, b * b * c, out=q, where=valid)
    g = jbar * _box_sum(p, n) - ibar * _box_sum(q, n)
    g = (g - _box_sum(g / counts, n)) / n_score
    return g[..., None] * spatial_gradient(i_warped)
