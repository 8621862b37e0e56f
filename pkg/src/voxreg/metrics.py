"""Overlap and surface-distance metrics for label volumes.

Per-class Dice and IoU are voxel-count ratios; HD95 is the 95th-percentile
symmetric surface distance in millimeters, computed between face-connected
boundary voxels (world coordinates of voxel centers). A class present in the
reference but entirely missing from the prediction receives a fixed distance
penalty and contributes 0 overlap. Classes absent from the reference are not
evaluated at all.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import ConfigError, GridMismatchError, GtEmptyError
from .volume import LabelMap


@dataclass(frozen=True)
class Hd95Config:
    penalty_mm: float = 100.0
    percentile: float = 95.0

    def __post_init__(self):
        if self.penalty_mm < 0:
            raise ConfigError("penalty_mm must be non-negative")
        if not 0 < self.percentile <= 100:
            raise ConfigError("percentile must lie in (0, 100]")


@dataclass
class ClassMetrics:
    class_id: int
    dsc: float
    iou: float
    hd95_mm: float


@dataclass
class MetricsReport:
    """Per-class rows plus aggregate means; agnostic entries are None when undefined."""

    per_class: list[ClassMetrics]
    mdsc: float | None
    adsc: float | None
    miou: float | None
    aiou: float | None
    evaluated_classes: int


def _check_grids(p: LabelMap, g: LabelMap):
    if not p.meta.matches(g.meta):
        raise GridMismatchError("prediction and reference must share a grid")


def _overlap_counts(pm: np.ndarray, gm: np.ndarray) -> tuple[int, int, int]:
    inter = int(np.count_nonzero(pm & gm))
    return inter, int(np.count_nonzero(pm)), int(np.count_nonzero(gm))


def dsc_per_class(p: LabelMap, g: LabelMap, class_id: int) -> float:
    """Dice coefficient 2|P&G| / (|P|+|G|); NaN when the class is absent from both."""
    _check_grids(p, g)
    inter, np_, ng = _overlap_counts(p.voxels == class_id, g.voxels == class_id)
    if np_ + ng == 0:
        return float("nan")
    return 2.0 * inter / (np_ + ng)


def iou_per_class(p: LabelMap, g: LabelMap, class_id: int) -> float:
    """Jaccard index |P&G| / |P|G union|; NaN when the class is absent from both."""
    _check_grids(p, g)
    inter, np_, ng = _overlap_counts(p.voxels == class_id, g.voxels == class_id)
    union = np_ + ng - inter
    if union == 0:
        return float("nan")
    return inter / union


def agnostic_dsc(p: LabelMap, g: LabelMap) -> float:
    """Dice of the binarized foregrounds (any label > 0); NaN when both are empty."""
    _check_grids(p, g)
    inter, np_, ng = _overlap_counts(p.voxels > 0, g.voxels > 0)
    if np_ + ng == 0:
        return float("nan")
    return 2.0 * inter / (np_ + ng)


def agnostic_iou(p: LabelMap, g: LabelMap) -> float:
    _check_grids(p, g)
    inter, np_, ng = _overlap_counts(p.voxels > 0, g.voxels > 0)
    union = np_ + ng - inter
    if union == 0:
        return float("nan")
    return inter / union


def _surface_points(mask: np.ndarray, meta) -> np.ndarray:
    """World coordinates of face-connected boundary voxels (volume faces count as background)."""
    struct = ndimage.generate_binary_structure(3, 1)
    interior = ndimage.binary_erosion(mask, structure=struct, border_value=0)
    surf = mask & ~interior
    idx = np.argwhere(surf)
    return meta.world_from_voxel(idx)


def _directed_percentile(src_pts: np.ndarray, dst_pts: np.ndarray, percentile: float) -> float:
    """Nearest-rank percentile of nearest-neighbor distances from src to dst."""
    d, _ = cKDTree(dst_pts).query(src_pts, k=1)
    d = np.sort(d)
    k = max(1, math.ceil(percentile / 100.0 * d.size))
    return float(d[k - 1])


def hd95_directed(
    p: LabelMap, g: LabelMap, class_id: int, cfg: Hd95Config = Hd95Config()
) -> float:
    """Directed percentile surface distance from the prediction surface to the reference surface."""
    _check_grids(p, g)
    gm = g.voxels == class_id
    if not gm.any():
        raise GtEmptyError(f"class {class_id} is absent from the reference mask")
    pm = p.voxels == class_id
    if not pm.any():
        return cfg.penalty_mm
    src = _surface_points(pm, p.meta)
    dst = _surface_points(gm, g.meta)
    return _directed_percentile(src, dst, cfg.percentile)


def hd95(p: LabelMap, g: LabelMap, class_id: int, cfg: Hd95Config = Hd95Config()) -> float:
    """Symmetric percentile surface distance: max of the two directed values.

    Raises GtEmptyError when the reference lacks the class; returns the configured
    penalty when the prediction lacks it.
    """
    _check_grids(p, g)
    gm = g.voxels == class_id
    if not gm.any():
        raise GtEmptyError(f"class {class_id} is absent from the reference mask")
    pm = p.voxels == class_id
    if not pm.any():
        return cfg.penalty_mm
    ps = _surface_points(pm, p.meta)
    gs = _surface_points(gm, g.meta)
    fwd = _directed_percentile(ps, gs, cfg.percentile)
    bwd = _directed_percentile(gs, ps, cfg.percentile)
    return max(fwd, bwd)


def evaluate(p: LabelMap, g: LabelMap, cfg: Hd95Config = Hd95Config()) -> MetricsReport:
    """Full per-class and aggregate report over the classes present in the reference."""
    _check_grids(p, g)
    classes = sorted(int(c) for c in np.unique(g.voxels) if c != 0)
    rows = []
    for cid in classes:
        pm = p.voxels == cid
        gm = g.voxels == cid
        inter, np_, ng = _overlap_counts(pm, gm)
        dsc = 2.0 * inter / (np_ + ng)
        iou = inter / (np_ + ng - inter)
        if np_ == 0:
            dist = cfg.penalty_mm
        else:
            ps = _surface_points(pm, p.meta)
            gs = _surface_points(gm, g.meta)
            dist = max(
                _directed_percentile(ps, gs, cfg.percentile),
                _directed_percentile(gs, ps, cfg.percentile),
            )
        rows.append(ClassMetrics(cid, dsc, iou, dist))
    mdsc = float(np.mean([r.dsc for r in rows])) if rows else None
    miou = float(np.mean([r.iou for r in rows])) if rows else None
    adsc = agnostic_dsc(p, g)
    aiou = agnostic_iou(p, g)
    adsc = None if math.isnan(adsc) else adsc
    aiou = None if math.isnan(aiou) else aiou
    return MetricsReport(
        per_class=rows,
        mdsc=mdsc,
        adsc=adsc,
        miou=miou,
        aiou=aiou,
        evaluated_classes=len(rows),
    )
