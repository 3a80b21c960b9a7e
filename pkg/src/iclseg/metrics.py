"""Evaluation metrics over integer class masks: Dice and 95% Hausdorff.

Policies, fixed here and mirrored by the brute-force oracles:
boundaries are mask pixels with a 4-neighbour outside the mask (the image
border counts as outside); HD95 is the nearest-rank 95th percentile
(ceil(0.95 n)-th order statistic) of the union multiset of both directed
nearest-boundary distance sets; empty-vs-empty scores 0 and
empty-vs-nonempty scores the image diagonal. Distances are exact
(integer squared distances, then one square root), in pixel units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError


def _as_mask(m) -> np.ndarray:
    arr = np.asarray(m)
    if arr.ndim != 2:
        raise ShapeError(f"class mask must be 2-d, got shape {arr.shape}")
    return arr.astype(bool)


def dsc(pred, gt) -> float:
    """Dice overlap 2|P n G| / (|P| + |G|); both empty -> 1, one empty -> 0."""
    pred = _as_mask(pred)
    gt = _as_mask(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"dsc: {pred.shape} vs {gt.shape}")
    p = int(pred.sum())
    g = int(gt.sum())
    if p == 0 and g == 0:
        return 1.0
    if p == 0 or g == 0:
        return 0.0
    inter = int(np.logical_and(pred, gt).sum())
    return 2.0 * inter / (p + g)


def boundary_points(mask: np.ndarray) -> np.ndarray:
    """(n, 2) integer coordinates of the mask's 4-neighbour boundary."""
    mask = _as_mask(mask)
    padded = np.pad(mask, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                & padded[1:-1, :-2] & padded[1:-1, 2:])
    return np.argwhere(mask & ~interior)


def _directed_sq(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Min squared distance from each src point to the dst set (exact ints)."""
    diff = src[:, None, :] - dst[None, :, :]
    return (diff * diff).sum(axis=2).min(axis=1)


def hd95(pred, gt) -> float:
    """Symmetric 95th-percentile boundary distance in pixel units."""
    pred = _as_mask(pred)
    gt = _as_mask(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"hd95: {pred.shape} vs {gt.shape}")
    bp = boundary_points(pred)
    bg = boundary_points(gt)
    if len(bp) == 0 and len(bg) == 0:
        return 0.0
    if len(bp) == 0 or len(bg) == 0:
        h, w = pred.shape
        return math.sqrt((h - 1) ** 2 + (w - 1) ** 2)
    sq = np.concatenate([_directed_sq(bp, bg), _directed_sq(bg, bp)])
    dists = np.sort(np.sqrt(sq.astype(np.float64)))
    k = math.ceil(0.95 * len(dists))
    return float(dists[k - 1])


@dataclass
class ClassScores:
    label: int | str
    dsc: float
    hd95: float


def evaluate_volume(pred_slices, gt_slices, n_classes: int) -> list[ClassScores]:
    """Per-foreground-class metrics averaged over slices, plus a mean row.

    Slices are scored independently as 2-d images and aggregated by
    unweighted means; the background class never enters the averages.
    """
    preds = [np.asarray(p) for p in pred_slices]
    gts = [np.asarray(g) for g in gt_slices]
    if len(preds) != len(gts):
        raise ShapeError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    if not preds:
        raise ShapeError("no slices to evaluate")
    for p, g in zip(preds, gts):
        if p.shape != g.shape:
            raise ShapeError(f"slice shapes differ: {p.shape} vs {g.shape}")
    rows = []
    for c in range(1, n_classes):
        ds = [dsc(p == c, g == c) for p, g in zip(preds, gts)]
        hs = [hd95(p == c, g == c) for p, g in zip(preds, gts)]
        rows.append(ClassScores(c, float(np.mean(ds)), float(np.mean(hs))))
    rows.append(ClassScores("mean",
                            float(np.mean([r.dsc for r in rows])),
                            float(np.mean([r.hd95 for r in rows]))))
    return rows
