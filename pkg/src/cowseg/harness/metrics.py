from __future__ import annotations

import numpy as np
import torch

from ..core import ShapeError
from ..losses import boundary_map


def _pair(pred, gt):
    pred = np.asarray(getattr(pred, "bits", pred)).astype(bool)
    gt = np.asarray(getattr(gt, "bits", gt)).astype(bool)
    if pred.shape != gt.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return pred, gt


def dice(pred, gt) -> float:
    """2|P & G| / (|P| + |G|), 1.0 when both masks are empty."""
    pred, gt = _pair(pred, gt)
    denom = pred.sum() + gt.sum()
    if denom == 0:
        return 1.0
    return float(2 * np.logical_and(pred, gt).sum() / denom)


def boundary_f1(pred, gt, k: int = 3) -> float:
    """F1 between the hard inner-boundary bands of two masks (1.0 if both are empty)."""
    pred, gt = _pair(pred, gt)
    bp = boundary_map(torch.from_numpy(pred.astype(np.float64)), k).numpy() > 0.5
    bg = boundary_map(torch.from_numpy(gt.astype(np.float64)), k).numpy() > 0.5
    denom = bp.sum() + bg.sum()
    if denom == 0:
        return 1.0
    return float(2 * np.logical_and(bp, bg).sum() / denom)
