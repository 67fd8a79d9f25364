"""Training objectives.

The alignment term needs a full pipeline pass and lives in
``cowseg.harness.pipeline.align_loss``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import torch
import torch.nn.functional as F

from .core import ConfigError, NumericError, PrototypeBank, ShapeError, ValidationError

EPS = 1e-7
TERM_NAMES = ("ssp", "seg", "align", "intra", "inter", "bound")


@dataclass(frozen=True)
class LossWeights:
    lambda0: float = 0.5
    lambda1: float = 0.3

    def __post_init__(self):
        if self.lambda0 < 0 or self.lambda1 < 0:
            raise ConfigError("loss weights must be >= 0")


def _tensor(x, like: torch.Tensor | None = None) -> torch.Tensor:
    if hasattr(x, "bits"):
        x = x.bits
    t = torch.as_tensor(x)
    return t.to(like.dtype if like is not None else torch.float64)


def bce_loss(prob_fg: torch.Tensor, gt) -> torch.Tensor:
    gt = _tensor(gt, prob_fg)
    if gt.shape != prob_fg.shape:
        raise ShapeError(f"prediction {tuple(prob_fg.shape)} vs ground truth {tuple(gt.shape)}")
    p = prob_fg.clamp(EPS, 1 - EPS)
    return -(gt * torch.log(p) + (1 - gt) * torch.log(1 - p)).mean()


def _vectors(bank) -> torch.Tensor:
    v = bank.vectors if isinstance(bank, PrototypeBank) else torch.as_tensor(bank)
    if v.ndim != 2 or v.shape[0] == 0:
        raise ValidationError(f"prototype bank must be a non-empty N x C matrix, got {tuple(v.shape)}")
    return v


def cosine_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Pairwise cosine similarity, rows of ``a`` against rows of ``b``."""
    return F.normalize(a, dim=1, eps=0.0) @ F.normalize(b, dim=1, eps=0.0).t()


def intra_loss(banks_s, banks_q) -> torch.Tensor:
    """2 minus, per path, the mean over query prototypes of their best support cosine.

    ``banks_s`` and ``banks_q`` are (fg, bg) pairs.
    """
    total = 0.0
    for s, q in zip(banks_s, banks_q):
        cos = cosine_matrix(_vectors(s), _vectors(q))  # N_s x N_q
        total = total + cos.max(dim=0).values.mean()
    return 2 - total


def inter_loss(banks_s, banks_q=None) -> torch.Tensor:
    """Mean fg-bg cosine per image, summed over support and query.

    With ``banks_q`` None only the support term is used.
    """
    total = 0.0
    for banks in (banks_s, banks_q):
        if banks is None:
            continue
        fg, bg = banks
        total = total + cosine_matrix(_vectors(fg), _vectors(bg)).mean()
    return total


def boundary_map(m, k: int = 3) -> torch.Tensor:
    """Inner boundary band: pixels of ``m`` with a background pixel in their k x k window.

    Off-image pixels count as background.
    """
    if k < 1 or k % 2 == 0:
        raise ValidationError(f"kernel size must be odd and positive, got {k}")
    m = _tensor(m) if not torch.is_tensor(m) or not m.is_floating_point() else m
    if m.ndim != 2:
        raise ShapeError(f"boundary map needs a 2-D grid, got {tuple(m.shape)}")
    r = k // 2
    inv = F.pad((1 - m)[None, None], (r, r, r, r), value=1.0)
    return F.max_pool2d(inv, k, stride=1)[0, 0] * m


def bf1(b_pred: torch.Tensor, b_gt: torch.Tensor) -> torch.Tensor:
    return 2 * (b_pred * b_gt).sum() / (b_pred.sum() + b_gt.sum() + EPS)


def boundary_loss(prob_fg: torch.Tensor, gt, k: int = 3) -> torch.Tensor:
    gt = _tensor(gt, prob_fg)
    if gt.shape != prob_fg.shape:
        raise ShapeError(f"prediction {tuple(prob_fg.shape)} vs ground truth {tuple(gt.shape)}")
    return 1 - bf1(boundary_map(prob_fg, k), boundary_map(gt, k))


def total_loss(terms: Mapping[str, torch.Tensor | float], w: LossWeights):
    for name in TERM_NAMES:
        v = terms[name]
        v = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        if not math.isfinite(v):
            raise NumericError(f"loss term {name!r} is {v}", "total_loss")
    return (terms["seg"] + terms["align"] + w.lambda0 * terms["bound"]
            + w.lambda1 * (terms["intra"] + terms["inter"] + terms["ssp"]))
