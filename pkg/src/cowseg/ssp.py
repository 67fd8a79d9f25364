"""Support self-prediction: segment the support from its own global prototype and
split the support grid into hard/normal foreground/background regions."""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .core import BinaryMask, EmptyRegionError, PartitionMasks, ShapeError
from .nets import CoWHeads, support_decode


def _as_tensor(m, like: torch.Tensor | None = None) -> torch.Tensor:
    if isinstance(m, BinaryMask):
        m = m.bits
    t = torch.as_tensor(m)
    return t.to(like.dtype) if like is not None else t.to(torch.float64)


def masked_average_pool(f: torch.Tensor, m) -> torch.Tensor:
    """Mean feature vector over the set pixels of ``m``.

    When ``m`` is finer than ``f`` the features are bilinearly resized to the
    mask grid first.
    """
    m = _as_tensor(m, f)
    if m.ndim != 2:
        raise ShapeError(f"mask must be 2-D, got {tuple(m.shape)}")
    if tuple(m.shape) != tuple(f.shape[-2:]):
        f = F.interpolate(f[None], size=tuple(m.shape), mode="bilinear", align_corners=False)[0]
    area = m.sum()
    if area == 0:
        raise EmptyRegionError("masked average pooling over an empty mask")
    return (f * m).sum(dim=(-2, -1)) / area


def build_sp_feature(f_s: torch.Tensor, p: torch.Tensor) -> torch.Tensor:
    c, h, w = f_s.shape
    if p.shape != (c,):
        raise ShapeError(f"prototype has shape {tuple(p.shape)}, expected ({c},)")
    f_p = p[:, None, None].expand(c, h, w)
    return torch.cat([f_s, f_p, f_p], dim=0)


def predict_support_mask(s: torch.Tensor, size: tuple[int, int]) -> tuple[torch.Tensor, torch.Tensor]:
    """Upsample the 1 x H' x W' support similarity map and threshold it.

    Returns ``(mask, probs)``: mask is H x W over {0, 1} (exactly 0.5 counts as
    background), probs is 2 x H x W with the background channel first.
    """
    if s.ndim != 3 or s.shape[0] != 1:
        raise ShapeError(f"support similarity must be 1 x H' x W', got {tuple(s.shape)}")
    fg = F.interpolate(s[None], size=size, mode="bilinear", align_corners=False)[0, 0]
    probs = torch.stack([1 - fg, fg])
    return (fg > 0.5).to(s.dtype).detach(), probs


def partition_masks(m_s, m_hat) -> PartitionMasks:
    gt = _as_tensor(m_s)
    pred = _as_tensor(m_hat)
    if gt.shape != pred.shape:
        raise ShapeError(f"mask shapes differ: {tuple(gt.shape)} vs {tuple(pred.shape)}")
    gt, pred = gt > 0.5, pred > 0.5
    as_f = lambda b: b.to(torch.float64)  # noqa: E731
    return PartitionMasks(
        hf=as_f(gt & ~pred),
        hb=as_f(~gt & pred),
        nf=as_f(gt & pred),
        nb=as_f(~gt & ~pred),
    )


def self_predict(f_s: torch.Tensor, p_s: torch.Tensor, heads: CoWHeads, size: tuple[int, int]):
    """Support decoder pass: returns (hard mask at H x W, 2 x H x W probabilities)."""
    s = support_decode(build_sp_feature(f_s, p_s), heads)
    return predict_support_mask(s, size)
