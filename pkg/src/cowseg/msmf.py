"""Similarity-map fusion: per-path cosine maps, fusion decoders, two-way softmax."""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .core import NumericError, PrototypeBank, ShapeError
from .nets import CoWHeads, fuse_decode


def cosine_similarity_maps(bank: PrototypeBank | torch.Tensor, f_q: torch.Tensor) -> torch.Tensor:
    """N x H' x W' grid of cosines between each prototype row and each query feature."""
    protos = bank.vectors if isinstance(bank, PrototypeBank) else bank
    c = f_q.shape[0]
    if protos.ndim != 2 or protos.shape[1] != c:
        raise ShapeError(f"prototypes {tuple(protos.shape)} vs query features with {c} channels")
    feats = f_q.reshape(c, -1)
    f_norm = feats.norm(dim=0)
    p_norm = protos.norm(dim=1)
    if (f_norm == 0).any():
        raise NumericError("zero query feature vector, cosine undefined", "cosine_similarity_maps")
    if (p_norm == 0).any():
        raise NumericError("zero prototype, cosine undefined", "cosine_similarity_maps")
    sim = (protos @ feats) / (p_norm[:, None] * f_norm[None, :])
    return sim.clamp(-1.0, 1.0).reshape(protos.shape[0], *f_q.shape[1:])


def fuse_paths(s_fg: torch.Tensor, s_bg: torch.Tensor, heads: CoWHeads) -> tuple[torch.Tensor, torch.Tensor]:
    return fuse_decode(s_fg, "fg", heads), fuse_decode(s_bg, "bg", heads)


def predict_query(logit_fg: torch.Tensor, logit_bg: torch.Tensor,
                  size: tuple[int, int] | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Softmax over (bg, fg) after bilinear upsampling to ``size``.

    Returns ``(probs, mask)`` with probs 2 x H x W (background first) and mask
    H x W; equal logits resolve to background.
    """
    if logit_fg.shape != logit_bg.shape:
        raise ShapeError(f"logit shapes differ: {tuple(logit_fg.shape)} vs {tuple(logit_bg.shape)}")
    logits = torch.cat([logit_bg, logit_fg], dim=0)
    if size is not None and tuple(logits.shape[-2:]) != tuple(size):
        logits = F.interpolate(logits[None], size=size, mode="bilinear", align_corners=False)[0]
    probs = torch.softmax(logits, dim=0)
    mask = (probs[1] > probs[0]).to(torch.uint8)
    return probs, mask
