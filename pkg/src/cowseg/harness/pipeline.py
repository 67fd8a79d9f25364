"""Full forward pass for one episode, including every loss term."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..core import BinaryMask, Episode, EpisodeResult, PrototypeBank, downsample_nearest
from ..hpg import build_banks
from ..losses import LossWeights, bce_loss, boundary_loss, inter_loss, intra_loss, total_loss
from ..msmf import cosine_similarity_maps, fuse_paths, predict_query
from ..nets import CoWHeads, CoWNet, encode
from ..ssp import masked_average_pool, partition_masks, self_predict
from .metrics import boundary_f1, dice


@dataclass
class HeadsOutput:
    probs: torch.Tensor  # 2 x H x W, background first
    mask: torch.Tensor  # H x W uint8
    terms: dict[str, torch.Tensor]
    total: torch.Tensor
    banks_s: tuple[PrototypeBank, PrototypeBank]
    banks_q: tuple[PrototypeBank, PrototypeBank] | None
    align_skipped: bool


def support_branch(f_s: torch.Tensor, m_s: torch.Tensor, heads: CoWHeads, rng: np.random.Generator):
    """MAP, self-prediction, partition and prototype banks for one labelled image.

    ``m_s`` is the H x W mask; returns ((fg_bank, bg_bank), self-prediction probs).
    """
    size = tuple(m_s.shape)
    p_fg = masked_average_pool(f_s, m_s)
    p_bg = masked_average_pool(f_s, 1 - m_s)
    m_hat, ssp_probs = self_predict(f_s, p_fg, heads, size)
    hw = tuple(f_s.shape[-2:])
    parts = partition_masks(downsample_nearest(m_s, hw), downsample_nearest(m_hat, hw))
    return build_banks(f_s, parts, p_fg, p_bg, heads, rng), ssp_probs


def segment(banks, f_q: torch.Tensor, heads: CoWHeads, size) -> tuple[torch.Tensor, torch.Tensor]:
    fg_bank, bg_bank = banks
    logit_fg, logit_bg = fuse_paths(cosine_similarity_maps(fg_bank, f_q), cosine_similarity_maps(bg_bank, f_q), heads)
    return predict_query(logit_fg, logit_bg, size)


def align_loss(f_s, m_s, f_q, q_pred_mask, heads, rng):
    """Swap roles: the query and its predicted mask act as support to re-segment the support.

    Returns ``(loss, query_banks, skipped)``. A predicted mask with a single
    class cannot provide both prototypes, so the term is skipped (loss 0).
    """
    q_pred = q_pred_mask.detach().to(f_q.dtype)
    n_fg = int(q_pred.sum())
    if n_fg == 0 or n_fg == q_pred.numel():
        return f_s.new_zeros(()), None, True
    banks_q, _ = support_branch(f_q, q_pred, heads, rng)
    probs_s, _ = segment(banks_q, f_s, heads, tuple(m_s.shape))
    return bce_loss(probs_s[1], m_s), banks_q, False


def _mask_tensor(m, dtype) -> torch.Tensor:
    if isinstance(m, torch.Tensor):
        return m.to(dtype)
    return torch.from_numpy(np.array(getattr(m, "bits", m))).to(dtype)


def run_heads(heads: CoWHeads, f_s: torch.Tensor, m_s, f_q: torch.Tensor, m_q,
              rng: np.random.Generator, weights: LossWeights = LossWeights()) -> HeadsOutput:
    """Everything after the encoder, on explicit feature maps and H x W masks."""
    m_s, m_q = _mask_tensor(m_s, f_s.dtype), _mask_tensor(m_q, f_s.dtype)
    size = tuple(m_s.shape)
    banks_s, ssp_probs = support_branch(f_s, m_s, heads, rng)
    probs, mask = segment(banks_s, f_q, heads, size)
    align, banks_q, skipped = align_loss(f_s, m_s, f_q, mask, heads, rng)
    terms = {
        "ssp": bce_loss(ssp_probs[1], m_s),
        "seg": bce_loss(probs[1], m_q),
        "align": align,
        "intra": intra_loss(banks_s, banks_q) if banks_q is not None else f_s.new_zeros(()),
        "inter": inter_loss(banks_s, banks_q),
        "bound": boundary_loss(probs[1], m_q),
    }
    return HeadsOutput(probs, mask, terms, total_loss(terms, weights), banks_s, banks_q, skipped)


def run_episode(e: Episode, net: CoWNet, rng: np.random.Generator,
                weights: LossWeights = LossWeights()) -> tuple[EpisodeResult, torch.Tensor]:
    """Forward one episode; returns the result record and the differentiable total loss."""
    dtype = next(net.parameters()).dtype
    imgs = torch.from_numpy(np.stack([e.support_image.pixels, e.query_image.pixels]))[:, None].to(dtype)
    feats = encode(imgs, net)
    out = run_heads(net.heads, feats[0], e.support_mask, feats[1], e.query_mask, rng, weights)
    mask = out.mask.numpy()
    probs = out.probs.detach().numpy()
    result = EpisodeResult(
        query_fg_prob=probs[1],
        query_bg_prob=probs[0],
        predicted_mask=BinaryMask(mask),
        loss_terms={**{k: float(v.detach()) for k, v in out.terms.items()}, "total": float(out.total.detach())},
        dice=dice(mask, e.query_mask.bits),
        boundary_f1=boundary_f1(mask, e.query_mask.bits),
        align_skipped=out.align_skipped,
        fg_bank=out.banks_s[0],
        bg_bank=out.banks_s[1],
    )
    return result, out.total


def forward_episode(e: Episode, net: CoWNet, rng: np.random.Generator,
                    weights: LossWeights = LossWeights()) -> EpisodeResult:
    with torch.no_grad():
        return run_episode(e, net, rng, weights)[0]
