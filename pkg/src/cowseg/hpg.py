"""Hard prototype generation.

For each of the four support regions (hf, nf, hb, nb): keep only the region's
feature points, fill the holes with points resampled from the region, and turn
the hole-free map into prototypes with the region's MLP. Regions that come out
empty fall back to copies of the path's global prototype so bank sizes stay
fixed.
"""

from __future__ import annotations

import numpy as np
import torch

from .core import EmptyRegionError, PartitionMasks, PrototypeBank, ShapeError, ValidationError
from .nets import CoWHeads, mlp_prototypes

FG_REGIONS = ("hf", "nf")
BG_REGIONS = ("hb", "nb")


def extract_region_features(f_s: torch.Tensor, region: torch.Tensor) -> torch.Tensor:
    region = torch.as_tensor(region).to(f_s.dtype)
    if tuple(region.shape) != tuple(f_s.shape[-2:]):
        raise ShapeError(f"region {tuple(region.shape)} does not match features {tuple(f_s.shape)}")
    return f_s * region


def sample_points(points: torch.Tensor, n: int, rng: np.random.Generator) -> torch.Tensor:
    """Draw ``n`` rows of ``points`` (N x C) uniformly with replacement."""
    if n < 0:
        raise ValidationError(f"sample count must be >= 0, got {n}")
    if points.shape[0] == 0:
        raise EmptyRegionError("cannot sample from an empty region")
    idx = rng.integers(0, points.shape[0], size=n)
    return points[torch.from_numpy(idx)]


def region_points(region_map: torch.Tensor, region: torch.Tensor) -> torch.Tensor:
    """Region feature vectors in row-major order, as an N x C matrix."""
    flat = region_map.reshape(region_map.shape[0], -1)
    return flat[:, torch.as_tensor(region).reshape(-1) > 0.5].t()


def reconstruct_feature_map(region_map: torch.Tensor, region: torch.Tensor, fill: torch.Tensor) -> torch.Tensor:
    """Keep region positions, write ``fill`` rows into the holes in row-major order."""
    c = region_map.shape[0]
    holes = torch.as_tensor(region).reshape(-1) <= 0.5
    n_holes = int(holes.sum())
    if fill.shape[0] != n_holes:
        raise ValidationError(f"{fill.shape[0]} fill vectors for {n_holes} holes")
    if n_holes and fill.shape[1] != c:
        raise ShapeError(f"fill vectors have dim {fill.shape[1]}, features have {c}")
    flat = region_map.reshape(c, -1)
    if n_holes == 0:
        return region_map
    out = flat.clone()
    out[:, holes] = fill.t().to(out.dtype)
    return out.reshape(region_map.shape)


def generate_region_prototypes(f_s: torch.Tensor, region: torch.Tensor, n_out: int, heads: CoWHeads,
                               rng: np.random.Generator, region_name: str,
                               global_proto: torch.Tensor) -> tuple[torch.Tensor, bool]:
    """``n_out`` x C' prototypes for one region; the flag is True when the fallback fired."""
    if n_out == 0:
        return f_s.new_zeros((0, f_s.shape[0])), False
    region_map = extract_region_features(f_s, region)
    pts = region_points(region_map, region)
    if pts.shape[0] == 0:
        return global_proto[None].expand(n_out, -1), True
    n_holes = int(region.numel() - pts.shape[0])
    fill = sample_points(pts, n_holes, rng)
    recon = reconstruct_feature_map(region_map, region, fill)
    return mlp_prototypes(recon, n_out, heads, region_name), False


def assemble_banks(P_hf, P_nf, p_fg, P_hb, P_nb, p_bg, fallback=frozenset()) -> tuple[PrototypeBank, PrototypeBank]:
    """Stack hard, normal and global rows per path.

    ``fallback`` names the regions whose rows are global-prototype copies; those
    rows are tagged ``global``.
    """
    c = p_fg.shape[-1]
    parts = {"hf": P_hf, "nf": P_nf, "hb": P_hb, "nb": P_nb}
    for name, block in (*parts.items(), ("p_fg", p_fg[None]), ("p_bg", p_bg[None])):
        if block.ndim != 2 or block.shape[1] != c:
            raise ShapeError(f"{name} has shape {tuple(block.shape)}, expected (*, {c})")

    def tags(region, kind):
        return ("global" if region in fallback else kind,) * parts[region].shape[0]

    fg = PrototypeBank(torch.cat([P_hf, P_nf, p_fg[None]]), tags("hf", "hard") + tags("nf", "normal") + ("global",))
    bg = PrototypeBank(torch.cat([P_hb, P_nb, p_bg[None]]), tags("hb", "hard") + tags("nb", "normal") + ("global",))
    return fg, bg


def build_banks(f_s: torch.Tensor, parts: PartitionMasks, p_fg: torch.Tensor, p_bg: torch.Tensor,
                heads: CoWHeads, rng: np.random.Generator) -> tuple[PrototypeBank, PrototypeBank]:
    """Run all four regions (rng consumed in hf, nf, hb, nb order) and assemble both banks."""
    masks = parts.as_dict()
    out, fallback = {}, set()
    for name in (*FG_REGIONS, *BG_REGIONS):
        glob = p_fg if name in FG_REGIONS else p_bg
        out[name], fell_back = generate_region_prototypes(
            f_s, masks[name].to(f_s.dtype), heads.counts.of(name), heads, rng, name, glob)
        if fell_back:
            fallback.add(name)
    return assemble_banks(out["hf"], out["nf"], p_fg, out["hb"], out["nb"], p_bg, frozenset(fallback))
