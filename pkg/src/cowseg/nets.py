"""Learnable sub-networks: encoder, support decoder, prototype MLPs, fusion decoders."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import ConfigError, Image, NumericError, ShapeError, ValidationError

REGIONS = ("hf", "nf", "hb", "nb")


@dataclass(frozen=True)
class NetConfig:
    encoder_channels: tuple[int, ...] = (16, 32, 32, 32)
    encoder_stride: int = 4
    feature_dim: int = 32
    aspp_rates: tuple[int, ...] = (1, 2, 4)
    mlp_hidden: int = 64
    decoder_channels: tuple[int, ...] = (32, 16)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        object.__setattr__(self, "aspp_rates", tuple(int(r) for r in self.aspp_rates))
        object.__setattr__(self, "decoder_channels", tuple(int(c) for c in self.decoder_channels))
        if self.encoder_stride not in (2, 4, 8):
            raise ConfigError(f"encoder_stride must be 2, 4 or 8, got {self.encoder_stride}")
        if self.feature_dim < 8:
            raise ConfigError(f"feature_dim must be >= 8, got {self.feature_dim}")
        if len(self.encoder_channels) != 4:
            raise ConfigError("encoder_channels needs exactly 4 entries (one per conv block)")
        if len(self.decoder_channels) != 2:
            raise ConfigError("decoder_channels needs exactly 2 entries")
        if not self.aspp_rates:
            raise ConfigError("aspp_rates must not be empty")
        for c in (*self.encoder_channels, *self.decoder_channels, *self.aspp_rates, self.mlp_hidden):
            if c < 1:
                raise ConfigError("channel counts, rates and mlp_hidden must be >= 1")


@dataclass(frozen=True)
class PrototypeCounts:
    n_hf: int = 8
    n_nf: int = 8
    n_hb: int = 16
    n_nb: int = 48

    def __post_init__(self):
        if min(self.n_hf, self.n_nf, self.n_hb, self.n_nb) < 0:
            raise ConfigError("prototype counts must be >= 0")

    @property
    def n_fg(self) -> int:
        """Rows in the foreground bank (generated + global)."""
        return self.n_hf + self.n_nf + 1

    @property
    def n_bg(self) -> int:
        return self.n_hb + self.n_nb + 1

    def of(self, region: str) -> int:
        return getattr(self, f"n_{region}")


FULL_COUNTS = PrototypeCounts(50, 50, 100, 500)


def _groups(ch: int) -> int:
    return math.gcd(4, ch)


class Encoder(nn.Module):
    """Four conv -> GroupNorm -> ReLU blocks and a linear 1x1 projection."""

    def __init__(self, channels, stride: int, feature_dim: int):
        super().__init__()
        n_down = int(math.log2(stride))
        blocks = []
        c_in = 1
        for i, c in enumerate(channels):
            blocks.append(nn.Sequential(
                nn.Conv2d(c_in, c, 3, stride=2 if i < n_down else 1, padding=1),
                nn.GroupNorm(_groups(c), c),
                nn.ReLU(),
            ))
            c_in = c
        self.blocks = nn.ModuleList(blocks)
        # no ReLU on the projection: features must not collapse to zero vectors
        self.proj = nn.Conv2d(c_in, feature_dim, 1)

    def forward(self, x, check: bool = False):
        for i, block in enumerate(self.blocks):
            x = block(x)
            if check and not torch.isfinite(x).all():
                raise NumericError("non-finite activation", f"encoder.block{i}")
        x = self.proj(x)
        if check and not torch.isfinite(x).all():
            raise NumericError("non-finite activation", "encoder.proj")
        return x


class SupportDecoder(nn.Module):
    """FPM (3C'->C') then ASPP, one residual block and a logistic head."""

    def __init__(self, feature_dim: int, aspp_rates):
        super().__init__()
        c = feature_dim
        self.fpm = nn.Conv2d(3 * c, c, 3, padding=1)
        self.aspp = nn.ModuleList(nn.Conv2d(c, c, 3, padding=r, dilation=r) for r in aspp_rates)
        self.aspp_fuse = nn.Conv2d(c * len(aspp_rates), c, 1)
        self.res1 = nn.Conv2d(c, c, 3, padding=1)
        self.res2 = nn.Conv2d(c, c, 3, padding=1)
        self.head = nn.Conv2d(c, 1, 1)

    def forward(self, x):
        x = F.relu(self.fpm(x))
        x = F.relu(self.aspp_fuse(torch.cat([F.relu(conv(x)) for conv in self.aspp], dim=1)))
        x = F.relu(x + self.res2(F.relu(self.res1(x))))
        return torch.sigmoid(self.head(x))


class PrototypeMLP(nn.Module):
    """FC -> ReLU -> FC acting on the flattened spatial axis, shared across channels."""

    def __init__(self, n_points: int, hidden: int, n_out: int):
        super().__init__()
        self.n_out = n_out
        self.fc1 = nn.Linear(n_points, hidden)
        self.fc2 = nn.Linear(hidden, n_out)

    def forward(self, recon):
        x = recon.reshape(recon.shape[0], -1)  # C' x H'W'
        return self.fc2(F.relu(self.fc1(x))).t()  # n_out x C'


class FusionDecoder(nn.Module):
    def __init__(self, n_in: int, channels):
        super().__init__()
        self.n_in = n_in
        c0, c1 = channels
        self.conv1 = nn.Conv2d(n_in, c0, 3, padding=1)
        self.conv2 = nn.Conv2d(c0, c1, 3, padding=1)
        self.out = nn.Conv2d(c1, 1, 1)

    def forward(self, x):
        return self.out(F.relu(self.conv2(F.relu(self.conv1(x)))))


class CoWHeads(nn.Module):
    """Everything downstream of the encoder.

    Kept separate from the encoder so the heads can be exercised on small
    synthetic feature maps directly.
    """

    def __init__(self, feature_dim: int, feature_hw: tuple[int, int], counts: PrototypeCounts,
                 aspp_rates=(1, 2, 4), mlp_hidden: int = 64, decoder_channels=(32, 16)):
        super().__init__()
        self.feature_dim = feature_dim
        self.feature_hw = tuple(feature_hw)
        self.counts = counts
        self.support_decoder = SupportDecoder(feature_dim, aspp_rates)
        n_points = self.feature_hw[0] * self.feature_hw[1]
        self.mlps = nn.ModuleDict({
            r: PrototypeMLP(n_points, mlp_hidden, counts.of(r)) for r in REGIONS if counts.of(r) > 0
        })
        self.fg_decoder = FusionDecoder(counts.n_fg, decoder_channels)
        self.bg_decoder = FusionDecoder(counts.n_bg, decoder_channels)


class CoWNet(nn.Module):
    def __init__(self, cfg: NetConfig, counts: PrototypeCounts, image_size: int):
        super().__init__()
        if image_size % cfg.encoder_stride:
            raise ConfigError(f"image_size {image_size} is not divisible by stride {cfg.encoder_stride}")
        self.cfg = cfg
        self.counts = counts
        self.image_size = image_size
        hw = image_size // cfg.encoder_stride
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.encoder = Encoder(cfg.encoder_channels, cfg.encoder_stride, cfg.feature_dim)
            self.heads = CoWHeads(cfg.feature_dim, (hw, hw), counts, cfg.aspp_rates,
                                  cfg.mlp_hidden, cfg.decoder_channels)


def image_tensor(image: Image, dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(np.array(image.pixels, dtype=np.float32)).to(dtype)[None, None]


def encode(image: Image | torch.Tensor, net: CoWNet) -> torch.Tensor:
    """C' x H' x W' features for one image; a B x 1 x H x W tensor gives B x C' x H' x W'."""
    dtype = next(net.parameters()).dtype
    x = image_tensor(image, dtype) if isinstance(image, Image) else image.to(dtype)
    if x.ndim == 2:
        x = x[None, None]
    out = net.encoder(x, check=True)
    return out if isinstance(image, torch.Tensor) and image.ndim == 4 else out[0]


def support_decode(f_sp: torch.Tensor, heads: CoWHeads) -> torch.Tensor:
    if f_sp.ndim != 3 or f_sp.shape[0] != 3 * heads.feature_dim:
        raise ShapeError(f"support decoder expects {3 * heads.feature_dim} channels, got {tuple(f_sp.shape)}")
    return heads.support_decoder(f_sp[None])[0]


def mlp_prototypes(recon: torch.Tensor, n_out: int, heads: CoWHeads, region: str) -> torch.Tensor:
    if n_out <= 0:
        raise ValidationError(f"n_out must be positive, got {n_out}")
    mlp = heads.mlps[region] if region in heads.mlps else None
    if mlp is None or mlp.n_out != n_out:
        raise ShapeError(f"no prototype MLP for region {region!r} with {n_out} outputs")
    if tuple(recon.shape[1:]) != heads.feature_hw:
        raise ShapeError(f"reconstructed map {tuple(recon.shape)} does not match feature grid {heads.feature_hw}")
    return mlp(recon)


def fuse_decode(sim_stack: torch.Tensor, path: str, heads: CoWHeads) -> torch.Tensor:
    decoder = {"fg": heads.fg_decoder, "bg": heads.bg_decoder}[path]
    if sim_stack.ndim != 3 or sim_stack.shape[0] != decoder.n_in:
        raise ShapeError(f"{path} decoder expects {decoder.n_in} maps, got {tuple(sim_stack.shape)}")
    return decoder(sim_stack[None])[0]


# Greek-letter grouping of the parameter set, for reporting.
PARAM_GROUPS = {
    "theta": "encoder.",
    "psi": "heads.support_decoder.",
    "phi": "heads.mlps.",
    "psi1": "heads.fg_decoder.",
    "psi2": "heads.bg_decoder.",
}
