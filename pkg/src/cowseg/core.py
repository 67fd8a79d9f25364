"""Domain types shared across the pipeline.

Dense grids are channel-first (C x H x W). Images and masks live at image
resolution; consumers that need feature resolution downsample masks with
``downsample_nearest``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import torch

MIN_IMAGE_SIDE = 16
TAGS = ("hard", "normal", "global")


class CowError(Exception):
    """Base class for all package errors."""


class ValidationError(CowError, ValueError):
    pass


class ShapeError(ValidationError):
    pass


class EmptyRegionError(ValidationError):
    pass


class ConfigError(CowError, ValueError):
    pass


class NumericError(CowError, ArithmeticError):
    def __init__(self, message: str, where: str | None = None):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Image:
    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 2:
            raise ShapeError(f"image must be 2-D, got shape {px.shape}")
        if px.shape[0] < MIN_IMAGE_SIDE or px.shape[1] < MIN_IMAGE_SIDE:
            raise ValidationError(f"image sides must be >= {MIN_IMAGE_SIDE}, got {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ValidationError("image values must be finite and within [0, 1]")
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def __eq__(self, other):
        return isinstance(other, Image) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got shape {bits.shape}")
        if not np.all((bits == 0) | (bits == 1)):
            raise ValidationError("mask values must be exactly 0 or 1")
        object.__setattr__(self, "bits", _frozen(bits.astype(np.uint8)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def __eq__(self, other):
        return isinstance(other, BinaryMask) and np.array_equal(self.bits, other.bits)


@dataclass(frozen=True)
class Episode:
    """One 1-way 1-shot unit: a labelled support pair and a labelled query pair."""

    support_image: Image
    support_mask: BinaryMask
    query_image: Image
    query_mask: BinaryMask
    class_id: int

    def __post_init__(self):
        shape = self.support_image.shape
        for name in ("support_mask", "query_image", "query_mask"):
            if getattr(self, name).shape != shape:
                raise ShapeError(f"{name} shape {getattr(self, name).shape} != support image {shape}")
        n_fg = int(self.support_mask.bits.sum())
        if n_fg == 0 or n_fg == self.support_mask.bits.size:
            raise ValidationError("support mask needs at least one foreground and one background pixel")


@dataclass(frozen=True)
class PartitionMasks:
    """Hard/normal x foreground/background split of the support grid."""

    hf: torch.Tensor
    hb: torch.Tensor
    nf: torch.Tensor
    nb: torch.Tensor

    def as_dict(self) -> dict[str, torch.Tensor]:
        return {"hf": self.hf, "hb": self.hb, "nf": self.nf, "nb": self.nb}


def validate_partition(p: PartitionMasks) -> bool:
    masks = [np.asarray(torch.as_tensor(m).detach().cpu()) for m in p.as_dict().values()]
    shape = masks[0].shape
    if any(m.shape != shape for m in masks):
        raise ShapeError(f"partition masks differ in shape: {[m.shape for m in masks]}")
    if not all(np.all((m == 0) | (m == 1)) for m in masks):
        return False
    # disjoint and covering <=> exactly one mask set at every position
    return bool(np.all(sum(m.astype(np.int64) for m in masks) == 1))


@dataclass(frozen=True)
class PrototypeBank:
    """Prototype rows for one path, ordered hard, normal, global.

    Rows produced by the empty-region fallback are copies of the global
    prototype and carry the ``global`` tag; the final row is always the
    MAP global prototype itself.
    """

    vectors: torch.Tensor
    tags: tuple[str, ...]

    def __post_init__(self):
        if self.vectors.ndim != 2:
            raise ShapeError(f"bank must be N x C, got {tuple(self.vectors.shape)}")
        if len(self.tags) != self.vectors.shape[0]:
            raise ShapeError("one provenance tag per row is required")
        if any(t not in TAGS for t in self.tags):
            raise ValidationError(f"unknown provenance tag in {set(self.tags) - set(TAGS)}")
        if not self.tags or self.tags[-1] != "global":
            raise ValidationError("the last bank row must be the global prototype")
        v = self.vectors.detach()
        if not torch.isfinite(v).all():
            raise NumericError("non-finite prototype", "bank")
        zero_rows = (v == 0).all(dim=1)
        if zero_rows.any():
            raise ValidationError(f"all-zero prototype rows {zero_rows.nonzero().flatten().tolist()}")

    def __len__(self) -> int:
        return self.vectors.shape[0]


@dataclass
class EpisodeResult:
    query_fg_prob: np.ndarray
    query_bg_prob: np.ndarray
    predicted_mask: BinaryMask
    loss_terms: Mapping[str, float]
    dice: float
    boundary_f1: float
    align_skipped: bool = False
    fg_bank: PrototypeBank | None = field(default=None, repr=False)
    bg_bank: PrototypeBank | None = field(default=None, repr=False)


def downsample_nearest(mask, size: tuple[int, int]) -> torch.Tensor:
    """Nearest-neighbour resize of an H x W mask to ``size``; keeps values binary."""
    t = torch.as_tensor(np.asarray(mask.bits if isinstance(mask, BinaryMask) else mask))
    t = t.to(torch.float64)[None, None]
    return torch.nn.functional.interpolate(t, size=size, mode="nearest")[0, 0]
