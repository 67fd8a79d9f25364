"""Synthetic episodic shape data, fold splits and episode files."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .container import FormatError, read_container, write_container
from .core import BinaryMask, ConfigError, Episode, Image

FAMILIES = ("ellipse", "rounded-rect", "blob")


@dataclass(frozen=True)
class ShapeTaskConfig:
    image_size: int = 64
    class_families: tuple[str, ...] = ("ellipse", "ellipse", "rounded-rect", "rounded-rect", "blob", "blob")
    size_range: tuple[float, float] = (0.03, 0.18)
    boundary_roughness: float = 0.12
    intensity_contrast: float = 0.4
    noise_std: float = 0.05
    n_classes_train: int = 4
    n_classes_test: int = 2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "class_families", tuple(self.class_families))
        object.__setattr__(self, "size_range", tuple(float(x) for x in self.size_range))
        if self.image_size < 16:
            raise ConfigError("image_size must be >= 16")
        unknown = set(self.class_families) - set(FAMILIES)
        if unknown:
            raise ConfigError(f"unknown shape families {sorted(unknown)}")
        lo, hi = self.size_range
        if not 0 < lo <= hi < 1:
            raise ConfigError(f"size_range must satisfy 0 < lo <= hi < 1, got {self.size_range}")
        if self.boundary_roughness < 0 or self.noise_std < 0:
            raise ConfigError("boundary_roughness and noise_std must be >= 0")
        if self.n_classes_train + self.n_classes_test != len(self.class_families):
            raise ConfigError("n_classes_train + n_classes_test must equal the number of classes")

    @property
    def n_classes(self) -> int:
        return len(self.class_families)


@dataclass(frozen=True)
class FoldSpec:
    fold_id: int
    train_class_ids: tuple[int, ...]
    test_class_ids: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "train_class_ids", tuple(int(c) for c in self.train_class_ids))
        object.__setattr__(self, "test_class_ids", tuple(int(c) for c in self.test_class_ids))
        overlap = set(self.train_class_ids) & set(self.test_class_ids)
        if overlap:
            raise ConfigError(f"fold {self.fold_id}: classes {sorted(overlap)} are both train and test")
        if not self.train_class_ids or not self.test_class_ids:
            raise ConfigError(f"fold {self.fold_id}: train and test class sets must be non-empty")


def make_fold(cfg: ShapeTaskConfig, fold_id: int) -> FoldSpec:
    """Hold out one shape family; fold 0 holds out the last family listed."""
    families = list(dict.fromkeys(cfg.class_families))
    if len(families) < 2:
        raise ConfigError("need at least two shape families to build disjoint folds")
    held_out = families[-1 - (fold_id % len(families))]
    test = [i for i, f in enumerate(cfg.class_families) if f == held_out]
    train = [i for i, f in enumerate(cfg.class_families) if f != held_out]
    if len(test) != cfg.n_classes_test or len(train) != cfg.n_classes_train:
        raise ConfigError(
            f"fold {fold_id} holds out {len(test)} classes ({held_out}) but the config asks for "
            f"{cfg.n_classes_train} train / {cfg.n_classes_test} test")
    return FoldSpec(fold_id, tuple(train), tuple(test))


def episode_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for (seed, stream...) via SeedSequence spawning keys."""
    return np.random.default_rng(np.random.SeedSequence([seed, *stream]))


@dataclass(frozen=True)
class ClassStyle:
    family: str
    fg_level: float
    texture_amp: float
    texture_freq: float
    roughness: float


def class_style(cfg: ShapeTaskConfig, class_id: int) -> ClassStyle:
    if not 0 <= class_id < cfg.n_classes:
        raise ConfigError(f"class_id {class_id} outside 0..{cfg.n_classes - 1}")
    rng = episode_rng(cfg.seed, 0xC1A55, class_id)
    family = cfg.class_families[class_id]
    rough = cfg.boundary_roughness * (2.5 if family == "blob" else 1.0)
    return ClassStyle(
        family=family,
        fg_level=0.3 + cfg.intensity_contrast * rng.uniform(0.8, 1.2),
        texture_amp=rng.uniform(0.0, 0.06),
        texture_freq=rng.uniform(0.3, 0.9),
        roughness=rough,
    )


def _radial_noise(theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = np.zeros_like(theta)
    for k in range(2, 6):
        n += rng.normal() / k * np.cos(k * theta + rng.uniform(0, 2 * np.pi))
    peak = np.abs(n).max()
    return n / peak if peak > 0 else n


def _shape_mask(size: int, family: str, roughness: float, area_frac: float, rng) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    aspect = rng.uniform(0.55, 1.0)
    angle = rng.uniform(0, np.pi)
    exponent = 4.0 if family == "rounded-rect" else 2.0
    noise_phase = rng.integers(0, 2**31)
    # normalised radius of a unit-area-ish shape, rescaled below to hit the target area
    r0 = np.sqrt(area_frac * size * size / np.pi)
    a, b = r0 / np.sqrt(aspect), r0 * np.sqrt(aspect)
    half = max(a, b) * (1 + roughness)
    margin = min(half + 1, size / 2 - 1)
    cy, cx = rng.uniform(margin, size - margin, size=2)
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(angle) + dy * np.sin(angle)
    v = -dx * np.sin(angle) + dy * np.cos(angle)
    rho = (np.abs(u / a) ** exponent + np.abs(v / b) ** exponent) ** (1 / exponent)
    theta = np.arctan2(v, u)
    limit = 1 + roughness * _radial_noise(theta, np.random.default_rng(noise_phase))
    return (rho <= limit).astype(np.uint8)


def _render(mask: np.ndarray, style: ClassStyle, cfg: ShapeTaskConfig, rng) -> np.ndarray:
    size = mask.shape[0]
    yy, xx = np.mgrid[0:size, 0:size] / size
    bg_level = rng.uniform(0.22, 0.34)
    g = rng.normal(size=2) * 0.06
    img = bg_level + g[0] * (yy - 0.5) + g[1] * (xx - 0.5)
    for _ in range(rng.integers(1, 3)):
        d = _shape_mask(size, "ellipse", 0.1, rng.uniform(0.01, 0.05), rng)
        img = np.where(d > 0, bg_level + cfg.intensity_contrast * rng.uniform(0.3, 0.55), img)
    phase = rng.uniform(0, 2 * np.pi)
    texture = style.texture_amp * np.sin(2 * np.pi * style.texture_freq * size * (xx + yy) / 8 + phase)
    img = np.where(mask > 0, style.fg_level + texture, img)
    img = gaussian_filter(img, sigma=0.7)
    img = img + rng.normal(scale=cfg.noise_std, size=img.shape) if cfg.noise_std else img
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _sample_shape(cfg: ShapeTaskConfig, style: ClassStyle, rng) -> np.ndarray:
    lo, hi = cfg.size_range
    size = cfg.image_size
    for _ in range(64):
        mask = _shape_mask(size, style.family, style.roughness, rng.uniform(lo, hi), rng)
        frac = mask.mean()
        if 0.02 <= frac <= 0.20:
            return mask
    raise RuntimeError("shape sampler failed to hit the foreground area window")


def generate_episode(cfg: ShapeTaskConfig, class_id: int, rng: np.random.Generator) -> Episode:
    style = class_style(cfg, class_id)
    pairs = []
    for _ in range(2):
        mask = _sample_shape(cfg, style, rng)
        pairs.append((Image(_render(mask, style, cfg, rng)), BinaryMask(mask)))
    (si, sm), (qi, qm) = pairs
    return Episode(si, sm, qi, qm, int(class_id))


def sample_episode(cfg: ShapeTaskConfig, class_ids, rng: np.random.Generator) -> Episode:
    class_ids = tuple(class_ids)
    return generate_episode(cfg, class_ids[int(rng.integers(len(class_ids)))], rng)


EPISODE_BLOCKS = ("support_image", "support_mask", "query_image", "query_mask", "class_id")


def save_episode(e: Episode, path: str | os.PathLike) -> None:
    write_container(path, {
        "support_image": e.support_image.pixels,
        "support_mask": e.support_mask.bits,
        "query_image": e.query_image.pixels,
        "query_mask": e.query_mask.bits,
        "class_id": np.array([e.class_id], dtype=np.float64),
    })


def load_episode(path: str | os.PathLike) -> Episode:
    blocks = read_container(path)
    missing = [b for b in EPISODE_BLOCKS if b not in blocks]
    if missing:
        raise FormatError(f"episode file {os.fspath(path)!r} lacks blocks {missing}")
    if blocks["support_image"].dtype != np.float32 or blocks["query_image"].dtype != np.float32:
        raise FormatError("episode images must be f32")
    try:
        return Episode(
            Image(blocks["support_image"]), BinaryMask(blocks["support_mask"]),
            Image(blocks["query_image"]), BinaryMask(blocks["query_mask"]),
            int(blocks["class_id"].reshape(-1)[0]),
        )
    except ValueError as exc:
        raise FormatError(f"invalid episode content: {exc}") from exc


def write_manifest(path: str | os.PathLike, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for fold_id, class_id, p in rows:
            fh.write(f"{fold_id} {class_id} {p}\n")


def read_manifest(path: str | os.PathLike) -> list[tuple[int, int, str]]:
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split(maxsplit=2)
        if len(parts) != 3:
            raise FormatError(f"manifest line {lineno}: expected 'fold_id class_id path'")
        rows.append((int(parts[0]), int(parts[1]), parts[2]))
    return rows


def generate_dataset(cfg: ShapeTaskConfig, fold: FoldSpec, out_dir: str | os.PathLike,
                     episodes_per_class: int = 10) -> Path:
    """Write episode files for every class of ``fold`` plus a manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for class_id in (*fold.train_class_ids, *fold.test_class_ids):
        for i in range(episodes_per_class):
            e = generate_episode(cfg, class_id, episode_rng(cfg.seed, 0xDA7A, class_id, i))
            name = f"fold{fold.fold_id}_class{class_id}_{i:04d}.cowt"
            save_episode(e, out / name)
            rows.append((fold.fold_id, class_id, name))
    manifest = out / "manifest.txt"
    write_manifest(manifest, rows)
    return manifest
