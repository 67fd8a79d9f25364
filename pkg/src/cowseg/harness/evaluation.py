"""Held-out evaluation and prototype export."""

from __future__ import annotations

import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from ..container import block_text, read_container, text_block, write_container
from ..core import TAGS, ConfigError
from ..data import FoldSpec, episode_rng, load_episode, make_fold, sample_episode
from ..losses import TERM_NAMES
from ..nets import CoWNet
from .checkpoint import load_checkpoint
from .config import TrainConfig
from .pipeline import forward_episode

EVAL_STREAM = 0xE7A1


@dataclass
class MetricsReport:
    mean_dice: float
    mean_boundary_f1: float
    per_class_dice: dict[int, float]
    per_class_boundary_f1: dict[int, float]
    loss_terms: dict[str, float]
    iterations: int
    n_episodes: int
    seed: int
    fold_id: int
    wall_clock_s: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        return asdict(self)


def check_fold(trained: FoldSpec, evaluated: FoldSpec) -> None:
    overlap = set(trained.train_class_ids) & set(evaluated.test_class_ids)
    if overlap:
        raise ConfigError(
            f"evaluation fold {evaluated.fold_id} tests classes {sorted(overlap)} "
            f"that fold {trained.fold_id} trained on")


def evaluate_net(net: CoWNet, cfg: TrainConfig, fold: FoldSpec, n_episodes: int, seed: int,
                 iterations: int = 0) -> MetricsReport:
    check_fold(cfg.fold, fold)
    if n_episodes < 1:
        raise ConfigError("n_episodes must be >= 1")
    t0 = time.perf_counter()
    dice_by_class, bf1_by_class = defaultdict(list), defaultdict(list)
    terms = defaultdict(float)
    net.eval()
    with torch.no_grad():
        for i in range(n_episodes):
            rng = episode_rng(seed, EVAL_STREAM, i)
            episode = sample_episode(cfg.data, fold.test_class_ids, rng)
            res = forward_episode(episode, net, rng, cfg.weights)
            dice_by_class[episode.class_id].append(res.dice)
            bf1_by_class[episode.class_id].append(res.boundary_f1)
            for k in (*TERM_NAMES, "total"):
                terms[k] += res.loss_terms[k] / n_episodes
    per_dice = {c: float(np.mean(v)) for c, v in sorted(dice_by_class.items())}
    per_bf1 = {c: float(np.mean(v)) for c, v in sorted(bf1_by_class.items())}
    return MetricsReport(
        mean_dice=float(np.mean(list(per_dice.values()))),
        mean_boundary_f1=float(np.mean(list(per_bf1.values()))),
        per_class_dice=per_dice,
        per_class_boundary_f1=per_bf1,
        loss_terms=dict(terms),
        iterations=iterations,
        n_episodes=n_episodes,
        seed=seed,
        fold_id=fold.fold_id,
        wall_clock_s=time.perf_counter() - t0,
    )


def evaluate(checkpoint, fold_id: int | None = None, n_episodes: int = 100, seed: int = 0) -> MetricsReport:
    net, cfg, iteration, _ = load_checkpoint(checkpoint)
    fold = cfg.fold if fold_id is None else make_fold(cfg.data, fold_id)
    return evaluate_net(net, cfg, fold, n_episodes, seed, iteration)


def _tag_codes(tags) -> np.ndarray:
    return np.array([TAGS.index(t) for t in tags], dtype=np.uint8)


def export_prototypes(checkpoint, episode_path, out_path, seed: int = 0) -> None:
    """Write the support banks of one episode (vectors plus provenance tags)."""
    net, cfg, _, _ = load_checkpoint(checkpoint)
    episode = load_episode(episode_path)
    res = forward_episode(episode, net, episode_rng(seed, EVAL_STREAM), cfg.weights)
    write_container(out_path, {
        "fg_bank": res.fg_bank.vectors.detach().numpy(),
        "bg_bank": res.bg_bank.vectors.detach().numpy(),
        "fg_tags": _tag_codes(res.fg_bank.tags),
        "bg_tags": _tag_codes(res.bg_bank.tags),
        "tag_names": text_block(",".join(TAGS)),
    })


def load_prototypes(path) -> dict[str, tuple[np.ndarray, tuple[str, ...]]]:
    """``{"fg": (vectors, tags), "bg": (vectors, tags)}`` from an export file."""
    blocks = read_container(path)
    names = block_text(blocks["tag_names"]).split(",")
    return {
        path_: (blocks[f"{path_}_bank"], tuple(names[i] for i in blocks[f"{path_}_tags"]))
        for path_ in ("fg", "bg")
    }
