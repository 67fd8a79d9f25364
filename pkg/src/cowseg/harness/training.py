"""Episodic training loop."""

from __future__ import annotations

import logging
from pathlib import Path

import torch

from ..core import NumericError
from ..data import episode_rng, sample_episode
from ..losses import TERM_NAMES
from ..nets import CoWNet
from .checkpoint import load_checkpoint, restore_optimizer, save_checkpoint
from .config import TrainConfig, dump_config
from .pipeline import run_episode

log = logging.getLogger(__name__)

TRAIN_STREAM = 0x7EA1
LOG_NAME = "metrics.log"


class TrainingAborted(NumericError):
    def __init__(self, message: str, iteration: int, last_checkpoint: Path | None):
        self.iteration = iteration
        self.last_checkpoint = last_checkpoint
        super().__init__(f"{message}; last good checkpoint: {last_checkpoint}", f"train@{iteration}")


def build_optimizer(net: torch.nn.Module, cfg: TrainConfig) -> torch.optim.Optimizer:
    if cfg.optimizer == "adam":
        return torch.optim.Adam(net.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    return torch.optim.SGD(net.parameters(), lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)


def format_record(iteration: int, terms) -> str:
    values = " ".join(f"{terms[k]:.9e}" for k in (*TERM_NAMES, "total"))
    return f"{iteration} {values}\n"


def checkpoint_name(iteration: int) -> str:
    return f"ckpt_{iteration:06d}.cowt"


def train(cfg: TrainConfig, out_dir, resume=None) -> Path:
    """Run the episodic loop; returns the path of the final checkpoint.

    Episode ``i`` and its prototype sampling draw from a generator keyed by
    (seed, i), so a resumed run replays exactly what an uninterrupted run sees.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    net = CoWNet(cfg.net, cfg.counts, cfg.data.image_size)
    optimizer = build_optimizer(net, cfg)
    start = 1
    last_ckpt: Path | None = None
    if resume is not None:
        loaded, _, done, opt_state = load_checkpoint(resume)
        net.load_state_dict(loaded.state_dict())
        restore_optimizer(optimizer, opt_state)
        start = done + 1
        last_ckpt = Path(resume)
    (out / "config.txt").write_text(dump_config(cfg), encoding="utf-8")
    train_ids = cfg.fold.train_class_ids
    log_path = out / LOG_NAME
    if resume is not None and log_path.exists():
        # drop records past the checkpoint so replayed iterations are not logged twice
        kept = [ln for ln in log_path.read_text(encoding="utf-8").splitlines(keepends=True)
                if ln.strip() and int(ln.split(maxsplit=1)[0]) < start]
        log_path.write_text("".join(kept), encoding="utf-8")
    mode = "a" if resume is not None else "w"
    with open(log_path, mode, encoding="utf-8") as metrics:
        for it in range(start, cfg.iterations + 1):
            for group in optimizer.param_groups:
                group["lr"] = cfg.lr_at(it)
            rng = episode_rng(cfg.seed, TRAIN_STREAM, it)
            episode = sample_episode(cfg.data, train_ids, rng)
            try:
                result, total = run_episode(episode, net, rng, cfg.weights)
            except NumericError as exc:
                raise TrainingAborted(str(exc), it, last_ckpt) from exc
            optimizer.zero_grad()
            total.backward()
            bad = [n for n, p in net.named_parameters() if p.grad is not None and not torch.isfinite(p.grad).all()]
            if bad:
                raise TrainingAborted(f"non-finite gradient in {bad[0]}", it, last_ckpt)
            optimizer.step()
            if it % cfg.log_every == 0:
                metrics.write(format_record(it, result.loss_terms))
                metrics.flush()
            if it % 100 == 0:
                log.info("iter %d total %.4f dice %.3f lr %.2e", it, result.loss_terms["total"], result.dice, cfg.lr_at(it))
            if it % cfg.ckpt_every == 0 or it == cfg.iterations:
                last_ckpt = out / checkpoint_name(it)
                save_checkpoint(last_ckpt, net, cfg, it, optimizer)
    if last_ckpt is None:
        raise TrainingAborted("no checkpoint written", cfg.iterations, None)
    return last_ckpt
