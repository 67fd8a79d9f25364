"""Checkpoints: parameters, optimizer state and the run config in one container."""

from __future__ import annotations

import os

import numpy as np
import torch

from ..container import FormatError, block_text, read_container, text_block, write_container
from ..core import ConfigError
from ..nets import CoWNet
from .config import TrainConfig, dump_config, parse_config_text


def save_checkpoint(path, net: CoWNet, cfg: TrainConfig, iteration: int,
                    optimizer: torch.optim.Optimizer | None = None) -> None:
    blocks = {"config": text_block(dump_config(cfg)), "iteration": np.array([iteration], dtype=np.float64)}
    for name, t in net.state_dict().items():
        blocks[f"param.{name}"] = t.detach().cpu().numpy()
    if optimizer is not None:
        for idx, state in optimizer.state_dict()["state"].items():
            for key, value in state.items():
                if value is None:
                    continue
                if torch.is_tensor(value):
                    blocks[f"opt.{idx}.{key}"] = value.detach().cpu().numpy()
                else:
                    blocks[f"opt.{idx}.{key}"] = np.array(value, dtype=np.float64)
    write_container(path, blocks)


def load_checkpoint(path: str | os.PathLike):
    """Returns ``(net, cfg, iteration, optimizer_state)``; the state is None if absent."""
    blocks = read_container(path)
    if "config" not in blocks or "iteration" not in blocks:
        raise FormatError(f"{os.fspath(path)!r} is not a checkpoint (missing config/iteration)")
    try:
        cfg = parse_config_text(block_text(blocks["config"]))
    except ConfigError as exc:
        raise FormatError(f"checkpoint config is invalid: {exc}") from exc
    net = CoWNet(cfg.net, cfg.counts, cfg.data.image_size)
    state = net.state_dict()
    loaded = {}
    for name, ref in state.items():
        arr = blocks.get(f"param.{name}")
        if arr is None or tuple(arr.shape) != tuple(ref.shape):
            raise FormatError(f"checkpoint parameter {name!r} missing or mis-shaped")
        loaded[name] = torch.from_numpy(arr.copy())
    net.load_state_dict(loaded)
    opt_state: dict[int, dict[str, np.ndarray]] = {}
    for key, arr in blocks.items():
        if key.startswith("opt."):
            _, idx, name = key.split(".", 2)
            opt_state.setdefault(int(idx), {})[name] = arr
    return net, cfg, int(blocks["iteration"][0]), (opt_state or None)


def restore_optimizer(optimizer: torch.optim.Optimizer, opt_state) -> None:
    if not opt_state:
        return
    sd = optimizer.state_dict()
    sd["state"] = {
        idx: {k: torch.from_numpy(v.copy()) for k, v in entries.items()} for idx, entries in opt_state.items()
    }
    optimizer.load_state_dict(sd)
