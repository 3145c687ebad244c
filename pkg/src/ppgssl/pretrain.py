"""Self-supervised pre-training: the autoencoder reconstructs its own input."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .data import Provenance, WindowedDataset
from .model import AUTOENCODER, Checkpoint, ModelConfig, build_autoencoder, mse_multimodal
from .trainer import fit, tensor


@dataclass(frozen=True)
class PretrainConfig:
    max_epochs: int = 500
    lr: float = 1e-3
    betas: tuple = (0.9, 0.95)
    weight_decay: float = 0.01
    plateau_patience: int = 5
    early_stop_patience: int = 50
    batch_size: int = 256
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not self.early_stop_patience > self.plateau_patience:
            raise ValueError("early_stop_patience must exceed plateau_patience")
        if not 0 < self.val_fraction < 0.5:
            raise ValueError("val_fraction must lie in (0, 0.5)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def cosine_lr(base_lr: float, t: float, t_decay: float) -> float:
    """Half-cycle cosine from base_lr at t=0 down to 0 at t=t_decay."""
    if t_decay <= 0:
        return 0.0
    t = min(max(t, 0.0), t_decay)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * t / t_decay))


def plateau_start(val_history, patience: int) -> int | None:
    """Epoch at which ``patience`` consecutive epochs failed to beat the best
    loss so far (any improvement counts), or None."""
    best = math.inf
    since = 0
    for epoch, v in enumerate(val_history):
        if v < best:
            best, since = v, 0
        else:
            since += 1
            if since >= patience:
                return epoch
    return None


def scheduler_step(state: dict, val_history) -> float:
    """Learning rate for the epoch after ``val_history``.

    ``state`` holds ``base_lr``, ``plateau_patience`` and ``max_epochs``. The
    rate stays at base until the first plateau, then decays by a half cosine
    over the remaining epoch budget; later improvements do not reset it.
    """
    if not len(val_history):
        raise ValueError("val_history must not be empty")
    start = plateau_start(val_history, state["plateau_patience"])
    base = state["base_lr"]
    if start is None:
        return base
    next_epoch = len(val_history)
    return cosine_lr(base, next_epoch - start, state["max_epochs"] - start)


class PlateauCosineScheduler:
    def __init__(self, optimizer, base_lr: float, plateau_patience: int, max_epochs: int):
        self.optimizer = optimizer
        self.state = {"base_lr": base_lr, "plateau_patience": plateau_patience, "max_epochs": max_epochs}
        self.history = []

    def step(self, val_loss: float) -> float:
        self.history.append(float(val_loss))
        lr = scheduler_step(self.state, self.history)
        for g in self.optimizer.param_groups:
            g["lr"] = lr
        return lr


def split_indices(n: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Random window-level (train, val) split."""
    if n < 2:
        raise ValueError(f"need at least 2 windows to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_val = min(n - 1, max(1, int(round(val_fraction * n))))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def pretrain(
    corpus: WindowedDataset,
    cfg: PretrainConfig | None = None,
    model_cfg: ModelConfig | None = None,
    log_path: str | Path | None = None,
    on_epoch=None,
) -> Checkpoint:
    """Train the autoencoder on ``corpus`` and return the best-validation checkpoint."""
    cfg = cfg or PretrainConfig()
    model_cfg = model_cfg or ModelConfig(variant=AUTOENCODER)
    if model_cfg.variant != AUTOENCODER:
        model_cfg = replace(model_cfg, variant=AUTOENCODER)
    if len(corpus) == 0:
        raise ValueError("pre-training corpus is empty")
    if not corpus.normalized:
        raise ValueError("pre-training corpus must be z-scored first")
    if corpus.stats.provenance is not Provenance.PRETRAIN_CORPUS:
        raise ValueError(f"pre-training corpus normalized with {corpus.stats.provenance.value} stats")

    tr, va = split_indices(len(corpus), cfg.val_fraction, cfg.seed)
    x = tensor(corpus.data)
    torch.manual_seed(cfg.seed)
    model = build_autoencoder(model_cfg, seed=cfg.seed)
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay)
    sched_state = {"base_lr": cfg.lr, "plateau_patience": cfg.plateau_patience, "max_epochs": cfg.max_epochs}
    result = fit(
        model,
        mse_multimodal,
        (x[tr], x[tr]),
        (x[va], x[va]),
        opt,
        max_epochs=cfg.max_epochs,
        patience=cfg.early_stop_patience,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
        lr_schedule=lambda vals: scheduler_step(sched_state, vals),
        metric="mse",
        log_path=Path(log_path) if log_path else None,
        on_epoch=on_epoch,
    )
    meta = {
        "stage": "pretrain",
        "epoch": result.best_epoch,
        "best_val_mse": result.best_val,
        "epochs_run": result.epochs_run,
        "seed": cfg.seed,
        "val_fraction": cfg.val_fraction,
        "n_windows": len(corpus),
        "log": result.history,
    }
    return Checkpoint.from_model(model, meta, corpus.stats)
