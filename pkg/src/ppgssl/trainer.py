"""Epoch loop shared by pre-training and fine-tuning."""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class FitResult:
    best_state: dict
    best_epoch: int
    best_val: float
    history: list = field(default_factory=list)

    @property
    def epochs_run(self) -> int:
        return len(self.history)


def evaluate(model, loss_fn, x: torch.Tensor, y: torch.Tensor, batch_size: int) -> float:
    """Exact mean loss over the whole set (batch means weighted by batch size)."""
    model.eval()
    total, n = 0.0, 0
    with torch.no_grad():
        for i in range(0, len(x), batch_size):
            xb, yb = x[i : i + batch_size], y[i : i + batch_size]
            total += float(loss_fn(model(xb), yb)) * len(xb)
            n += len(xb)
    return total / n


def fit(
    model: torch.nn.Module,
    loss_fn: Callable,
    train: tuple[torch.Tensor, torch.Tensor],
    val: tuple[torch.Tensor, torch.Tensor],
    optimizer: torch.optim.Optimizer,
    max_epochs: int,
    patience: int,
    batch_size: int,
    seed: int,
    lr_schedule: Callable[[list[float]], float] | None = None,
    batch_check: Callable[[np.ndarray], None] | None = None,
    metric: str = "loss",
    log_path: Path | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> FitResult:
    """Train until ``max_epochs`` or ``patience`` epochs without a new best
    validation loss; return the best weights seen.

    ``lr_schedule`` maps the validation history to the learning rate of the
    next epoch. ``batch_check`` receives the training-set indices of every
    batch before it is used.
    """
    xt, yt = train
    xv, yv = val
    gen = torch.Generator().manual_seed(seed)
    best_val, best_epoch, best_state = math.inf, -1, None
    history, vals = [], []
    fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(max_epochs):
            model.train()
            perm = torch.randperm(len(xt), generator=gen)
            total = 0.0
            for i in range(0, len(xt), batch_size):
                idx = perm[i : i + batch_size]
                if batch_check is not None:
                    batch_check(idx.numpy())
                loss = loss_fn(model(xt[idx]), yt[idx])
                if not torch.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite training {metric} ({loss.item()}) at epoch {epoch}, batch {i // batch_size}"
                    )
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                total += loss.item() * len(idx)
            train_loss = total / len(xt)
            val_loss = evaluate(model, loss_fn, xv, yv, batch_size)
            if not math.isfinite(val_loss):
                raise TrainingDivergedError(f"non-finite validation {metric} at epoch {epoch}")
            vals.append(val_loss)
            if val_loss < best_val:
                best_val, best_epoch = val_loss, epoch
                best_state = copy.deepcopy(model.state_dict())
            rec = {
                "epoch": epoch,
                f"train_{metric}": train_loss,
                f"val_{metric}": val_loss,
                f"best_val_{metric}": best_val,
                "lr": optimizer.param_groups[0]["lr"],
            }
            history.append(rec)
            if fh:
                fh.write(json.dumps(rec) + "\n")
                fh.flush()
            if on_epoch:
                on_epoch(rec)
            log.debug("%s", rec)
            if epoch - best_epoch >= patience:
                break
            if lr_schedule is not None:
                lr = lr_schedule(vals)
                for g in optimizer.param_groups:
                    g["lr"] = lr
    finally:
        if fh:
            fh.close()
    model.load_state_dict(best_state)
    return FitResult(best_state, best_epoch, best_val, history)


def tensor(a) -> torch.Tensor:
    return torch.as_tensor(np.asarray(a), dtype=torch.float32)
