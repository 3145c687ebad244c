"""Leave-one-subject-out fine-tuning of the HR estimator."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .data import Provenance, WindowedDataset, apply_zscore, compute_norm_stats
from .evaluate import HRSeries
from .model import ESTIMATOR, Checkpoint, ModelConfig, build_estimator, mae_loss, transfer_encoder_weights
from .trainer import fit, tensor


class Init(str, enum.Enum):
    PRETRAINED = "pretrained"
    RANDOM = "random"


class SubjectLeakageError(AssertionError):
    pass


class StatsMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Assignment:
    test: str
    val: tuple
    train: tuple


@dataclass
class FoldPlan:
    folds: list  # list of tuples of subject ids
    assignments: list = field(default_factory=list)
    seed: int = 0

    def __iter__(self):
        return iter(self.assignments)

    def __len__(self):
        return len(self.assignments)

    def for_subject(self, subject: str) -> Assignment:
        for a in self.assignments:
            if a.test == subject:
                return a
        raise KeyError(subject)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "folds": [list(f) for f in self.folds]}

    @classmethod
    def from_dict(cls, d: dict) -> "FoldPlan":
        return _plan_from_folds([tuple(f) for f in d["folds"]], d.get("seed", 0))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "FoldPlan":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _plan_from_folds(folds, seed) -> FoldPlan:
    assignments = []
    for fi, fold in enumerate(folds):
        train = tuple(s for fj, other in enumerate(folds) if fj != fi for s in other)
        for s in fold:
            assignments.append(Assignment(s, tuple(x for x in fold if x != s), train))
    return FoldPlan(folds, assignments, seed)


def make_loso_folds(subject_ids, n_folds: int = 4, seed: int = 0) -> FoldPlan:
    """Shuffle subjects with ``seed`` and deal them into ``n_folds`` balanced folds.

    Each subject is tested once; its fold-mates validate and the other folds train.
    """
    subjects = list(dict.fromkeys(subject_ids))
    if len(subjects) < n_folds:
        raise ValueError(f"{len(subjects)} subjects cannot fill {n_folds} folds")
    order = [subjects[i] for i in np.random.default_rng(seed).permutation(len(subjects))]
    sizes = [len(subjects) // n_folds + (1 if i < len(subjects) % n_folds else 0) for i in range(n_folds)]
    folds, start = [], 0
    for size in sizes:
        folds.append(tuple(order[start : start + size]))
        start += size
    return _plan_from_folds(folds, seed)


@dataclass(frozen=True)
class FinetuneConfig:
    max_epochs: int = 500
    lr: float = 5e-4
    early_stop_patience: int = 150
    batch_size: int = 128
    seed: int = 0
    init: Init = Init.PRETRAINED

    def __post_init__(self):
        object.__setattr__(self, "init", Init(self.init))
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not self.early_stop_patience < self.max_epochs:
            raise ValueError("early_stop_patience must be < max_epochs")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def _stats_for(assignment: Assignment, data: WindowedDataset, cfg: FinetuneConfig, pretrained):
    if cfg.init is Init.PRETRAINED:
        if pretrained is None:
            raise ValueError("init=pretrained needs a pre-trained checkpoint")
        if pretrained.stats is None:
            raise StatsMismatchError("pre-trained checkpoint carries no normalization stats")
        return pretrained.stats
    return compute_norm_stats(data.for_subjects(assignment.train), Provenance.TRAIN_SPLIT)


def prepare_data(assignment, data: WindowedDataset, cfg: FinetuneConfig, pretrained=None) -> WindowedDataset:
    """Normalize with the stats that belong to this run, or verify existing ones."""
    if not data.normalized:
        return apply_zscore(data, _stats_for(assignment, data, cfg, pretrained))
    if cfg.init is Init.PRETRAINED and pretrained is not None and data.stats != pretrained.stats:
        raise StatsMismatchError("data was normalized with stats other than the pre-training corpus stats")
    if cfg.init is Init.RANDOM and data.stats.provenance is not Provenance.TRAIN_SPLIT:
        raise StatsMismatchError("random init expects training-split stats")
    return data


def finetune(
    assignment: Assignment,
    pretrained: Checkpoint | None,
    cfg: FinetuneConfig | None = None,
    data: WindowedDataset | None = None,
    model_cfg: ModelConfig | None = None,
    log_path=None,
) -> Checkpoint:
    """Fine-tune one LOSO run and return the best-validation-MAE checkpoint.

    ``data`` may be raw (normalized here with the run's stats) or already
    normalized with the matching stats.
    """
    cfg = cfg or FinetuneConfig()
    if data is None:
        raise ValueError("no data given")
    data = prepare_data(assignment, data, cfg, pretrained)
    train = data.for_subjects(assignment.train)
    val = data.for_subjects(assignment.val)
    if len(train) == 0 or len(val) == 0:
        raise ValueError(f"empty train or val split for test subject {assignment.test}")
    for name, part in (("train", train), ("val", val)):
        if np.isnan(part.labels).any():
            raise ValueError(f"{name} split has windows without HR labels")

    if cfg.init is Init.PRETRAINED:
        dst = replace(model_cfg or pretrained.config, variant=ESTIMATOR)
        model = transfer_encoder_weights(pretrained, dst, head_seed=cfg.seed)
    else:
        model = build_estimator(replace(model_cfg or ModelConfig(), variant=ESTIMATOR), seed=cfg.seed)
    y = train.labels.astype(np.float64)
    model.set_label_scaling(y.mean(), y.std())

    forbidden = {assignment.test, *assignment.val}
    train_sids = train.subject_ids

    def check_batch(idx):
        leaked = forbidden.intersection(train_sids[idx].tolist())
        if leaked:
            raise SubjectLeakageError(f"held-out subjects {sorted(leaked)} in a training batch")

    torch.manual_seed(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    result = fit(
        model,
        mae_loss,
        (tensor(train.data), tensor(train.labels)),
        (tensor(val.data), tensor(val.labels)),
        opt,
        max_epochs=cfg.max_epochs,
        patience=cfg.early_stop_patience,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
        batch_check=check_batch,
        metric="mae",
        log_path=Path(log_path) if log_path else None,
    )
    meta = {
        "stage": "finetune",
        "test_subject": assignment.test,
        "val_subjects": list(assignment.val),
        "train_subjects": list(assignment.train),
        "init": cfg.init.value,
        "epoch": result.best_epoch,
        "best_val_mae": result.best_val,
        "epochs_run": result.epochs_run,
        "seed": cfg.seed,
        "log": result.history,
    }
    return Checkpoint.from_model(model, meta, data.stats)


def predict_series(ckpt: Checkpoint, windows: WindowedDataset, batch_size: int = 512) -> HRSeries:
    """One BPM prediction per window, in the order given."""
    if windows.normalized:
        if ckpt.stats is not None and windows.stats != ckpt.stats:
            raise StatsMismatchError(
                "windows were normalized with different stats than the checkpoint was trained on"
            )
    else:
        if ckpt.stats is None:
            raise StatsMismatchError("raw windows given but the checkpoint records no normalization stats")
        windows = apply_zscore(windows, ckpt.stats)
    model = ckpt.build()
    x = tensor(windows.data)
    out = []
    with torch.no_grad():
        for i in range(0, len(x), batch_size):
            out.append(model(x[i : i + batch_size]).reshape(-1).double().numpy())
    preds = np.concatenate(out) if out else np.zeros(0)
    subjects = windows.subjects
    labels = None if np.isnan(windows.labels).any() else windows.labels.astype(np.float64)
    return HRSeries(subjects[0] if len(subjects) == 1 else ",".join(subjects), preds, labels)


@dataclass
class LosoResult:
    test_subject: str
    checkpoint: Checkpoint
    series: HRSeries


def run_loso(
    data: WindowedDataset,
    plan: FoldPlan,
    pretrained: Checkpoint | None,
    cfg: FinetuneConfig,
    model_cfg: ModelConfig | None = None,
    subjects=None,
    out_dir=None,
):
    """Fine-tune and predict for every (or the selected) test subject of ``plan``."""
    results = []
    for a in plan:
        if subjects is not None and a.test not in subjects:
            continue
        log_path = Path(out_dir) / f"{a.test}.log.jsonl" if out_dir else None
        if log_path:
            log_path.parent.mkdir(parents=True, exist_ok=True)
        ckpt = finetune(a, pretrained, cfg, data, model_cfg, log_path=log_path)
        series = predict_series(ckpt, data.for_subjects([a.test]))
        series.subject_id = a.test
        if out_dir:
            ckpt.save(Path(out_dir) / f"{a.test}.ckpt")
            series.save(Path(out_dir) / f"{a.test}.pred.csv")
        results.append(LosoResult(a.test, ckpt, series))
    return results
