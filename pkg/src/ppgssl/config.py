"""Experiment configuration: YAML file -> validated, fully defaulted dict."""

from __future__ import annotations

import copy
import difflib
import hashlib
import json
import os
from pathlib import Path

import yaml

from .augment import AugmentationSpec
from .finetune import FinetuneConfig, Init
from .model import ESTIMATOR, ModelConfig
from .pretrain import PretrainConfig

DATA_ROOT_ENV = "PPGSSL_DATA_ROOT"


class ConfigError(ValueError):
    pass


def _pos(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _frac(x):
    return 0 < x < 0.5


def _unit(x):
    return 0 < x < 1


# key -> (default, type(s), check or None, reason shown on failure)
SCHEMA = {
    "seed": (0, int, _nonneg, "must be >= 0"),
    "data": {
        "root": (None, (str, type(None)), None, ""),
        "finetune": (None, (dict, type(None)), None, ""),
        "pretrain": ([], list, None, ""),
        "synthetic": (None, (dict, type(None)), None, ""),
    },
    "window": {
        "seconds": (8, (int, float), _pos, "must be > 0"),
        "shift": (2, (int, float), _pos, "must be > 0"),
        "fs": (32, (int, float), _pos, "must be > 0"),
    },
    "augment": {
        "enabled": (True, bool, None, ""),
        "grid": ("divide:2,multiply:1.2-2.0:0.1", str, None, ""),
    },
    "model": {
        "block_channels": ([32, 48, 64], list, lambda v: all(isinstance(c, int) and c > 0 for c in v), "positive ints"),
        "layers_per_block": (3, int, _pos, "must be > 0"),
        "kernel_len": (9, int, _pos, "must be > 0"),
        "dilation": (1, int, _pos, "must be > 0"),
        "pool_factor": (2, int, _pos, "must be > 0"),
        "attention_heads": (4, int, _pos, "must be > 0"),
        "head_hidden": (8, int, _pos, "must be > 0"),
        "legacy_dilated": (False, bool, None, ""),
        "skip_connections": (True, bool, None, ""),
    },
    "pretrain": {
        "enabled": (True, bool, None, ""),
        "max_epochs": (500, int, _pos, "must be > 0"),
        "lr": (1e-3, float, _pos, "must be > 0"),
        "betas": ([0.9, 0.95], list, lambda v: len(v) == 2 and all(0 <= b < 1 for b in v), "two values in [0, 1)"),
        "weight_decay": (0.01, float, _nonneg, "must be >= 0"),
        "plateau_patience": (5, int, _pos, "must be > 0"),
        "early_stop_patience": (50, int, _pos, "must be > 0"),
        "batch_size": (256, int, _pos, "must be > 0"),
        "val_fraction": (0.1, float, _frac, "must lie in (0, 0.5)"),
    },
    "finetune": {
        "init": ("pretrained", str, lambda v: v in ("pretrained", "random"), "pretrained or random"),
        "max_epochs": (500, int, _pos, "must be > 0"),
        "lr": (5e-4, float, _pos, "must be > 0"),
        "early_stop_patience": (150, int, _pos, "must be > 0"),
        "batch_size": (128, int, _pos, "must be > 0"),
        "n_folds": (4, int, _pos, "must be > 0"),
        "subjects": (None, (list, type(None)), None, ""),
    },
    "evaluate": {
        "clip_history": (10, int, _pos, "must be > 0"),
        "clip_tol": (0.1, float, _unit, "must lie in (0, 1)"),
        "baselines": (["PULSE"], list, None, ""),
    },
}


# spelled-out names users tend to type for short keys; only used for hints
_ALIASES = {"learning_rate": "lr", "epochs": "max_epochs", "patience": "early_stop_patience", "heads": "attention_heads"}


def _suggest(key: str, schema: dict) -> str | None:
    near = difflib.get_close_matches(key, list(schema), n=1, cutoff=0.5)
    if near:
        return near[0]
    aliases = [a for a, k in _ALIASES.items() if k in schema]
    near = difflib.get_close_matches(key, aliases, n=1, cutoff=0.6)
    return _ALIASES[near[0]] if near else None


def _check(schema: dict, given: dict, where: str) -> dict:
    if not isinstance(given, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(given).__name__}")
    out = {}
    for key in given:
        if key not in schema:
            near = _suggest(key, schema)
            hint = f"; did you mean {where + near!r}?" if near else ""
            raise ConfigError(f"unknown key {where + key!r}{hint}")
    for key, spec in schema.items():
        path = where + key
        if isinstance(spec, dict):
            out[key] = _check(spec, given.get(key) or {}, path + ".")
            continue
        default, types, check, reason = spec
        if key not in given:
            out[key] = copy.deepcopy(default)
            continue
        v = given[key]
        if types is float and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        tt = types if isinstance(types, tuple) else (types,)
        if isinstance(v, bool) and bool not in tt:
            raise ConfigError(f"{path}: expected {'/'.join(t.__name__ for t in tt)}, got bool")
        if not isinstance(v, tt):
            raise ConfigError(f"{path}: expected {'/'.join(t.__name__ for t in tt)}, got {type(v).__name__}")
        if check is not None and v is not None and not check(v):
            raise ConfigError(f"{path}: {v!r} {reason}")
        out[key] = v
    return out


def validate_config(source=None) -> dict:
    """Load (path, dict or None) and return the normalized config.

    Missing keys get their defaults; unknown keys and out-of-range values raise
    ``ConfigError`` naming the field.
    """
    if source is None:
        raw = {}
    elif isinstance(source, dict):
        raw = copy.deepcopy(source)
    else:
        text = Path(source).read_text()
        raw = yaml.safe_load(text) or {}
    if isinstance(raw.get("augment"), dict):
        raw["augment"].pop("factors", None)  # derived, recomputed below
    cfg = _check(SCHEMA, raw, "")

    if cfg["pretrain"]["early_stop_patience"] <= cfg["pretrain"]["plateau_patience"]:
        raise ConfigError("pretrain.early_stop_patience: must exceed pretrain.plateau_patience")
    if cfg["finetune"]["early_stop_patience"] >= cfg["finetune"]["max_epochs"]:
        raise ConfigError("finetune.early_stop_patience: must be < finetune.max_epochs")
    try:
        spec = AugmentationSpec.parse(cfg["augment"]["grid"])
    except ValueError as e:
        raise ConfigError(f"augment.grid: {e}") from None
    cfg["augment"]["factors"] = [str(t) for t in spec.transforms]
    w = cfg["window"]
    win_len = w["seconds"] * w["fs"]
    if win_len != int(win_len):
        raise ConfigError("window: seconds * fs must be an integer number of samples")
    try:
        model_config(cfg)
    except ValueError as e:
        raise ConfigError(f"model: {e}") from None
    return cfg


def model_config(cfg: dict, variant: str = ESTIMATOR) -> ModelConfig:
    m = cfg["model"]
    w = cfg["window"]
    return ModelConfig(
        block_channels=tuple(m["block_channels"]),
        layers_per_block=m["layers_per_block"],
        kernel_len=m["kernel_len"],
        dilation=m["dilation"],
        pool_factor=m["pool_factor"],
        attention_heads=m["attention_heads"],
        head_hidden=m["head_hidden"],
        input_len=int(w["seconds"] * w["fs"]),
        variant=variant,
        legacy_dilated=m["legacy_dilated"],
        skip_connections=m["skip_connections"],
    )


def pretrain_config(cfg: dict, seed: int) -> PretrainConfig:
    p = {k: v for k, v in cfg["pretrain"].items() if k != "enabled"}
    return PretrainConfig(seed=seed, **p)


def finetune_config(cfg: dict, seed: int) -> FinetuneConfig:
    f = cfg["finetune"]
    init = Init(f["init"]) if cfg["pretrain"]["enabled"] else Init.RANDOM
    return FinetuneConfig(
        max_epochs=f["max_epochs"],
        lr=f["lr"],
        early_stop_patience=f["early_stop_patience"],
        batch_size=f["batch_size"],
        seed=seed,
        init=init,
    )


def derive_seed(seed: int, stage: str) -> int:
    """Stage-specific seed: stable hash of (global seed, stage name)."""
    h = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(h[:4], "little") & 0x7FFFFFFF


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def data_root(cfg: dict | None = None) -> Path | None:
    env = os.environ.get(DATA_ROOT_ENV)
    if env:
        return Path(env)
    if cfg and cfg["data"]["root"]:
        return Path(cfg["data"]["root"])
    return None


def resolve_data_path(path, cfg: dict | None = None) -> Path:
    p = Path(path).expanduser()
    root = data_root(cfg)
    if not p.is_absolute() and root is not None:
        return root / p
    return p
