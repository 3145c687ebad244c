"""Stage runner: ingest -> augment -> pretrain -> finetune -> evaluate.

Every stage records a key (hash of its config slice, derived seed and the
checksums of its inputs) plus checksums of its outputs in ``manifest.json``.
A stage whose key is unchanged and whose outputs are intact is skipped.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from pathlib import Path

import numpy as np

from . import __version__
from .augment import AugmentationSpec, expand_dataset
from .config import (
    ConfigError,
    config_hash,
    derive_seed,
    finetune_config,
    model_config,
    pretrain_config,
    resolve_data_path,
    validate_config,
)
from .data import (
    Provenance,
    Source,
    apply_zscore,
    compute_norm_stats,
    export_container,
    find_subjects,
    import_container,
    ingest_recording,
    load_containers,
    load_subject,
)
from .evaluate import (
    HRSeries,
    aggregate_report,
    clip_postprocess,
    published_baselines,
    series_mae,
    write_report,
)
from .finetune import make_loso_folds, run_loso
from .model import AUTOENCODER, Checkpoint
from .pretrain import pretrain
from .synthetic import synthetic_recording

log = logging.getLogger(__name__)

STAGES = ("ingest", "augment", "pretrain", "finetune", "evaluate")
MANIFEST = "manifest.json"


class MissingArtifactError(RuntimeError):
    pass


class HashMismatchError(RuntimeError):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _fingerprint_tree(paths) -> str:
    """Cheap fingerprint of raw dataset files (name, size, mtime)."""
    items = []
    for p in paths:
        p = Path(p)
        files = [p] if p.is_file() else sorted(q for q in p.rglob("*") if q.is_file())
        for q in files:
            st = q.stat()
            items.append((str(q), st.st_size, st.st_mtime_ns))
    return config_hash(items)


class Manifest:
    def __init__(self, out_dir: Path):
        self.path = out_dir / MANIFEST
        self.out_dir = out_dir
        if self.path.exists():
            self.data = json.loads(self.path.read_text())
        else:
            self.data = {"stages": {}, "runs": []}

    def save(self):
        tmp = self.path.with_name(self.path.name + ".tmp")
        tmp.write_text(json.dumps(self.data, indent=2, sort_keys=True))
        os.replace(tmp, self.path)

    def stage(self, name) -> dict | None:
        return self.data["stages"].get(name)

    def outputs(self, name) -> dict:
        rec = self.stage(name)
        if rec is None:
            raise MissingArtifactError(f"stage {name!r} has not been run in {self.out_dir}")
        return rec["outputs"]

    def verify(self, name):
        """Check every recorded output of ``name`` still exists and matches."""
        for rel, digest in self.outputs(name).items():
            p = self.out_dir / rel
            if not p.exists():
                raise MissingArtifactError(f"{name} output {rel} is missing")
            if sha256_file(p) != digest:
                raise HashMismatchError(f"{name} output {rel} changed since it was recorded")

    def is_fresh(self, name, key) -> bool:
        rec = self.stage(name)
        if rec is None or rec["key"] != key:
            return False
        try:
            self.verify(name)
        except (MissingArtifactError, HashMismatchError):
            return False
        return True

    def record(self, name, key, outputs: list[Path], started: float, extra: dict | None = None):
        self.data["stages"][name] = {
            "key": key,
            "outputs": {str(Path(p).relative_to(self.out_dir)): sha256_file(p) for p in outputs},
            "started": started,
            "finished": time.time(),
            **(extra or {}),
        }
        self.save()


def _upstream_key(manifest: Manifest, *names) -> dict:
    out = {}
    for n in names:
        manifest.verify(n)
        out[n] = manifest.outputs(n)
    return out


# ------------------------------------------------------------------- stages


def _stage_ingest(cfg, out: Path, seed: int) -> list[Path]:
    dst = out / "ingest"
    written = []
    syn = cfg["data"]["synthetic"]
    if syn is not None:
        rng = np.random.default_rng(seed)
        n_lab = int(syn.get("n_subjects", 15))
        n_unl = int(syn.get("n_unlabeled", 4))
        dur = float(syn.get("duration_s", 300))
        for i in range(1, n_lab + 1):
            rec = synthetic_recording(f"S{i}", dur, rng)
            written.append(export_container(ingest_recording(rec), dst / "finetune" / f"S{i}.ppgw"))
        for i in range(1, n_unl + 1):
            rec = synthetic_recording(f"U{i}", float(syn.get("unlabeled_duration_s", dur)), rng, labeled=False)
            written.append(export_container(ingest_recording(rec), dst / "pretrain" / f"U{i}.ppgw"))
        return written

    ft = cfg["data"]["finetune"]
    if not ft:
        raise ConfigError("data.finetune: required unless data.synthetic is set")
    sources = [("finetune", ft)] + [("pretrain", p) for p in cfg["data"]["pretrain"]]
    for role, spec in sources:
        src = Source(spec["source"])
        root = resolve_data_path(spec["path"], cfg)
        subjects = find_subjects(root, src)
        if not subjects:
            raise MissingArtifactError(f"no {src.value} subjects under {root}")
        for p in subjects:
            ds = ingest_recording(load_subject(p, src))
            name = f"{src.value}_{ds.subjects[0] if len(ds) else p.name}.ppgw" if role == "pretrain" else f"{p.name}.ppgw"
            written.append(export_container(ds, dst / role / name))
    return written


def _role(outputs: dict, role: str, out: Path) -> list[Path]:
    return sorted(out / rel for rel in outputs if Path(rel).parts[1] == role)


def _stage_augment(cfg, out: Path, seed: int, manifest: Manifest) -> list[Path]:
    ing = manifest.outputs("ingest")
    pre = _role(ing, "pretrain", out)
    if not pre:
        raise MissingArtifactError("no pre-training containers were ingested (data.pretrain is empty)")
    corpus = load_containers(pre)
    if cfg["augment"]["enabled"]:
        corpus = expand_dataset(corpus, AugmentationSpec.parse(cfg["augment"]["grid"], seed))
    return [export_container(corpus, out / "augment" / "pretrain_corpus.ppgw")]


def _stage_pretrain(cfg, out: Path, seed: int, manifest: Manifest) -> list[Path]:
    (corpus_path,) = [out / rel for rel in manifest.outputs("augment")]
    corpus = import_container(corpus_path)
    stats = compute_norm_stats(corpus, Provenance.PRETRAIN_CORPUS)
    corpus = apply_zscore(corpus, stats)
    d = out / "pretrain"
    d.mkdir(parents=True, exist_ok=True)
    ckpt = pretrain(corpus, pretrain_config(cfg, seed), model_config(cfg, AUTOENCODER), log_path=d / "log.jsonl")
    ckpt.save(d / "autoencoder.ckpt")
    return [d / "autoencoder.ckpt", d / "log.jsonl"]


def _stage_finetune(cfg, out: Path, seed: int, manifest: Manifest) -> list[Path]:
    data = load_containers(_role(manifest.outputs("ingest"), "finetune", out))
    pretrained = None
    if cfg["pretrain"]["enabled"]:
        pretrained = Checkpoint.load(out / "pretrain" / "autoencoder.ckpt")
    d = out / "finetune"
    d.mkdir(parents=True, exist_ok=True)
    plan = make_loso_folds(data.subjects, cfg["finetune"]["n_folds"], seed)
    plan.save(d / "plan.json")
    results = run_loso(
        data,
        plan,
        pretrained,
        finetune_config(cfg, seed),
        model_config(cfg),
        subjects=cfg["finetune"]["subjects"],
        out_dir=d,
    )
    written = [d / "plan.json"]
    for r in results:
        written += [d / f"{r.test_subject}.ckpt", d / f"{r.test_subject}.pred.csv", d / f"{r.test_subject}.log.jsonl"]
    return written


def evaluate_predictions(pred_paths, history=10, tol=0.1, baselines=None, name="this run"):
    per_subject = {}
    for p in pred_paths:
        s = clip_postprocess(HRSeries.load(p), history, tol)
        per_subject[s.subject_id] = series_mae(s)
    return aggregate_report(per_subject, baselines, name)


def _stage_evaluate(cfg, out: Path, seed: int, manifest: Manifest) -> list[Path]:
    preds = sorted(out / rel for rel in manifest.outputs("finetune") if rel.endswith(".pred.csv"))
    ev = cfg["evaluate"]
    report = evaluate_predictions(preds, ev["clip_history"], ev["clip_tol"], published_baselines(ev["baselines"]))
    paths = write_report(report, out / "evaluate")
    return list(paths.values())


_RUNNERS = {
    "ingest": lambda cfg, out, seed, m: _stage_ingest(cfg, out, seed),
    "augment": _stage_augment,
    "pretrain": _stage_pretrain,
    "finetune": _stage_finetune,
    "evaluate": _stage_evaluate,
}

_DEPENDS = {
    "ingest": (),
    "augment": ("ingest",),
    "pretrain": ("augment",),
    "finetune": ("ingest", "pretrain"),
    "evaluate": ("finetune",),
}

_CONFIG_SLICES = {
    "ingest": ("data", "window"),
    "augment": ("augment",),
    "pretrain": ("pretrain", "model", "window"),
    "finetune": ("finetune", "model", "window", "pretrain"),
    "evaluate": ("evaluate",),
}


def _active(cfg, stage) -> bool:
    if stage in ("augment", "pretrain"):
        return cfg["pretrain"]["enabled"]
    return True


def run_pipeline(config, out_dir, stages=None) -> dict:
    """Run the requested stages (default: all) in dependency order and return
    the manifest dict."""
    cfg = validate_config(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out)
    wanted = [s for s in STAGES if stages is None or s in stages]
    unknown = set(stages or ()) - set(STAGES)
    if unknown:
        raise ValueError(f"unknown stage(s) {sorted(unknown)}; choose from {STAGES}")
    manifest.data["config_hash"] = config_hash(cfg)
    manifest.data["seed"] = cfg["seed"]
    run_log = {"started": time.time(), "stages": {}}
    for stage in wanted:
        if not _active(cfg, stage):
            run_log["stages"][stage] = "disabled"
            continue
        deps = [d for d in _DEPENDS[stage] if _active(cfg, d)]
        upstream = _upstream_key(manifest, *deps)
        seed = derive_seed(cfg["seed"], stage)
        key = config_hash(
            {
                "version": __version__,
                "config": {k: cfg[k] for k in _CONFIG_SLICES[stage]},
                "seed": seed,
                "upstream": upstream,
                **({"raw": _raw_fingerprint(cfg)} if stage == "ingest" else {}),
            }
        )
        if manifest.is_fresh(stage, key):
            log.info("%s: cached", stage)
            run_log["stages"][stage] = "cached"
            continue
        log.info("%s: running", stage)
        started = time.time()
        outputs = _RUNNERS[stage](cfg, out, seed, manifest)
        manifest.record(stage, key, outputs, started, {"seed": seed})
        run_log["stages"][stage] = "ran"
    run_log["finished"] = time.time()
    manifest.data["runs"].append(run_log)
    manifest.save()
    return manifest.data


def _raw_fingerprint(cfg) -> str | None:
    if cfg["data"]["synthetic"] is not None:
        return None
    paths = []
    specs = ([cfg["data"]["finetune"]] if cfg["data"]["finetune"] else []) + list(cfg["data"]["pretrain"])
    for spec in specs:
        paths.append(resolve_data_path(spec["path"], cfg))
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise MissingArtifactError(f"dataset path(s) not found: {missing}")
    return _fingerprint_tree(paths)
