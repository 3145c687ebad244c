"""Command line entry point: ``ppgssl <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import data_root, derive_seed, finetune_config, model_config, pretrain_config, validate_config


def _add_common(p, out_required=True):
    p.add_argument("--seed", type=int, default=None, help="global seed (overrides the config)")
    p.add_argument("--config", type=Path, default=None, help="YAML experiment config")
    p.add_argument("--out", type=Path, required=out_required)


def _load_cfg(args) -> dict:
    cfg = validate_config(args.config) if args.config else validate_config(None)
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def cmd_ingest(args):
    from .data import Source, export_container, find_subjects, ingest_recording, load_subject

    src_dir = args.in_dir
    root = data_root()
    if not src_dir.is_absolute() and root is not None and not src_dir.exists():
        src_dir = root / src_dir
    subjects = find_subjects(src_dir, args.source)
    if not subjects:
        raise SystemExit(f"no {args.source} subjects found under {src_dir}")
    total = 0
    for p in subjects:
        ds = ingest_recording(load_subject(p, Source(args.source)))
        name = ds.subjects[0] if len(ds) else p.name
        export_container(ds, args.out / f"{name}.ppgw")
        total += len(ds)
        print(f"{name}: {len(ds)} windows")
    print(f"total: {total} windows from {len(subjects)} subjects")


def cmd_augment(args):
    from .augment import AugmentationSpec, expand_dataset
    from .data import export_container, import_container

    cfg = _load_cfg(args)
    seed = derive_seed(cfg["seed"], "augment")
    ds = import_container(args.in_path)
    spec = AugmentationSpec.parse(args.grid or cfg["augment"]["grid"], seed)
    out = expand_dataset(ds, spec)
    export_container(out, args.out)
    print(f"{len(ds)} -> {len(out)} windows (x{spec.expansion_factor})")


def cmd_pretrain(args):
    from .data import Provenance, apply_zscore, compute_norm_stats, load_containers
    from .model import AUTOENCODER
    from .pretrain import pretrain

    cfg = _load_cfg(args)
    corpus = load_containers([Path(p) for p in args.data.split(",") if p])
    if corpus.normalized:
        raise SystemExit("pre-training containers must hold raw (unnormalized) windows")
    corpus = apply_zscore(corpus, compute_norm_stats(corpus, Provenance.PRETRAIN_CORPUS))
    seed = derive_seed(cfg["seed"], "pretrain")
    log_path = args.out.with_suffix(".log.jsonl")
    log_path.parent.mkdir(parents=True, exist_ok=True)
    ckpt = pretrain(
        corpus,
        pretrain_config(cfg, seed),
        model_config(cfg, AUTOENCODER),
        log_path=log_path,
        on_epoch=lambda r: print(json.dumps(r), flush=True),
    )
    ckpt.save(args.out)
    print(f"best val MSE {ckpt.meta['best_val_mse']:.6f} at epoch {ckpt.meta['epoch']}; wrote {args.out}")


def cmd_finetune(args):
    from .data import load_containers
    from .finetune import FoldPlan, make_loso_folds, run_loso
    from .model import Checkpoint

    cfg = _load_cfg(args)
    if args.pretrained is None:
        cfg["pretrain"]["enabled"] = False
    data = load_containers([Path(p) for p in args.data.split(",") if p])
    if args.plan.exists():
        plan = FoldPlan.load(args.plan)
    else:
        plan = make_loso_folds(data.subjects, cfg["finetune"]["n_folds"], derive_seed(cfg["seed"], "finetune"))
        plan.save(args.plan)
    pretrained = Checkpoint.load(args.pretrained) if args.pretrained else None
    subjects = args.subjects.split(",") if args.subjects else cfg["finetune"]["subjects"]
    results = run_loso(
        data,
        plan,
        pretrained,
        finetune_config(cfg, derive_seed(cfg["seed"], "finetune")),
        model_config(cfg),
        subjects=subjects,
        out_dir=args.out,
    )
    for r in results:
        print(f"{r.test_subject}: best val MAE {r.checkpoint.meta['best_val_mae']:.3f}")


def _load_baselines(spec):
    from .evaluate import PUBLISHED_MAE, published_baselines

    if spec is None:
        return {}
    if spec == "published":
        return published_baselines()
    p = Path(spec)
    if p.exists():
        return json.loads(p.read_text())
    names = [s.strip() for s in spec.split(",")]
    unknown = [n for n in names if n not in PUBLISHED_MAE]
    if unknown:
        raise SystemExit(f"unknown baseline(s) {unknown}; known: {list(PUBLISHED_MAE)}")
    return published_baselines(names)


def cmd_evaluate(args):
    import numpy as np

    from .data import load_containers
    from .evaluate import HRSeries, aggregate_report, clip_postprocess, series_mae, write_report

    cfg = _load_cfg(args)
    labels = load_containers([Path(p) for p in args.labels.split(",")]) if args.labels else None
    per_subject = {}
    for p in sorted(Path(args.pred).glob("*.pred.csv")):
        s = HRSeries.load(p)
        if labels is not None:
            sub = labels.for_subjects([s.subject_id])
            if len(sub) != len(s):
                raise SystemExit(f"{s.subject_id}: {len(s)} predictions vs {len(sub)} labelled windows")
            s.labels = sub.labels.astype(np.float64)
        s = clip_postprocess(s, cfg["evaluate"]["clip_history"], cfg["evaluate"]["clip_tol"])
        per_subject[s.subject_id] = series_mae(s)
    if not per_subject:
        raise SystemExit(f"no *.pred.csv files in {args.pred}")
    report = aggregate_report(per_subject, _load_baselines(args.baselines))
    paths = write_report(report, args.out)
    print(Path(paths["table"]).read_text(), end="")


def cmd_run(args):
    from .pipeline import run_pipeline

    cfg = _load_cfg(args)
    stages = args.stages.split(",") if args.stages else None
    manifest = run_pipeline(cfg, args.out, stages)
    for stage, status in manifest["runs"][-1]["stages"].items():
        print(f"{stage}: {status}")


def cmd_model_describe(args):
    from .model import AUTOENCODER, ESTIMATOR, build_model

    cfg = validate_config(args.config) if args.config else validate_config(None)
    model = build_model(model_config(cfg, AUTOENCODER if args.autoencoder else ESTIMATOR))
    from .model import describe

    print(describe(model))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppgssl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert a dataset into window containers")
    p.add_argument("--source", choices=["dalia", "wesad", "unlabeled"], required=True)
    p.add_argument("--in", dest="in_dir", type=Path, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("augment", help="expand a container with frequency-scaling copies")
    p.add_argument("--in", dest="in_path", type=Path, required=True)
    p.add_argument("--grid", default=None, help='e.g. "divide:2,multiply:1.2-2.0:0.1"')
    _add_common(p)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("pretrain", help="self-supervised autoencoder pre-training")
    p.add_argument("--data", required=True, help="comma separated containers")
    _add_common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="LOSO fine-tuning")
    p.add_argument("--data", required=True, help="comma separated containers")
    p.add_argument("--pretrained", type=Path, default=None)
    p.add_argument("--plan", type=Path, required=True, help="fold plan JSON; created if missing")
    p.add_argument("--subjects", default=None, help="only these test subjects (comma separated)")
    _add_common(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="clip predictions and report per-subject MAE")
    p.add_argument("--pred", type=Path, required=True, help="directory of *.pred.csv")
    p.add_argument("--labels", default=None, help="container(s) with reference labels")
    p.add_argument("--baselines", default=None, help='JSON file, "published", or names')
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="full pipeline with caching")
    p.add_argument("--stages", default=None, help="subset, e.g. pretrain,finetune")
    _add_common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("model", help="model utilities")
    msub = p.add_subparsers(dest="model_command", required=True)
    d = msub.add_parser("describe", help="layer table with params and MACs")
    d.add_argument("--config", type=Path, default=None)
    d.add_argument("--autoencoder", action="store_true")
    d.set_defaults(func=cmd_model_describe)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    from .config import ConfigError

    try:
        args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
