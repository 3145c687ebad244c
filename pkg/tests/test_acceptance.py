"""Exit criteria. Each test records one PASS/FAIL line, printed at the end of
the session (see ``pytest_terminal_summary`` in conftest.py)."""

import os
from pathlib import Path

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FS, T, dominant_bin, tone
from ppgssl.augment import AugmentationSpec, divide, expand_dataset, multiply
from ppgssl.config import DATA_ROOT_ENV
from ppgssl.data import (
    Provenance,
    Source,
    WindowedDataset,
    apply_zscore,
    compute_norm_stats,
    find_subjects,
    ingest_recording,
    load_subject,
    n_windows,
)
from ppgssl.evaluate import PUBLISHED_MAE, SUBJECTS_DALIA, HRSeries, aggregate_report, clip_postprocess, mae, rolling_means
from ppgssl.finetune import FinetuneConfig, Init, finetune, make_loso_folds, predict_series
from ppgssl.model import (
    AUTOENCODER,
    Checkpoint,
    ModelConfig,
    build_autoencoder,
    count_macs,
    count_params,
    build_estimator,
    mse_multimodal,
    transfer_encoder_weights,
)
from ppgssl.pretrain import PretrainConfig, pretrain
from ppgssl.synthetic import tone_windows
from ppgssl.trainer import tensor
from test_model import _assert_close, _fd_check

pytestmark = pytest.mark.acceptance

RESULTS = {}


def record(n, ok, detail):
    RESULTS[f"{n:02d}"] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    return ok


def skip(n, why):
    RESULTS[f"{n:02d}"] = f"criterion {n:>2}: SKIP  {why}"
    pytest.skip(why)


# ------------------------------------------------------------------ 1


def test_01_frequency_oracle():
    grid = AugmentationSpec.paper_default().transforms[1:]
    rng = np.random.default_rng(0)
    worst = 0.0
    for f in (0.5, 1.0, 2.0, 3.0):
        w = np.zeros((4, T))
        w[0] = tone(f)
        w[1:] = 0.2 * tone(0.25, phase=1.0)
        bin_f = f * T / FS
        for tr in grid:
            got = dominant_bin(multiply(w, tr.k)[0])
            worst = max(worst, abs(got - tr.k * bin_f))
        worst = max(worst, abs(dominant_bin(divide(w, 2, rng)[0]) - bin_f / 2))
    assert record(1, worst <= 1, f"max dominant-bin error {worst:.2f} bins (tolerance 1)")


# ------------------------------------------------------------------ 2


def test_02_expansion_factor():
    spec = AugmentationSpec.paper_default()
    ds = tone_windows(7, np.random.default_rng(0), labeled=False)
    out = expand_dataset(ds, spec)
    ok = spec.expansion_factor == 11 and len(out) == 11 * len(ds)
    assert record(2, ok, f"{len(ds)} -> {len(out)} windows (factor {len(out) / len(ds):g})")


# ------------------------------------------------------------------ 3


def _dataset_dir(name):
    root = os.environ.get(DATA_ROOT_ENV)
    if not root:
        return None
    for cand in {"dalia": ("PPG_FieldStudy", "PPG-DaLiA", "dalia"), "wesad": ("WESAD", "wesad")}[name]:
        p = Path(root) / cand
        if p.is_dir():
            return p
    return None


def test_03_window_arithmetic():
    ok = n_windows(600) == 297
    assert ok
    RESULTS.setdefault("03", f"criterion  3: PASS  600 s -> {n_windows(600)} windows (arithmetic; datasets absent)")


@pytest.mark.parametrize("name,source,target", [("dalia", Source.DALIA, 64_697), ("wesad", Source.WESAD, 43_385)])
def test_03_window_accounting(name, source, target):
    root = _dataset_dir(name)
    if root is None:
        pytest.skip(f"{name} not found under ${DATA_ROOT_ENV}")
    total = sum(len(ingest_recording(load_subject(p, source))) for p in find_subjects(root, source))
    ok = abs(total - target) <= 200
    RESULTS[f"03{name}"] = f"criterion  3: {'PASS' if ok else 'FAIL'}  {name} {total} windows (target {target} +/- 200)"
    assert ok


# ------------------------------------------------------------------ 4


def test_04_model_accounting():
    lines, ok = [], True
    for label, cfg, p_t, m_t in (
        ("default", ModelConfig(), 386e3, 46.7e6),
        ("legacy", ModelConfig.legacy(), 230e3, 26.1e6),
    ):
        m = build_estimator(cfg)
        p, macs = count_params(m), count_macs(m)
        dp, dm = p / p_t - 1, macs / m_t - 1
        ok &= abs(dp) <= 0.2 and abs(dm) <= 0.2
        lines.append(f"{label} {p:,} params ({dp:+.1%}), {macs / 1e6:.2f}M MACs ({dm:+.1%})")
    assert record(4, ok, "; ".join(lines))


# ------------------------------------------------------------------ 5


def _overfit(skip_connections, steps=500):
    ds = tone_windows(32, np.random.default_rng(0), noise=0.01, labeled=False)
    ds = apply_zscore(ds, compute_norm_stats(ds, Provenance.PRETRAIN_CORPUS))
    x = tensor(ds.data)
    model = build_autoencoder(ModelConfig(variant=AUTOENCODER, skip_connections=skip_connections), seed=0)
    opt = torch.optim.AdamW(model.parameters(), lr=1e-3, betas=(0.9, 0.95), weight_decay=0.01)
    losses = []
    for _ in range(steps):
        loss = mse_multimodal(model(x), x)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
    return min(losses), int(np.argmin(losses))


@pytest.mark.slow
def test_05_overfit_one_batch():
    full, at = _overfit(True)
    ablated, _ = _overfit(False)
    ok = full < 1e-2 and ablated > full
    assert record(5, ok, f"min MSE {full:.4g} (step {at}) with skips, {ablated:.4g} without")


# ------------------------------------------------------------------ 6


def test_06_gradient_check():
    ae = build_autoencoder(ModelConfig.tiny(variant=AUTOENCODER), seed=1)
    x = torch.randn(3, 4, 32, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    checked = _fd_check(ae, lambda m: mse_multimodal(m(x), x), n_per_kind=8)
    kinds = {c[0] for c in checked}
    rel = max(abs(a - n) / max(abs(a), abs(n), 1e-12) for _, _, a, n in checked)
    try:
        _assert_close(checked)
        ok = len(checked) >= 20 and kinds == {"conv", "attention", "dense"}
    except AssertionError:
        ok = False
    assert record(6, ok, f"{len(checked)} weights over {sorted(kinds)}, max relative error {rel:.2e}")


# ------------------------------------------------------------------ 7


def test_07_transfer_integrity():
    ae = build_autoencoder(ModelConfig(variant=AUTOENCODER), seed=3)
    ckpt = Checkpoint.from_model(ae, {}, None)
    est = transfer_encoder_weights(ckpt, head_seed=9)
    x = torch.randn(4, 4, 256, generator=torch.Generator().manual_seed(1))
    with torch.no_grad():
        (la, sa), (le, se) = ae.encoder(x), est.encoder(x)
    ok = torch.equal(la, le) and all(torch.equal(a, b) for a, b in zip(sa, se))
    assert record(7, ok, "encoder latent and skip activations bitwise equal" if ok else "activations differ")


# ------------------------------------------------------------------ 8

_fold_checked = []


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def _check_folds(seed):
    plan = make_loso_folds(SUBJECTS_DALIA, 4, seed)
    assert sorted(len(f) for f in plan.folds) == [3, 4, 4, 4]
    assert sorted(a.test for a in plan) == sorted(SUBJECTS_DALIA)
    for a in plan:
        parts = [{a.test}, set(a.val), set(a.train)]
        assert sum(map(len, parts)) == 15 and set().union(*parts) == set(SUBJECTS_DALIA)
    _fold_checked.append(seed)


def test_08_loso_integrity():
    try:
        _check_folds()
        ok = True
    except AssertionError:
        ok = False
    assert record(8, ok, f"{len(_fold_checked)} seeds: sizes {{4,4,4,3}}, each subject tested once, disjoint splits")


# ------------------------------------------------------------------ 9


def test_09_clipping_properties():
    rng = np.random.default_rng(0)
    worst, idem = 0.0, True
    for _ in range(1000):
        n = int(rng.integers(11, 300))
        base = rng.uniform(50, 180)
        p = base + np.cumsum(rng.normal(0, 3, n)) + rng.normal(0, 15, n) * (rng.random(n) < 0.2)
        out = clip_postprocess(HRSeries("s", p)).predictions
        m = rolling_means(out, 10)
        worst = max(worst, float(np.max(np.abs(out[10:] - m) / np.abs(m))))
        idem &= np.array_equal(clip_postprocess(HRSeries("s", out)).predictions, out)
    ok = worst <= 0.1 + 1e-12 and idem
    assert record(9, ok, f"1000 series: max deviation {worst:.6f} of rolling mean, idempotent={idem}")


# ------------------------------------------------------------------ 10


def test_10_report_reproduction():
    ours = aggregate_report(dict(zip(SUBJECTS_DALIA, PUBLISHED_MAE["PULSE+SSL+DA"]))).mean_mae
    pulse = aggregate_report(dict(zip(SUBJECTS_DALIA, PUBLISHED_MAE["PULSE"]))).mean_mae
    ok = f"{ours:.2f}" == "3.54" and f"{pulse:.2f}" == "4.03"
    # The published per-subject row is rounded to 2 d.p.; its mean is 3.5333,
    # so 3.54 is not reachable from those values (see the decisions ledger).
    assert record(10, ok, f"pre-trained row mean {ours:.4f} (target 3.54), PULSE row mean {pulse:.4f} (target 4.03)")


# ------------------------------------------------------------------ 11

E2E_MODEL = ModelConfig(block_channels=(8, 12, 16), attention_heads=2, head_hidden=8)


@pytest.mark.slow
def test_11_synthetic_end_to_end():
    rng = np.random.default_rng(0)
    labelled = WindowedDataset.concat([tone_windows(30, rng, subject=f"S{i}", noise=0.1) for i in range(1, 9)])
    unlabelled = WindowedDataset.concat(
        [tone_windows(30, rng, subject=f"U{i}", noise=0.1, labeled=False) for i in range(1, 9)]
    )
    corpus = expand_dataset(unlabelled, AugmentationSpec.paper_default(0))
    corpus = apply_zscore(corpus, compute_norm_stats(corpus, Provenance.PRETRAIN_CORPUS))
    ckpt = pretrain(corpus, PretrainConfig(max_epochs=20, batch_size=64, seed=0), E2E_MODEL)

    plan = list(make_loso_folds(labelled.subjects, 4, 0))[:2]
    scores = {}
    for init in (Init.PRETRAINED, Init.RANDOM):
        cfg = FinetuneConfig(max_epochs=30, early_stop_patience=29, batch_size=32, seed=0, init=init)
        per = []
        for a in plan:
            c = finetune(a, ckpt if init is Init.PRETRAINED else None, cfg, labelled, E2E_MODEL)
            s = predict_series(c, labelled.for_subjects([a.test]))
            per.append(mae(s.predictions, s.labels))
        scores[init] = float(np.mean(per))
    pre, rnd = scores[Init.PRETRAINED], scores[Init.RANDOM]
    ok = pre < 2.0 and pre <= rnd
    assert record(11, ok, f"test MAE {pre:.2f} BPM pre-trained vs {rnd:.2f} BPM random init")


# ------------------------------------------------------------------ 12


@pytest.mark.slow
def test_12_extended_reproduction(tmp_path):
    dalia, wesad = _dataset_dir("dalia"), _dataset_dir("wesad")
    if not torch.cuda.is_available() or dalia is None or wesad is None:
        skip(12, "extended: needs PPG-DaLiA, WESAD and a GPU")
    from ppgssl.pipeline import run_pipeline

    cfg = {
        "data": {
            "finetune": {"source": "dalia", "path": str(dalia)},
            "pretrain": [{"source": "wesad", "path": str(wesad)}],
        },
        "evaluate": {"baselines": ["PULSE"]},
    }
    run_pipeline(cfg, tmp_path)
    import json

    mean = json.loads((tmp_path / "evaluate" / "report.json").read_text())["mean_mae"]
    assert record(12, mean <= 4.3, f"extended: mean MAE {mean:.2f} BPM (target <= 4.3)")
