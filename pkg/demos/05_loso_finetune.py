"""
Leave-one-subject-out fine-tuning
=================================

Subjects are shuffled into folds. Each subject is tested once, the rest of
its fold validates and every other fold trains. We fine-tune from a
pre-trained encoder and from scratch and compare held-out MAE.
"""

import numpy as np
import torch

from ppgssl.augment import AugmentationSpec, expand_dataset
from ppgssl.data import Provenance, WindowedDataset, apply_zscore, compute_norm_stats
from ppgssl.evaluate import mae
from ppgssl.finetune import FinetuneConfig, Init, finetune, make_loso_folds, predict_series
from ppgssl.model import ModelConfig
from ppgssl.pretrain import PretrainConfig, pretrain
from ppgssl.synthetic import tone_windows

torch.set_num_threads(1)
rng = np.random.default_rng(0)
small = ModelConfig(block_channels=(8, 12, 16), attention_heads=2, head_hidden=8)

labeled = WindowedDataset.concat([tone_windows(30, rng, subject=f"S{i}", noise=0.1) for i in range(1, 9)])
unlabeled = WindowedDataset.concat([tone_windows(30, rng, subject=f"U{i}", noise=0.1, labeled=False) for i in range(1, 9)])

plan = make_loso_folds(labeled.subjects, n_folds=4, seed=0)
for a in list(plan)[:3]:
    print(f"test {a.test}  val {list(a.val)}  train {len(a.train)} subjects")

corpus = expand_dataset(unlabeled, AugmentationSpec.paper_default(0))
corpus = apply_zscore(corpus, compute_norm_stats(corpus, Provenance.PRETRAIN_CORPUS))
ckpt = pretrain(corpus, PretrainConfig(max_epochs=10, batch_size=64), small)

a = next(iter(plan))
for init in (Init.PRETRAINED, Init.RANDOM):
    cfg = FinetuneConfig(max_epochs=20, early_stop_patience=19, batch_size=32, init=init)
    model = finetune(a, ckpt if init is Init.PRETRAINED else None, cfg, labeled, small)
    series = predict_series(model, labeled.for_subjects([a.test]))
    print(f"{init.value:>10}: {a.test} MAE {mae(series.predictions, series.labels):.2f} BPM")
