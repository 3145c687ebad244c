"""
Self-supervised pre-training
============================

The autoencoder learns to reconstruct unlabeled windows (PPG and all three
accelerometer axes). The learning rate is flat until validation loss stalls
for a few epochs, then follows a half cosine to zero.
"""

import sys
import tempfile
from pathlib import Path

import numpy as np
import torch

from ppgssl.augment import AugmentationSpec, expand_dataset
from ppgssl.data import Provenance, apply_zscore, compute_norm_stats
from ppgssl.model import ModelConfig
from ppgssl.pretrain import PretrainConfig, cosine_lr, pretrain
from ppgssl.synthetic import tone_windows

torch.set_num_threads(1)
out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="ppgssl_demo_"))

# shape of the schedule once a plateau is hit with 100 epochs left
print("lr after plateau:", [f"{cosine_lr(1e-3, t, 100):.1e}" for t in (0, 25, 50, 75, 100)])

unlabeled = tone_windows(60, np.random.default_rng(0), noise=0.1, labeled=False)
corpus = expand_dataset(unlabeled, AugmentationSpec.paper_default(0))
corpus = apply_zscore(corpus, compute_norm_stats(corpus, Provenance.PRETRAIN_CORPUS))

small = ModelConfig(block_channels=(8, 12, 16), attention_heads=2, head_hidden=8)
cfg = PretrainConfig(max_epochs=8, batch_size=64, plateau_patience=2, early_stop_patience=6)
ckpt = pretrain(corpus, cfg, small, on_epoch=lambda r: print(f"epoch {r['epoch']}: val MSE {r['val_mse']:.4f} lr {r['lr']:.1e}"))
out.mkdir(parents=True, exist_ok=True)
ckpt.save(out / "autoencoder.ckpt")
print(f"best epoch {ckpt.meta['epoch']}, saved {out / 'autoencoder.ckpt'}")
